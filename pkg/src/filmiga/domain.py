"""Element mesh over an axis-aligned rectangle.

The parametric unit square is mapped affinely onto ``rect``.  For every
element the mesh caches the local tensor-product basis operators at its
Gauss points (value, x/y derivatives and Laplacian, in physical units),
which is everything the assembly routines need.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .bspline import SplineSpace, basis_derivatives
from .errors import ConfigurationError

SIDES = ("left", "right", "bottom", "top")


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss points and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class BoundaryFace:
    element: int
    side: str
    normal: tuple[float, float]
    length: float
    h_e: float
    points: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)


class Mesh:
    """Tensor grid of ``n_eu x n_ev`` elements covering ``rect``.

    Element ``e = i * n_ev + j``; quadrature point ``q = qu * nq + qv``;
    local function ``a = au * (p+1) + av``.
    """

    def __init__(self, space: SplineSpace, rect, quad_order: int | None = None):
        x0, x1, y0, y1 = map(float, rect)
        if not (x1 > x0 and y1 > y0):
            raise ConfigurationError(f"degenerate rectangle {rect!r}")
        p = space.degree
        if quad_order is None:
            quad_order = p + 1
        if quad_order < 1:
            raise ConfigurationError("quad_order must be positive")
        self.space = space
        self.rect = (x0, x1, y0, y1)
        self.quad_order = int(quad_order)
        self.n_eu = space.ku.n_elems
        self.n_ev = space.kv.n_elems
        self.lengths = (x1 - x0, y1 - y0)
        # element size = Jacobian of the reference-element map, per direction
        self.jac = (self.lengths[0] / self.n_eu, self.lengths[1] / self.n_ev)
        self.xi, self.wq = gauss_legendre(self.quad_order)

    # -- basic geometry --------------------------------------------------
    @property
    def p(self) -> int:
        return self.space.degree

    @property
    def n_elems(self) -> int:
        return self.n_eu * self.n_ev

    @property
    def n_b(self) -> int:
        return self.space.n_b

    @property
    def det_jac(self) -> float:
        return self.jac[0] * self.jac[1]

    @property
    def elements(self) -> list[tuple[int, int]]:
        return [(i, j) for i in range(self.n_eu) for j in range(self.n_ev)]

    @property
    def periodic(self) -> tuple[bool, bool]:
        return (self.space.ku.periodic, self.space.kv.periodic)

    @property
    def area(self) -> float:
        return self.lengths[0] * self.lengths[1]

    def to_physical(self, u, v):
        x0, _, y0, _ = self.rect
        return x0 + self.lengths[0] * np.asarray(u), y0 + self.lengths[1] * np.asarray(v)

    def to_parametric(self, x, y):
        x0, _, y0, _ = self.rect
        return (np.asarray(x) - x0) / self.lengths[0], (np.asarray(y) - y0) / self.lengths[1]

    @property
    def n_quad_points(self) -> int:
        return self.n_elems * self.quad_order**2

    # -- 1D tables ---------------------------------------------------------
    def _direction_tables(self, axis: int):
        kv = self.space.ku if axis == 0 else self.space.kv
        n_e = kv.n_elems
        u = ((np.arange(n_e)[:, None] + self.xi[None, :]) / n_e).ravel()
        span, ders = basis_derivatives(kv, u, 2)
        scale = 1.0 / self.lengths[axis]
        tab = ders.reshape(3, n_e, self.quad_order, kv.degree + 1)
        tab = tab * np.array([1.0, scale, scale**2])[:, None, None, None]
        coords = self.rect[2 * axis] + self.lengths[axis] * u.reshape(n_e, self.quad_order)
        return tab, coords

    @cached_property
    def tables_u(self):
        """``(3, n_eu, nq, p+1)`` value/d1/d2 tables and ``(n_eu, nq)`` x-coords."""
        return self._direction_tables(0)

    @cached_property
    def tables_v(self):
        return self._direction_tables(1)

    # -- element data ------------------------------------------------------
    @cached_property
    def connectivity(self) -> np.ndarray:
        """``(n_elems, (p+1)**2)`` global basis indices."""
        cu = self.space.ku.connectivity()
        cv = self.space.kv.connectivity()
        conn = cu[:, None, :, None] * self.space.n_v + cv[None, :, None, :]
        return conn.reshape(self.n_elems, -1)

    @cached_property
    def quad_xy(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical coordinates of quadrature points, ``(n_elems, nq**2)`` each."""
        xq = self.tables_u[1]
        yq = self.tables_v[1]
        nq = self.quad_order
        X = np.broadcast_to(xq[:, None, :, None], (self.n_eu, self.n_ev, nq, nq))
        Y = np.broadcast_to(yq[None, :, None, :], (self.n_eu, self.n_ev, nq, nq))
        return X.reshape(self.n_elems, -1), Y.reshape(self.n_elems, -1)

    @cached_property
    def quad_weights(self) -> np.ndarray:
        """Physical weights per quadrature point, ``(nq**2,)`` (same on every element)."""
        return np.outer(self.wq, self.wq).ravel() * self.det_jac

    @cached_property
    def operators(self) -> np.ndarray:
        """Local basis operators ``(4, n_elems, nq**2, (p+1)**2)``.

        Operator order: value, d/dx, d/dy, Laplacian.
        """
        tu = self.tables_u[0]
        tv = self.tables_v[0]
        nu, nv = self.n_eu, self.n_ev
        nq, p1 = self.quad_order, self.p + 1

        def prod(a, b):
            out = a[:, None, :, None, :, None] * b[None, :, None, :, None, :]
            return out.reshape(nu * nv, nq * nq, p1 * p1)

        ops = np.empty((4, nu * nv, nq * nq, p1 * p1))
        ops[0] = prod(tu[0], tv[0])
        ops[1] = prod(tu[1], tv[0])
        ops[2] = prod(tu[0], tv[1])
        ops[3] = prod(tu[2], tv[0]) + prod(tu[0], tv[2])
        return ops

    @cached_property
    def element_kinds(self) -> tuple[np.ndarray, np.ndarray]:
        """Elements grouped by identical operator tables.

        On a uniform mesh, interior elements are translates of one another,
        so only elements near an open boundary differ.  Returns the kind of
        each element ``(n_elems,)`` and the operators of each kind
        ``(4, n_kinds, nq**2, (p+1)**2)``.
        """
        reps, kinds = [], []
        for tab in (self.tables_u[0], self.tables_v[0]):
            flat = tab.transpose(1, 0, 2, 3).reshape(tab.shape[1], -1)
            scale = max(float(np.abs(flat).max()), 1.0)
            key = np.round(flat / scale, 9)
            _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
            reps.append(first)
            kinds.append(inverse.ravel())
        n_kv = reps[1].size
        kind = (kinds[0][:, None] * n_kv + kinds[1][None, :]).ravel()
        rep_elems = (reps[0][:, None] * self.n_ev + reps[1][None, :]).ravel()
        return kind, self.operators[:, rep_elems]

    def element_sizes(self) -> np.ndarray:
        return np.full(self.n_elems, self.det_jac)

    # -- boundary ----------------------------------------------------------
    def boundary_sides(self) -> list[str]:
        sides = []
        if not self.periodic[0]:
            sides += ["left", "right"]
        if not self.periodic[1]:
            sides += ["bottom", "top"]
        return sides

    @cached_property
    def side_data(self) -> dict:
        """Vectorized per-side face data for the Nitsche terms.

        For each non-periodic side: element ids ``(n_f,)``, physical weights
        ``(n_f, nq)``, operators ``(3, n_f, nq, (p+1)**2)`` ordered as value,
        normal derivative, Laplacian, quadrature coordinates and ``h_e``.
        """
        out = {}
        p1 = self.p + 1
        nq = self.quad_order
        for side in self.boundary_sides():
            axis = 0 if side in ("left", "right") else 1
            upper = side in ("right", "top")
            normal_sign = 1.0 if upper else -1.0
            kv_n = self.space.ku if axis == 0 else self.space.kv
            _, ders = basis_derivatives(kv_n, 1.0 if upper else 0.0, 2)
            scale = 1.0 / self.lengths[axis]
            fixed = ders[:, 0, :] * np.array([1.0, scale, scale**2])[:, None]
            along, coords = (self.tables_v if axis == 0 else self.tables_u)
            n_f = along.shape[1]
            e_fixed = (kv_n.n_elems - 1) if upper else 0
            faces = np.arange(n_f)
            if axis == 0:
                elems = e_fixed * self.n_ev + faces
                val = fixed[0][None, None, :, None] * along[0][:, :, None, :]
                dn = normal_sign * fixed[1][None, None, :, None] * along[0][:, :, None, :]
                lap = (fixed[2][None, None, :, None] * along[0][:, :, None, :]
                       + fixed[0][None, None, :, None] * along[2][:, :, None, :])
                face_len = self.jac[1]
                x = np.full_like(coords, self.rect[1] if upper else self.rect[0])
                y = coords
                normal = (normal_sign, 0.0)
            else:
                elems = faces * self.n_ev + e_fixed
                val = along[0][:, :, :, None] * fixed[0][None, None, None, :]
                dn = normal_sign * along[0][:, :, :, None] * fixed[1][None, None, None, :]
                lap = (along[2][:, :, :, None] * fixed[0][None, None, None, :]
                       + along[0][:, :, :, None] * fixed[2][None, None, None, :])
                face_len = self.jac[0]
                x = coords
                y = np.full_like(coords, self.rect[3] if upper else self.rect[2])
                normal = (0.0, normal_sign)
            ops = np.stack([val, dn, lap]).reshape(3, n_f, nq, p1 * p1)
            out[side] = dict(
                elements=elems,
                weights=np.broadcast_to(self.wq * face_len, (n_f, nq)).copy(),
                ops=ops,
                x=x,
                y=y,
                normal=normal,
                h_e=face_len,
            )
        return out


def build_mesh(space: SplineSpace, rect, quad_order: int | None = None) -> Mesh:
    return Mesh(space, rect, quad_order)


def boundary_faces(mesh: Mesh) -> list[BoundaryFace]:
    """One face per boundary element edge on every non-periodic side."""
    faces = []
    for side, d in mesh.side_data.items():
        for k, e in enumerate(d["elements"]):
            pts = np.stack([d["x"][k], d["y"][k]], axis=1)
            faces.append(
                BoundaryFace(
                    element=int(e),
                    side=side,
                    normal=d["normal"],
                    length=float(d["h_e"]),
                    h_e=float(d["h_e"]),
                    points=pts,
                    weights=d["weights"][k],
                )
            )
    return faces
