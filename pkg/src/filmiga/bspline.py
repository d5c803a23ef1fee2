"""Uniform B-spline bases on the unit parameter interval and their tensor products.

Knot vectors are either *open* (clamped, first/last knot repeated ``p+1``
times) or *periodic*.  A periodic knot vector stores ``p`` ghost knots on
each side of ``[0, 1]`` and its basis functions are wrapped by index, so the
``n`` elements carry exactly ``n`` basis functions.

Evaluation routines work on arrays of parameters; the span-local layout is
``(..., p+1)`` with local index ``j`` belonging to global function
``span + j`` (modulo ``n`` for periodic knot vectors).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.sparse

from .errors import ConfigurationError, DomainError

Topology = Literal["open", "periodic"]


@dataclass(frozen=True)
class KnotVector:
    """Uniform knot vector of degree ``degree`` over ``n_elems`` spans of [0, 1]."""

    degree: int
    knots: np.ndarray = field(repr=False)
    topology: Topology = "open"

    @property
    def periodic(self) -> bool:
        return self.topology == "periodic"

    @property
    def n_elems(self) -> int:
        return len(self.knots) - 2 * self.degree - 1

    @property
    def n_basis(self) -> int:
        if self.periodic:
            return self.n_elems
        return self.n_elems + self.degree

    @property
    def spacing(self) -> float:
        return 1.0 / self.n_elems

    def breakpoints(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_elems + 1)

    def global_index(self, span, local):
        """Global basis index of local function ``local`` on element ``span``."""
        idx = np.asarray(span) + np.asarray(local)
        if self.periodic:
            idx = idx % self.n_elems
        return idx

    def connectivity(self) -> np.ndarray:
        """Array ``(n_elems, p+1)`` of global basis indices per element."""
        spans = np.arange(self.n_elems)[:, None]
        return self.global_index(spans, np.arange(self.degree + 1)[None, :])


def make_knot_vector(n_elems: int, p: int = 3, topology: Topology = "open") -> KnotVector:
    """Uniform knot vector with ``n_elems`` spans on [0, 1].

    >>> make_knot_vector(4, 3).knots
    array([0.  , 0.  , 0.  , 0.  , 0.25, 0.5 , 0.75, 1.  , 1.  , 1.  , 1.  ])
    """
    if int(n_elems) != n_elems or n_elems < 1:
        raise ConfigurationError(f"n_elems must be a positive integer, got {n_elems!r}")
    if int(p) != p or p < 1:
        raise ConfigurationError(f"degree must be a positive integer, got {p!r}")
    if topology not in ("open", "periodic"):
        raise ConfigurationError(f"unknown knot topology {topology!r}")
    n_elems, p = int(n_elems), int(p)
    inner = np.linspace(0.0, 1.0, n_elems + 1)
    if topology == "open":
        knots = np.concatenate([np.zeros(p), inner, np.ones(p)])
    else:
        if n_elems < p + 1:
            raise ConfigurationError(
                f"periodic knot vector of degree {p} needs at least {p + 1} elements"
            )
        step = 1.0 / n_elems
        knots = np.concatenate(
            [-step * np.arange(p, 0, -1), inner, 1.0 + step * np.arange(1, p + 1)]
        )
    return KnotVector(p, knots, topology)


def find_span(kv: KnotVector, u) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(span, u_wrapped)`` for parameters ``u``.

    Periodic parameters are wrapped into [0, 1); open ones must lie in
    [0, 1] up to a small tolerance.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if not np.all(np.isfinite(u)):
        raise DomainError("non-finite parameter value")
    n = kv.n_elems
    if kv.periodic:
        u = u - np.floor(u)
        u = np.where(u >= 1.0, 0.0, u)
    else:
        tol = 1e-12
        if np.any(u < -tol) or np.any(u > 1.0 + tol):
            bad = u[(u < -tol) | (u > 1.0 + tol)][0]
            raise DomainError(f"parameter {bad!r} outside [0, 1]")
        u = np.clip(u, 0.0, 1.0)
    span = np.minimum(np.floor(u * n).astype(np.int64), n - 1)
    return span, u


def _safe_div(num, den):
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


def basis_derivatives(kv: KnotVector, u, nderiv: int = 2, span=None):
    """Nonzero basis functions and derivatives at parameters ``u``.

    Returns ``(span, ders)`` where ``ders`` has shape ``(nderiv+1, m, p+1)``
    and ``ders[k, i, j]`` is the ``k``-th parametric derivative of the
    ``j``-th local function at ``u[i]``.  Passing ``span`` evaluates the
    polynomial piece of that element instead of the one containing ``u``,
    which gives one-sided limits at a knot.
    """
    found, u = find_span(kv, u)
    if span is None:
        span = found
    else:
        span = np.broadcast_to(np.asarray(span, dtype=np.int64), u.shape).copy()
        if np.any(span < 0) or np.any(span >= kv.n_elems):
            raise DomainError("span index out of range")
        if kv.periodic:
            # undo the wrap when the requested piece sits across the seam
            u = np.where(u < span / kv.n_elems - 0.5, u + 1.0, u)
    p = kv.degree
    t = kv.knots
    k = span + p  # knot interval index with t[k] <= u < t[k+1]

    # values for every degree 0..p on this span
    vals = [np.ones((u.size, 1))]
    for d in range(1, p + 1):
        prev = vals[-1]
        cur = np.zeros((u.size, d + 1))
        for j in range(d + 1):
            i = k - d + j
            if j >= 1:
                cur[:, j] += _safe_div(u - t[i], t[i + d] - t[i]) * prev[:, j - 1]
            if j <= d - 1:
                cur[:, j] += _safe_div(t[i + d + 1] - u, t[i + d + 1] - t[i + 1]) * prev[:, j]
        vals.append(cur)

    def lift(v, d):
        # derivative of the degree-d functions written via degree-(d-1) data v
        out = np.zeros((u.size, d + 1))
        for j in range(d + 1):
            i = k - d + j
            if j >= 1:
                out[:, j] += d * _safe_div(v[:, j - 1], t[i + d] - t[i])
            if j <= d - 1:
                out[:, j] -= d * _safe_div(v[:, j], t[i + d + 1] - t[i + 1])
        return out

    ders = np.zeros((nderiv + 1, u.size, p + 1))
    for r in range(nderiv + 1):
        if r > p:
            continue
        v = vals[p - r]
        for d in range(p - r + 1, p + 1):
            v = lift(v, d)
        ders[r] = v
    return span, ders


@dataclass(frozen=True)
class BasisEval:
    """Local basis data at a single parameter value."""

    span: int
    values: np.ndarray
    d1: np.ndarray
    d2: np.ndarray


def eval_basis(kv: KnotVector, u: float) -> BasisEval:
    """Values, first and second derivatives of the ``p+1`` functions at ``u``."""
    span, ders = basis_derivatives(kv, u, 2)
    return BasisEval(int(span[0]), ders[0, 0].copy(), ders[1, 0].copy(), ders[2, 0].copy())


def collocation_matrix(kv: KnotVector, u, deriv: int = 0) -> scipy.sparse.csr_matrix:
    """Sparse matrix ``B`` with ``B[i, A] = d^deriv N_A / du^deriv (u_i)``."""
    span, ders = basis_derivatives(kv, u, max(deriv, 0))
    m = span.size
    p = kv.degree
    rows = np.repeat(np.arange(m), p + 1)
    cols = kv.global_index(span[:, None], np.arange(p + 1)[None, :]).ravel()
    # duplicates (periodic wrap on very coarse meshes) are summed by csr conversion
    return scipy.sparse.coo_matrix(
        (ders[deriv].ravel(), (rows, cols)), shape=(m, kv.n_basis)
    ).tocsr()


@dataclass(frozen=True)
class SplineSpace:
    """Tensor-product space; global index ``A = iu * n_v + iv``."""

    ku: KnotVector
    kv: KnotVector

    @property
    def n_u(self) -> int:
        return self.ku.n_basis

    @property
    def n_v(self) -> int:
        return self.kv.n_basis

    @property
    def n_b(self) -> int:
        return self.n_u * self.n_v

    @property
    def degree(self) -> int:
        return self.ku.degree


def make_space(n_u: int, n_v: int, p: int = 3, periodic=(False, False)) -> SplineSpace:
    return SplineSpace(
        make_knot_vector(n_u, p, "periodic" if periodic[0] else "open"),
        make_knot_vector(n_v, p, "periodic" if periodic[1] else "open"),
    )


@dataclass(frozen=True)
class TensorBasisEval:
    """Local 2D basis data at one parametric point.

    Arrays are flattened over the local ``(p+1)**2`` functions with the
    v-index running fastest; ``indices`` holds their global numbers.
    """

    indices: np.ndarray
    values: np.ndarray
    du: np.ndarray
    dv: np.ndarray
    duu: np.ndarray
    duv: np.ndarray
    dvv: np.ndarray

    @property
    def grad(self) -> np.ndarray:
        return np.stack([self.du, self.dv])

    @property
    def laplacian(self) -> np.ndarray:
        return self.duu + self.dvv


def tensor_eval(space: SplineSpace, u: float, v: float) -> TensorBasisEval:
    bu = eval_basis(space.ku, u)
    bv = eval_basis(space.kv, v)
    p1 = space.degree + 1
    iu = space.ku.global_index(bu.span, np.arange(p1))
    iv = space.kv.global_index(bv.span, np.arange(p1))
    indices = (iu[:, None] * space.n_v + iv[None, :]).ravel()
    return TensorBasisEval(
        indices=indices,
        values=np.outer(bu.values, bv.values).ravel(),
        du=np.outer(bu.d1, bv.values).ravel(),
        dv=np.outer(bu.values, bv.d1).ravel(),
        duu=np.outer(bu.d2, bv.values).ravel(),
        duv=np.outer(bu.d1, bv.d1).ravel(),
        dvv=np.outer(bu.values, bv.d2).ravel(),
    )
