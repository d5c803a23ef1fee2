"""Residual and tangent assembly for the coupled concentration/height system.

Unknowns are packed as ``S = [C, H]`` (concentration control variables
followed by height control variables).  Every weak-form term is written as
a test operator (value, x/y derivative, Laplacian) contracted with a
pointwise coefficient; the tangent stores the derivative of each
coefficient with respect to each trial operator and contracts both sides
with the cached element basis tables.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .domain import Mesh
from .errors import PositivityLoss, SolverFailure
from .model import ModelParams, RoughnessSpec, ZeroRoughness

VAL, DX, DY, LAP = range(4)
# elements per batched GEMM
GROUP_SIZE = 2048
# boundary operator slots
BV, BN, BL = range(3)


@dataclass
class State:
    C: np.ndarray
    H: np.ndarray
    C_dot: np.ndarray
    H_dot: np.ndarray

    @classmethod
    def from_vectors(cls, S, S_dot) -> "State":
        n = len(S) // 2
        return cls(S[:n].copy(), S[n:].copy(), S_dot[:n].copy(), S_dot[n:].copy())

    @property
    def S(self) -> np.ndarray:
        return np.concatenate([self.C, self.H])

    @property
    def S_dot(self) -> np.ndarray:
        return np.concatenate([self.C_dot, self.H_dot])


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("FILMIGA_WORKERS", "1")))
    except ValueError:
        return 1


class _Pattern:
    """CSR sparsity of the element-overlap graph with an element scatter map."""

    def __init__(self, conn: np.ndarray, n: int):
        keys = (conn[:, :, None] * n + conn[:, None, :]).ravel()
        uniq, inverse = np.unique(keys, return_inverse=True)
        self.n = n
        self.nnz = uniq.size
        self.scatter = inverse.astype(np.int64)
        rows = uniq // n
        self.indices = (uniq % n).astype(np.int32)
        self.indptr = np.searchsorted(rows, np.arange(n + 1)).astype(np.int32)

    def matrix(self, local: np.ndarray) -> scipy.sparse.csr_matrix:
        data = np.bincount(self.scatter, weights=local.ravel(), minlength=self.nnz)
        return scipy.sparse.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def data(self, local: np.ndarray) -> np.ndarray:
        return np.bincount(self.scatter, weights=local.ravel(), minlength=self.nnz)


class Discretization:
    """Galerkin discretization of the film/surfactant system on ``mesh``.

    Boundary terms are added on every non-periodic side when ``nitsche`` is
    true; otherwise those sides carry the natural conditions only.
    """

    def __init__(
        self,
        mesh: Mesh,
        params: ModelParams,
        roughness: RoughnessSpec | None = None,
        nitsche: bool = True,
        workers: int | None = None,
    ):
        self.mesh = mesh
        self.params = params
        self.roughness = roughness if roughness is not None else ZeroRoughness()
        self.nitsche = nitsche
        self.workers = workers or worker_count()
        self.n_b = mesh.n_b
        self.ops = mesh.operators
        self.w = mesh.quad_weights
        self.conn = mesh.connectivity
        xq, yq = mesh.quad_xy
        self.f, self.fx, self.fy = (np.asarray(a) for a in self.roughness(xq, yq))
        self.sides = {}
        if nitsche:
            for side, d in mesh.side_data.items():
                f, fx, fy = self.roughness(d["x"], d["y"])
                self.sides[side] = dict(d, f=np.asarray(f))

    # ------------------------------------------------------------------
    @property
    def size(self) -> int:
        return 2 * self.n_b

    def split(self, S):
        return S[: self.n_b], S[self.n_b :]

    @cached_property
    def groups(self) -> list[tuple[int, np.ndarray]]:
        """``(kind, element ids)`` batches; each batch shares one operator table."""
        kind, _ = self.mesh.element_kinds
        order = np.argsort(kind, kind="stable")
        bounds = np.flatnonzero(np.diff(kind[order])) + 1
        out = []
        for ids in np.split(order, bounds):
            for s in range(0, ids.size, GROUP_SIZE):
                out.append((int(kind[ids[0]]), ids[s : s + GROUP_SIZE]))
        return out

    @cached_property
    def _kind_ops(self):
        """Per kind: operators ``(4, nq2, nl)`` flattened for GEMMs."""
        _, ops = self.mesh.element_kinds
        nq2, nl = ops.shape[2], ops.shape[3]
        val = ops.transpose(1, 0, 2, 3)  # (kind, op, q, a)
        eval_mat = val.reshape(-1, 4 * nq2, nl).transpose(0, 2, 1).copy()  # (kind, a, 4q)
        test_mat = (val * self.w[None, None, :, None]).reshape(-1, 4 * nq2, nl)  # (kind, 4q, a)
        return eval_mat, test_mat

    @cached_property
    def _pair_products(self):
        """``P[kind, T, U] = (w op_T)^T op_U`` as ``(kind, T, U, nq2, nl*nl)``."""
        _, ops = self.mesh.element_kinds
        opsw = ops * self.w[None, None, :, None]
        P = opsw[:, None, :, :, :, None] * ops[None, :, :, :, None, :]
        nk, nq2, nl = ops.shape[1], ops.shape[2], ops.shape[3]
        return P.transpose(2, 0, 1, 3, 4, 5).reshape(nk, 4, 4, nq2, nl * nl)

    def _map(self, fn):
        groups = self.groups
        if self.workers <= 1 or len(groups) == 1:
            return [fn(g) for g in groups]
        with ThreadPoolExecutor(min(self.workers, len(groups))) as pool:
            return list(pool.map(fn, groups))

    def _group_fields(self, coeffs, group):
        k, e = group
        local = coeffs[self.conn[e]]
        vals = local @ self._kind_ops[0][k]
        return vals.reshape(e.size, 4, -1).transpose(1, 0, 2)

    def field_at_quad(self, coeffs, elements=None):
        """Value, x/y derivative and Laplacian at quadrature points, ``(4, ne, nq2)``."""
        out = np.empty((4, self.mesh.n_elems, self.w.size))
        for g in self.groups:
            out[:, g[1]] = self._group_fields(coeffs, g)
        return out if elements is None else out[:, elements]

    def _face_fields(self, side, coeffs):
        d = self.sides[side]
        local = coeffs[self.conn[d["elements"]]]
        return np.einsum("ofqa,fa->ofq", d["ops"], local, optimize=True)

    @staticmethod
    def _check_positive(hp):
        m = float(np.min(hp))
        if not m > 0:
            raise PositivityLoss(m)

    # ------------------------------------------------------------------
    # pointwise coefficients

    def _volume_coefficients(self, fc, fh, f, fx, fy, cdot, hdot):
        p = self.params
        Cc = p.capillarity
        Cg = p.capillarity * p.gravity
        c, cx, cy, Lc = fc
        h, hx, hy, Lh = fh
        hp = h - f
        self._check_positive(hp)
        hpx, hpy = hx - fx, hy - fy
        M1, M2, M3 = hp, 0.5 * hp**2, hp**3 / 3.0
        dM2, dM3 = hp, hp**2
        _, s1, _ = p.eos(c)
        rc = np.empty((4,) + c.shape)
        rc[VAL] = cdot - p.inv_peclet * Lc
        common_c = -M1 * s1 * c + Cc * M2 * Lh
        rc[DX] = Cg * M2 * c * hx + common_c * cx + Cc * dM2 * c * Lh * hpx
        rc[DY] = Cg * M2 * c * hy + common_c * cy + Cc * dM2 * c * Lh * hpy
        rc[LAP] = Cc * M2 * c * Lh
        rh = np.empty_like(rc)
        rh[VAL] = hdot
        rh[DX] = Cc * dM3 * Lh * hpx + Cg * M3 * hx - M2 * s1 * cx
        rh[DY] = Cc * dM3 * Lh * hpy + Cg * M3 * hy - M2 * s1 * cy
        rh[LAP] = Cc * M3 * Lh
        return rc, rh

    def _volume_jacobian(self, fc, fh, f, fx, fy, mass, stiff):
        """Coefficient derivatives as ``{block: {(test_op, trial_op): array}}``."""
        p = self.params
        Cc = p.capillarity
        Cg = p.capillarity * p.gravity
        ip = p.inv_peclet
        c, cx, cy, Lc = fc
        h, hx, hy, Lh = fh
        hp = h - f
        self._check_positive(hp)
        hpx, hpy = hx - fx, hy - fy
        M1, M2, M3 = hp, 0.5 * hp**2, hp**3 / 3.0
        dM2, dM3, ddM3 = hp, hp**2, 2.0 * hp
        _, s1, s2 = p.eos(c)
        s = stiff
        one = np.ones_like(c)

        cc = {
            (VAL, VAL): mass * one,
            (VAL, LAP): -s * ip * one,
            (LAP, VAL): s * Cc * M2 * Lh,
        }
        dgrad = -M1 * s1 * c + Cc * M2 * Lh
        dval_base = -M1 * (s2 * c + s1)
        for T, g_c, g_h, g_hp in ((DX, cx, hx, hpx), (DY, cy, hy, hpy)):
            cc[(T, VAL)] = s * (Cg * M2 * g_h + dval_base * g_c + Cc * dM2 * Lh * g_hp)
            cc[(T, T)] = s * dgrad

        ch = {
            (LAP, VAL): s * Cc * dM2 * c * Lh,
            (LAP, LAP): s * Cc * M2 * c,
        }
        for T, g_c, g_h, g_hp in ((DX, cx, hx, hpx), (DY, cy, hy, hpy)):
            ch[(T, VAL)] = s * (
                Cg * dM2 * c * g_h - s1 * c * g_c + Cc * dM2 * Lh * g_c + Cc * c * Lh * g_hp
            )
            ch[(T, T)] = s * (Cg * M2 * c + Cc * dM2 * c * Lh)
            ch[(T, LAP)] = s * (Cc * M2 * g_c + Cc * dM2 * c * g_hp)

        hc = {}
        for T, g_c in ((DX, cx), (DY, cy)):
            hc[(T, VAL)] = s * (-M2 * s2 * g_c)
            hc[(T, T)] = s * (-M2 * s1)

        hh = {
            (VAL, VAL): mass * one,
            (LAP, VAL): s * Cc * dM3 * Lh,
            (LAP, LAP): s * Cc * M3,
        }
        for T, g_c, g_h, g_hp in ((DX, cx, hx, hpx), (DY, cy, hy, hpy)):
            hh[(T, VAL)] = s * (Cc * ddM3 * Lh * g_hp + Cg * dM3 * g_h - dM2 * s1 * g_c)
            hh[(T, T)] = s * (Cc * dM3 * Lh + Cg * M3)
            hh[(T, LAP)] = s * Cc * dM3 * g_hp
        return {(0, 0): cc, (0, 1): ch, (1, 0): hc, (1, 1): hh}

    def _alpha_h(self, side):
        return self.params.nitsche_scale / self.sides[side]["h_e"]

    def _boundary_coefficients(self, side, bc, bh):
        Cc = self.params.capillarity
        c = bc[BV]
        hp = bh[BV] - self.sides[side]["f"]
        self._check_positive(hp)
        Lh, hn = bh[BL], bh[BN]
        M2, M3 = 0.5 * hp**2, hp**3 / 3.0
        rc = {BN: -Cc * M2 * c * Lh}
        rh = {BN: -Cc * M3 * Lh + self._alpha_h(side) * hn, BL: -Cc * M3 * hn}
        return rc, rh

    def _boundary_jacobian(self, side, bc, bh, s):
        Cc = self.params.capillarity
        c = bc[BV]
        hp = bh[BV] - self.sides[side]["f"]
        self._check_positive(hp)
        Lh, hn = bh[BL], bh[BN]
        M2, M3, dM2, dM3 = 0.5 * hp**2, hp**3 / 3.0, hp, hp**2
        cc = {(BN, BV): -s * Cc * M2 * Lh}
        ch = {(BN, BV): -s * Cc * dM2 * c * Lh, (BN, BL): -s * Cc * M2 * c}
        hh = {
            (BN, BV): -s * Cc * dM3 * Lh,
            (BN, BL): -s * Cc * M3,
            (BN, BN): s * self._alpha_h(side) * np.ones_like(c),
            (BL, BV): -s * Cc * dM3 * hn,
            (BL, BN): -s * Cc * M3,
        }
        return {(0, 0): cc, (0, 1): ch, (1, 1): hh}

    # ------------------------------------------------------------------
    # residual

    def residual(self, S_dot, S) -> np.ndarray:
        """Residual vector ``[R^c, R^h]`` at rates ``S_dot`` and state ``S``."""
        C, H = self.split(np.asarray(S, dtype=float))
        Cd, Hd = self.split(np.asarray(S_dot, dtype=float))
        w = self.w

        ne, nl = self.conn.shape
        lc = np.empty((ne, nl))
        lh = np.empty((ne, nl))

        def local(group):
            k, e = group
            fc = self._group_fields(C, group)
            fh = self._group_fields(H, group)
            ops0 = self._kind_ops[0][k][:, : w.size]
            cdot = Cd[self.conn[e]] @ ops0
            hdot = Hd[self.conn[e]] @ ops0
            rc, rh = self._volume_coefficients(
                fc, fh, self.f[e], self.fx[e], self.fy[e], cdot, hdot
            )
            test = self._kind_ops[1][k]
            lc[e] = rc.transpose(1, 0, 2).reshape(e.size, -1) @ test
            lh[e] = rh.transpose(1, 0, 2).reshape(e.size, -1) @ test

        self._map(local)
        for side, d in self.sides.items():
            bc = self._face_fields(side, C)
            bh = self._face_fields(side, H)
            rcb, rhb = self._boundary_coefficients(side, bc, bh)
            e = d["elements"]
            wf = d["weights"]
            for T, coef in rcb.items():
                lc[e] += np.einsum("fqa,fq->fa", d["ops"][T], coef * wf)
            for T, coef in rhb.items():
                lh[e] += np.einsum("fqa,fq->fa", d["ops"][T], coef * wf)
        conn = self.conn.ravel()
        Rc = np.bincount(conn, weights=lc.ravel(), minlength=self.n_b)
        Rh = np.bincount(conn, weights=lh.ravel(), minlength=self.n_b)
        return np.concatenate([Rc, Rh])

    # ------------------------------------------------------------------
    # tangent

    @cached_property
    def pattern(self) -> _Pattern:
        return _Pattern(self.conn, self.n_b)

    @cached_property
    def _block_layout(self):
        """Permutation from stacked block data to the 2x2 block CSR matrix."""
        pat = self.pattern
        blocks = []
        for k in range(4):
            ids = np.arange(pat.nnz, dtype=float) + k * pat.nnz + 1.0
            blocks.append(
                scipy.sparse.csr_matrix((ids, pat.indices, pat.indptr), shape=(pat.n, pat.n))
            )
        big = scipy.sparse.bmat([[blocks[0], blocks[1]], [blocks[2], blocks[3]]], format="csr")
        perm = big.data.astype(np.int64) - 1
        return perm, big.indices.copy(), big.indptr.copy()

    def _local_blocks(self, C, H, mass, stiff, group, out):
        k, e = group
        fc = self._group_fields(C, group)
        fh = self._group_fields(H, group)
        jac = self._volume_jacobian(fc, fh, self.f[e], self.fx[e], self.fy[e], mass, stiff)
        P = self._pair_products[k]
        nl = self.conn.shape[1]
        for b, blk in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            pairs = list(jac[blk].items())
            coef = np.concatenate([c for _, c in pairs], axis=1)
            prod = np.concatenate([P[T, U] for (T, U), _ in pairs], axis=0)
            out[b, e] = (coef @ prod).reshape(e.size, nl, nl)

    def tangent_blocks_local(self, S_dot, S, mass, stiff) -> np.ndarray:
        """Element matrices ``(4, ne, nl, nl)`` of ``mass dR/dS_dot + stiff dR/dS``."""
        C, H = self.split(np.asarray(S, dtype=float))
        ne, nl = self.conn.shape
        local = np.empty((4, ne, nl, nl))
        self._map(lambda g: self._local_blocks(C, H, mass, stiff, g, local))
        for side, d in self.sides.items():
            bc = self._face_fields(side, C)
            bh = self._face_fields(side, H)
            jac = self._boundary_jacobian(side, bc, bh, stiff)
            e = d["elements"]
            ops = d["ops"]
            opsw = ops * d["weights"][None, :, :, None]
            for k, blk in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
                for (T, U), coef in jac.get(blk, {}).items():
                    local[k, e] += np.matmul(
                        opsw[T].transpose(0, 2, 1), coef[:, :, None] * ops[U]
                    )
        return local

    def tangent(self, S_dot, S, mass: float = 1.0, stiff: float = 1.0) -> scipy.sparse.csr_matrix:
        """Sparse ``mass * dR/dS_dot + stiff * dR/dS``."""
        local = self.tangent_blocks_local(S_dot, S, mass, stiff)
        pat = self.pattern
        data = np.concatenate([pat.data(local[k]) for k in range(4)])
        perm, indices, indptr = self._block_layout
        n = 2 * self.n_b
        return scipy.sparse.csr_matrix((data[perm], indices, indptr), shape=(n, n))

    # ------------------------------------------------------------------
    # mass matrix and projection

    @cached_property
    def mass_matrix(self) -> scipy.sparse.csr_matrix:
        ops0 = self.ops[VAL]
        local = np.einsum("eqa,q,eqb->eab", ops0, self.w, ops0, optimize=True)
        return self.pattern.matrix(local)

    @cached_property
    def _mass_lu(self):
        return scipy.sparse.linalg.splu(self.mass_matrix.tocsc(), permc_spec="MMD_AT_PLUS_A")

    def load_vector(self, g) -> np.ndarray:
        xq, yq = self.mesh.quad_xy
        vals = np.asarray(g(xq, yq), dtype=float) * np.ones_like(xq)
        local = np.einsum("eqa,eq->ea", self.ops[VAL], vals * self.w)
        return np.bincount(self.conn.ravel(), weights=local.ravel(), minlength=self.n_b)

    def l2_project(self, g) -> np.ndarray:
        b = self.load_vector(g)
        a = self._mass_lu.solve(b)
        if not np.all(np.isfinite(a)):
            raise SolverFailure("mass matrix solve produced non-finite values")
        return a

    def integrate(self, coeffs) -> float:
        vals = np.einsum("eqa,ea->eq", self.ops[VAL], coeffs[self.conn])
        return float(np.sum(vals * self.w))

    def integrate_function(self, g) -> float:
        xq, yq = self.mesh.quad_xy
        return float(np.sum(np.asarray(g(xq, yq)) * self.w))

    def consistent_rates(self, S) -> np.ndarray:
        """Rates ``S_dot`` with ``R(S_dot, S) = 0`` (block mass-matrix solve)."""
        R0 = self.residual(np.zeros(self.size), S)
        C = self._mass_lu.solve(-R0[: self.n_b])
        H = self._mass_lu.solve(-R0[self.n_b :])
        return np.concatenate([C, H])


# -- functional wrappers ------------------------------------------------------


def assemble_residual(S_dot, S, mesh, params, roughness=None, nitsche=True):
    return Discretization(mesh, params, roughness, nitsche).residual(S_dot, S)


def assemble_tangent(S_dot, S, mesh, params, alpha_m, alpha_f, gamma, dt, roughness=None, nitsche=True):
    disc = Discretization(mesh, params, roughness, nitsche)
    return disc.tangent(S_dot, S, mass=alpha_m, stiff=alpha_f * gamma * dt)


def l2_project(mesh, g, params=None):
    return Discretization(mesh, params or ModelParams(), None, nitsche=False).l2_project(g)
