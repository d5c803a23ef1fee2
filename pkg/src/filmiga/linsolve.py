"""Sparse linear solves for the Newton corrections."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .errors import ConfigurationError, SolverFailure

METHODS = ("direct", "krylov")


@dataclass
class LinearSolveReport:
    method: str
    iterations: int
    residual_norm: float
    reused: bool = False


class Factorization:
    """Prepared solver for one matrix (LU, or ILU-preconditioned GMRES)."""

    def __init__(self, K, method: str = "direct", tol: float = 1e-10, max_iter: int = 200, restart: int = 50):
        if method not in METHODS:
            raise ConfigurationError(f"unknown linear solver method {method!r}")
        K = scipy.sparse.csc_matrix(K)
        if K.shape[0] != K.shape[1]:
            raise SolverFailure(f"matrix is not square: {K.shape}")
        self.K = K
        self.method = method
        self.tol = tol
        self.max_iter = max_iter
        self.restart = restart
        self.uses = 0
        self.pivoting = False
        try:
            if method == "direct":
                self._lu = self._splu(0.0)
            else:
                self._lu = scipy.sparse.linalg.spilu(K, drop_tol=1e-5, fill_factor=20)
        except RuntimeError as exc:  # singular or structurally deficient
            raise SolverFailure(f"factorization failed: {exc}") from exc

    def _splu(self, pivot_threshold):
        # Diagonal pivots keep the fill-reducing ordering intact.  Row
        # pivoting can triple the fill once the time step makes the c-h
        # coupling dominate the c diagonal, so it is only a fallback.
        return scipy.sparse.linalg.splu(self.K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=pivot_threshold)

    def _refactor_with_pivoting(self):
        try:
            self._lu = self._splu(0.1)
        except RuntimeError as exc:
            raise SolverFailure(f"factorization failed: {exc}") from exc
        self.pivoting = True

    def solve(self, rhs, K=None) -> tuple[np.ndarray, LinearSolveReport]:
        """Solve ``K x = rhs``; ``K`` defaults to the factored matrix.

        Passing a different (nearby) matrix solves that system with GMRES,
        using this factorization as right preconditioner.
        """
        rhs = np.asarray(rhs, dtype=float)
        reused = self.uses > 0
        self.uses += 1
        b_norm = np.linalg.norm(rhs)
        if b_norm == 0:
            return np.zeros_like(rhs), LinearSolveReport(self.method, 0, 0.0, reused)
        A = self.K if K is None else K
        if self.method == "direct" and K is None:
            x, r, its = self._direct(rhs, b_norm)
            if not self.pivoting and not np.linalg.norm(r) <= 1e3 * self.tol * b_norm:
                self._refactor_with_pivoting()
                x, r, its = self._direct(rhs, b_norm)
        else:
            x, its = self._gmres(A, rhs)
            r = rhs - A @ x
        res = float(np.linalg.norm(r) / b_norm)
        if not np.all(np.isfinite(x)) or not np.isfinite(res):
            raise SolverFailure("linear solve produced non-finite values")
        return x, LinearSolveReport(self.method, its, res, reused)

    def _direct(self, rhs, b_norm):
        x = self._lu.solve(rhs)
        r = rhs - self.K @ x
        its = 0
        if np.linalg.norm(r) > self.tol * b_norm:
            x = x + self._lu.solve(r)  # one step of iterative refinement
            r = rhs - self.K @ x
            its = 1
        return x, r, its

    def _gmres(self, A, rhs):
        n = A.shape[0]
        lu = self._lu
        AM = scipy.sparse.linalg.LinearOperator((n, n), matvec=lambda y: A @ lu.solve(y), dtype=float)
        count = [0]

        def cb(_):
            count[0] += 1

        y, info = scipy.sparse.linalg.gmres(
            AM, rhs, rtol=self.tol, atol=0.0, restart=self.restart,
            maxiter=self.max_iter, callback=cb, callback_type="pr_norm",
        )
        x = lu.solve(y)
        if info < 0:
            raise SolverFailure(f"GMRES breakdown (info={info})")
        return x, count[0]


def solve(K, rhs, method: str = "direct", tol: float = 1e-10, max_iter: int = 200):
    """Solve ``K x = rhs`` once; returns ``(x, LinearSolveReport)``."""
    fac = Factorization(K, method, tol=tol, max_iter=max_iter)
    x, report = fac.solve(rhs)
    if report.residual_norm > max(tol, 1e-10) * 10 and method == "direct":
        raise SolverFailure(f"direct solve residual {report.residual_norm:.2e} too large")
    return x, report
