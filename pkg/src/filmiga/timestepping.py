"""Generalized-alpha integration with an embedded backward-Euler error estimate.

A *problem* is any object exposing

* ``residual(S_dot, S) -> ndarray``
* ``tangent(S_dot, S, mass, stiff) -> sparse matrix`` returning
  ``mass * dR/dS_dot + stiff * dR/dS``.

Backward Euler is the generalized-alpha update with
``alpha_m = alpha_f = gamma = 1``, so both candidate solutions share one
Newton loop.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import ConfigurationError, FilmIGAError, PositivityLoss, SolverFailure
from .linsolve import Factorization

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AlphaParams:
    rho_inf: float
    alpha_m: float
    alpha_f: float
    gamma: float


def alpha_parameters(rho_inf: float) -> AlphaParams:
    if not 0.0 <= rho_inf <= 1.0:
        raise ConfigurationError(f"rho_inf must lie in [0, 1], got {rho_inf!r}")
    alpha_m = 0.5 * (3.0 - rho_inf) / (1.0 + rho_inf)
    alpha_f = 1.0 / (1.0 + rho_inf)
    return AlphaParams(rho_inf, alpha_m, alpha_f, 0.5 + alpha_m - alpha_f)


BACKWARD_EULER = AlphaParams(0.0, 1.0, 1.0, 1.0)


@dataclass(frozen=True)
class StepControls:
    beta: float = 0.9
    alpha_min: float = 0.1
    alpha_max: float = 10.0
    tol_abs: float = 1e-4
    tol_rel: float = 1e-4
    newton_max_iter: int = 8
    newton_rel_tol: float = 1e-6
    newton_abs_tol: float = 1e-10
    max_retries: int = 12
    # "full": new tangent + factorization every iteration;
    # "modified": keep both while the iteration contracts fast enough
    newton_mode: str = "full"
    reuse_contraction: float = 0.25
    linear_method: str = "direct"
    linear_tol: float = 1e-10
    linear_max_iter: int = 200
    dt_min: float = 1e-12

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ConfigurationError("safety factor beta must lie in (0, 1)")
        if not 0.0 < self.alpha_min < 1.0 < self.alpha_max:
            raise ConfigurationError("need 0 < alpha_min < 1 < alpha_max")
        if self.newton_mode not in ("full", "modified"):
            raise ConfigurationError(f"unknown newton mode {self.newton_mode!r}")


@dataclass
class NewtonStats:
    iterations: int = 0
    residual_norms: list[float] = field(default_factory=list)
    factorizations: int = 0
    converged: bool = False

    @property
    def initial_norm(self) -> float:
        return self.residual_norms[0] if self.residual_norms else math.nan

    @property
    def final_norm(self) -> float:
        return self.residual_norms[-1] if self.residual_norms else math.nan


@dataclass
class StepReport:
    t: float
    accepted: bool
    dt: float
    dt_next: float
    error: float
    newton_iterations: int
    positivity_loss: bool = False
    attempts: int = 1


class _Cache:
    """Factorizations kept between Newton iterations for one scheme."""

    def __init__(self):
        self.fac: Factorization | None = None
        self.key = None


def newton_stage(
    problem,
    S_n: np.ndarray,
    Sd_n: np.ndarray,
    dt: float,
    alpha: AlphaParams,
    controls: StepControls,
    cache: _Cache | None = None,
    guess: np.ndarray | None = None,
):
    """Predictor/multicorrector solve of ``R(S_dot_{n+am}, S_{n+af}) = 0``.

    The iteration starts from the constant-state predictor unless a rate
    ``guess`` for ``S_dot_{n+1}`` is given; the convergence test is relative
    to the residual at the predictor either way.  In modified mode a failed
    solve is repeated once with a fresh tangent at every iteration before
    the failure is reported.
    """
    modified = controls.newton_mode == "modified" and cache is not None
    args = (problem, S_n, Sd_n, dt, alpha, controls)
    if not modified:
        return _newton(*args, _Cache(), False, guess)
    try:
        return _newton(*args, cache, True, guess)
    except SolverFailure:
        cache.fac = None
        return _newton(*args, cache, False, guess)


def _newton(problem, S_n, Sd_n, dt, alpha, controls, cache, modified, guess=None):
    am, af, gamma = alpha.alpha_m, alpha.alpha_f, alpha.gamma
    Sd = (gamma - 1.0) / gamma * Sd_n
    S = S_n.copy()
    stats = NewtonStats()
    ref_norm = None
    if guess is not None:
        ref_norm = float(np.linalg.norm(problem.residual(Sd_n + am * (Sd - Sd_n), S_n)))
        Sd = np.asarray(guess, dtype=float).copy()
        S = S_n + dt * ((1.0 - gamma) * Sd_n + gamma * Sd)
    stale = True
    if modified and cache.fac is not None:
        stale = False
    prev_norm = None
    for it in range(controls.newton_max_iter + 1):
        Sd_am = Sd_n + am * (Sd - Sd_n)
        S_af = S_n + af * (S - S_n)
        R = problem.residual(Sd_am, S_af)
        norm = float(np.linalg.norm(R))
        if not math.isfinite(norm):
            raise SolverFailure("non-finite residual")
        stats.residual_norms.append(norm)
        if ref_norm is None:
            ref_norm = norm
        target = max(controls.newton_rel_tol * ref_norm, controls.newton_abs_tol)
        if norm <= target:
            stats.converged = True
            break
        if it == controls.newton_max_iter:
            break
        if prev_norm is not None and modified and norm > controls.reuse_contraction * prev_norm:
            stale = True
        if prev_norm is not None and norm > 10.0 * max(ref_norm, stats.residual_norms[0]):
            raise SolverFailure("Newton iteration diverging")
        prev_norm = norm
        if stale or not modified:
            K = problem.tangent(Sd_am, S_af, mass=am, stiff=af * gamma * dt)
            cache.fac = Factorization(
                K, controls.linear_method, tol=controls.linear_tol, max_iter=controls.linear_max_iter
            )
            stats.factorizations += 1
            stale = False
        dSd, _ = cache.fac.solve(-R)
        Sd = Sd + dSd
        S = S + gamma * dt * dSd
        stats.iterations += 1
    if not stats.converged:
        cache.fac = None
        raise SolverFailure(
            f"Newton did not converge in {controls.newton_max_iter} iterations "
            f"(|R| {stats.initial_norm:.3e} -> {stats.final_norm:.3e})"
        )
    return S, Sd, stats


def step_generalized_alpha(problem, S_n, Sd_n, dt, controls: StepControls, alpha: AlphaParams, cache=None):
    """One generalized-alpha step; returns ``(S_{n+1}, S_dot_{n+1}, NewtonStats)``."""
    if not dt > 0:
        raise ConfigurationError("time step must be positive")
    return newton_stage(problem, np.asarray(S_n, float), np.asarray(Sd_n, float), dt, alpha, controls, cache)


def step_backward_euler(problem, S_n, Sd_n, dt, controls: StepControls, cache=None, S_guess=None):
    """Implicit Euler step of the same residual (used for error estimation).

    ``S_guess`` (typically the generalized-alpha result) seeds the Newton
    iteration; the converged solution does not depend on it.
    """
    if not dt > 0:
        raise ConfigurationError("time step must be positive")
    S_n = np.asarray(S_n, float)
    guess = None if S_guess is None else (np.asarray(S_guess, float) - S_n) / dt
    return newton_stage(
        problem, S_n, np.asarray(Sd_n, float), dt, BACKWARD_EULER, controls, cache, guess
    )


def truncation_error(S_ga, S_be, controls: StepControls) -> float:
    diff = np.abs(S_ga - S_be)
    tol = controls.tol_abs + np.maximum(np.abs(S_ga), np.abs(S_be)) * controls.tol_rel
    return float(np.sqrt(np.mean((diff / tol) ** 2)))


def step_factor(error: float, controls: StepControls) -> float:
    if error == 0.0:
        return controls.alpha_max
    if not math.isfinite(error):
        return controls.alpha_min
    return min(controls.alpha_max, max(controls.alpha_min, controls.beta * error**-0.5))


def adapt_step(S_ga, S_be, dt: float, controls: StepControls):
    """``(accept, dt_next, e)`` from the two candidate solutions."""
    e = truncation_error(np.asarray(S_ga, float), np.asarray(S_be, float), controls)
    return e <= 1.0, dt * step_factor(e, controls), e


class TimeIntegrator:
    """Drives a problem from ``t0`` to ``t_final``.

    With ``fixed_dt`` set, every step is a plain generalized-alpha step;
    otherwise each step is repeated (up to ``controls.max_retries`` times)
    until the backward-Euler error estimate accepts it.
    """

    def __init__(self, problem, controls: StepControls | None = None, rho_inf: float = 0.5, fixed_dt: float | None = None):
        self.problem = problem
        self.controls = controls or StepControls()
        self.alpha = alpha_parameters(rho_inf)
        self.fixed_dt = fixed_dt
        self._ga_cache = _Cache()
        self._be_cache = _Cache()

    def _caches(self):
        if self.controls.newton_mode == "modified":
            return self._ga_cache, self._be_cache
        return None, None

    def step(self, t, S, Sd, dt):
        """Attempt one step; returns ``(S1, Sd1, report)`` with a possibly rejected report."""
        ga_cache, be_cache = self._caches()
        iters = 0
        try:
            S_ga, Sd_ga, st = step_generalized_alpha(
                self.problem, S, Sd, dt, self.controls, self.alpha, ga_cache
            )
            iters += st.iterations
            if self.fixed_dt is not None:
                return S_ga, Sd_ga, StepReport(t + dt, True, dt, dt, 0.0, iters)
            S_be, _, st_be = step_backward_euler(
                self.problem, S, Sd, dt, self.controls, be_cache, S_guess=S_ga
            )
            iters += st_be.iterations
        except (PositivityLoss, SolverFailure) as exc:
            log.info("step at t=%.6g dt=%.3e failed: %s", t, dt, exc)
            positivity = isinstance(exc, PositivityLoss)
            return None, None, StepReport(
                t, False, dt, dt * self.controls.alpha_min, math.inf, iters, positivity
            )
        accept, dt_next, e = adapt_step(S_ga, S_be, dt, self.controls)
        return S_ga, Sd_ga, StepReport(t + dt if accept else t, accept, dt, dt_next, e, iters)

    def run(
        self,
        S0,
        Sd0,
        t_final: float,
        dt0: float,
        stops: Iterable[float] = (),
        on_step: Callable | None = None,
        t0: float = 0.0,
    ):
        """Integrate to ``t_final``; steps are clipped to land on ``stops``.

        ``on_step(t, S, Sd, report)`` is called after every accepted step.
        Returns ``(S, Sd, reports)`` where ``reports`` lists every attempt.
        """
        S = np.asarray(S0, dtype=float).copy()
        Sd = np.asarray(Sd0, dtype=float).copy()
        t = t0
        dt = self.fixed_dt if self.fixed_dt is not None else dt0
        marks = sorted({float(s) for s in stops if t0 < s < t_final} | {float(t_final)})
        reports: list[StepReport] = []
        eps = 1e-10 * max(1.0, abs(t_final))
        while t < t_final - eps:
            next_mark = next(m for m in marks if m > t + eps)
            attempts = 0
            while True:
                attempts += 1
                h = min(dt, next_mark - t)
                clipped = h < dt
                S1, Sd1, rep = self.step(t, S, Sd, h)
                rep.attempts = attempts
                reports.append(rep)
                if rep.accepted:
                    break
                if self.fixed_dt is not None:
                    raise SolverFailure(f"fixed step failed at t={t:.6g}")
                dt = rep.dt_next
                if attempts >= self.controls.max_retries or dt < self.controls.dt_min:
                    raise SolverFailure(
                        f"step size control gave up at t={t:.6g} after {attempts} attempts"
                    )
            t = next_mark if clipped or abs(next_mark - (t + h)) <= eps else t + h
            S, Sd = S1, Sd1
            if self.fixed_dt is None:
                # a clipped step keeps the unclipped proposal unless the error asks for less
                dt = max(rep.dt_next, dt) if clipped and rep.error <= 1.0 else rep.dt_next
            if on_step is not None:
                on_step(t, S, Sd, rep)
        return S, Sd, reports


class LinearODE:
    """``M y' + A y = 0`` in the problem interface (verification helper)."""

    def __init__(self, M, A):
        import scipy.sparse

        self.M = scipy.sparse.csr_matrix(M)
        self.A = scipy.sparse.csr_matrix(A)

    def residual(self, S_dot, S):
        return self.M @ S_dot + self.A @ S

    def tangent(self, S_dot, S, mass=1.0, stiff=1.0):
        return (mass * self.M + stiff * self.A).tocsr()


def integrate_fixed(problem, S0, Sd0, dt: float, n_steps: int, controls=None, rho_inf=0.5):
    integ = TimeIntegrator(problem, controls, rho_inf, fixed_dt=dt)
    S, Sd, _ = integ.run(S0, Sd0, dt * n_steps, dt)
    return S, Sd


__all__ = [
    "AlphaParams",
    "StepControls",
    "StepReport",
    "NewtonStats",
    "TimeIntegrator",
    "LinearODE",
    "integrate_fixed",
    "alpha_parameters",
    "adapt_step",
    "step_generalized_alpha",
    "step_backward_euler",
    "truncation_error",
    "step_factor",
    "FilmIGAError",
]
