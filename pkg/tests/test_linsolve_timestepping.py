import math

import numpy as np
import pytest
import scipy.sparse
import scipy.sparse.linalg
from scipy.linalg import expm

from filmiga.errors import ConfigurationError, SolverFailure
from filmiga.linsolve import Factorization, solve
from filmiga.timestepping import (
    LinearODE,
    StepControls,
    TimeIntegrator,
    adapt_step,
    alpha_parameters,
    integrate_fixed,
    step_backward_euler,
    step_factor,
    truncation_error,
)


def laplacian_1d(n):
    return scipy.sparse.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n), format="csr") * (n + 1) ** 2


# -- linear solves -----------------------------------------------------------


@pytest.mark.parametrize("method", ["direct", "krylov"])
def test_solve_nonsymmetric_system(method):
    rng = np.random.default_rng(0)
    n = 60
    K = laplacian_1d(n) + scipy.sparse.diags(rng.random(n - 1), 1) * 50
    b = rng.standard_normal(n)
    x, rep = solve(K, b, method=method)
    assert np.linalg.norm(K @ x - b) <= 1e-9 * np.linalg.norm(b)
    assert rep.method == method


def test_factorization_reuse_for_nearby_matrix():
    n = 40
    K = laplacian_1d(n) + scipy.sparse.identity(n)
    fac = Factorization(K)
    b = np.ones(n)
    fac.solve(b)
    K2 = K + 0.05 * scipy.sparse.identity(n)
    x, rep = fac.solve(b, K2)
    assert rep.reused
    assert np.linalg.norm(K2 @ x - b) <= 1e-9 * np.linalg.norm(b)


def test_zero_rhs_and_bad_inputs():
    fac = Factorization(scipy.sparse.identity(3))
    x, rep = fac.solve(np.zeros(3))
    assert np.all(x == 0) and rep.residual_norm == 0
    with pytest.raises(SolverFailure):
        Factorization(scipy.sparse.csr_matrix((3, 3)))
    with pytest.raises(ConfigurationError):
        Factorization(scipy.sparse.identity(3), method="magic")


# -- generalized-alpha parameters and controller ---------------------------


@pytest.mark.parametrize("rho", [0.0, 0.25, 0.5, 1.0])
def test_alpha_parameters_formulae(rho):
    a = alpha_parameters(rho)
    assert a.alpha_m == pytest.approx(0.5 * (3 - rho) / (1 + rho), abs=1e-15)
    assert a.alpha_f == pytest.approx(1 / (1 + rho), abs=1e-15)
    assert a.gamma == pytest.approx(0.5 + a.alpha_m - a.alpha_f, abs=1e-15)


def test_alpha_parameters_at_one_half():
    a = alpha_parameters(0.5)
    assert abs(a.alpha_m - 5 / 6) < 1e-15
    assert abs(a.alpha_f - 2 / 3) < 1e-15
    assert abs(a.gamma - 2 / 3) < 1e-15
    with pytest.raises(ConfigurationError):
        alpha_parameters(1.5)


def _states_with_error(e, ctl, n=50):
    # S_be = 0 makes every entry of the scaled difference equal e
    v = e * ctl.tol_abs / (1.0 - e * ctl.tol_rel)
    return np.full(n, v), np.zeros(n)


@pytest.mark.parametrize(
    "e, accept, factor",
    [(0.81, True, 0.9 / 0.9), (4.0, False, 0.45), (0.0, True, 10.0), (1e-6, True, 10.0), (100.0, False, 0.1)],
)
def test_controller_decisions(e, accept, factor):
    ctl = StepControls()
    S_ga, S_be = _states_with_error(e, ctl)
    ok, dt_next, err = adapt_step(S_ga, S_be, 0.1, ctl)
    assert err == pytest.approx(e, rel=1e-12, abs=1e-15)
    assert ok is accept
    assert dt_next == pytest.approx(0.1 * factor, rel=1e-12)


def test_controller_edge_cases():
    ctl = StepControls()
    assert step_factor(math.inf, ctl) == ctl.alpha_min
    assert truncation_error(np.ones(3), np.ones(3), ctl) == 0.0
    with pytest.raises(ConfigurationError):
        StepControls(beta=1.5)
    with pytest.raises(ConfigurationError):
        StepControls(newton_mode="lazy")


# -- integration -------------------------------------------------------------


def heat(n=16):
    A = laplacian_1d(n)
    x = np.linspace(0, 1, n + 2)[1:-1]
    y0 = np.sin(np.pi * x) + 0.3 * np.sin(3 * np.pi * x)
    return LinearODE(scipy.sparse.identity(n), A), A, y0


def test_second_order_convergence():
    prob, A, y0 = heat()
    T = 0.02
    exact = expm(-T * A.toarray()) @ y0
    errs = []
    for k in (10, 20, 40):
        y, _ = integrate_fixed(prob, y0, -(A @ y0), T / k, k)
        errs.append(np.linalg.norm(y - exact))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 3.5) & (ratios < 4.5))


def test_backward_euler_scalar_step():
    prob = LinearODE(np.eye(1), np.eye(1))
    S, Sd, _ = step_backward_euler(prob, np.ones(1), -np.ones(1), 0.1, StepControls())
    assert S[0] == pytest.approx(1 / 1.1, rel=1e-12)
    assert Sd[0] == pytest.approx(-1 / 1.1, rel=1e-12)


def test_stiff_decay_is_damped():
    # large dt on a stiff mode: generalized alpha with rho_inf = 0.5 damps it
    prob = LinearODE(np.eye(1), np.array([[1e6]]))
    ys = [integrate_fixed(prob, np.ones(1), -1e6 * np.ones(1), 1.0, k)[0][0] for k in range(15, 22)]
    ratios = np.array(ys[1:]) / np.array(ys[:-1])
    # the stiff limit has a double eigenvalue -rho_inf: ratios alternate in sign
    # and approach rho_inf from above like (n + 1) / n
    assert np.all(ratios < 0)
    assert np.all(np.diff(np.abs(ratios)) < 0)
    assert 0.5 < abs(ratios[-1]) < 0.53
    assert abs(ys[-1]) < 1e-4


def test_adaptive_run_lands_on_stops_and_final_time():
    prob, A, y0 = heat(12)
    integ = TimeIntegrator(prob, StepControls(tol_abs=1e-5, tol_rel=1e-5))
    hit = []
    S, _, reports = integ.run(y0, -(A @ y0), 0.05, 1e-4, stops=[0.01, 0.03], on_step=lambda t, *a: hit.append(t))
    assert hit[-1] == 0.05
    assert 0.01 in hit and 0.03 in hit
    assert any(r.dt_next > r.dt for r in reports if r.accepted)
    exact = expm(-0.05 * A.toarray()) @ y0
    assert np.linalg.norm(S - exact) < 1e-3 * np.linalg.norm(exact)


@pytest.mark.parametrize("mode", ["full", "modified"])
def test_newton_modes_agree_on_nonlinear_problem(mode):
    class Cubic:
        # y' + y^3 = 0
        def residual(self, Sd, S):
            return Sd + S**3

        def tangent(self, Sd, S, mass=1.0, stiff=1.0):
            return scipy.sparse.diags(mass + stiff * 3 * S**2).tocsr()

    integ = TimeIntegrator(Cubic(), StepControls(newton_mode=mode, tol_abs=1e-6, tol_rel=1e-6))
    S, _, _ = integ.run(np.array([1.0, 2.0]), -np.array([1.0, 8.0]), 1.0, 1e-3)
    exact = np.array([1.0, 2.0]) / np.sqrt(1 + 2 * np.array([1.0, 4.0]))
    assert np.allclose(S, exact, rtol=1e-3)


def test_fixed_step_failure_raises():
    class Diverging:
        def residual(self, Sd, S):
            return Sd + np.exp(40 * S)

        def tangent(self, Sd, S, mass=1.0, stiff=1.0):
            return scipy.sparse.diags(mass + stiff * 40 * np.exp(40 * S)).tocsr()

    integ = TimeIntegrator(Diverging(), StepControls(newton_max_iter=2), fixed_dt=10.0)
    with pytest.raises(SolverFailure):
        integ.run(np.array([1.0]), np.array([0.0]), 20.0, 10.0)


def test_direct_falls_back_to_row_pivoting(monkeypatch):
    K = scipy.sparse.csc_matrix(np.array([[1e-14, 1.0, 0.0], [1.0, 1e-14, 0.0], [0.0, 0.0, 2.0]]))
    real = Factorization._splu

    def inexact_without_pivoting(self, threshold):
        if threshold == 0.0:  # stand-in for an unstable diagonal-pivot factorization
            return scipy.sparse.linalg.splu(self.K + scipy.sparse.identity(3, format="csc"))
        return real(self, threshold)

    monkeypatch.setattr(Factorization, "_splu", inexact_without_pivoting)
    fac = Factorization(K)
    x, rep = fac.solve(np.array([1.0, 2.0, 4.0]))
    assert fac.pivoting
    np.testing.assert_allclose(x, [2.0, 1.0, 2.0], rtol=1e-12)
    assert rep.residual_norm < 1e-12


def test_diagonal_pivoting_by_default():
    K = scipy.sparse.csc_matrix(np.array([[4.0, 1.0], [1.0, 3.0]]))
    fac = Factorization(K)
    fac.solve(np.array([1.0, 2.0]))
    assert not fac.pivoting
