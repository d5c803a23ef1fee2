import numpy as np
import pytest

from filmiga import config
from filmiga.simulation import Simulation

from _radial import radial_solution


def test_drop_spreading_matches_axisymmetric_solution():
    # same equations and parameters through an unrelated discretization
    cfg = config.load(
        "drop-spreading", "desk",
        {"mesh": {"elements": [48, 48]}, "time": {"t_final": 1.0, "fixed_dt": 0.02},
         "output": {"interval": 1.0, "front_times": [1.0]}},
    )
    res = Simulation(cfg).run()
    p = cfg.params
    _, _, h = radial_solution(
        lambda r: 0.5 * (1 - np.tanh(4 * (r - 1))), lambda r: np.ones_like(r),
        p.capillarity, p.gravity, p.peclet, 8.0, 400, [1.0],
    )
    assert res.h_max == pytest.approx(h[:, -1].max(), rel=5e-3)
    assert res.h_min == pytest.approx(h[:, -1].min(), rel=5e-3)
    ds, df = res.mass_drift()
    assert ds < 1e-8 and df < 1e-8


def test_adaptive_run_records_steps_and_mass(tmp_path):
    cfg = config.load(
        "similarity-strip", "desk",
        {"mesh": {"elements": [128, 4]}, "time": {"t_final": 0.5},
         "output": {"interval": 0.25, "front_times": [0.1, 0.25, 0.5], "fit_window": [0.1, 0.5]}},
    )
    res = Simulation(cfg).run(tmp_path)
    assert res.t == 0.5
    assert len(res.mass) == len(res.steps) + 1
    assert res.fronts.times == [0.1, 0.25, 0.5]
    assert res.snapshots == [0.25, 0.5]
    assert np.all(np.diff(res.fronts.positions) > 0)
    assert res.exponent is not None and 0 < res.exponent < 1
    assert max(res.mass_drift()) < 1e-6
    assert any(s.dt_next > s.dt for s in res.steps)


def test_rough_scenario_initial_state_is_projection():
    cfg = config.load("rough-mode-7", "desk")
    sim = Simulation(cfg)
    S, Sd = sim.initial_state()
    assert np.all(Sd == 0)
    sample = sim.sample(S, grid=65)
    assert sample.h_p.min() > 0
    assert sample.c.max() == pytest.approx(1.0, abs=0.05)
