import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from filmiga.errors import ConfigurationError, PositivityLoss
from filmiga.model import (
    AngularField,
    CubicMultilayer,
    GaussianRidgeModes,
    InitialCondition,
    Linear,
    ModelParams,
    RadialModes,
    Sheludko,
    ZeroRoughness,
    check_roughness_scale,
    eos_sigma,
    initial_fields,
    make_eos,
    mobility,
    surface_velocity,
)

EOS = [Linear(), Sheludko(0.5), Sheludko(1.0), Sheludko(4.0), CubicMultilayer()]


@pytest.mark.parametrize("eos", EOS, ids=repr)
def test_clean_and_saturated_surface_tension(eos):
    assert eos(0.0)[0] == pytest.approx(1.0, abs=1e-14)
    assert eos(1.0)[0] == pytest.approx(0.0, abs=1e-14)


def test_sheludko_midpoint_value():
    assert Sheludko(1.0)(0.5)[0] == pytest.approx(0.3863, abs=1e-4)


@settings(max_examples=50, deadline=None)
@given(c=st.floats(0.0, 1.0), alpha=st.floats(0.1, 10.0))
def test_sheludko_derivatives_match_finite_differences(c, alpha):
    eos = Sheludko(alpha)
    eps = 1e-6
    s, d1, d2 = eos(c)
    sp, d1p, _ = eos(c + eps)
    sm, d1m, _ = eos(c - eps)
    assert d1 == pytest.approx((sp - sm) / (2 * eps), rel=1e-6, abs=1e-8)
    assert d2 == pytest.approx((d1p - d1m) / (2 * eps), rel=1e-6, abs=1e-7)
    assert d1 < 0


def test_eos_factory_and_scalar_helper():
    assert make_eos("linear") == Linear()
    assert make_eos("sheludko", 2.0) == Sheludko(2.0)
    with pytest.raises(ConfigurationError):
        make_eos("sheludko")
    with pytest.raises(ConfigurationError):
        make_eos("bogus")
    with pytest.raises(ConfigurationError):
        Sheludko(0.0)
    s, ds = eos_sigma(Linear(), 0.25)
    assert (s, ds) == (0.75, -1.0)


def test_mobility_values_and_positivity():
    M1, M2, M3, dM2, dM3 = mobility(2.0)
    assert (M1, M2, M3, dM2, dM3) == (2.0, 2.0, 8.0 / 3.0, 2.0, 4.0)
    with pytest.raises(PositivityLoss):
        mobility(np.array([0.5, 0.0]))


def test_model_params_validation():
    assert ModelParams(peclet=float("inf")).inv_peclet == 0.0
    assert ModelParams(peclet=4.0).inv_peclet == 0.25
    with pytest.raises(ConfigurationError):
        ModelParams(peclet=0.0)
    with pytest.raises(ConfigurationError):
        ModelParams(capillarity=-1.0)


def test_depth_averaged_velocity_is_two_thirds_of_surface_velocity_for_pressure_flow():
    # a pure pressure-gradient (Poiseuille) flow has v_bar / v_s = 2/3
    params = ModelParams(capillarity=0.1, gravity=0.0)
    z = np.zeros((2, 3))
    g3 = np.array([[1.0, -2.0, 0.5], [0.3, 0.0, 1.0]])
    h = np.array([0.5, 1.0, 2.0])
    v_s, v_bar = surface_velocity(params, np.zeros(3), z, h, z, g3)
    assert np.allclose(v_bar, 2.0 / 3.0 * v_s)
    # a pure Marangoni (Couette) flow has v_bar / v_s = 1/2
    gc = np.array([[1.0, 2.0, 3.0], [0.0, 1.0, -1.0]])
    v_s, v_bar = surface_velocity(params, np.full(3, 0.2), gc, h, z, z)
    assert np.allclose(v_bar, 0.5 * v_s)
    assert np.allclose(v_s, -h * gc)


def test_surface_velocity_needs_positive_film():
    with pytest.raises(PositivityLoss):
        surface_velocity(ModelParams(), 0.0, [0.0, 0.0], -1.0, [0.0, 0.0], [0.0, 0.0])


def _fd_grad(fn, x, y, eps=1e-6):
    return (
        (fn(x + eps, y)[0] - fn(x - eps, y)[0]) / (2 * eps),
        (fn(x, y + eps)[0] - fn(x, y - eps)[0]) / (2 * eps),
    )


def test_ridge_roughness_gradient():
    r = GaussianRidgeModes((0.03, 0.01), (7.0, 20.0), 5.0, 1.0)
    x, y = np.array([0.3, 1.0, 2.2]), np.array([0.1, 2.0, 5.0])
    _, fx, fy = r(x, y)
    gx, gy = _fd_grad(r, x, y)
    assert np.allclose(fx, gx, atol=1e-7) and np.allclose(fy, gy, atol=1e-7)


def test_radial_roughness_gradient_without_angular_part():
    r = RadialModes((0.01, 0.02), (3.0, 10.0), 5.0, 0.005)
    x, y = np.array([0.3, -1.0, 2.2]), np.array([0.1, 0.7, -0.5])
    f, fx, fy = r(x, y)
    gx, gy = _fd_grad(r, x, y)
    assert np.allclose(fx, gx, atol=1e-7) and np.allclose(fy, gy, atol=1e-7)
    # value at the origin is finite with zero gradient
    f0, fx0, fy0 = r(0.0, 0.0)
    assert np.isfinite(f0) and fx0 == 0 and fy0 == 0


def test_angular_field_is_seeded_and_bounded():
    a = AngularField.random(0.01, 128, 42)
    b = AngularField.random(0.01, 128, 42)
    assert np.array_equal(a.values, b.values)
    assert np.all(np.abs(a.values) <= 0.01)
    phi = np.linspace(-np.pi, np.pi, 1000, endpoint=False) + 1e-9
    vals = a(np.cos(phi), np.sin(phi))
    assert set(np.unique(vals)) <= set(a.values)


def test_zero_roughness_shapes():
    f, fx, fy = ZeroRoughness()(np.zeros((2, 3)), 0.0)
    assert f.shape == fx.shape == fy.shape == (2, 3)


def test_roughness_scale_warning():
    with pytest.warns(UserWarning):
        check_roughness_scale(GaussianRidgeModes((0.5,), (1.0,)), 0.05, np.array([1.0]), np.array([0.0]))


def test_tanh_initial_condition():
    c0, h0 = initial_fields(InitialCondition("tanh-drop", steepness=4.0, height=1.0))
    assert c0(0.0, 0.0) == pytest.approx(0.5 * (1 + np.tanh(4.0)))
    assert c0(1.0, 0.0) == pytest.approx(0.5)
    assert np.all(h0(np.zeros(4), np.ones(4)) == 1.0)


def test_cap_strip_initial_condition():
    ic = InitialCondition("cap-strip", steepness=20.0, precursor=0.05, ridge=0.035, modes=((0.01, 7.0),))
    c0, h0 = initial_fields(ic)
    assert c0(0.0, 0.3) == pytest.approx(1.0, abs=1e-8)
    assert c0(3.0, 0.3) == pytest.approx(0.0, abs=1e-8)
    assert h0(0.0, 0.0) == pytest.approx(1.05 + 0.035 * np.exp(-5.0) + 0.01 * np.exp(-5.0), rel=1e-8)
    assert h0(4.0, 1.0) == pytest.approx(0.05, abs=1e-8)


def test_cap_drop_angular_perturbation_is_reproducible():
    ic = InitialCondition("cap-drop", steepness=20.0, angular_amplitude=0.01, seed=7)
    h_a = initial_fields(ic)[1](np.cos(np.arange(9)), np.sin(np.arange(9)))
    h_b = initial_fields(ic)[1](np.cos(np.arange(9)), np.sin(np.arange(9)))
    assert np.array_equal(h_a, h_b)
    assert np.std(h_a) > 0


@pytest.mark.parametrize(
    "kwargs",
    [dict(kind="blob"), dict(kind="cap-drop", precursor=0.0), dict(steepness=-1.0),
     dict(kind="cap-drop", angular_amplitude=0.01)],
)
def test_initial_condition_validation(kwargs):
    with pytest.raises(ConfigurationError):
        InitialCondition(**kwargs)
