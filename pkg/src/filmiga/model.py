"""Dimensionless thin-film/surfactant physics.

Everything here is a pure function of point data: equations of state,
mobilities, substrate roughness, initial profiles and the two planar
velocity fields of the lubrication model.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, PositivityLoss

# --------------------------------------------------------------------------
# equations of state


@dataclass(frozen=True)
class Sheludko:
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigurationError("Sheludko equation of state needs alpha > 0")

    @property
    def theta(self) -> float:
        return ((self.alpha + 1.0) / self.alpha) ** (1.0 / 3.0) - 1.0

    def __call__(self, c):
        a, th = self.alpha, self.theta
        base = 1.0 + th * c
        sigma = (a + 1.0) / base**3 - a
        d1 = -3.0 * th * (a + 1.0) / base**4
        d2 = 12.0 * th**2 * (a + 1.0) / base**5
        return sigma, d1, d2


@dataclass(frozen=True)
class Linear:
    def __call__(self, c):
        c = np.asarray(c, dtype=float)
        return 1.0 - c, np.full_like(c, -1.0), np.zeros_like(c)


@dataclass(frozen=True)
class CubicMultilayer:
    def __call__(self, c):
        c = np.asarray(c, dtype=float)
        s = np.where(c <= 1.0, 1.0 - c, 0.0)
        return s**3, -3.0 * s**2, 6.0 * s


EosVariant = Sheludko | Linear | CubicMultilayer


def make_eos(name: str, alpha: float | None = None) -> EosVariant:
    key = name.lower()
    if key == "linear":
        return Linear()
    if key in ("cubic", "cubic_multilayer", "cubicmultilayer"):
        return CubicMultilayer()
    if key == "sheludko":
        if alpha is None:
            raise ConfigurationError("Sheludko equation of state needs 'alpha'")
        return Sheludko(float(alpha))
    raise ConfigurationError(f"unknown equation of state {name!r}")


def eos_sigma(eos: EosVariant, c: float) -> tuple[float, float]:
    """Surface tension and its derivative at concentration ``c``."""
    if not np.all(np.isfinite(c)):
        raise ConfigurationError(f"non-finite concentration {c!r}")
    s, ds, _ = eos(c)
    if np.ndim(s) == 0:
        return float(s), float(ds)
    return s, ds


# --------------------------------------------------------------------------
# mobilities


def mobility(h_p):
    """``(M1, M2, M3, M2', M3')`` for physical height ``h_p``."""
    h_p = np.asarray(h_p, dtype=float)
    if np.any(h_p <= 0):
        raise PositivityLoss(float(np.min(h_p)))
    out = (h_p, 0.5 * h_p**2, h_p**3 / 3.0, h_p, h_p**2)
    if h_p.ndim == 0:
        return tuple(float(v) for v in out)
    return out


@dataclass(frozen=True)
class ModelParams:
    capillarity: float = 1e-4
    gravity: float = 0.0
    peclet: float = 1e4
    eos: EosVariant = field(default_factory=Linear)
    nitsche_scale: float = 5.0

    def __post_init__(self):
        if not self.peclet > 0:
            raise ConfigurationError("Peclet number must be positive")
        if self.capillarity < 0 or self.gravity < 0:
            raise ConfigurationError("capillarity and gravity must be non-negative")

    @property
    def inv_peclet(self) -> float:
        return 0.0 if math.isinf(self.peclet) else 1.0 / self.peclet


# --------------------------------------------------------------------------
# angular random field A(phi)


@dataclass(frozen=True)
class AngularField:
    """Piecewise-constant function of the polar angle on equal bins."""

    values: np.ndarray

    @classmethod
    def random(cls, amplitude: float, n_bins: int, seed: int) -> "AngularField":
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-amplitude, amplitude, size=n_bins))

    @classmethod
    def zero(cls, n_bins: int = 1) -> "AngularField":
        return cls(np.zeros(n_bins))

    def __call__(self, x, y):
        phi = np.arctan2(y, x)
        n = self.values.size
        k = np.floor((phi + np.pi) / (2.0 * np.pi) * n).astype(np.int64) % n
        return self.values[k]


# --------------------------------------------------------------------------
# roughness


@dataclass(frozen=True)
class ZeroRoughness:
    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        z = np.zeros(np.broadcast(x, y).shape)
        return z, z.copy(), z.copy()


@dataclass(frozen=True)
class GaussianRidgeModes:
    """``exp(-B (x - x_c)^2) * sum_k A_k (cos(lambda_k y) + 1)``."""

    amplitudes: tuple[float, ...]
    wavenumbers: tuple[float, ...]
    smoothing: float = 5.0
    center: float = 1.0

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        g = np.exp(-self.smoothing * (x - self.center) ** 2)
        dg = -2.0 * self.smoothing * (x - self.center) * g
        s = np.zeros(np.broadcast(x, y).shape)
        ds = np.zeros_like(s)
        for a, lam in zip(self.amplitudes, self.wavenumbers):
            s = s + a * (np.cos(lam * y) + 1.0)
            ds = ds - a * lam * np.sin(lam * y)
        return g * s, dg * s, g * ds


@dataclass(frozen=True)
class RadialModes:
    """``1/2 sum_k A_k (cos(lambda_k r) + 1) + A(phi) exp(-B (r-1)^2) - delta``.

    The angular factor is piecewise constant, so its contribution to the
    gradient is the radial part only.
    """

    amplitudes: tuple[float, ...]
    wavenumbers: tuple[float, ...]
    smoothing: float = 5.0
    delta: float = 0.005
    angular: AngularField = field(default_factory=AngularField.zero)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r = np.hypot(x, y)
        safe_r = np.where(r > 0, r, 1.0)
        f = np.full(np.broadcast(x, y).shape, -self.delta)
        dfdr = np.zeros_like(f)
        for a, lam in zip(self.amplitudes, self.wavenumbers):
            f = f + 0.5 * a * (np.cos(lam * r) + 1.0)
            dfdr = dfdr - 0.5 * a * lam * np.sin(lam * r)
        A = self.angular(x, y)
        g = np.exp(-self.smoothing * (r - 1.0) ** 2)
        f = f + A * g
        dfdr = dfdr - 2.0 * self.smoothing * (r - 1.0) * A * g
        fx = np.where(r > 0, dfdr * x / safe_r, 0.0)
        fy = np.where(r > 0, dfdr * y / safe_r, 0.0)
        return f, fx, fy


RoughnessSpec = ZeroRoughness | GaussianRidgeModes | RadialModes


def roughness_eval(spec: RoughnessSpec, x, y):
    """``(f, (df/dx, df/dy))`` at the given points."""
    f, fx, fy = spec(x, y)
    if np.ndim(f) == 0:
        return float(f), (float(fx), float(fy))
    return f, (fx, fy)


def check_roughness_scale(spec: RoughnessSpec, h_p_min: float, x, y) -> None:
    f, _, _ = spec(x, y)
    if np.max(np.abs(f)) >= 0.5 * h_p_min:
        warnings.warn(
            "substrate roughness is not small compared with the film thickness",
            stacklevel=2,
        )


# --------------------------------------------------------------------------
# initial conditions


def heaviside(s, steepness: float):
    """Smoothed step ``(1 + tanh(K s)) / 2``."""
    return 0.5 * (1.0 + np.tanh(steepness * np.asarray(s, dtype=float)))


@dataclass(frozen=True)
class InitialCondition:
    """Initial concentration and height.

    ``kind`` selects the profile family:

    * ``tanh-drop`` / ``tanh-strip``: flat film ``h = height`` with
      ``c = (1 - tanh(K (s - 1))) / 2``, ``s`` the radius or ``x``.
    * ``cap-drop`` / ``cap-strip``: parabolic cap on a precursor film,
      ``h = (1 - s^2 + b) H(1 - s) + b H(s - 1) + perturbations`` and
      ``c = H(1 - s)``.

    Perturbation terms for the cap families are ``ridge * exp(-B (s-1)^2)``,
    a constant ``offset``, ``mode_sign * exp(-B (x-1)^2) sum A_k cos(lambda_k y)``
    (strips) and ``A(phi) exp(-B (r-1)^2)`` with a seeded random angular
    field (drops).
    """

    kind: str = "tanh-strip"
    steepness: float = 10.0
    height: float = 1.0
    precursor: float = 0.05
    smoothing: float = 5.0
    ridge: float = 0.0
    offset: float = 0.0
    modes: tuple[tuple[float, float], ...] = ()
    mode_sign: float = 1.0
    angular_amplitude: float = 0.0
    angular_bins: int = 128
    seed: int | None = None

    KINDS = ("tanh-drop", "tanh-strip", "cap-drop", "cap-strip")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigurationError(f"unknown initial condition family {self.kind!r}")
        if self.kind.startswith("cap"):
            if not self.precursor > 0:
                raise ConfigurationError("precursor thickness b must be positive")
        if not (self.steepness > 0 and self.smoothing > 0):
            raise ConfigurationError("steepness K and smoothing B must be positive")
        if self.angular_amplitude and self.seed is None:
            raise ConfigurationError("random angular perturbation requires a seed")

    @property
    def radial(self) -> bool:
        return self.kind.endswith("drop")


def initial_fields(ic: InitialCondition):
    """Return callables ``c0(x, y)`` and ``h0(x, y)``."""
    K = ic.steepness
    B = ic.smoothing

    def coord(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.hypot(x, y) if ic.radial else x + 0.0 * y

    if ic.kind.startswith("tanh"):

        def c0(x, y):
            return 0.5 * (1.0 - np.tanh(K * (coord(x, y) - 1.0)))

        def h0(x, y):
            return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, ic.height)

        return c0, h0

    b = ic.precursor
    angular = (
        AngularField.random(ic.angular_amplitude, ic.angular_bins, ic.seed)
        if ic.angular_amplitude
        else None
    )

    def c0(x, y):
        return heaviside(1.0 - coord(x, y), K)

    def h0(x, y):
        s = coord(x, y)
        g = np.exp(-B * (s - 1.0) ** 2)
        h = (1.0 - s**2 + b) * heaviside(1.0 - s, K) + b * heaviside(s - 1.0, K)
        h = h + ic.ridge * g + ic.offset
        if ic.modes:
            y = np.asarray(y, dtype=float)
            gx = np.exp(-B * (np.asarray(x, dtype=float) - 1.0) ** 2)
            pert = sum(a * np.cos(lam * y) for a, lam in ic.modes)
            h = h + ic.mode_sign * gx * pert
        if angular is not None:
            h = h + angular(x, y) * g
        return h

    return c0, h0


# --------------------------------------------------------------------------
# velocities


def surface_velocity(
    params: ModelParams,
    c,
    grad_c,
    h_p,
    grad_h,
    grad_lap_h,
):
    """Surface velocity ``v_s`` and depth-averaged velocity ``v_bar``.

    Vector arguments have a leading axis of length 2.
    """
    h_p = np.asarray(h_p, dtype=float)
    if np.any(h_p <= 0):
        raise PositivityLoss(float(np.min(h_p)))
    _, ds, _ = params.eos(np.asarray(c, dtype=float))
    grad_c = np.asarray(grad_c, dtype=float)
    pressure = params.capillarity * (
        np.asarray(grad_lap_h, dtype=float) - params.gravity * np.asarray(grad_h, dtype=float)
    )
    marangoni = ds * grad_c
    v_s = 0.5 * h_p**2 * pressure + h_p * marangoni
    v_bar = h_p**2 / 3.0 * pressure + 0.5 * h_p * marangoni
    return v_s, v_bar
