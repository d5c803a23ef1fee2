"""Sampling and diagnostics: fronts, spreading exponents, mass, fingers, file output."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.interpolate
import scipy.signal

from .bspline import basis_derivatives, collocation_matrix
from .domain import Mesh
from .errors import ConfigurationError, FrontNotFound
from .model import RoughnessSpec, ZeroRoughness


def evaluate(mesh: Mesh, coeffs, x, y, du: int = 0, dv: int = 0) -> np.ndarray:
    """Physical partial derivative ``d^(du+dv) / dx^du dy^dv`` of a spline field at points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    shape = x.shape
    u, v = mesh.to_parametric(x.ravel(), y.ravel())
    if mesh.periodic[0]:
        u = u % 1.0
    if mesh.periodic[1]:
        v = v % 1.0
    su, bu = basis_derivatives(mesh.space.ku, u, du)
    sv, bv = basis_derivatives(mesh.space.kv, v, dv)
    p1 = mesh.p + 1
    iu = mesh.space.ku.global_index(su[:, None], np.arange(p1)[None, :])
    iv = mesh.space.kv.global_index(sv[:, None], np.arange(p1)[None, :])
    C2 = np.asarray(coeffs).reshape(mesh.space.n_u, mesh.space.n_v)
    local = C2[iu[:, :, None], iv[:, None, :]]
    scale = mesh.lengths[0] ** -du * mesh.lengths[1] ** -dv
    out = np.einsum("ma,mb,mab->m", bu[du], bv[dv], local) * scale
    return out.reshape(shape)


def _grid_eval(mesh: Mesh, coeffs, xs, ys, du=0, dv=0):
    """Tensor-grid evaluation, returns ``(len(ys), len(xs))``."""
    u, v = mesh.to_parametric(xs, ys)
    Bu = collocation_matrix(mesh.space.ku, u, du)
    Bv = collocation_matrix(mesh.space.kv, v, dv)
    C2 = np.asarray(coeffs).reshape(mesh.space.n_u, mesh.space.n_v)
    vals = (Bv @ (Bu @ C2).T)
    return vals * mesh.lengths[0] ** -du * mesh.lengths[1] ** -dv


@dataclass
class FieldSample:
    """Fields on a uniform grid; arrays are indexed ``[iy, ix]``."""

    x: np.ndarray
    y: np.ndarray
    c: np.ndarray
    h: np.ndarray
    h_p: np.ndarray
    grad_c: np.ndarray
    lap_h: np.ndarray
    f: np.ndarray = field(repr=False, default=None)

    @property
    def spacing(self) -> tuple[float, float]:
        return float(self.x[1] - self.x[0]), float(self.y[1] - self.y[0])

    def interpolator(self, name: str):
        return scipy.interpolate.RegularGridInterpolator(
            (self.y, self.x), getattr(self, name), bounds_error=False, fill_value=None
        )


def sample_fields(S, mesh: Mesh, grid_n: int = 129, roughness: RoughnessSpec | None = None) -> FieldSample:
    roughness = roughness or ZeroRoughness()
    n = mesh.n_b
    C, H = np.asarray(S[:n]), np.asarray(S[n:])
    x0, x1, y0, y1 = mesh.rect
    if np.ndim(grid_n) == 0:
        grid_n = (int(grid_n), int(grid_n))
    xs = np.linspace(x0, x1, grid_n[0])
    ys = np.linspace(y0, y1, grid_n[1])
    c = _grid_eval(mesh, C, xs, ys)
    h = _grid_eval(mesh, H, xs, ys)
    cx = _grid_eval(mesh, C, xs, ys, 1, 0)
    cy = _grid_eval(mesh, C, xs, ys, 0, 1)
    lap = _grid_eval(mesh, H, xs, ys, 2, 0) + _grid_eval(mesh, H, xs, ys, 0, 2)
    X, Y = np.meshgrid(xs, ys)
    f = np.asarray(roughness(X, Y)[0]) * np.ones_like(X)
    return FieldSample(xs, ys, c, h, h - f, np.hypot(cx, cy), lap, f)


# --------------------------------------------------------------------------
# leading edge


def _outermost_crossing(s, vals, threshold):
    above = np.nonzero(vals >= threshold)[0]
    if above.size == 0:
        raise FrontNotFound("no point reaches the front threshold")
    k = above[-1]
    if k == vals.size - 1:
        return float(s[k])
    v0, v1 = vals[k], vals[k + 1]
    frac = (v0 - threshold) / (v0 - v1) if v0 != v1 else 0.0
    return float(s[k] + frac * (s[k + 1] - s[k]))


def leading_edge(
    sample: FieldSample,
    geometry: str = "radial",
    threshold: float | None = None,
    center=(0.0, 0.0),
    n_rays: int = 64,
) -> float:
    """Outermost position where ``c >= threshold`` (default ``1e-3 * max c``).

    Radial mode averages the radius over ``n_rays`` equally spaced rays from
    ``center``; planar mode averages the x-position over grid rows.
    """
    c = sample.c
    if threshold is None:
        threshold = 1e-3 * float(np.max(c))
    if geometry == "planar":
        positions = [_outermost_crossing(sample.x, row, threshold) for row in c]
        return float(np.mean(positions))
    if geometry != "radial":
        raise ConfigurationError(f"unknown front geometry {geometry!r}")
    cx, cy = center
    r_max = min(sample.x[-1] - cx, cx - sample.x[0], sample.y[-1] - cy, cy - sample.y[0])
    dr = 0.25 * min(sample.spacing)
    s = np.arange(0.0, r_max + 0.5 * dr, dr)
    interp = sample.interpolator("c")
    radii = []
    for k in range(n_rays):
        phi = 2.0 * np.pi * k / n_rays
        pts = np.stack([cy + s * np.sin(phi), cx + s * np.cos(phi)], axis=1)
        radii.append(_outermost_crossing(s, interp(pts), threshold))
    return float(np.mean(radii))


@dataclass
class FrontSeries:
    times: list = field(default_factory=list)
    positions: list = field(default_factory=list)

    def append(self, t: float, position: float) -> None:
        if self.times and not t > self.times[-1]:
            raise ValueError("front series times must increase strictly")
        self.times.append(float(t))
        self.positions.append(float(position))

    def as_arrays(self):
        return np.asarray(self.times), np.asarray(self.positions)


def fit_spreading_exponent(series, t_window=(0.0, np.inf)) -> float:
    """Least-squares slope of ``log(position)`` against ``log(t)`` in the window."""
    if isinstance(series, FrontSeries):
        t, r = series.as_arrays()
    else:
        t, r = (np.asarray(a, dtype=float) for a in series)
    lo, hi = t_window
    mask = (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12)) & (t > 0) & (r > 0)
    if np.count_nonzero(mask) < 3:
        raise ConfigurationError("need at least 3 front positions inside the fit window")
    slope, _ = np.polyfit(np.log(t[mask]), np.log(r[mask]), 1)
    return float(slope)


# --------------------------------------------------------------------------
# integrals and fingers


def mass_integrals(S, disc) -> tuple[float, float]:
    """``(integral of c, integral of h - f)`` using the discretization's quadrature."""
    n = disc.n_b
    C, H = np.asarray(S[:n]), np.asarray(S[n:])
    fluid = disc.integrate(H) - float(np.sum(disc.f * disc.w))
    return disc.integrate(C), fluid


def transect(sample: FieldSample, x=None, y=None, radius=None, center=(0.0, 0.0), n: int = 1024):
    """``(s, h_p)`` along a vertical line ``x``, a horizontal line ``y`` or a circle."""
    interp = sample.interpolator("h_p")
    if x is not None:
        s = np.linspace(sample.y[0], sample.y[-1], n)
        pts = np.stack([s, np.full_like(s, x)], axis=1)
    elif y is not None:
        s = np.linspace(sample.x[0], sample.x[-1], n)
        pts = np.stack([np.full_like(s, y), s], axis=1)
    elif radius is not None:
        s = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        pts = np.stack([center[1] + radius * np.sin(s), center[0] + radius * np.cos(s)], axis=1)
    else:
        raise ConfigurationError("transect needs x, y or radius")
    return s, interp(pts)


def count_peaks(values, prominence_fraction: float = 0.05, periodic: bool = True) -> int:
    """Strict local maxima whose prominence exceeds a fraction of the value range."""
    values = np.asarray(values, dtype=float)
    span = float(values.max() - values.min())
    if span <= 1e-12 * max(1.0, float(np.abs(values).max())):
        return 0
    floor = prominence_fraction * span
    if periodic:
        # a closed transect: rotate so it starts at the global minimum
        k = int(np.argmin(values))
        ext = np.concatenate([values[k:], values[:k], values[k : k + 1]])
        peaks, _ = scipy.signal.find_peaks(ext, prominence=floor)
        return int(peaks.size)
    peaks, _ = scipy.signal.find_peaks(values, prominence=floor)
    return int(peaks.size)


def count_fingers(sample: FieldSample, spec: dict, prominence_fraction: float = 0.05) -> int:
    """Count fingers along a transect ``spec`` (keys ``x``, ``y`` or ``radius``).

    A closed transect (circle, or a line across a periodic direction) is
    treated periodically; its last sample point duplicates the first when
    the sampling grid includes both ends.
    """
    spec = dict(spec)
    periodic = spec.pop("periodic", True)
    n = spec.pop("n", 1024)
    s, vals = transect(sample, n=n, **spec)
    if periodic and "radius" not in spec:
        vals = vals[:-1]
    return count_peaks(vals, prominence_fraction, periodic)


# --------------------------------------------------------------------------
# writers


def write_vtk(path, sample: FieldSample, title: str = "filmiga snapshot") -> None:
    """Legacy-VTK structured points (ASCII) with c, h, h_p and |grad c|."""
    nx, ny = sample.x.size, sample.y.size
    dx, dy = sample.spacing
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx} {ny} 1",
        f"ORIGIN {sample.x[0]:.17g} {sample.y[0]:.17g} 0",
        f"SPACING {dx:.17g} {dy:.17g} 1",
        f"POINT_DATA {nx * ny}",
    ]
    for name in ("c", "h", "h_p", "grad_c"):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(f"{v:.10e}" for v in getattr(sample, name).ravel())
    Path(path).write_text("\n".join(lines) + "\n")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])


def write_profile(path, sample: FieldSample, x: float) -> None:
    """Cross-section ``x = const``: columns y, h, h_p, c."""
    cols = {}
    for name in ("h", "h_p", "c"):
        interp = sample.interpolator(name)
        cols[name] = interp(np.stack([sample.y, np.full_like(sample.y, x)], axis=1))
    write_csv(
        path,
        ["y", "h", "h_p", "c"],
        zip(sample.y.tolist(), cols["h"].tolist(), cols["h_p"].tolist(), cols["c"].tolist()),
    )
