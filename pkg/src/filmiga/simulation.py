"""Scenario runner: builds the discretization from a config, integrates, writes output."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import Discretization, worker_count
from .bspline import make_space
from .config import RunConfig
from .domain import Mesh
from .errors import ConfigurationError, FrontNotFound, SolverFailure
from .model import initial_fields
from .postprocess import (
    FrontSeries,
    count_fingers,
    fit_spreading_exponent,
    leading_edge,
    mass_integrals,
    sample_fields,
    write_csv,
    write_profile,
    write_vtk,
)
from .timestepping import TimeIntegrator

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    t: float
    S: np.ndarray
    S_dot: np.ndarray
    fronts: FrontSeries
    mass: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    wall_time: float = 0.0
    exponent: float | None = None
    fingers: int | None = None
    h_max: float | None = None
    h_min: float | None = None

    def mass_drift(self) -> tuple[float, float]:
        """Largest relative change of the surfactant and fluid integrals."""
        m = np.asarray([row[1:3] for row in self.mass])
        ref = m[0]
        return tuple(float(np.max(np.abs(m[:, k] - ref[k])) / abs(ref[k])) for k in range(2))


class Simulation:
    """Everything needed to integrate one configuration."""

    def __init__(self, cfg: RunConfig, workers: int | None = None):
        self.cfg = cfg
        space = make_space(*cfg.elements, p=cfg.degree, periodic=cfg.periodic)
        self.mesh = Mesh(space, cfg.rect, cfg.quad_order)
        self.disc = Discretization(
            self.mesh, cfg.params, cfg.roughness, nitsche=cfg.nitsche, workers=workers or worker_count()
        )

    def initial_state(self) -> tuple[np.ndarray, np.ndarray]:
        c0, h0 = initial_fields(self.cfg.initial)
        S0 = np.concatenate([self.disc.l2_project(c0), self.disc.l2_project(h0)])
        if self.cfg.initial_rate == "consistent":
            Sd0 = self.disc.consistent_rates(S0)
        elif self.cfg.initial_rate == "zero":
            Sd0 = np.zeros_like(S0)
        else:
            raise ConfigurationError(f"unknown initial_rate {self.cfg.initial_rate!r}")
        return S0, Sd0

    def sample(self, S, grid=None):
        return sample_fields(S, self.mesh, grid or self.cfg.grid, self.cfg.roughness)

    def front(self, sample) -> float:
        return leading_edge(sample, self.cfg.front_geometry, self.cfg.front_threshold)

    # ------------------------------------------------------------------
    def run(self, out_dir=None, progress=None) -> RunResult:
        """Integrate to ``t_final``.  With ``out_dir`` set, files are written there."""
        cfg = self.cfg
        out = Path(out_dir) if out_dir is not None else cfg.out_dir
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        wall0 = time.perf_counter()
        S0, Sd0 = self.initial_state()
        result = RunResult(0.0, S0, Sd0, FrontSeries())
        result.mass.append((0.0, *mass_integrals(S0, self.disc)))
        front_times = set(cfg.front_times)
        interval_times = {t for t in cfg.output_stops if cfg.interval and _on_grid(t, cfg.interval)}
        eps = 1e-9 * max(1.0, cfg.t_final)
        accepted = [0]

        def snapshot(t, S, sample):
            k = len(result.snapshots)
            result.snapshots.append(t)
            if out is not None:
                write_vtk(out / f"snapshot_{k:04d}.vtk", sample, f"t = {t:.10g}")

        def on_step(t, S, Sd, rep):
            accepted[0] += 1
            result.steps.append(rep)
            result.mass.append((t, *mass_integrals(S, self.disc)))
            want_front = any(abs(t - s) <= eps for s in front_times)
            want_snap = (cfg.every is not None and accepted[0] % cfg.every == 0) or any(
                abs(t - s) <= eps for s in interval_times
            )
            if want_front or want_snap:
                sample = self.sample(S)
                if want_front:
                    try:
                        result.fronts.append(t, self.front(sample))
                    except FrontNotFound:
                        log.warning("no front found at t=%g", t)
                if want_snap:
                    snapshot(t, S, sample)
            if progress is not None:
                progress(t, rep)

        integ = TimeIntegrator(self.disc, cfg.controls, cfg.rho_inf, cfg.fixed_dt)
        try:
            S, Sd, reports = integ.run(
                S0, Sd0, cfg.t_final, cfg.dt0, stops=cfg.output_stops, on_step=on_step
            )
        except SolverFailure as exc:
            if result.steps:
                result.t = result.steps[-1].t
            exc.partial = result  # accepted history up to the failure
            if out is not None:
                self._write_failure(out, result, exc)
            raise
        finally:
            result.wall_time = time.perf_counter() - wall0
            if out is not None:
                self._write_tables(out, result)
        result.t, result.S, result.S_dot = cfg.t_final, S, Sd
        final = self.sample(S)
        result.h_max = float(final.h.max())
        result.h_min = float(final.h.min())
        if cfg.fit_window is not None:
            try:
                result.exponent = fit_spreading_exponent(result.fronts, cfg.fit_window)
            except ConfigurationError:
                result.exponent = None
        if cfg.fingers:
            result.fingers = count_fingers(final, cfg.fingers)
        if out is not None:
            for x in cfg.profiles_x:
                write_profile(out / f"profiles_{x:g}.csv", final, x)
            self._write_meta(out, result, reports)
        return result

    def _write_tables(self, out: Path, result: RunResult) -> None:
        write_csv(out / "front.csv", ["t", "position"], zip(result.fronts.times, result.fronts.positions))
        write_csv(out / "mass.csv", ["t", "surfactant", "fluid"], result.mass)
        write_csv(
            out / "step_log.csv",
            ["step", "t", "dt", "dt_next", "error", "newton_iterations", "attempts"],
            [
                (i + 1, r.t, r.dt, r.dt_next, float(r.error), r.newton_iterations, r.attempts)
                for i, r in enumerate(result.steps)
            ],
        )

    def _write_failure(self, out: Path, result: RunResult, exc: Exception) -> None:
        last = result.steps[-1] if result.steps else None
        info = {
            "name": self.cfg.name,
            "version": __version__,
            "error": str(exc),
            "t_last_accepted": last.t if last else 0.0,
            "dt_last_accepted": last.dt if last else None,
            "accepted_steps": len(result.steps),
            "config": self.cfg.raw,
        }
        (out / "failure.json").write_text(json.dumps(info, indent=2, default=_jsonable) + "\n")

    def _write_meta(self, out: Path, result: RunResult, reports) -> None:
        drift = result.mass_drift()
        meta = {
            "name": self.cfg.name,
            "version": __version__,
            "seed": self.cfg.seed,
            "config": self.cfg.raw,
            "workers": self.disc.workers,
            "wall_time_s": result.wall_time,
            "accepted_steps": len(result.steps),
            "attempted_steps": len(reports),
            "t_final": result.t,
            "mass_drift": {"surfactant": drift[0], "fluid": drift[1]},
            "spreading_exponent": result.exponent,
            "fingers": result.fingers,
            "h_max": result.h_max,
            "h_min": result.h_min,
        }
        (out / "run_meta.json").write_text(json.dumps(meta, indent=2, default=_jsonable) + "\n")


def _on_grid(t: float, interval: float) -> bool:
    k = round(t / interval)
    return k > 0 and abs(t - k * interval) <= 1e-9 * max(1.0, t)


def _jsonable(x):
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return str(x)


def run_config(cfg: RunConfig, out_dir=None, progress=None, workers=None) -> RunResult:
    return Simulation(cfg, workers).run(out_dir, progress)
