"""Run configuration: TOML files, built-in scenarios and desk-scale overrides.

A configuration is a nested dict with the tables ``domain``, ``mesh``,
``model``, ``initial``, ``roughness``, ``time``, ``controls`` and ``output``.
Files may carry a ``[desk]`` table whose entries override the main tables
when the desk profile is selected.
"""

from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigurationError, MissingKeyError
from .model import (
    AngularField,
    GaussianRidgeModes,
    InitialCondition,
    ModelParams,
    RadialModes,
    ZeroRoughness,
    make_eos,
)
from .timestepping import StepControls

REQUIRED = (
    "domain.rect",
    "mesh.elements",
    "initial.kind",
    "time.t_final",
)

SCENARIO_DIR = Path(__file__).with_name("scenarios")


def _get(cfg: dict, dotted: str, default=KeyError):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            if default is KeyError:
                raise MissingKeyError(dotted)
            return default
        node = node[part]
    return node


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _float(x) -> float:
    # TOML has no infinity literal that all writers emit, accept the string too
    if isinstance(x, str) and x.strip().lower() in ("inf", "infinity"):
        return math.inf
    return float(x)


@dataclass
class RunConfig:
    """Validated run configuration plus the raw dict it came from."""

    name: str
    raw: dict
    rect: tuple[float, float, float, float]
    periodic: tuple[bool, bool]
    elements: tuple[int, int]
    degree: int
    quad_order: int | None
    params: ModelParams
    initial: InitialCondition
    roughness: object
    nitsche: bool
    t_final: float
    dt0: float
    fixed_dt: float | None
    rho_inf: float
    initial_rate: str
    controls: StepControls
    out_dir: Path | None
    every: int | None
    interval: float | None
    grid: int
    front_geometry: str
    front_threshold: float | None
    front_times: tuple[float, ...]
    profiles_x: tuple[float, ...]
    fingers: dict | None
    fit_window: tuple[float, float] | None = None
    seed: int | None = None
    stop_times: tuple[float, ...] = field(default=())

    @property
    def output_stops(self) -> tuple[float, ...]:
        stops = set(self.front_times)
        if self.interval:
            k = 1
            while k * self.interval < self.t_final * (1 + 1e-12):
                stops.add(round(k * self.interval, 12))
                k += 1
        return tuple(sorted(s for s in stops if 0 < s <= self.t_final))


def _roughness(cfg: dict):
    r = cfg.get("roughness", {}) or {}
    kind = r.get("kind", "zero")
    if kind == "zero":
        return ZeroRoughness()
    amps = tuple(float(a) for a in r.get("amplitudes", ()))
    lams = tuple(float(a) for a in r.get("wavenumbers", ()))
    if len(amps) != len(lams) or not amps:
        raise ConfigurationError("roughness amplitudes and wavenumbers must have equal, nonzero length")
    smoothing = float(r.get("smoothing", 5.0))
    if kind == "ridge":
        return GaussianRidgeModes(amps, lams, smoothing, float(r.get("center", 1.0)))
    if kind == "radial":
        amp = float(r.get("angular_amplitude", 0.0))
        if amp:
            seed = r.get("seed", cfg.get("seed"))
            if seed is None:
                raise MissingKeyError("seed")
            angular = AngularField.random(amp, int(r.get("angular_bins", 128)), int(seed))
        else:
            angular = AngularField.zero()
        return RadialModes(amps, lams, smoothing, float(r.get("delta", 0.005)), angular)
    raise ConfigurationError(f"unknown roughness kind {kind!r}")


def from_dict(cfg: dict, name: str = "custom", profile: str = "paper") -> RunConfig:
    """Build a :class:`RunConfig`; ``profile='desk'`` applies the ``[desk]`` overrides."""
    if profile not in ("paper", "desk"):
        raise ConfigurationError(f"unknown profile {profile!r}")
    cfg = copy.deepcopy(cfg)
    desk = cfg.pop("desk", {}) or {}
    if profile == "desk":
        cfg = _merge(cfg, desk)
    for key in REQUIRED:
        _get(cfg, key)
    if "dt0" not in cfg["time"] and "fixed_dt" not in cfg["time"]:
        raise MissingKeyError("time.dt0")

    rect = tuple(float(v) for v in _get(cfg, "domain.rect"))
    if len(rect) != 4:
        raise ConfigurationError("domain.rect needs four numbers x0, x1, y0, y1")
    periodic = tuple(bool(v) for v in _get(cfg, "domain.periodic", [False, False]))
    elements = _get(cfg, "mesh.elements")
    if isinstance(elements, int):
        elements = (elements, elements)
    elements = tuple(int(v) for v in elements)

    m = cfg.get("model", {})
    eos = make_eos(m.get("eos", "linear"), m.get("eos_alpha"))
    params = ModelParams(
        capillarity=float(m.get("capillarity", 1e-4)),
        gravity=float(m.get("gravity", 0.0)),
        peclet=_float(m.get("peclet", 1e4)),
        eos=eos,
        nitsche_scale=float(m.get("nitsche_scale", 5.0)),
    )

    seed = cfg.get("seed")
    ini = dict(cfg["initial"])
    modes = tuple((float(a), float(l)) for a, l in ini.pop("modes", ()))
    if ini.get("angular_amplitude") and "seed" not in ini:
        if seed is None:
            raise MissingKeyError("seed")
        ini["seed"] = int(seed)
    try:
        initial = InitialCondition(modes=modes, **ini)
    except TypeError as exc:
        raise ConfigurationError(f"bad [initial] table: {exc}") from exc

    t = cfg["time"]
    ctl = dict(cfg.get("controls", {}))
    try:
        controls = StepControls(**ctl)
    except TypeError as exc:
        raise ConfigurationError(f"bad [controls] table: {exc}") from exc

    o = cfg.get("output", {})
    every = o.get("every")
    interval = o.get("interval")
    if every is not None and int(every) <= 0:
        raise ConfigurationError("output.every must be positive")
    if interval is not None and float(interval) <= 0:
        raise ConfigurationError("output.interval must be positive")
    fixed = t.get("fixed_dt")
    return RunConfig(
        name=cfg.get("name", name),
        raw=cfg,
        rect=rect,
        periodic=periodic,
        elements=elements,
        degree=int(cfg["mesh"].get("degree", 3)),
        quad_order=cfg["mesh"].get("quad_order"),
        params=params,
        initial=initial,
        roughness=_roughness(cfg),
        nitsche=bool(cfg.get("domain", {}).get("nitsche", True)),
        t_final=float(t["t_final"]),
        dt0=float(t.get("dt0", fixed if fixed is not None else 0.0)),
        fixed_dt=None if fixed is None else float(fixed),
        rho_inf=float(t.get("rho_inf", 0.5)),
        initial_rate=t.get("initial_rate", "zero"),
        controls=controls,
        out_dir=Path(o["dir"]) if "dir" in o else None,
        every=None if every is None else int(every),
        interval=None if interval is None else float(interval),
        grid=int(o.get("grid", 129)),
        front_geometry=o.get("front_geometry", "radial" if initial.radial else "planar"),
        front_threshold=o.get("front_threshold"),
        front_times=tuple(float(v) for v in o.get("front_times", ())),
        profiles_x=tuple(float(v) for v in o.get("profiles_x", ())),
        fingers=o.get("fingers"),
        fit_window=tuple(float(v) for v in o["fit_window"]) if "fit_window" in o else None,
        seed=None if seed is None else int(seed),
    )


def load_toml(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"configuration file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc


def scenario_names() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.toml"))


def scenario_dict(name: str) -> dict:
    path = SCENARIO_DIR / f"{name}.toml"
    if not path.exists():
        raise ConfigurationError(
            f"unknown scenario {name!r}; available: {', '.join(scenario_names())}"
        )
    return load_toml(path)


def load(source, profile: str = "paper", overrides: dict | None = None) -> RunConfig:
    """Load a config from a TOML path or a built-in scenario name."""
    src = str(source)
    if src in scenario_names():
        cfg, name = scenario_dict(src), src
    else:
        cfg, name = load_toml(src), Path(src).stem
    if overrides:
        cfg = _merge(cfg, overrides)
        if profile == "desk" and "desk" in cfg:
            # command-line values beat the desk profile
            cfg["desk"] = _merge(cfg["desk"], overrides)
    return from_dict(cfg, name=name, profile=profile)
