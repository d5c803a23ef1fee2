"""Command line: ``filmiga run``, ``filmiga verify`` and ``filmiga scenarios``.

Exit codes: 0 success, 1 solver failure or failed verification,
2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time

from . import __version__, acceptance, config
from .errors import ConfigurationError, FilmIGAError, SolverFailure
from .simulation import Simulation

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


def _mesh_arg(text: str) -> list[int]:
    parts = text.lower().replace("x", ",").split(",")
    try:
        dims = [int(p) for p in parts if p]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad mesh size {text!r}") from None
    if len(dims) == 1:
        dims = dims * 2
    if len(dims) != 2 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"bad mesh size {text!r}")
    return dims


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="filmiga", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"filmiga {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="integrate a scenario or TOML config")
    run.add_argument("config", help="built-in scenario name or path to a TOML file")
    run.add_argument("--profile", choices=("paper", "desk"), default="paper",
                     help="parameter profile of the config (default: paper)")
    run.add_argument("--mesh", type=_mesh_arg, help="elements per direction, N or NxM")
    run.add_argument("--tfinal", type=float, help="final time")
    run.add_argument("--fixed-dt", type=float, help="use fixed steps of this size")
    run.add_argument("--every", type=int, help="write a snapshot every k accepted steps")
    run.add_argument("--out", help="output directory (default: ./<name>-out)")

    ver = sub.add_parser("verify", help="run verification suites")
    ver.add_argument("suite", help=f"one of: {', '.join(acceptance.SUITES)}, all")

    sub.add_parser("scenarios", help="list built-in scenarios")
    return parser


def _overrides(args) -> dict:
    over: dict = {}
    if args.mesh:
        over.setdefault("mesh", {})["elements"] = args.mesh
    if args.tfinal is not None:
        over.setdefault("time", {})["t_final"] = args.tfinal
    if args.fixed_dt is not None:
        over.setdefault("time", {})["fixed_dt"] = args.fixed_dt
    if args.every is not None:
        over.setdefault("output", {})["every"] = args.every
    if args.out is not None:
        over.setdefault("output", {})["dir"] = args.out
    return over


def cmd_run(args) -> int:
    cfg = config.load(args.config, profile=args.profile, overrides=_overrides(args))
    out = cfg.out_dir or f"{cfg.name}-out"
    sim = Simulation(cfg)
    t0 = time.perf_counter()

    def progress(t, rep):
        logging.getLogger("filmiga.run").info(
            "t=%.6g dt=%.3e e=%.3g newton=%d (%.1fs)",
            t, rep.dt, rep.error, rep.newton_iterations, time.perf_counter() - t0,
        )

    try:
        res = sim.run(out, progress)
    except SolverFailure as exc:
        print(f"solver failure: {exc}; diagnostics in {out}/failure.json", file=sys.stderr)
        return EXIT_FAILURE
    ds, df = res.mass_drift()
    print(f"{cfg.name}: reached t={res.t:g} in {len(res.steps)} steps ({res.wall_time:.1f}s); output in {out}")
    print(f"  mass drift: surfactant {ds:.2e}, fluid {df:.2e}")
    if res.exponent is not None:
        print(f"  spreading exponent: {res.exponent:.4f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    names = list(acceptance.SUITES) if args.suite == "all" else [args.suite]
    if args.suite != "all" and args.suite not in acceptance.SUITES:
        raise ConfigurationError(
            f"unknown suite {args.suite!r}; available: {', '.join(acceptance.SUITES)}, all"
        )
    failed = []
    for name in names:
        for check in acceptance.run_suite(name):
            print(check.line(), flush=True)
            if not check.passed:
                failed.append(check.name)
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return EXIT_FAILURE
    print("all checks passed")
    return EXIT_OK


def cmd_scenarios(args) -> int:
    for name in config.scenario_names():
        desc = config.scenario_dict(name).get("description", "")
        print(f"{name:24s} {desc}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "verify": cmd_verify, "scenarios": cmd_scenarios}
    try:
        return handlers[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FilmIGAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
