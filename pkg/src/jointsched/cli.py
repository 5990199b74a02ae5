"""Command-line entry point: ``jointsched simulate | experiment | verify``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import DEFAULT_SEEDS, DEFAULT_SLOTS, PRESETS, run_experiment
from .model import ConfigError, load_config, validate_config
from .schedulers import SchedulerSpec
from .sim import run_simulation
from .verify import SUITES, run_suite

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jointsched", description="Joint eMBB/URLLC scheduling simulator.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run one scheduler on a JSON configuration")
    sim.add_argument("--config", required=True, type=Path)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--slots", type=int, default=DEFAULT_SLOTS)
    sim.add_argument("--out", required=True, type=Path)
    sim.add_argument("--scheduler", default="sa", help="sa, gradient-rp, gradient-tp, gradient-random, static-random, ...")
    sim.add_argument("--queue", action="store_true", help="queue URLLC arrivals above the minislot cap instead of blocking")

    exp = sub.add_parser("experiment", help="run a preset sweep and write CSV plus figures")
    exp.add_argument("--preset", required=True, choices=sorted(PRESETS))
    exp.add_argument("--out", required=True, type=Path)
    exp.add_argument("--seeds", type=int, default=DEFAULT_SEEDS)
    exp.add_argument("--slots", type=int, default=DEFAULT_SLOTS)
    exp.add_argument("--no-plots", action="store_true")

    ver = sub.add_parser("verify", help="run numerical self-checks")
    ver.add_argument("--suite", default="all", choices=sorted(SUITES) + ["all"])
    return parser


def _simulate(args) -> int:
    if args.slots <= 0:
        raise UsageError("--slots must be positive")
    cfg = load_config(args.config)
    problems = validate_config(cfg)
    if problems:
        for p in problems:
            print(f"invalid config: {p}", file=sys.stderr)
        return EXIT_INVALID
    try:
        spec = SchedulerSpec.parse(args.scheduler)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    trace = run_simulation(cfg, spec, args.seed, args.slots, record=True, queue=args.queue)
    args.out.mkdir(parents=True, exist_ok=True)
    trace.write_csv(args.out / "trace.csv")
    trace.write_summary(args.out / "summary.json")
    print(json.dumps({"sum_utility": trace.summary.sum_utility, "class_rates": trace.summary.class_rates}))
    return EXIT_OK


def _experiment(args) -> int:
    if args.seeds <= 0 or args.slots <= 0:
        raise UsageError("--seeds and --slots must be positive")
    rows = run_experiment(args.preset, args.out, args.seeds, args.slots, plots=not args.no_plots)
    print(f"wrote {len(rows)} rows to {args.out / (args.preset + '.csv')}")
    return EXIT_OK


def _verify(args) -> int:
    results = run_suite(args.suite)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {"simulate": _simulate, "experiment": _experiment, "verify": _verify}[args.command]
        return handler(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
