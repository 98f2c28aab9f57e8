"""Command-line front-end: run, sweep, analyze, export.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from . import harness
from .errors import ConfigError, NumericalFailureError, TrainingDivergenceError


def _add_run_flags(sub):
    sub.add_argument("--config", required=True, help="experiment config file (INI)")
    sub.add_argument("--seed", type=int, default=None, help="override master seed")
    group = sub.add_mutually_exclusive_group()
    group.add_argument("--budget-seconds", type=float, default=None)
    group.add_argument("--budget-episodes", type=int, default=None)
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--workers", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulsezero",
        description="Quantum-control pulse optimization benchmark harness",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    _add_run_flags(commands.add_parser("run", help="run one optimizer on one duration"))
    _add_run_flags(commands.add_parser("sweep", help="run every optimizer x duration cell"))

    analyze = commands.add_parser("analyze", help="derive metric CSVs from a finished run")
    analyze.add_argument("--run-dir", required=True)
    analyze.add_argument("--out", default=None)

    export = commands.add_parser("export", help="export final pulses as a solutions CSV")
    export.add_argument("--run-dir", required=True)
    export.add_argument("--out", required=True, help="output CSV path")
    return parser


def _load_with_overrides(args) -> harness.ExperimentConfig:
    config = harness.load_config(args.config)
    updates = {}
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if args.out is not None:
        updates["out_dir"] = args.out
    if args.workers is not None:
        updates["workers"] = args.workers
    if args.budget_seconds is not None:
        updates["budget_seconds"] = args.budget_seconds
        updates["budget_episodes"] = None
    if args.budget_episodes is not None:
        updates["budget_episodes"] = args.budget_episodes
        updates["budget_seconds"] = None
    if updates:
        config = dataclasses.replace(config, **updates)
        harness.validate_config(config)
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = _load_with_overrides(args)
            summary = harness.run(config)
            print(json.dumps(summary, indent=2, sort_keys=True))
        elif args.command == "sweep":
            config = _load_with_overrides(args)
            summaries = harness.sweep(config)
            for summary in summaries:
                best = summary["best_infidelity"]
                print(f"{summary['cell']}: best infidelity "
                      f"{best:.3e}" if best is not None else f"{summary['cell']}: no records")
        elif args.command == "analyze":
            produced = harness.analyze_run(args.run_dir, args.out)
            for name, path in produced.items():
                print(f"{name}: {path}")
        elif args.command == "export":
            print(harness.export_run(args.run_dir, args.out))
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (NumericalFailureError, TrainingDivergenceError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
