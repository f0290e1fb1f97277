"""Command-line entry point: run experiments, verify against closed forms."""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .config import load_config
from .errors import MultiobsError
from .runner import run_experiment
from .scenarios import SCENARIOS, run_scenario


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multiobs",
        description="Monte Carlo simulation of open quantum dynamics seen by several observers",
    )
    parser.add_argument("--version", action="version", version=f"multiobs {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one configured experiment, write CSV + manifest")
    run_p.add_argument("--config", required=True, help="path to a TOML experiment config")
    run_p.add_argument("--seed", type=int, default=None, help="override the config seed")
    run_p.add_argument("--traj", type=int, default=None, help="override the trajectory count")
    run_p.add_argument("--out", default=None, help="output directory (default: config, "
                       "then $MULTIOBS_OUTPUT_DIR, then ./multiobs-out)")
    run_p.add_argument("--threads", type=int, default=None, help="worker threads (0 = all cores)")

    ver_p = sub.add_parser("verify", help="run named verification scenarios (PASS/FAIL)")
    ver_p.add_argument("scenarios", nargs="*", help="scenario names; none lists all scenarios")
    ver_p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    ver_p.add_argument("--traj", type=int, default=None, help="override the trajectory count")
    ver_p.add_argument("--threads", type=int, default=1)

    sub.add_parser("list-scenarios", help="list verification scenario names")
    return parser


def _print_scenario_list() -> None:
    width = max(len(name) for name in SCENARIOS)
    for name in SCENARIOS:
        print(f"{name:<{width}}  {SCENARIOS[name][0]}")


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "list-scenarios":
            _print_scenario_list()
            return 0
        if args.command == "verify":
            if not args.scenarios:
                _print_scenario_list()
                return 0
            failed = 0
            for name in args.scenarios:
                try:
                    result = run_scenario(
                        name, seed=args.seed, n_traj=args.traj, threads=args.threads
                    )
                except KeyError as exc:
                    print(f"error: {exc.args[0]}", file=sys.stderr)
                    return 2
                print(result.report())
                failed += 0 if result.passed else 1
            return 1 if failed else 0
        if args.command == "run":
            cfg = load_config(args.config).with_overrides(
                seed=args.seed, n_traj=args.traj, threads=args.threads
            )
            outputs = run_experiment(cfg, args.out)
            for path in outputs.csv_paths:
                print(f"wrote {path}")
            print(f"wrote {outputs.manifest_path}")
            return 0
    except MultiobsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
