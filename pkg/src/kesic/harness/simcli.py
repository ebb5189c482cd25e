"""Simulator CLI.

``kesic-sim run scenario.json [--seed N] [--live]`` executes one scenario
and prints its JSON report; ``kesic-sim attacks [--seed N]`` runs the
bundled adversarial suite. Exit status is 0 only when every expectation
held (and, for the suite, coverage is complete).
"""

from __future__ import annotations

import argparse
import json
import sys

from ..errors import KesicError, error_name
from .attacks import attack_names, attack_suite
from .scenario import run_scenario


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kesic-sim", description="Scenario simulator")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="execute a scenario script")
    p_run.add_argument("scenario", help="path to a scenario JSON file")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--live", action="store_true", help="run against real local daemons")

    p_attacks = sub.add_parser("attacks", help="run the bundled adversarial suite")
    p_attacks.add_argument("--seed", type=int, default=0)
    p_attacks.add_argument("--list", action="store_true", help="list scenario names and exit")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "run":
            with open(args.scenario, "r", encoding="utf-8") as fh:
                script = json.load(fh)
            report = run_scenario(script, seed=args.seed, live=args.live)
        else:
            if args.list:
                print("\n".join(attack_names()))
                return 0
            report = attack_suite(args.seed)
    except (KesicError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {error_name(exc) if isinstance(exc, KesicError) else type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0 if report["ok"] else 1


if __name__ == "__main__":
    sys.exit(main())
