"""Command-line front end.

Exit status: 0 on success, 2 when the scenario fails validation, 3 when a
policy search, grid construction or other solver step fails at run time.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ConfigError, QSchedError
from .harness import run
from .scenario import load_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

COMMANDS = {
    "simulate": ("simulate seeds, classify each trace", ("simulate",)),
    "check-conditions": ("sample the continuity and decay conditions", ("conditions",)),
    "necessity": ("simulate seeds and report weight-jump statistics", ("necessity",)),
    "lyapunov": ("grid construction and drift probes", ("lyapunov",)),
    "report": ("run every task listed in the scenario", None),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsched", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (help_text, _) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--scenario", required=True, type=Path, metavar="PATH")
        p.add_argument("--out", type=Path, default=Path("out"), metavar="DIR")
        p.add_argument("--jobs", type=int, default=1, metavar="N")
        p.add_argument("--seed-override", type=int, default=None, metavar="K",
                       help="run only this seed instead of the scenario's list")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if args.seed_override is not None and args.seed_override < 0:
            raise ConfigError("--seed-override must be >= 0")
        sc = load_scenario(args.scenario)
        if args.seed_override is not None:
            sc = sc.with_seeds([args.seed_override])
    except ConfigError as exc:
        print(f"qsched: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    tasks = COMMANDS[args.command][1] or sc.tasks
    try:
        summary = run(sc, args.out, tasks, jobs=args.jobs)
    except ConfigError as exc:
        print(f"qsched: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except QSchedError as exc:
        print(f"qsched: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for entry in summary.get("simulations", []):
        print(f"seed {entry['seed']}: {entry['verdict']}")
    print(f"summary written to {args.out / 'summary.json'}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
