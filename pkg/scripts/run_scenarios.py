"""Run every task of each shipped scenario and print the per-seed verdicts.

Usage: python scripts/run_scenarios.py [--out runs] [--jobs 4] [names ...]
"""

import argparse
import sys
from pathlib import Path

from qsched.errors import QSchedError
from qsched.harness import run
from qsched.scenario import load_scenario

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", help="scenario stems; all shipped scenarios when omitted")
    ap.add_argument("--out", type=Path, default=ROOT / "runs")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    paths = [ROOT / "scenarios" / f"{n}.toml" for n in args.names] or sorted((ROOT / "scenarios").glob("*.toml"))
    status = 0
    for path in paths:
        sc = load_scenario(path)
        try:
            summary = run(sc, args.out / sc.name, sc.tasks, jobs=args.jobs)
        except QSchedError as exc:
            print(f"{sc.name}: {type(exc).__name__}: {exc}")
            status = 3
            continue
        verdicts = [s["verdict"] for s in summary.get("simulations", [])]
        print(f"{sc.name}: {verdicts}")
    return status


if __name__ == "__main__":
    sys.exit(main())
