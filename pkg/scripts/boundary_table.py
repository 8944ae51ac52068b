"""Print the ergodic rate-region boundary of a scenario's channel as CSV.

Usage: python scripts/boundary_table.py scenarios/mwm_090.toml [--points 21]
"""

import argparse
import sys

from qsched.rate_region import sample_boundary
from qsched.scenario import load_scenario


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario")
    ap.add_argument("--points", type=int, default=21)
    args = ap.parse_args()
    cm = load_scenario(args.scenario).channel
    M = cm.M
    print(",".join([f"mu{i}" for i in range(M)] + [f"x{i}" for i in range(M)]))
    for s in sample_boundary(cm, args.points):
        print(",".join(f"{v:.10g}" for v in (*s.mu, *s.rate)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
