"""Tabulate sampled continuity and decay envelopes for the built-in policies.

Usage: python scripts/condition_envelopes.py [--samples 2000] [--seed 0]
"""

import argparse
import sys

from qsched.conditions import ConditionProbe, check_condition1, check_condition2
from qsched.policies import (
    MWM,
    ConstantWeights,
    Eryilmaz,
    EryilmazSpec,
    ExpCounterexample,
    ExpRule,
    ExpRuleParams,
)

LEVELS = (1e2, 1e3, 1e4, 1e5)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    probe = ConditionProbe(LEVELS, args.samples, C1=10.0, C2=10.0, seed=args.seed)
    policies = {
        "mwm": MWM(),
        "exp_rule": ExpRule(ExpRuleParams.uniform(2)),
        "eryilmaz_log1p": Eryilmaz(EryilmazSpec.uniform("log1p")),
        "eryilmaz_sqrt": Eryilmaz(EryilmazSpec.uniform("power", exponent=0.5)),
        "exp_counterexample": ExpCounterexample(),
        "constant": ConstantWeights((0.5, 0.5)),
    }
    print("policy,B,delta1,delta2")
    for name, pol in policies.items():
        for l1, l2 in zip(check_condition1(pol, probe, 2), check_condition2(pol, probe, 2)):
            print(f"{name},{l1.B:g},{l1.delta:.6g},{l2.delta:.6g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
