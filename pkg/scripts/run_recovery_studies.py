#!/usr/bin/env python3
"""Run the partition-recovery studies and print their metric tables.

Examples:
    python scripts/run_recovery_studies.py --replicates 50
    python scripts/run_recovery_studies.py --study logistic --replicates 10
"""

import argparse
import time

from meanfuse.simulate import evaluate_gate, run_study
from meanfuse.study_designs import logistic_two_group, poisson_homogeneous

STUDIES = {
    "logistic": logistic_two_group,
    "poisson-homogeneous": poisson_homogeneous,
}


def print_result(result, elapsed):
    s = result.summary
    print(f"\n== {s['setting']} ==")
    print(f"replicates {s['n_replicates']} (failed {s['n_failed']}), "
          f"recovery {s['recovery_rate']:.3f}, mean groups {s['mean_n_groups']:.2f}, "
          f"{elapsed:.0f}s")
    if result.metrics:
        print(f"{'group':>5} {'covariate':>10} {'rmse':>9} {'ese':>9} "
              f"{'ase':>9} {'bias':>9} {'cp':>6}")
        for m in result.metrics:
            print(f"{m['group']:>5} {m['covariate']:>10} {m['rmse']:>9.4f} "
                  f"{m['ese']:>9.4f} {m['ase']:>9.4f} {m['bias']:>9.5f} "
                  f"{m['cp']:>6.3f}")
    if "rmse_ratio_het" in s:
        print("het/fused rmse ratio per covariate:",
              [round(r, 2) for r in s["rmse_ratio_het"]])
    if "oracle_agreement" in s:
        print(f"known-grouping agreement: {s['oracle_agreement']:.3f}")
    failures = evaluate_gate(result)
    print("gate:", "ok" if not failures else failures)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--study", choices=sorted(STUDIES) + ["all"], default="all")
    ap.add_argument("--replicates", type=int, default=50)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    names = sorted(STUDIES) if args.study == "all" else [args.study]
    for name in names:
        kwargs = {"n_replicates": args.replicates}
        if args.seed is not None:
            kwargs["seed"] = args.seed
        design = STUDIES[name](**kwargs)
        t0 = time.time()
        result = run_study(design, workers=args.workers)
        print_result(result, time.time() - t0)


if __name__ == "__main__":
    main()
