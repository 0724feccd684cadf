#!/usr/bin/env python3
"""Run a synthetic parameter-recovery experiment and print the report.

Example:
    python3 scripts/run_recovery.py --readers 10 --cases 200 --severities 9 \
        --design sparse --seed 3
"""

import argparse
import json

from robustlens.advi import AdviConfig
from robustlens.synthbench import RecoveryConfig, recovery_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--readers", type=int, default=10)
    ap.add_argument("--cases", type=int, default=200)
    ap.add_argument("--severities", type=int, default=9)
    ap.add_argument("--subgroups", type=int, default=2)
    ap.add_argument("--design", choices=["dense", "sparse"], default="dense")
    ap.add_argument("--gamma-scale", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-iters", type=int, default=6000)
    ap.add_argument("--mc-samples", type=int, default=5)
    args = ap.parse_args()

    cfg = RecoveryConfig(
        n_readers=args.readers,
        n_cases=args.cases,
        n_severities=args.severities,
        n_subgroups=args.subgroups,
        design=args.design,
        gamma_scale=args.gamma_scale,
        seed=args.seed,
        advi=AdviConfig(mc_samples=args.mc_samples, max_iters=args.max_iters, seed=0),
    )
    report, _ = recovery_experiment(cfg)
    print(json.dumps(report.to_json_dict(), indent=2))


if __name__ == "__main__":
    main()
