"""Empirical coverage of the nominal intervals, uncorrelated design.

    python scripts/coverage_study.py --n 800 --reps 100
"""

import argparse

from amlape.simulate import StudyConfig, run_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=800)
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=8)
    ap.add_argument("--design", default="uncorrelated")
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    cfg = StudyConfig(designs=(args.design,), n_grid=(args.n,), replications=args.reps, estimators=("aml",),
                      seed=args.seed, alpha=args.alpha, workers=args.workers)
    row = run_study(cfg).summary_row(args.design, args.n, "aml")
    covered = round(row["coverage"] * row["n_ok"])
    print(f"tau_oracle={row['tau_oracle']:.6f} (mc se {row['oracle_se']:.1e})")
    print(f"covered {covered}/{row['n_ok']} at nominal {1 - args.alpha:.0%}; failed fits: {row['n_failed']}")
    print(f"bias={row['bias']:.5f} rmse={row['rmse']:.5f}")


if __name__ == "__main__":
    main()
