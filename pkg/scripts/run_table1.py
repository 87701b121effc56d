"""Monte Carlo bias/MSE table for PMR and the simulated likelihood.

    python3 scripts/run_table1.py --profile table1-desk --out results/table1-desk
"""
import argparse
import logging
from dataclasses import replace

from seqsearch.montecarlo import PROFILES, profile, run_study


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--profile", default="table1-desk", choices=PROFILES)
    ap.add_argument("--reps", type=int, default=None)
    ap.add_argument("--out", default="results/table1")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = profile(args.profile)
    if args.reps:
        cfg = replace(cfg, n_reps=args.reps)
    table = run_study(cfg, progress=True)
    table.save(args.out)
    print(table.to_csv(), end="")
    print(f"# {table.seconds:.0f}s")


if __name__ == "__main__":
    main()
