"""PMR sampling distribution across kernel bandwidths on the top searched pair.

    python3 scripts/pmr_bandwidth.py --n 2000 --reps 20 --bandwidths 0.5 1.0 scaled
"""
import argparse
import time
from dataclasses import replace

import numpy as np

from _common import top_pair
from seqsearch.pmr import Normalization, PmrConfig, SmoothingSpec, estimate_pmr
from seqsearch.simulator import MarketConfig, construct_outcomes, generate_market, simulate_search


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--bandwidths", nargs="+", default=["1.0", "scaled"])
    ap.add_argument("--exogenous", action="store_true", help="set xi to zero")
    args = ap.parse_args()
    cfg0 = MarketConfig(n_consumers=args.n, n_products=30, seed=0, **({"xi_sd": 0.0} if args.exogenous else {}))
    nz = Normalization.pinned({1: cfg0.beta[1]}, {1: cfg0.gamma[1]})
    for bw in args.bandwidths:
        sm = SmoothingSpec(scaled=True) if bw == "scaled" else SmoothingSpec(bandwidth=float(bw))
        t0, est = time.time(), []
        for s in range(args.reps):
            m = generate_market(replace(cfg0, seed=s))
            sl = simulate_search(m)
            rep = estimate_pmr(construct_outcomes(sl, m, top_pair(sl)),
                               PmrConfig(normalization=nz, optimizer="exact1d", smoothing=sm))
            est.append([rep.coefficients["beta_price"], rep.coefficients["gamma_position"]])
        e = np.array(est)
        print(f"bandwidth={bw:>7}  mean={e.mean(0).round(3)}  sd={e.std(0).round(3)}  {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
