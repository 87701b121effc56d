"""Coverage of subsampling confidence intervals for PMR on an exogenous DGP.

    python3 scripts/subsample_coverage.py --n 2000 --reps 200
"""
import argparse
import time
from dataclasses import replace

from seqsearch.inference import SubsampleConfig, subsample_inference
from seqsearch.pmr import Normalization, PmrConfig, SmoothingSpec, estimate_pmr
from seqsearch.simulator import MarketConfig, construct_outcomes, generate_market, simulate_search


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--replications", type=int, default=350, help="subsamples per data set")
    ap.add_argument("--level", type=float, default=0.95)
    args = ap.parse_args()
    cfg0 = MarketConfig(n_consumers=args.n, n_products=10, seed=0, xi_sd=0.0)
    nz = Normalization.pinned({1: cfg0.beta[1]}, {1: cfg0.gamma[1]})
    pc = PmrConfig(normalization=nz, optimizer="exact1d", smoothing=SmoothingSpec(bandwidth=1.0), min_obs=10)
    truth = {"beta_price": cfg0.beta[0], "gamma_position": cfg0.gamma[0]}
    cover = dict.fromkeys(truth, 0)
    t0 = time.time()
    for s in range(args.reps):
        m = generate_market(replace(cfg0, seed=1000 + s))
        tabs = [construct_outcomes(simulate_search(m), m, (1, 2))]
        res = subsample_inference(lambda t: estimate_pmr(t, pc), tabs,
                                  SubsampleConfig(n_replications=args.replications, level=args.level, seed=s))
        ci = res.interval()
        for k in cover:
            cover[k] += ci[k][0] <= truth[k] <= ci[k][1]
    print(f"coverage {cover} of {args.reps} ({time.time() - t0:.0f}s)")


if __name__ == "__main__":
    main()
