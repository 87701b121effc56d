"""Simulated-likelihood estimates under the true and a misspecified match-value distribution.

    python3 scripts/likelihood_bias.py --n 2000 --reps 10
"""
import argparse
import time
from dataclasses import replace

import numpy as np

from seqsearch.likelihood import LikelihoodConfig, SearchData, estimate_likelihood
from seqsearch.model_core import MatchValueDist
from seqsearch.simulator import MarketConfig, generate_market, simulate_search


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--draws", type=int, default=50)
    args = ap.parse_args()
    cfg0 = MarketConfig(n_consumers=args.n, n_products=30, seed=0)
    th0 = np.r_[cfg0.beta, cfg0.gamma, cfg0.cost_intercept]
    assumed = {"misspecified": MatchValueDist.normal(), "true": cfg0.match_dist}
    out = {k: [] for k in assumed}
    t0 = time.time()
    for s in range(args.reps):
        m = generate_market(replace(cfg0, seed=100 + s))
        d = SearchData.from_market(m, simulate_search(m))
        for name, dist in assumed.items():
            lc = LikelihoodConfig(match_dist=dist, eta_dist=MatchValueDist.normal(0, cfg0.eta_sd),
                                  n_draws=args.draws, seed=s)
            out[name].append(list(estimate_likelihood(d, lc, start=th0).raw_coefficients.values()))
    print("truth", th0)
    for k, v in out.items():
        v = np.array(v)
        print(f"{k:>12} mean {v.mean(0).round(3)} sd {v.std(0).round(3)}")
    print(f"{time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
