"""XQ, ZQ and DQ on simulated markets where each extension's extra term is active.

    python3 scripts/extensions_demo.py --n 800
"""
import argparse

from _common import top_pair
from seqsearch.extensions import ExtensionConfig, build_within_pairs, estimate_dq, estimate_xq, estimate_zq
from seqsearch.model_core import ginv
from seqsearch.pmr import Normalization
from seqsearch.sieve_mvd import SieveConfig
from seqsearch.simulator import MarketConfig, construct_outcomes, generate_market, simulate_search


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=800)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    cfg = MarketConfig(n_consumers=args.n, n_products=30, seed=args.seed, beta_xbar=(0.7,),
                       price_xi=0.0, position_xi=0.0, xi_sd=0.0)
    m = generate_market(cfg)
    sl = simulate_search(m)
    wp = build_within_pairs(sl, m, cfg.beta, cfg.gamma, lambda c: ginv(c, cfg.match_dist, extrapolate_high=True),
                            offset=cfg.cost_intercept)
    print("XQ truth 0.7:", estimate_xq(wp).coefficients)

    nz = Normalization.pinned({1: 1.0}, {1: 0.5})
    sc = SieveConfig(normalization=nz, offset=cfg.cost_intercept)
    cfg = MarketConfig(n_consumers=args.n, n_products=30, seed=args.seed, beta_zu=(0.0, 0.3))
    m = generate_market(cfg)
    sl = simulate_search(m)
    fit = estimate_zq(construct_outcomes(sl, m, top_pair(sl)), ExtensionConfig(sieve=sc, zu=("z1",)))
    print("ZQ truth beta_z_z1 0.3:", fit.report.coefficients)

    cfg = MarketConfig(n_consumers=args.n, n_products=30, seed=args.seed, n_demographics=1,
                       beta_d=((0.3, 0.0),), gamma_d=((0.0, 0.0),))
    m = generate_market(cfg)
    sl = simulate_search(m)
    fit = estimate_dq(construct_outcomes(sl, m, top_pair(sl)), ExtensionConfig(sieve=sc))
    print("DQ truth beta_d_d0_price 0.3:", fit.report.coefficients)


if __name__ == "__main__":
    main()
