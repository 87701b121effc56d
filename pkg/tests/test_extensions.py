import json

import numpy as np
import pytest

import oracles
from seqsearch.extensions import (
    ExtensionConfig, MatchingSpec, WithinPairs, XqConfig, build_within_pairs, dq_index, dq_objective,
    estimate_dq, estimate_xq, estimate_zq, xq_objective, zq_index, zq_objective,
)
from seqsearch.model_core import ginv
from seqsearch.pmr import Normalization
from seqsearch.sieve_mvd import SieveConfig, SieveSpec, rank_objective, sieve_index, sieve_objective
from seqsearch.simulator import MarketConfig, construct_outcomes, generate_market, simulate_search

SPEC = SieveSpec(3, [0.0, -1.2, 0.15, -0.02], center=0.4, scale=1.3, offset=-0.5)


class TestZq:
    @pytest.mark.parametrize("seed", range(20))
    def test_brute_force(self, seed):
        rng = np.random.default_rng(200 + seed)
        t = oracles.random_table(rng, int(rng.integers(3, 6)), levels=3)
        b, m, bz = rng.normal(size=2), rng.normal(size=2), rng.normal(size=1)
        h = oracles.zq_index(t, b, bz, m, SPEC.coef, SPEC.coef, [1], center=0.4, scale=1.3, offset=-0.5)
        assert abs(zq_objective(t, b, bz, m, SPEC, ["z1"]) - oracles.rank(h, t.S)) <= 1e-12

    def test_zero_reduces_to_sieve(self):
        rng = np.random.default_rng(0)
        t = oracles.random_table(rng, 60, levels=4)
        b, m = rng.normal(size=2), rng.normal(size=2)
        assert zq_objective(t, b, [0.0, 0.0], m, SPEC, [0, 1]) == sieve_objective(t, b, m, SPEC)

    def test_column_lookup(self):
        rng = np.random.default_rng(1)
        t = oracles.random_table(rng, 10)
        b, m = rng.normal(size=2), rng.normal(size=2)
        assert np.array_equal(zq_index(t, b, [0.4], m, SPEC, ["z1"]), zq_index(t, b, [0.4], m, SPEC, [1]))
        with pytest.raises(ValueError, match="not among"):
            zq_index(t, b, [0.4], m, SPEC, ["price"])
        with pytest.raises(ValueError):
            zq_index(t, b, [0.4], m, SPEC, [5])
        with pytest.raises(ValueError, match="one entry"):
            zq_index(t, b, [0.4, 0.1], m, SPEC, ["z1"])


class TestDq:
    @pytest.mark.parametrize("seed", range(20))
    def test_brute_force(self, seed):
        rng = np.random.default_rng(300 + seed)
        t = oracles.random_table(rng, int(rng.integers(3, 6)), levels=3, demo=2)
        b, m = rng.normal(size=2), rng.normal(size=2)
        bd, md = rng.normal(size=(2, 2)), rng.normal(scale=0.3, size=(2, 2))
        h = oracles.dq_index(t, b, bd, m, md, SPEC.coef, SPEC.coef, center=0.4, scale=1.3, offset=-0.5)
        assert abs(dq_objective(t, b, bd, m, md, SPEC) - oracles.rank(h, t.S)) <= 1e-12

    def test_zero_reduces_to_sieve(self):
        rng = np.random.default_rng(2)
        t = oracles.random_table(rng, 60, levels=4, demo=1)
        b, m = rng.normal(size=2), rng.normal(size=2)
        assert np.allclose(dq_index(t, b, np.zeros((1, 2)), m, np.zeros((1, 2)), SPEC),
                           sieve_index(t, b, m, SPEC), atol=1e-13)

    def test_constant_demographics_shift(self):
        # with d_a = c for everyone, (b_bar, b_d) and (b_bar + c b_d, 0) give the same index
        rng = np.random.default_rng(3)
        t = oracles.random_table(rng, 50, levels=4, demo=1)
        t.demo[:] = 2.0
        b, m = rng.normal(size=2), rng.normal(size=2)
        bd, md = rng.normal(size=(1, 2)), rng.normal(scale=0.2, size=(1, 2))
        a = dq_index(t, b, bd, m, md, SPEC)
        c = dq_index(t, b + 2.0 * bd[0], np.zeros((1, 2)), m + 2.0 * md[0], np.zeros((1, 2)), SPEC)
        assert np.allclose(a, c, atol=1e-12)

    def test_errors(self):
        rng = np.random.default_rng(4)
        t = oracles.random_table(rng, 10)
        with pytest.raises(ValueError, match="demographics"):
            dq_index(t, [1, 1], [[0, 0]], [1, 1], [[0, 0]], SPEC)
        t = oracles.random_table(rng, 10, demo=1)
        with pytest.raises(ValueError):
            dq_index(t, [1, 1], [[0, 0, 0]], [1, 1], [[0, 0]], SPEC)


def _random_pairs(rng, n_consumers, q=1, n_e=0):
    k = rng.integers(1, 4, n_consumers)
    a = np.repeat(np.arange(n_consumers), k)
    n = len(a)
    i = rng.integers(1, 5, n)
    return WithinPairs(a, i, i + 1, rng.integers(0, 2, n), rng.normal(size=n),
                       rng.normal(size=(n, q)), rng.integers(0, 2, (n, n_e)).astype(float))


def _as_oracle(p: WithinPairs, w):
    out = {}
    for r in range(p.n_pairs):
        out.setdefault(int(p.consumer[r]), []).append((int(p.S[r]), float(p.h[r]), p.xbar_diff[r], w[r]))
    return out


class TestXq:
    @pytest.mark.parametrize("seed", range(20))
    def test_brute_force(self, seed):
        rng = np.random.default_rng(400 + seed)
        p = _random_pairs(rng, int(rng.integers(2, 6)), q=2, n_e=1)
        bx = rng.normal(size=2)
        w = (p.e_diff[:, 0] == 0).astype(float)
        assert abs(xq_objective(p, bx) - oracles.xq(_as_oracle(p, w), bx)) <= 1e-12

    def test_kernel_matching(self):
        rng = np.random.default_rng(5)
        p = _random_pairs(rng, 5, n_e=1)
        w = oracles.gauss(0) * (p.e_diff[:, 0] == 0) + oracles.gauss(1 / 0.5) * (p.e_diff[:, 0] != 0)
        bx = [0.3]
        got = xq_objective(p, bx, MatchingSpec(bandwidth=0.5))
        assert abs(got - oracles.xq(_as_oracle(p, w), bx)) <= 1e-12

    def test_two_pair_consumer(self):
        p = WithinPairs([0, 0], [1, 1], [2, 3], [1, 0], [0.5, 0.5], [[1.0], [2.0]], np.zeros((2, 0)))
        # v = 0.5 + d * b: first hits when v > 0, second when v < 0
        assert xq_objective(p, [0.0]) == 0.5
        assert xq_objective(p, [-0.4]) == 1.0
        assert xq_objective(p, [-1.0]) == 0.5

    def test_empty(self):
        p = WithinPairs(np.zeros(0), [], [], [], [], np.zeros((0, 1)), np.zeros((0, 0)))
        diag = {}
        assert xq_objective(p, [1.0], diagnostics=diag) == 0.0 and diag["matched_pairs"] == 0
        rep = estimate_xq(p)
        assert rep.objective == 0.0 and np.isnan(rep.coefficients["beta_xbar0"])
        assert rep.diagnostics["warning"] == "no matched pairs"

    def test_no_matched(self):
        p = WithinPairs([0, 1], [1, 1], [2, 2], [1, 0], [0.5, 0.5], [[1.0], [1.0]], [[1.0], [1.0]])
        assert estimate_xq(p).diagnostics["matched_pairs"] == 0

    def test_argmax_matches_grid(self):
        rng = np.random.default_rng(6)
        p = _random_pairs(rng, 60)
        rep = estimate_xq(p, XqConfig(bounds=(-5.0, 5.0)))
        grid = np.linspace(-5, 5, 4001)
        assert rep.objective >= max(xq_objective(p, [g]) for g in grid) - 1e-12
        assert rep.objective == xq_objective(p, [rep.coefficients["beta_xbar0"]])

    def test_multi_dim(self):
        rng = np.random.default_rng(7)
        p = _random_pairs(rng, 40, q=2)
        rep = estimate_xq(p, XqConfig(n_starts=3))
        assert rep.objective >= xq_objective(p, [0.0, 0.0])

    def test_config_json(self):
        c = XqConfig(MatchingSpec(bandwidth=0.5), (-3.0, 3.0), 4, 1)
        assert json.loads(json.dumps(c.to_json()))["matching"]["bandwidth"] == 0.5

    def test_bad_bandwidth(self):
        with pytest.raises(ValueError):
            MatchingSpec(bandwidth=0.0).weights(np.ones((2, 1)))


@pytest.fixture(scope="module")
def xbar_market():
    cfg = MarketConfig(n_consumers=500, n_products=30, seed=0, beta_xbar=(0.7,), price_xi=0.0,
                       position_xi=0.0, xi_sd=0.0)
    m = generate_market(cfg)
    return cfg, m, simulate_search(m)


class TestBuildWithinPairs:
    def _pairs(self, xbar_market, **kw):
        cfg, m, sl = xbar_market
        return build_within_pairs(sl, m, cfg.beta, cfg.gamma, lambda c: ginv(c, cfg.match_dist, extrapolate_high=True),
                                  offset=cfg.cost_intercept, **kw)

    def test_orientation_and_coverage(self, xbar_market):
        cfg, m, sl = xbar_market
        p = self._pairs(xbar_market)
        rank = sl.search_rank()
        assert np.all(p.i < p.j)
        lo_searched = rank[p.consumer, p.i] >= 0
        assert np.array_equal(p.S == 1, lo_searched)
        assert np.all((rank[p.consumer, p.i] >= 0) != (rank[p.consumer, p.j] >= 0))
        a = int(p.consumer[0])
        ns = int(np.sum(rank[a, 1:] >= 0))
        assert np.sum(p.consumer == a) == ns * (cfg.n_products - 1 - ns)

    def test_true_xbar_orders_reservations(self, xbar_market):
        # with the truth every searched-unsearched pair is ordered by r up to xi (zero here) and eta
        cfg, m, sl = xbar_market
        p = self._pairs(xbar_market)
        assert xq_objective(p, list(cfg.beta_xbar)) > xq_objective(p, [0.0])

    def test_recovers_coefficient(self, xbar_market):
        rep = estimate_xq(self._pairs(xbar_market))
        assert abs(rep.coefficients["beta_xbar0"] - 0.7) < 0.15

    def test_cap_per_consumer(self, xbar_market):
        p = self._pairs(xbar_market, max_per_consumer=3)
        assert np.max(np.bincount(p.consumer)) <= 3

    def test_endogenous_components(self, xbar_market):
        p = self._pairs(xbar_market, x_endog=[0])
        assert p.e_diff.shape == (p.n_pairs, 1)
        assert p.subset([0, 1]).n_pairs == np.sum(np.isin(p.consumer, [0, 1]))


@pytest.fixture(scope="module")
def zq_table():
    cfg = MarketConfig(n_consumers=600, n_products=30, seed=1, beta_zu=(0.0, 0.3), n_demographics=1,
                       beta_d=((0.3, 0.0),), gamma_d=((0.0, 0.0),))
    m = generate_market(cfg)
    return cfg, construct_outcomes(simulate_search(m), m, (1, 2))


def _ext_config(**kw):
    sc = SieveConfig(normalization=Normalization.pinned({1: 1.0}, {1: 0.5}), offset=-5.0, n_starts=2,
                     max_pairs=20000)
    return ExtensionConfig(sieve=sc, m_scales=(1.0,), **kw)


class TestJointFits:
    def test_zq_fit(self, zq_table):
        _, t = zq_table
        conf = _ext_config(zu=("z1",))
        fit = estimate_zq(t, conf)
        c = fit.report.coefficients
        assert "beta_z_z1" in c and fit.report.method == "zq"
        val = zq_objective(t, [c["beta_price"], 1.0], [c["beta_z_z1"]], [c["gamma_position"], 0.5], fit.sieve, ["z1"])
        assert fit.report.objective == pytest.approx(val)
        assert ExtensionConfig.from_json(json.loads(json.dumps(conf.to_json()))) == conf

    def test_zq_needs_columns(self, zq_table):
        with pytest.raises(ValueError, match="zu"):
            estimate_zq(zq_table[1], _ext_config())

    def test_dq_fit(self, zq_table):
        _, t = zq_table
        fit = estimate_dq(t, _ext_config())
        c = fit.report.coefficients
        assert {"beta_d_d0_price", "gamma_d_d0_position"} <= set(c)
        bd = [[c["beta_d_d0_price"], c["beta_d_d0_x1"]]]
        md = [[c["gamma_d_d0_position"], c["gamma_d_d0_z1"]]]
        val = dq_objective(t, [c["beta_price"], 1.0], bd, [c["gamma_position"], 0.5], md, fit.sieve)
        assert fit.report.objective == pytest.approx(val)

    def test_dq_needs_demographics(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="demographics"):
            estimate_dq(oracles.random_table(rng, 80), _ext_config())
