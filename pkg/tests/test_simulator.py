import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqsearch.model_core import MatchValueDist
from seqsearch.simulator import (
    ConfigError, DiscreteInstance, MarketConfig, SearchRecord, brute_force_policy_value,
    construct_outcomes, draw_pairs, generate_market, index_policy_value, load_market,
    save_market, simulate_index_policy, simulate_search, weitzman_search,
)
from dataclasses import replace


@pytest.fixture(scope="module")
def market():
    return generate_market(MarketConfig(n_consumers=400, n_products=8, seed=3))


@pytest.fixture(scope="module")
def slog(market):
    return simulate_search(market)


def _corr_price_xi(cfg):
    m = generate_market(cfg)
    price = m.x[:, 1:, 0].ravel()
    xi = np.broadcast_to(m.xi[None, 1:], m.x[:, 1:, 0].shape).ravel()
    return float(np.corrcoef(price, xi)[0, 1])


class TestGenerate:
    def test_exogenous_price(self):
        cfg = MarketConfig(n_consumers=5000, n_products=30, seed=11, price_xi=0.0)
        assert abs(_corr_price_xi(cfg)) <= 0.05

    def test_default_endogenous_price(self):
        # frozen from one seeded draw (seed 11, 5000 x 30)
        c = _corr_price_xi(MarketConfig(n_consumers=5000, n_products=30, seed=11))
        assert c > 0.3
        assert c == pytest.approx(0.50546, abs=1e-4)

    def test_deterministic(self):
        cfg = MarketConfig(n_consumers=50, n_products=5, seed=9)
        a, b = generate_market(cfg), generate_market(cfg)
        for f in ("xi", "x", "z", "eta", "eps", "nu"):
            assert np.array_equal(getattr(a, f), getattr(b, f))

    def test_xi_constant_across_consumers(self, market):
        assert market.xi[0] == 0
        delta = market.prior_utility()
        base = market.prior_utility() - market.xi[None, :]
        assert np.allclose((delta - base)[:, 1:], market.xi[None, 1:])

    def test_positions_are_permutations(self, market):
        pos = market.z[:, 1:, 0]
        assert np.all(np.sort(pos, axis=1) == np.arange(1, market.n_products))

    def test_invalid_dims(self):
        with pytest.raises(ConfigError):
            MarketConfig(n_consumers=10, n_products=1, seed=0)
        with pytest.raises(ConfigError):
            MarketConfig(n_consumers=10, n_products=3, seed=0, beta_zu=(1.0,) * 5)

    def test_config_json(self):
        cfg = MarketConfig(n_consumers=10, n_products=3, seed=0, n_demographics=1,
                           beta_d=((0.1, 0.0),), match_dist=(MatchValueDist.normal(), MatchValueDist.logistic()))
        assert MarketConfig.from_json(json.loads(json.dumps(cfg.to_json()))) == cfg
        with pytest.raises(ConfigError, match="n_products"):
            MarketConfig.from_json({"n_consumers": 3, "seed": 1})


class TestSearch:
    def test_vectorised_matches_reference(self, market, slog):
        for a in range(0, market.n_consumers, 7):
            rec = weitzman_search(market, a)
            assert rec.searched == tuple(slog.searched(a))
            assert rec.purchase == slog.purchase[a]

    def test_order_strictly_decreasing(self, slog):
        for a in range(slog.n_consumers):
            s = slog.searched(a)
            assert np.all(np.diff(slog.r[a, s]) < 0)

    def test_choice_rule(self, slog):
        for a in range(slog.n_consumers):
            opts = np.concatenate([[0], slog.searched(a)])
            assert slog.purchase[a] == opts[np.argmax(slog.u[a, opts])]

    def test_stopping_rule(self, slog):
        for a in range(slog.n_consumers):
            s = slog.searched(a)
            best = max(slog.u[a, 0], *slog.u[a, s]) if len(s) else slog.u[a, 0]
            uns = np.setdiff1d(np.arange(1, slog.r.shape[1]), s)
            assert np.all(best >= slog.r[a, uns])
            # continuation: each search was worth it at the time
            so_far = slog.u[a, 0]
            for j in s:
                assert slog.r[a, j] > so_far
                so_far = max(so_far, slog.u[a, j])

    def test_outside_dominates(self):
        cfg = MarketConfig(n_consumers=20, n_products=2, seed=0, cost_intercept=4.0, nu_sd=0.0,
                           eta_sd=0.0, xi_sd=0.0)
        m = generate_market(cfg)
        m.nu[:] = 100.0
        sl = simulate_search(m)
        assert np.all(sl.n_searched == 0) and np.all(sl.purchase == 0)
        assert weitzman_search(m, 0) == SearchRecord(0, (), (), 0)


class TestDiscrete:
    def test_index_equals_brute_force(self):
        rng = np.random.default_rng(20)
        for _ in range(50):
            inst = DiscreteInstance.random(rng, 3, 5)
            assert abs(index_policy_value(inst) - brute_force_policy_value(inst)) <= 1e-10

    def test_zero_costs_search_everything(self):
        vals = ((0.0, 2.0), (1.0, -1.0))
        probs = ((0.5, 0.5), (0.3, 0.7))
        inst = DiscreteInstance(-0.2, (0.0, 0.0), vals, probs)
        expected = sum(p1 * p2 * max(-0.2, v1, v2) for v1, p1 in zip(vals[0], probs[0])
                       for v2, p2 in zip(vals[1], probs[1]))
        assert brute_force_policy_value(inst) == pytest.approx(expected, abs=1e-14)

    def test_prohibitive_costs(self):
        inst = DiscreteInstance(0.3, (10.0, 10.0), ((1.0, 2.0), (0.0,)), ((0.5, 0.5), (1.0,)))
        assert brute_force_policy_value(inst) == 0.3

    def test_monte_carlo_agrees(self):
        rng = np.random.default_rng(5)
        inst = DiscreteInstance((-0.1), (0.1, 0.2, 0.05), ((0.0, 1.0, 2.0), (-1.0, 1.5), (0.5, 0.7, 0.9)),
                                ((0.3, 0.4, 0.3), (0.5, 0.5), (0.2, 0.3, 0.5)))
        mean, se = simulate_index_policy(inst, 100_000, rng)
        assert abs(mean - brute_force_policy_value(inst)) <= 3 * se

    def test_too_large(self):
        with pytest.raises(ValueError, match="too large"):
            DiscreteInstance(0.0, (0.1,) * 5, ((0.0,),) * 5, ((1.0,),) * 5)

    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=6), st.floats(0.001, 2))
    @settings(max_examples=40)
    def test_reservation_value_solves_equation(self, vals, c):
        p = tuple([1.0 / len(vals)] * len(vals))
        inst = DiscreteInstance(0.0, (c,), (tuple(vals),), (p,))
        r = inst.reservation_value(0)
        gain = sum(pi * max(v - r, 0.0) for v, pi in zip(vals, p))
        assert gain == pytest.approx(c, abs=1e-9)


class TestOutcomes:
    def _market(self):
        return generate_market(MarketConfig(n_consumers=4, n_products=4, seed=0))

    def test_rules(self):
        m = self._market()
        recs = [SearchRecord(0, (1,), (0.0,), 1),          # i only
                SearchRecord(1, (3,), (0.0,), 3),          # neither
                SearchRecord(2, (2, 1), (0.0, 0.0), 2),    # j then i
                SearchRecord(3, (1, 2), (0.0, 0.0), 1)]    # i then j
        t = construct_outcomes(recs, m, (1, 2))
        assert t.consumer.tolist() == [0, 2, 3]
        assert t.S.tolist() == [1, 0, 1]

    def test_outside_pair_rejected(self):
        m = self._market()
        with pytest.raises(ValueError):
            construct_outcomes([], m, (0, 1))
        with pytest.raises(ValueError):
            construct_outcomes([], m, (2, 2))

    def test_consistent_with_reservation_ranking(self, market, slog):
        t = construct_outcomes(slog, market, (1, 2))
        r = market.reservation_utilities()
        assert np.array_equal(t.S, (r[t.consumer, 1] > r[t.consumer, 2]).astype(np.int8))

    def test_log_and_records_agree(self, market, slog):
        a = construct_outcomes(slog, market, (2, 5))
        b = construct_outcomes(slog.records(), market, (2, 5))
        assert np.array_equal(a.S, b.S) and np.array_equal(a.consumer, b.consumer)

    def test_common_xi_shift_leaves_outcomes(self, market):
        shifted = replace(market, xi=market.xi + np.r_[0.0, np.full(market.n_products - 1, 0.7)])
        t0 = construct_outcomes(simulate_search(market), market, (1, 2))
        r = shifted.reservation_utilities()
        assert np.array_equal(t0.S, (r[t0.consumer, 1] > r[t0.consumer, 2]).astype(np.int8))

    def test_draw_pairs(self):
        pairs = draw_pairs(6, 4, np.random.default_rng(0))
        assert len(set(pairs)) == 4 and all(0 < i < j < 6 for i, j in pairs)


def test_save_load_roundtrip(tmp_path, market, slog):
    save_market(market, slog, tmp_path)
    m2, s2 = load_market(tmp_path)
    assert np.array_equal(m2.x, market.x) and np.array_equal(m2.eps, market.eps)
    assert np.array_equal(s2.search_rank(), slog.search_rank())
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert "exogenous_covariates" in manifest["notes"] and manifest["seed"] == 3
