import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from seqsearch.domain import PairOutcomeTable
from seqsearch.model_core import CostOutOfRange, MatchValueDist, ginv
from seqsearch.pmr import InsufficientData, Normalization
from seqsearch.sieve_mvd import (
    RankDeficientBasis, SieveConfig, SieveSpec, default_grid, estimate_sieve, export_ginv_csv,
    known_ginv_index, known_ginv_objective, monotone_violations, mvd_test, project_ginv,
    rank_candidates, rank_count, rank_objective, sieve_index, sieve_objective, smoothed_rank_objective,
)
from seqsearch.simulator import MarketConfig, construct_outcomes, generate_market, simulate_search

N03 = MatchValueDist.normal_var(0, 3)


def _cont_table(rng, n, q_x=2, q_z=2):
    S = rng.integers(0, 2, n)
    return PairOutcomeTable((1, 2), np.arange(n), S, rng.normal(size=(n, q_x)), rng.normal(size=(n, q_x)),
                            rng.normal(size=(n, q_z)), rng.normal(size=(n, q_z)))


class TestRank:
    @given(st.lists(st.integers(-3, 3), min_size=2, max_size=12), st.data())
    @settings(max_examples=60)
    def test_matches_brute_force(self, h, data):
        S = data.draw(st.lists(st.integers(0, 1), min_size=len(h), max_size=len(h)))
        h, S = np.array(h, float), np.array(S)
        assert rank_objective(h, S) == pytest.approx(oracles.rank(h, S), abs=1e-14)

    def test_counts_ties_as_zero(self):
        assert rank_count(np.array([1.0, 1.0]), np.array([1, 0])) == 0
        assert rank_count(np.array([2.0, 1.0]), np.array([1, 0])) == 1
        assert rank_count(np.array([1.0, 2.0]), np.array([1, 0])) == 0

    @pytest.mark.parametrize("f", [np.exp, lambda v: 3 * v - 7, np.arctan], ids=["exp", "affine", "atan"])
    def test_increasing_transform_invariant(self, f):
        rng = np.random.default_rng(0)
        h, S = rng.normal(size=300), rng.integers(0, 2, 300)
        assert rank_objective(f(h), S) == rank_objective(h, S)

    def test_bounded(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n = int(rng.integers(2, 40))
            v = rank_objective(rng.normal(size=n), rng.integers(0, 2, n))
            assert 0.0 <= v <= 1.0

    def test_too_few_rows(self):
        with pytest.raises(InsufficientData):
            rank_objective(np.array([1.0]), np.array([1]))

    def test_surrogate_limit(self):
        rng = np.random.default_rng(2)
        h, S = rng.normal(size=200), rng.integers(0, 2, 200)
        assert smoothed_rank_objective(h, S, 1e-9) == pytest.approx(rank_objective(h, S), abs=1e-12)


class TestKnownGinv:
    @pytest.mark.parametrize("seed", range(20))
    def test_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        t = oracles.random_table(rng, int(rng.integers(3, 6)), levels=3)
        b, m = rng.normal(size=2), rng.normal(scale=0.3, size=2)
        gi = lambda c: float(ginv(c, N03, extrapolate_high=True))
        gj = lambda c: float(ginv(c, MatchValueDist.logistic(), extrapolate_high=True))
        h = oracles.gtilde_index(t, b, m, gi, gj, offset=-2.0)
        want = oracles.rank(h, t.S)
        got = known_ginv_objective(t, b, m, lambda c: ginv(c, N03, extrapolate_high=True),
                                   lambda c: ginv(c, MatchValueDist.logistic(), extrapolate_high=True), offset=-2.0)
        assert abs(got - want) <= 1e-12

    def test_accepts_distribution(self):
        rng = np.random.default_rng(3)
        t = _cont_table(rng, 50)
        b, m = np.array([-1.0, 1.0]), np.array([0.2, 0.5])
        a = known_ginv_objective(t, b, m, N03, offset=-5.0)
        c = known_ginv_objective(t, b, m, lambda v: ginv(v, N03), offset=-5.0)
        assert a == c

    def test_common_xi_cancels(self):
        rng = np.random.default_rng(4)
        t = _cont_table(rng, 80)
        shifted = replace(t, x_i=t.x_i + 0.9, x_j=t.x_j + 0.9)
        b, m = np.array([-1.0, 1.0]), np.array([0.2, 0.5])
        assert np.allclose(known_ginv_index(t, b, m, N03, offset=-5.0),
                           known_ginv_index(shifted, b, m, N03, offset=-5.0), atol=1e-12)


class TestSieveObjective:
    @pytest.mark.parametrize("seed", range(20))
    def test_brute_force(self, seed):
        rng = np.random.default_rng(100 + seed)
        t = oracles.random_table(rng, int(rng.integers(3, 6)), levels=3)
        b, m = rng.normal(size=2), rng.normal(size=2)
        coef = rng.normal(size=(2, 4))
        spec = SieveSpec(3, coef, center=0.3, scale=1.7, offset=-1.0, shared=False)
        h = oracles.gq_index(t, b, m, coef[0], coef[1], center=0.3, scale=1.7, offset=-1.0)
        assert abs(sieve_objective(t, b, m, spec) - oracles.rank(h, t.S)) <= 1e-12

    def test_index_matches_oracle(self):
        rng = np.random.default_rng(5)
        t = _cont_table(rng, 30)
        b, m, coef = rng.normal(size=2), rng.normal(size=2), rng.normal(size=3)
        spec = SieveSpec(2, coef, center=-0.5, scale=2.0)
        h = oracles.gq_index(t, b, m, coef, coef, center=-0.5, scale=2.0)
        assert np.allclose(sieve_index(t, b, m, spec), h, atol=1e-12)

    def test_degree_zero_is_plain_rank(self):
        rng = np.random.default_rng(6)
        t = _cont_table(rng, 200)
        b, m = rng.normal(size=2), rng.normal(size=2)
        spec = SieveSpec(0, [4.2])
        assert sieve_objective(t, b, m, spec) == rank_objective(t.x_diff @ b, t.S)

    def test_constant_term_cancels(self):
        rng = np.random.default_rng(7)
        t = _cont_table(rng, 300)
        b, m = rng.normal(size=2), rng.normal(size=2)
        coef = rng.normal(size=(2, 4))
        base = SieveSpec(3, coef, shared=False)
        for c in (-3.0, 0.5, 12.0):
            shifted = coef.copy()
            shifted[:, 0] += c
            assert sieve_objective(t, b, m, base.with_coef(shifted)) == sieve_objective(t, b, m, base)

    def test_analytic_sieve_equals_known(self):
        rng = np.random.default_rng(8)
        t = _cont_table(rng, 400)
        b, m = np.array([-1.0, 1.0]), np.array([0.2, 0.5])
        spec = SieveSpec(kind="analytic", dist=N03, offset=-5.0)
        got = sieve_objective(t, b, m, spec)
        want = known_ginv_objective(t, b, m, lambda v: ginv(v, N03, extrapolate_high=True), offset=-5.0)
        assert abs(got - want) <= 1e-10

    def test_projection_close_to_known(self):
        rng = np.random.default_rng(9)
        t = _cont_table(rng, 400)
        b, m = np.array([-1.0, 1.0]), np.array([0.2, 0.5])
        li = -5.0 + np.concatenate([t.z_i @ m, t.z_j @ m])
        rngc = (math.exp(li.min()), math.exp(li.max()))
        spec = project_ginv(N03, SieveSpec(5, center=float(li.mean()), scale=float(li.std()), offset=-5.0), rngc)
        known = known_ginv_index(t, b, m, lambda v: ginv(v, N03, extrapolate_high=True), offset=-5.0)
        assert np.max(np.abs(sieve_index(t, b, m, spec) - known)) < 0.05

    def test_row_permutation(self):
        rng = np.random.default_rng(10)
        t = _cont_table(rng, 120)
        p = rng.permutation(120)
        tp = PairOutcomeTable((1, 2), t.consumer[p], t.S[p], t.x_i[p], t.x_j[p], t.z_i[p], t.z_j[p])
        spec = SieveSpec(2, [0.0, -1.0, 0.1])
        b, m = rng.normal(size=2), rng.normal(size=2)
        assert sieve_objective(t, b, m, spec) == sieve_objective(tp, b, m, spec)


class TestSieveSpec:
    def test_json_roundtrip(self, tmp_path):
        s = SieveSpec(2, [[1.0, 2.0, 3.0], [0.0, 1.0, 0.0]], 0.1, 2.0, -5.0, shared=False)
        s.save(tmp_path / "s.json")
        back = SieveSpec.load(tmp_path / "s.json")
        assert np.array_equal(back.coef, s.coef) and back.offset == -5.0 and not back.shared
        a = SieveSpec(kind="analytic", dist=N03)
        assert SieveSpec.from_json(json.loads(json.dumps(a.to_json()))).dist == N03

    @pytest.mark.parametrize("kw", [dict(degree=-1), dict(scale=0.0), dict(kind="spline"),
                                    dict(kind="analytic"), dict(degree=1, coef=[np.nan, 0.0])])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SieveSpec(**kw)

    def test_projection_is_decreasing(self):
        s = project_ginv(N03, SieveSpec(3, center=-5.0, scale=1.0), (math.exp(-7), math.exp(-3)))
        assert monotone_violations(s, (math.exp(-7), math.exp(-3))) == 0

    def test_export_csv(self, tmp_path):
        s = SieveSpec(1, [0.0, -1.0])
        p = export_ginv_csv(s, (0.1, 1.0), tmp_path / "g.csv", n_grid=5)
        rows = p.read_text().splitlines()
        assert rows[0] == "cost,value" and len(rows) == 6
        c, v = map(float, rows[1].split(","))
        assert c == pytest.approx(0.1) and v == pytest.approx(-math.log(0.1))


class TestMvd:
    def test_identical_is_zero(self):
        grid = default_grid((1e-3, 0.5))
        rep = mvd_test(N03, SieveSpec(kind="analytic", dist=N03), grid)
        assert rep.sup_norm <= 1e-9 and rep.l2 <= 1e-9

    def test_level_shift_ignored(self):
        grid = default_grid((1e-3, 0.5))
        fitted = project_ginv(N03, SieveSpec(6, center=math.log(0.02), scale=2.0), (1e-3, 0.5))
        shifted = fitted.with_coef(fitted.coef + np.r_[5.0, np.zeros(6)])
        a, b = mvd_test(N03, fitted, grid), mvd_test(N03, shifted, grid)
        assert a.sup_norm == pytest.approx(b.sup_norm, abs=1e-10)

    def test_threshold_decision(self):
        grid = default_grid((1e-3, 0.5))
        fitted = SieveSpec(kind="analytic", dist=N03)
        assert mvd_test(N03, fitted, grid, threshold=0.1).reject is False
        assert mvd_test(MatchValueDist.normal(), fitted, grid, threshold=0.1).reject is True

    def test_ranking(self):
        grid = default_grid((1e-3, 0.5))
        fitted = SieveSpec(kind="analytic", dist=N03)
        reps = rank_candidates([MatchValueDist.normal(), MatchValueDist.logistic(), N03], fitted, grid)
        assert reps[0].candidate == N03
        assert [r.l2 for r in reps] == sorted(r.l2 for r in reps)

    def test_grid_bounds_reported(self):
        grid = np.array([0.01, 0.1, 0.2])
        out = mvd_test(N03, SieveSpec(1, [0.0, -1.0]), grid).to_json()
        assert out["grid_bounds"] == [0.01, 0.2] and len(out["error"]) == 3

    def test_grid_outside_fitted_range(self):
        with pytest.raises(ValueError, match="outside"):
            mvd_test(N03, SieveSpec(1, [0.0, -1.0]), [0.01, 2.0], fitted_range=(0.01, 1.0))

    @pytest.mark.parametrize("grid", [[0.1], [-0.1, 0.2], [[0.1, 0.2]]])
    def test_bad_grid(self, grid):
        with pytest.raises(ValueError):
            mvd_test(N03, SieveSpec(1, [0.0, -1.0]), grid)

    def test_candidate_image(self):
        with pytest.raises(CostOutOfRange):
            mvd_test(N03, SieveSpec(1, [0.0, -1.0]), [1e-300, 0.1])


@pytest.fixture(scope="module")
def sieve_fit():
    cfg = MarketConfig(n_consumers=1500, n_products=30, seed=4)
    m = generate_market(cfg)
    sl = simulate_search(m)
    tab = construct_outcomes(sl, m, (1, 2))
    nz = Normalization.pinned({1: cfg.beta[1]}, {1: cfg.gamma[1]})
    conf = SieveConfig(normalization=nz, offset=cfg.cost_intercept, degree=3, seed=0)
    return tab, cfg, conf, estimate_sieve(tab, conf)


class TestEstimate:
    def test_beats_projected_truth(self, sieve_fit):
        tab, cfg, conf, fit = sieve_fit
        c = fit.report.diagnostics
        truth = project_ginv(N03, SieveSpec(3, center=c["center"], scale=c["scale"], offset=cfg.cost_intercept),
                             fit.cost_range)
        assert fit.report.objective >= sieve_objective(tab, cfg.beta, cfg.gamma, truth) - 1e-12

    def test_report(self, sieve_fit):
        tab, cfg, conf, fit = sieve_fit
        k = fit.report.coefficients
        assert k["beta_x1"] == cfg.beta[1] and k["gamma_z1"] == cfg.gamma[1]
        assert set(k) >= {"beta_price", "gamma_position", "a1", "a2", "a3"}
        assert fit.report.objective == pytest.approx(
            sieve_objective(tab, [k["beta_price"], k["beta_x1"]], [k["gamma_position"], k["gamma_z1"]], fit.sieve))
        g = fit.grid(20)
        assert fit.cost_range[0] <= g[0] < g[-1] <= fit.cost_range[1]

    def test_decreasing_on_central_range(self, sieve_fit):
        fit = sieve_fit[3]
        lv = np.log(fit.grid(100))
        assert np.mean(np.diff(fit.sieve.at_log_cost(lv))) < 0

    def test_deterministic(self, sieve_fit):
        tab, _, conf, fit = sieve_fit
        again = estimate_sieve(tab, replace(conf, n_starts=2))
        assert again.report.config_hash != fit.report.config_hash
        assert estimate_sieve(tab, replace(conf, n_starts=2)).report.coefficients == again.report.coefficients

    def test_config_json(self, sieve_fit):
        conf = sieve_fit[2]
        assert SieveConfig.from_json(json.loads(json.dumps(conf.to_json()))) == conf

    def test_insufficient(self, sieve_fit):
        tab = sieve_fit[0]
        with pytest.raises(InsufficientData):
            estimate_sieve(tab.subset(np.arange(10)), sieve_fit[2])

    def test_unit_normalization_rejected(self, sieve_fit):
        with pytest.raises(ValueError, match="fixed"):
            estimate_sieve(sieve_fit[0], SieveConfig(normalization=Normalization(b_mode="unit")))

    def test_rank_deficient(self):
        rng = np.random.default_rng(0)
        n = 200
        z = np.ones((n, 2))
        t = PairOutcomeTable((1, 2), np.arange(n), rng.integers(0, 2, n), rng.normal(size=(n, 2)),
                             rng.normal(size=(n, 2)), z, z)
        conf = SieveConfig(normalization=Normalization.pinned({1: 1.0}, {1: 0.5}), degree=3)
        with pytest.raises(RankDeficientBasis):
            estimate_sieve(t, conf)
