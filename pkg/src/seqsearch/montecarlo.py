"""Monte Carlo harness: seeded markets, PMR and simulated-likelihood
estimates, bias/MSE tables and the ``G^{-1}`` comparison export."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import SPEC_VERSION, config_hash
from .likelihood import LikelihoodConfig, SearchData, estimate_likelihood
from .model_core import MatchValueDist, ginv, ginv_derivative
from .pmr import Normalization, PmrConfig, SmoothingSpec, estimate_pmr
from .simulator import MarketConfig, construct_outcomes, draw_pairs, generate_market, simulate_search

log = logging.getLogger(__name__)

COLUMNS = ("estimator", "coefficient", "true_value", "mean_bias", "mse", "mean_obs")


class StudyAborted(RuntimeError):
    def __init__(self, message: str, failures: dict):
        super().__init__(message)
        self.failures = failures


@dataclass(frozen=True)
class EstimatorSpec:
    """One estimator of a study.

    ``kind="pmr"`` estimates on the ``n_pairs`` most-searched product pairs
    (``pair_rule="top"``) or random pairs (``"random"``); x and z columns
    other than price and position are pinned at their true values.
    ``kind="likelihood"`` starts BFGS at the truth and reports raw
    coefficients.
    """

    label: str
    kind: str
    match_dist: MatchValueDist | None = None
    n_draws: int = 50
    smoothing: SmoothingSpec = field(default_factory=lambda: SmoothingSpec(bandwidth=1.0))
    n_pairs: int = 1
    pair_rule: str = "top"

    def to_json(self) -> dict:
        return {"label": self.label, "kind": self.kind,
                "match_dist": None if self.match_dist is None else self.match_dist.to_json(),
                "n_draws": self.n_draws, "smoothing": self.smoothing.to_json(),
                "n_pairs": self.n_pairs, "pair_rule": self.pair_rule}

    @classmethod
    def from_json(cls, obj: dict) -> "EstimatorSpec":
        kw = dict(obj)
        if kw.get("match_dist") is not None:
            kw["match_dist"] = MatchValueDist.from_json(kw["match_dist"])
        if "smoothing" in kw:
            kw["smoothing"] = SmoothingSpec.from_json(kw["smoothing"])
        return cls(**kw)


@dataclass(frozen=True)
class StudyConfig:
    name: str
    n_reps: int
    market: MarketConfig
    estimators: tuple[EstimatorSpec, ...]
    seed: int = 0
    coefficients: tuple[str, ...] = ("beta_price", "gamma_position")
    max_fail_share: float = 0.05

    def to_json(self) -> dict:
        return {"spec_version": SPEC_VERSION, "name": self.name, "n_reps": self.n_reps,
                "market": self.market.to_json(), "estimators": [e.to_json() for e in self.estimators],
                "seed": self.seed, "coefficients": list(self.coefficients),
                "max_fail_share": self.max_fail_share}

    @classmethod
    def from_json(cls, obj: dict) -> "StudyConfig":
        return cls(obj["name"], int(obj["n_reps"]), MarketConfig.from_json(obj["market"]),
                   tuple(EstimatorSpec.from_json(e) for e in obj["estimators"]), int(obj.get("seed", 0)),
                   tuple(obj.get("coefficients", ("beta_price", "gamma_position"))),
                   float(obj.get("max_fail_share", 0.05)))


def table1_estimators() -> tuple[EstimatorSpec, ...]:
    return (EstimatorSpec("pmr", "pmr"),
            EstimatorSpec("likelihood_misspecified", "likelihood", MatchValueDist.normal(0.0, 1.0)),
            EstimatorSpec("likelihood_true", "likelihood", MatchValueDist.normal_var(0.0, 3.0)))


def profile(name: str) -> StudyConfig:
    """Named study profiles: ``table1-desk`` (50 x 2000 x 30) and the
    long-running ``table1-full`` (500 x 5000 x 30)."""
    if name == "table1-desk":
        return StudyConfig(name, 50, MarketConfig(n_consumers=2000, n_products=30, seed=0), table1_estimators())
    if name == "table1-full":
        return StudyConfig(name, 500, MarketConfig(n_consumers=5000, n_products=30, seed=0), table1_estimators())
    raise KeyError(f"unknown profile {name!r}; choose table1-desk or table1-full")


PROFILES = ("table1-desk", "table1-full")


def rep_seed(study_seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([study_seed, rep]).generate_state(1)[0])


def _pairs(slog, n_products: int, spec: EstimatorSpec, seed: int):
    if spec.pair_rule == "top":
        counts = (slog.search_rank()[:, 1:] >= 0).sum(axis=0)
        top = np.argsort(-counts, kind="stable")[: max(2, spec.n_pairs + 1)] + 1
        cand = [tuple(sorted((int(top[a]), int(top[b])))) for a in range(len(top)) for b in range(a + 1, len(top))]
        return cand[: spec.n_pairs]
    return draw_pairs(n_products, spec.n_pairs, np.random.default_rng(seed))


def run_estimator(spec: EstimatorSpec, market, slog, seed: int) -> tuple[dict, int]:
    """``(raw coefficient dict, observation count)`` for one replication."""
    cfg = market.config
    if spec.kind == "pmr":
        nz = Normalization.pinned({k: cfg.beta[k] for k in range(1, cfg.q_x)},
                                  {k: cfg.gamma[k] for k in range(1, cfg.q_z)})
        opt = "exact1d" if cfg.q_x == 2 and cfg.q_z == 2 else "nelder-mead"
        tabs = [construct_outcomes(slog, market, p) for p in _pairs(slog, cfg.n_products, spec, seed)]
        rep = estimate_pmr(tabs, PmrConfig(normalization=nz, smoothing=spec.smoothing, optimizer=opt, seed=seed))
        return rep.raw_coefficients, rep.n_obs
    if spec.kind == "likelihood":
        data = SearchData.from_market(market, slog)
        lc = LikelihoodConfig(match_dist=spec.match_dist, eta_dist=MatchValueDist.normal(0.0, cfg.eta_sd),
                              n_draws=spec.n_draws, seed=seed)
        start = np.r_[cfg.beta, cfg.gamma, cfg.cost_intercept]
        rep = estimate_likelihood(data, lc, start=start)
        return rep.raw_coefficients, data.n
    raise ValueError(f"unknown estimator kind {spec.kind!r}")


@dataclass
class StudyTable:
    config: StudyConfig
    rows: list[dict]
    estimates: dict[str, list[dict]]
    failures: dict[str, list]
    seconds: float = 0.0

    def row(self, estimator: str, coefficient: str) -> dict:
        for r in self.rows:
            if r["estimator"] == estimator and r["coefficient"] == coefficient:
                return r
        raise KeyError((estimator, coefficient))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in COLUMNS})
        if path is not None:
            Path(path).write_text(buf.getvalue())
        return buf.getvalue()

    def to_json(self) -> dict:
        return {"spec_version": SPEC_VERSION, "config": self.config.to_json(),
                "config_hash": config_hash(self.config.to_json()), "rows": self.rows,
                "estimates": self.estimates, "failures": self.failures}

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.to_csv(d / "results.csv")
        (d / "results.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))
        (d / "manifest.json").write_text(json.dumps(self.config.to_json(), indent=2, sort_keys=True))
        return d


def true_values(market_cfg: MarketConfig) -> dict[str, float]:
    xn = [f"beta_{n}" for n in market_cfg.x_names]
    zn = [f"gamma_{n}" for n in market_cfg.z_names]
    return (dict(zip(xn, market_cfg.beta)) | dict(zip(zn, market_cfg.gamma))
            | {"cost_intercept": market_cfg.cost_intercept})


def summarize(config: StudyConfig, estimates: dict[str, list[dict]], failures: dict[str, list]) -> list[dict]:
    truth = true_values(config.market)
    rows = []
    for spec in config.estimators:
        ok = estimates[spec.label]
        for c in config.coefficients:
            v = np.array([e["coef"][c] for e in ok], dtype=float)
            err = v - truth[c]
            rows.append({"estimator": spec.label, "coefficient": c, "true_value": float(truth[c]),
                         "mean_bias": float(err.mean()) if len(v) else float("nan"),
                         "mse": float(np.mean(err ** 2)) if len(v) else float("nan"),
                         "mean_obs": float(np.mean([e["n_obs"] for e in ok])) if ok else float("nan")})
    return rows


def run_study(config: StudyConfig, progress: bool = False) -> StudyTable:
    """Run every estimator on ``config.n_reps`` seeded markets.

    Replication ``r`` uses market seed ``rep_seed(config.seed, r)``. Failed
    estimates are recorded and dropped from the moments when they are
    under ``max_fail_share`` of the replications; otherwise the study aborts.
    """
    t0 = time.perf_counter()
    estimates = {e.label: [] for e in config.estimators}
    failures = {e.label: [] for e in config.estimators}
    for r in range(config.n_reps):
        seed = rep_seed(config.seed, r)
        market = generate_market(replace(config.market, seed=seed))
        slog = simulate_search(market)
        for spec in config.estimators:
            try:
                coef, n_obs = run_estimator(spec, market, slog, seed)
                estimates[spec.label].append({"rep": r, "seed": seed, "coef": coef, "n_obs": int(n_obs)})
            except Exception as exc:              # recorded per replication
                failures[spec.label].append({"rep": r, "seed": seed, "error": f"{type(exc).__name__}: {exc}"})
                log.warning("rep %d %s failed: %s", r, spec.label, exc)
        if progress:
            log.info("replication %d/%d done (%.0fs)", r + 1, config.n_reps, time.perf_counter() - t0)
    for label, f in failures.items():
        if len(f) >= config.max_fail_share * config.n_reps and f:
            raise StudyAborted(f"{label}: {len(f)} of {config.n_reps} replications failed", failures)
    rows = summarize(config, estimates, failures)
    return StudyTable(config, rows, estimates, failures, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# G^{-1} comparison
# ---------------------------------------------------------------------------

@dataclass
class GinvComparison:
    cost: np.ndarray
    true_curve: np.ndarray
    misspecified_curve: np.ndarray
    median_cost: float
    slope_true: float
    slope_misspecified: float


def median_simulated_cost(market_cfg: MarketConfig) -> tuple[float, tuple[float, float]]:
    """Median and (5%, 95%) quantiles of inside-good search costs in one market."""
    m = generate_market(market_cfg)
    c = m.costs()[:, 1:].ravel()
    return float(np.median(c)), (float(np.quantile(c, 0.05)), float(np.quantile(c, 0.95)))


def export_ginv_comparison(true_dist: MatchValueDist, misspecified: MatchValueDist,
                           cost_range: tuple[float, float], path=None, n_grid: int = 200,
                           median_cost: float | None = None, check: bool = True) -> GinvComparison:
    """Tabulate both ``G^{-1}`` curves on a log grid and write ``cost,true,misspecified`` CSV.

    With ``check`` the true curve must be steeper (more negative slope) than
    the misspecified one at ``median_cost`` (default: geometric midpoint).
    """
    lo, hi = cost_range
    if not 0 < lo < hi:
        raise ValueError("cost_range must satisfy 0 < lo < hi")
    grid = np.exp(np.linspace(np.log(lo), np.log(hi), n_grid))
    gt = ginv(grid, true_dist)
    gm = ginv(grid, misspecified)
    med = float(np.sqrt(lo * hi)) if median_cost is None else float(median_cost)
    h = 1e-4 * med
    st = float((ginv(med + h, true_dist) - ginv(med - h, true_dist)) / (2 * h))
    sm = float((ginv(med + h, misspecified) - ginv(med - h, misspecified)) / (2 * h))
    if check and true_dist != misspecified and not st < sm:
        raise AssertionError(f"true curve slope {st} is not steeper than misspecified slope {sm}")
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cost", f"ginv_{true_dist.label}", f"ginv_{misspecified.label}"])
            for row in zip(grid, gt, gm):
                w.writerow([repr(float(v)) for v in row])
    return GinvComparison(grid, gt, gm, med, st, sm)
