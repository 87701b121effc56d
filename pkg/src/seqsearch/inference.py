"""Subsampling confidence intervals and p-values.

Subsamples are drawn over consumers without replacement. The centered
interval uses the law of ``tau_b (theta_b - theta_n)`` with
``tau_k = k ** rate``; the uncentered interval uses raw subsample quantiles.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .domain import SPEC_VERSION, EstimateReport, PairOutcomeTable, config_hash

log = logging.getLogger(__name__)


class SubsampleFailure(RuntimeError):
    """Too many subsample replications failed."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class SubsampleConfig:
    """Replication count, subsample size ``ceil(n ** size_exponent)`` (or a
    fixed ``size``), convergence-rate exponent, CI level and p-value mode."""

    n_replications: int = 350
    size_exponent: float = 2.0 / 3.0
    size: int | None = None
    rate: float = 1.0 / 3.0
    level: float = 0.95
    pvalue: str = "centered"        # or "uncentered"
    seed: int = 0
    max_fail_share: float = 0.10
    null: float = 0.0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_replications < 50:
            raise ValueError("n_replications must be >= 50")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.pvalue not in ("centered", "uncentered"):
            raise ValueError(f"unknown p-value mode {self.pvalue!r}")
        if not self.rate > 0:
            raise ValueError("rate must be > 0")

    def subsample_size(self, n: int) -> int:
        b = self.size if self.size is not None else math.ceil(n ** self.size_exponent)
        if not 0 < b < n:
            raise ValueError(f"subsample size {b} must lie strictly between 0 and n = {n}")
        return int(b)

    def to_json(self) -> dict:
        return {"spec_version": SPEC_VERSION} | asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "SubsampleConfig":
        kw = {k: v for k, v in obj.items() if k != "spec_version"}
        return cls(**kw)


# ---------------------------------------------------------------------------
# datasets indexed by consumer
# ---------------------------------------------------------------------------

def consumer_ids(data) -> np.ndarray:
    """Sorted distinct consumer ids of a table, a list of tables or any
    object exposing ``consumer``."""
    if isinstance(data, (list, tuple)):
        return np.unique(np.concatenate([np.asarray(t.consumer) for t in data]))
    if hasattr(data, "consumer_ids"):
        return np.unique(np.asarray(data.consumer_ids()))
    return np.unique(np.asarray(data.consumer))


def subset(data, ids):
    if isinstance(data, (list, tuple)):
        return [t.subset(ids) for t in data]
    return data.subset(ids)


def _as_dict(res) -> dict[str, float]:
    if isinstance(res, EstimateReport):
        if not res.converged and res.diagnostics.get("non_improvement"):
            log.debug("subsample estimate flagged non_improvement")
        return {k: float(v) for k, v in res.coefficients.items()}
    if isinstance(res, Mapping):
        return {k: float(v) for k, v in res.items()}
    raise TypeError("estimator must return an EstimateReport or a mapping of coefficients")


# ---------------------------------------------------------------------------
# result
# ---------------------------------------------------------------------------

@dataclass
class SubsampleResult:
    names: list[str]
    estimate: dict[str, float]
    draws: np.ndarray                 # (n_ok, k) subsample estimates
    n: int
    b: int
    config: SubsampleConfig
    failures: int
    diagnostics: dict = field(default_factory=dict)

    def _roots(self) -> np.ndarray:
        theta = np.array([self.estimate[k] for k in self.names])
        return self.b ** self.config.rate * (self.draws - theta)

    def interval(self, level: float | None = None, mode: str | None = None) -> dict[str, tuple[float, float]]:
        level = self.config.level if level is None else level
        mode = mode or self.config.pvalue
        lo_q, hi_q = (1 - level) / 2, 1 - (1 - level) / 2
        out = {}
        for k, name in enumerate(self.names):
            if mode == "uncentered":
                lo, hi = np.quantile(self.draws[:, k], [lo_q, hi_q])
            else:
                theta = self.estimate[name]
                r = self._roots()[:, k]
                q_lo, q_hi = np.quantile(r, [lo_q, hi_q])
                scale = self.n ** self.config.rate
                lo, hi = theta - q_hi / scale, theta - q_lo / scale
            out[name] = (float(lo), float(hi))
        return out

    def pvalues(self, null: float | None = None, mode: str | None = None) -> dict[str, float]:
        """Two-sided p-values for ``H0: theta = null``."""
        null = self.config.null if null is None else null
        mode = mode or self.config.pvalue
        out = {}
        for k, name in enumerate(self.names):
            if mode == "uncentered":
                d = self.draws[:, k] - null
                p = 2 * min(np.mean(d <= 0), np.mean(d >= 0))
            else:
                stat = abs(self.n ** self.config.rate * (self.estimate[name] - null))
                p = np.mean(np.abs(self._roots()[:, k]) >= stat)
            out[name] = float(min(1.0, p))
        return out

    def to_json(self) -> dict:
        ci = self.interval()
        pv = self.pvalues()
        return {
            "spec_version": SPEC_VERSION,
            "coefficients": {n: {"estimate": self.estimate[n], "ci": list(ci[n]), "p_value": pv[n]}
                             for n in self.names},
            "level": self.config.level, "mode": self.config.pvalue, "n": self.n, "subsample_size": self.b,
            "replications": int(len(self.draws)), "failures": self.failures,
            "config": self.config.to_json(), "config_hash": config_hash(self.config.to_json()),
            "notes": "subsample size follows the configured rule; the reference study does not report its size",
            "diagnostics": self.diagnostics,
        }


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def _rep_ids(ids: np.ndarray, b: int, seed: int, rep: int) -> np.ndarray:
    rng = np.random.default_rng([seed, rep])
    return np.sort(rng.choice(ids, size=b, replace=False))


def _one(estimator, data, ids, b, seed, rep):
    try:
        return _as_dict(estimator(subset(data, _rep_ids(ids, b, seed, rep)))), None
    except Exception as exc:                      # counted, not fatal
        return None, f"{type(exc).__name__}: {exc}"


def subsample_inference(estimator: Callable[[Any], Any], data, config: SubsampleConfig | None = None,
                        full_estimate: EstimateReport | Mapping | None = None) -> SubsampleResult:
    """Re-estimate on ``config.n_replications`` consumer subsamples.

    ``estimator`` maps a dataset (same type as ``data``) to an
    :class:`EstimateReport` or a coefficient mapping and must be
    deterministic. Replication ``k`` draws its consumers from
    ``default_rng([seed, k])`` over the sorted consumer ids, so row order
    does not matter.
    """
    t0 = time.perf_counter()
    config = config or SubsampleConfig()
    ids = consumer_ids(data)
    n = len(ids)
    b = config.subsample_size(n)
    est = _as_dict(full_estimate if full_estimate is not None else estimator(data))
    names = list(est)
    reps = range(config.n_replications)
    if config.n_jobs != 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=config.n_jobs)(delayed(_one)(estimator, data, ids, b, config.seed, r)
                                                 for r in reps)
    else:
        results = [_one(estimator, data, ids, b, config.seed, r) for r in reps]
    errors = [(r, e) for r, (_, e) in zip(reps, results) if e is not None]
    draws = np.array([[res[k] for k in names] for res, e in results if e is None]).reshape(-1, len(names))
    diag = {"errors": errors[:20], "seconds": time.perf_counter() - t0}
    if len(errors) > config.max_fail_share * config.n_replications:
        raise SubsampleFailure(f"{len(errors)} of {config.n_replications} subsample replications failed", diag)
    notfinite = ~np.all(np.isfinite(draws), axis=1)
    if notfinite.any():
        diag["non_finite_draws"] = int(notfinite.sum())
        draws = draws[~notfinite]
    return SubsampleResult(names, est, draws, n, b, config, len(errors), diag)
