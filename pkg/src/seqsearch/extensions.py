"""Estimator variants: cost shifters in utility (ZQ), consumer-invariant
characteristics by within-consumer comparisons (XQ) and linear-index
demographic heterogeneity (DQ)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .domain import EstimateReport, PairOutcomeTable, _matrix, config_hash
from .pmr import _KERNELS, _best_on_line
from .sieve_mvd import SieveConfig, SieveFit, SieveSpec, fit_rank_model, log_costs, rank_objective, sieve_index


def _as_list(tables):
    return [tables] if isinstance(tables, PairOutcomeTable) else list(tables)


def _column_index(names: Sequence[str], cols: Sequence) -> np.ndarray:
    out = []
    for c in cols:
        if isinstance(c, (int, np.integer)):
            if not 0 <= c < len(names):
                raise ValueError(f"column {c} is not a z column")
            out.append(int(c))
        elif c in names:
            out.append(list(names).index(c))
        else:
            raise ValueError(f"{c!r} is not among the z columns {tuple(names)}")
    return np.array(out, dtype=int)


# ---------------------------------------------------------------------------
# ZQ: search cost shifters that also enter utility
# ---------------------------------------------------------------------------

def zq_index(table: PairOutcomeTable, b, b_z, m, sieve: SieveSpec, zu: Sequence) -> np.ndarray:
    idx = _column_index(table.z_names, zu)
    b_z = np.asarray(b_z, dtype=float).reshape(-1)
    if len(b_z) != len(idx):
        raise ValueError("b_z needs one entry per designated utility-relevant z column")
    zu_diff = table.z_i[:, idx] - table.z_j[:, idx]
    return sieve_index(table, b, m, sieve) + zu_diff @ b_z


def zq_objective(tables, b, b_z, m, sieve: SieveSpec, zu: Sequence) -> float:
    """Rank objective with ``hz = h + z^u_aij' b_z``; ``zu`` lists z columns (names or indices)."""
    return float(sum(rank_objective(zq_index(t, b, b_z, m, sieve, zu), t.S) for t in _as_list(tables)))


# ---------------------------------------------------------------------------
# DQ: linear-index heterogeneity in preferences and costs
# ---------------------------------------------------------------------------

def dq_index(table: PairOutcomeTable, b_bar, b_d, m_bar, m_d, sieve: SieveSpec) -> np.ndarray:
    if table.demo is None:
        raise ValueError("table carries no demographics")
    d = table.demo
    b_d = np.asarray(b_d, dtype=float).reshape(d.shape[1], -1)
    m_d = np.asarray(m_d, dtype=float).reshape(d.shape[1], -1)
    if b_d.shape[1] != table.q_x or m_d.shape[1] != table.q_z:
        raise ValueError(f"b_d must be {d.shape[1]} x {table.q_x} and m_d {d.shape[1]} x {table.q_z}")
    beta_a = np.asarray(b_bar, float)[None, :] + d @ b_d
    gamma_a = np.asarray(m_bar, float)[None, :] + d @ m_d
    li, lj = log_costs(table, None, sieve.offset, gamma_a)
    return (sieve.at_log_cost(li, 0) - sieve.at_log_cost(lj, 1)
            + np.einsum("ak,ak->a", table.x_diff, beta_a))


def dq_objective(tables, b_bar, b_d, m_bar, m_d, sieve: SieveSpec) -> float:
    """Rank objective with ``beta_a = b_bar + d_a' b_d`` and ``gamma_a = m_bar + d_a' m_d``."""
    return float(sum(rank_objective(dq_index(t, b_bar, b_d, m_bar, m_d, sieve), t.S)
                     for t in _as_list(tables)))


# ---------------------------------------------------------------------------
# joint estimation of ZQ / DQ starting from a sieve fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExtensionConfig:
    """Settings shared by :func:`estimate_zq` and :func:`estimate_dq`.

    The (b, m) normalization and the sieve basis follow ``sieve``. Extra
    parameters start at zero (plus random starts with sd ``start_sd``);
    the free ``m`` components of the PMR first stage are also rescaled by
    each entry of ``m_scales`` because that first stage ignores the extra
    terms.
    """

    sieve: SieveConfig = field(default_factory=SieveConfig)
    zu: tuple = ()
    m_scales: tuple[float, ...] = (1.0, 0.5, 0.25)
    start_sd: float = 0.2

    def to_json(self) -> dict:
        return {"sieve": self.sieve.to_json(), "zu": list(self.zu), "m_scales": list(self.m_scales),
                "start_sd": self.start_sd}

    @classmethod
    def from_json(cls, obj: dict) -> "ExtensionConfig":
        kw = dict(obj)
        if "sieve" in kw:
            kw["sieve"] = SieveConfig.from_json(kw["sieve"])
        for k in ("zu", "m_scales"):
            if k in kw:
                kw[k] = tuple(kw[k])
        return cls(**kw)


def _joint_fit(tables, config: ExtensionConfig, method: str, n_extra: int, index_fn: Callable,
               extra_names: list[str]):
    fit = fit_rank_model(tables, config.sieve, method=method, n_extra=n_extra, extra_index=index_fn,
                         extra_names=extra_names, m_scales=config.m_scales, extra_start_sd=config.start_sd)
    fit.report.config_hash = config_hash(config.to_json())
    return fit


def estimate_zq(tables, config: ExtensionConfig) -> SieveFit:
    """Joint ZQ maximization over ``(b, m, a, b_z)``."""
    tables = _as_list(tables)
    if not config.zu:
        raise ValueError("declare the utility-relevant z columns in config.zu")
    idx = _column_index(tables[0].z_names, config.zu)
    names = [f"beta_z_{tables[0].z_names[k]}" for k in idx]
    return _joint_fit(tables, config, "zq", len(idx),
                      lambda t, b, m, sv, e: zq_index(t, b, e, m, sv, config.zu), names)


def estimate_dq(tables, config: ExtensionConfig) -> SieveFit:
    """Joint DQ maximization with free ``b_d`` and ``m_d``."""
    tables = _as_list(tables)
    t0 = tables[0]
    if t0.demo is None:
        raise ValueError("tables carry no demographics")
    q_d, q_x, q_z = t0.demo.shape[1], t0.q_x, t0.q_z
    dn = t0.demo_names or tuple(f"d{k}" for k in range(q_d))
    names = ([f"beta_d_{d}_{x}" for d in dn for x in t0.x_names]
             + [f"gamma_d_{d}_{z}" for d in dn for z in t0.z_names])
    nbd = q_d * q_x

    def fn(t, b, m, sv, e):
        return dq_index(t, b, e[:nbd].reshape(q_d, q_x), m, e[nbd:].reshape(q_d, q_z), sv)

    return _joint_fit(tables, config, "dq", q_d * (q_x + q_z), fn, names)


# ---------------------------------------------------------------------------
# XQ: within-consumer comparisons for consumer-invariant characteristics
# ---------------------------------------------------------------------------

@dataclass
class WithinPairs:
    """Product pairs ``(i, j)`` observed for each consumer.

    ``h`` is the first-stage reservation-utility difference without the
    consumer-invariant term, ``xbar_diff = xbar_i - xbar_j`` and ``e_diff``
    stacks the endogenous-component differences (empty when none are
    designated).
    """

    consumer: np.ndarray
    i: np.ndarray
    j: np.ndarray
    S: np.ndarray
    h: np.ndarray
    xbar_diff: np.ndarray
    e_diff: np.ndarray

    def __post_init__(self):
        self.consumer = np.asarray(self.consumer, dtype=np.int64)
        n = len(self.consumer)
        self.i = np.asarray(self.i, dtype=np.int64)
        self.j = np.asarray(self.j, dtype=np.int64)
        self.S = np.asarray(self.S, dtype=np.int8)
        self.h = np.asarray(self.h, dtype=float)
        self.xbar_diff = _matrix(self.xbar_diff, n)
        self.e_diff = _matrix(self.e_diff, n)
        if not all(len(a) == n for a in (self.i, self.j, self.S, self.h, self.xbar_diff, self.e_diff)):
            raise ValueError("WithinPairs columns have inconsistent lengths")

    @property
    def n_pairs(self) -> int:
        return len(self.consumer)

    def subset(self, consumers) -> "WithinPairs":
        keep = np.isin(self.consumer, np.asarray(consumers))
        return WithinPairs(self.consumer[keep], self.i[keep], self.j[keep], self.S[keep], self.h[keep],
                           self.xbar_diff[keep], self.e_diff[keep])


@dataclass(frozen=True)
class MatchingSpec:
    """Exact matching on endogenous components, or kernel weights
    ``K(||e_diff|| / bandwidth)`` when ``bandwidth`` is set."""

    bandwidth: float | None = None
    kernel: str = "gaussian"
    atol: float = 0.0

    def weights(self, e_diff: np.ndarray) -> np.ndarray:
        if e_diff.shape[1] == 0:
            return np.ones(len(e_diff))
        if self.bandwidth is None:
            return np.all(np.abs(e_diff) <= self.atol, axis=1).astype(float)
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be > 0")
        return _KERNELS[self.kernel](np.linalg.norm(e_diff, axis=1) / self.bandwidth)


def build_within_pairs(slog, market, b, m, ginv_fn: Callable, *, offset: float = 0.0,
                       x_endog: Sequence[int] = (), z_endog: Sequence[int] = (),
                       max_per_consumer: int | None = None, seed: int = 0) -> WithinPairs:
    """Searched-versus-unsearched pairs for every consumer.

    A searched product's reservation utility exceeds every unsearched one,
    so each pair is oriented with the lower product id first and
    ``S = 1`` when that product was the searched one. ``ginv_fn`` maps
    costs to ``G^{-1}`` (a fitted sieve or a known inverse).
    """
    rank = slog.search_rank() if hasattr(slog, "search_rank") else slog
    n, J = rank.shape
    b = np.asarray(b, float)
    m = np.asarray(m, float)
    rng = np.random.default_rng(seed)
    lc = offset + market.z @ m                    # (n, J)
    g = np.asarray(ginv_fn(np.exp(lc)), dtype=float)
    lin = market.x @ b
    cols = {k: [] for k in ("a", "i", "j", "S")}
    for a in range(n):
        srch = np.flatnonzero(rank[a, 1:] >= 0) + 1
        uns = np.flatnonzero(rank[a, 1:] < 0) + 1
        if not len(srch) or not len(uns):
            continue
        p, q = np.meshgrid(srch, uns, indexing="ij")
        p, q = p.ravel(), q.ravel()
        if max_per_consumer is not None and len(p) > max_per_consumer:
            keep = rng.choice(len(p), max_per_consumer, replace=False)
            p, q = p[keep], q[keep]
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        cols["a"].append(np.full(len(p), a))
        cols["i"].append(lo)
        cols["j"].append(hi)
        cols["S"].append((lo == p).astype(np.int8))
    if not cols["a"]:
        return WithinPairs(np.zeros(0, int), np.zeros(0, int), np.zeros(0, int), np.zeros(0, np.int8),
                           np.zeros(0), np.zeros((0, market.xbar.shape[1])),
                           np.zeros((0, len(x_endog) + len(z_endog))))
    a, i, j, S = (np.concatenate(cols[k]) for k in ("a", "i", "j", "S"))
    h = g[a, i] - g[a, j] + lin[a, i] - lin[a, j]
    xbar_diff = market.xbar[i] - market.xbar[j]
    e_diff = np.hstack([market.x[a, i][:, list(x_endog)] - market.x[a, j][:, list(x_endog)],
                        market.z[a, i][:, list(z_endog)] - market.z[a, j][:, list(z_endog)]])
    return WithinPairs(a, i, j, S, h, xbar_diff, e_diff)


def _xq_terms(pairs: WithinPairs, matching: MatchingSpec):
    w = matching.weights(pairs.e_diff)
    _, inv, counts = np.unique(pairs.consumer, return_inverse=True, return_counts=True)
    return w / counts[inv]


def xq_objective(pairs: WithinPairs, b_xbar, matching: MatchingSpec | None = None,
                 diagnostics: dict | None = None) -> float:
    """Sum over consumers of ``|J_a|^{-1} sum_(i,j) w_ij [S 1{v > 0} + (1 - S) 1{v < 0}]``
    with ``v = h + (xbar_i - xbar_j)' b_xbar``."""
    matching = matching or MatchingSpec()
    if pairs.n_pairs == 0:
        if diagnostics is not None:
            diagnostics["matched_pairs"] = 0
        return 0.0
    w = _xq_terms(pairs, matching)
    if diagnostics is not None:
        diagnostics["matched_pairs"] = int(np.count_nonzero(w))
    v = pairs.h + pairs.xbar_diff @ np.atleast_1d(np.asarray(b_xbar, dtype=float))
    hit = np.where(pairs.S == 1, v > 0, v < 0)
    return float(w @ hit)


@dataclass(frozen=True)
class XqConfig:
    matching: MatchingSpec = field(default_factory=MatchingSpec)
    bounds: tuple[float, float] = (-20.0, 20.0)
    n_starts: int = 10
    seed: int = 0

    def to_json(self) -> dict:
        return {"matching": {"bandwidth": self.matching.bandwidth, "kernel": self.matching.kernel,
                             "atol": self.matching.atol},
                "bounds": list(self.bounds), "n_starts": self.n_starts, "seed": self.seed}


def estimate_xq(pairs: WithinPairs, config: XqConfig | None = None) -> EstimateReport:
    """Second-step estimate of ``b_xbar`` with the first stage held fixed.

    One coefficient is solved exactly by a breakpoint sweep; several use
    Nelder-Mead on the exact objective from random starts.
    """
    from scipy import optimize
    config = config or XqConfig()
    diag: dict = {}
    q = pairs.xbar_diff.shape[1]
    names = [f"beta_xbar{k}" for k in range(q)]
    if pairs.n_pairs == 0 or not np.any(_xq_terms(pairs, config.matching) > 0):
        diag["matched_pairs"] = 0
        diag["warning"] = "no matched pairs"
        return EstimateReport("xq", dict.fromkeys(names, float("nan")), 0.0, 0, converged=False,
                              diagnostics=diag, config_hash=config_hash(config.to_json()), seed=config.seed)
    w = _xq_terms(pairs, config.matching)
    if q == 1:
        d = pairs.xbar_diff[:, 0]
        sgn = np.where(pairs.S == 1, 1.0, -1.0)
        keep = w > 0
        t, val = _best_on_line(sgn[keep] * d[keep], w[keep], sgn[keep] * pairs.h[keep], config.bounds)
        theta = np.array([t])
    else:
        rng = np.random.default_rng(config.seed)
        best = None
        for _ in range(config.n_starts):
            res = optimize.minimize(lambda th: -xq_objective(pairs, th, config.matching),
                                    rng.normal(0, 1, q), method="Nelder-Mead",
                                    options={"xatol": 1e-4, "fatol": 0.0, "initial_simplex": None})
            if best is None or res.fun < best.fun:
                best = res
        theta = best.x
    value = xq_objective(pairs, theta, config.matching, diag)
    diag["n_consumers"] = int(len(np.unique(pairs.consumer)))
    return EstimateReport("xq", dict(zip(names, map(float, theta))), value, pairs.n_pairs,
                          dict(zip(names, map(float, theta))), 1 if q == 1 else config.n_starts, 1.0, True,
                          diag, config_hash(config.to_json()), config.seed)
