"""Rank objectives with known or sieve-approximated ``G^{-1}`` and the
match-value-distribution (MVD) comparison test.

All objectives here share one form: for an index ``h_a`` per consumer,

    GQ = C(n, 2)^{-1} * #{(a, b): S_a = 1, S_b = 0, h_a > h_b}

which is evaluated exactly in ``O(n log n)`` by sorting.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special

from .domain import SPEC_VERSION, EstimateReport, PairOutcomeTable, config_hash
from .model_core import MatchValueDist, ginv
from .pmr import InsufficientData, Normalization, PmrConfig, _Block, _blocks, estimate_pmr


# ---------------------------------------------------------------------------
# rank objective
# ---------------------------------------------------------------------------

def rank_count(h: np.ndarray, S: np.ndarray) -> int:
    """Number of (S=1, S=0) consumer pairs with strictly larger ``h`` on the S=1 side."""
    h1 = np.sort(h[S == 1])
    h0 = h[S == 0]
    return int(len(h1) * len(h0) - np.searchsorted(h1, h0, side="right").sum())


def rank_objective(h: np.ndarray, S: np.ndarray) -> float:
    n = len(h)
    if n < 2:
        raise InsufficientData("objective needs at least two rows")
    return rank_count(h, S) / math.comb(n, 2)


def smoothed_rank_objective(h: np.ndarray, S: np.ndarray, tau: float,
                            pairs: tuple[np.ndarray, np.ndarray] | None = None) -> float:
    """Logistic surrogate ``sum Lambda((h_a - h_b) / tau)`` over discordant pairs."""
    if pairs is None:
        one, zero = np.flatnonzero(S == 1), np.flatnonzero(S == 0)
        pairs = (np.repeat(one, len(zero)), np.tile(zero, len(one)))
        norm = math.comb(len(h), 2)
    else:
        norm = len(pairs[0])
    return float(special.expit((h[pairs[0]] - h[pairs[1]]) / tau).sum()) / norm


# ---------------------------------------------------------------------------
# sieve basis and its fitted form
# ---------------------------------------------------------------------------

@dataclass
class SieveSpec:
    """Linear sieve ``G^{-1}(v) ~ sum_{n=0}^{N} a_n p_n(v)``.

    ``p_n(v) = ((log v - center) / scale) ** n``. ``offset`` is a known
    intercept added to ``z'm`` before exponentiation, so the sieve is
    evaluated at cost ``exp(offset + z'm)``. With ``shared=False``
    ``coef`` has one row per product of the pair (row 0: product i).
    ``kind="analytic"`` wraps the exact inverse of ``dist`` instead.
    """

    degree: int = 3
    coef: np.ndarray | None = None
    center: float = 0.0
    scale: float = 1.0
    offset: float = 0.0
    shared: bool = True
    kind: str = "poly"
    dist: MatchValueDist | None = None

    def __post_init__(self):
        if self.kind not in ("poly", "analytic"):
            raise ValueError(f"unknown sieve kind {self.kind!r}")
        if self.kind == "analytic":
            if self.dist is None:
                raise ValueError("analytic sieve needs a distribution")
            return
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        if not self.scale > 0:
            raise ValueError("scale must be > 0")
        shape = (self.degree + 1,) if self.shared else (2, self.degree + 1)
        if self.coef is None:
            self.coef = np.zeros(shape)
        self.coef = np.asarray(self.coef, dtype=float).reshape(shape)
        if not np.all(np.isfinite(self.coef)):
            raise ValueError("sieve coefficients must be finite")

    def basis(self, log_v) -> np.ndarray:
        t = (np.asarray(log_v, dtype=float) - self.center) / self.scale
        return t[..., None] ** np.arange(self.degree + 1)

    def coef_for(self, which: int = 0) -> np.ndarray:
        return self.coef if self.shared else self.coef[which]

    def at_log_cost(self, log_v, which: int = 0) -> np.ndarray:
        if self.kind == "analytic":
            return ginv(np.exp(np.asarray(log_v, dtype=float)), self.dist, extrapolate_high=True)
        return self.basis(log_v) @ self.coef_for(which)

    def __call__(self, v, which: int = 0) -> np.ndarray:
        """Approximate ``G^{-1}`` at cost ``v``."""
        return self.at_log_cost(np.log(np.asarray(v, dtype=float)), which)

    def with_coef(self, coef) -> "SieveSpec":
        return SieveSpec(self.degree, np.asarray(coef, float), self.center, self.scale, self.offset,
                         self.shared, self.kind, self.dist)

    @property
    def n_coef(self) -> int:
        return self.coef.size

    def to_json(self) -> dict:
        return {"spec_version": SPEC_VERSION, "degree": self.degree, "kind": self.kind,
                "coef": None if self.coef is None else np.asarray(self.coef).tolist(),
                "center": self.center, "scale": self.scale, "offset": self.offset,
                "shared": self.shared, "dist": None if self.dist is None else self.dist.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "SieveSpec":
        return cls(obj.get("degree", 3), None if obj.get("coef") is None else np.asarray(obj["coef"]),
                   obj.get("center", 0.0), obj.get("scale", 1.0), obj.get("offset", 0.0),
                   obj.get("shared", True), obj.get("kind", "poly"),
                   None if obj.get("dist") is None else MatchValueDist.from_json(obj["dist"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path) -> "SieveSpec":
        return cls.from_json(json.loads(Path(path).read_text()))


def project_ginv(dist: MatchValueDist, spec: SieveSpec, cost_range: tuple[float, float],
                 n_grid: int = 400) -> SieveSpec:
    """Least-squares projection of the exact ``G^{-1}`` on the sieve basis over a log-cost grid."""
    lv = np.linspace(math.log(cost_range[0]), math.log(cost_range[1]), n_grid)
    target = ginv(np.exp(lv), dist, extrapolate_high=True)
    B = spec.basis(lv)
    coef, *_ = np.linalg.lstsq(B, target, rcond=None)
    if not spec.shared:
        coef = np.vstack([coef, coef])
    return spec.with_coef(coef)


# ---------------------------------------------------------------------------
# indices and objectives
# ---------------------------------------------------------------------------

def log_costs(table: PairOutcomeTable, m, offset: float = 0.0, gamma_a: np.ndarray | None = None):
    """``(offset + z_ai'm, offset + z_aj'm)``; ``gamma_a`` overrides ``m`` per row."""
    if gamma_a is None:
        return offset + table.z_i @ m, offset + table.z_j @ m
    return offset + np.einsum("ak,ak->a", table.z_i, gamma_a), offset + np.einsum("ak,ak->a", table.z_j, gamma_a)


def sieve_index(table: PairOutcomeTable, b, m, sieve: SieveSpec) -> np.ndarray:
    """``h`` in the sieve objective."""
    li, lj = log_costs(table, np.asarray(m, float), sieve.offset)
    return sieve.at_log_cost(li, 0) - sieve.at_log_cost(lj, 1) + table.x_diff @ np.asarray(b, float)


GinvFn = Callable[[np.ndarray], np.ndarray]


def _as_ginv(g) -> GinvFn:
    if isinstance(g, MatchValueDist):
        return lambda c, _d=g: ginv(c, _d)
    return g


def known_ginv_index(table: PairOutcomeTable, b, m, ginv_i, ginv_j=None, offset: float = 0.0) -> np.ndarray:
    gi = _as_ginv(ginv_i)
    gj = _as_ginv(ginv_j if ginv_j is not None else ginv_i)
    li, lj = log_costs(table, np.asarray(m, float), offset)
    return gi(np.exp(li)) - gj(np.exp(lj)) + table.x_diff @ np.asarray(b, float)


def known_ginv_objective(tables, b, m, ginv_i, ginv_j=None, offset: float = 0.0) -> float:
    """Rank objective with known ``G^{-1}`` (a distribution or a callable per product)."""
    tables = [tables] if isinstance(tables, PairOutcomeTable) else tables
    return float(sum(rank_objective(known_ginv_index(t, b, m, ginv_i, ginv_j, offset), t.S)
                     for t in tables))


def sieve_objective(tables, b, m, sieve: SieveSpec) -> float:
    tables = [tables] if isinstance(tables, PairOutcomeTable) else tables
    return float(sum(rank_objective(sieve_index(t, b, m, sieve), t.S) for t in tables))


# ---------------------------------------------------------------------------
# generic rank-objective optimizer
# ---------------------------------------------------------------------------

@dataclass
class _RankProblem:
    """Free-parameter vector to per-table index, plus pair samples for the surrogate."""

    tables: list
    index: Callable[[PairOutcomeTable, np.ndarray], np.ndarray]
    pair_samples: list
    tau: float

    def exact(self, theta) -> float:
        return float(sum(rank_objective(self.index(t, theta), t.S) for t in self.tables))

    def smooth(self, theta) -> float:
        return float(sum(smoothed_rank_objective(self.index(t, theta), t.S, self.tau, p)
                         for t, p in zip(self.tables, self.pair_samples)))


def _sample_pairs(table: PairOutcomeTable, max_pairs: int, rng) -> tuple[np.ndarray, np.ndarray]:
    one, zero = np.flatnonzero(table.S == 1), np.flatnonzero(table.S == 0)
    total = len(one) * len(zero)
    if total <= max_pairs:
        return np.repeat(one, len(zero)), np.tile(zero, len(one))
    k = rng.choice(total, size=max_pairs, replace=False)
    return one[k // len(zero)], zero[k % len(zero)]


def maximize_rank(problem: _RankProblem, starts: Sequence[np.ndarray], *, xatol=1e-4, maxiter=3000,
                  polish: bool = True, bound: float = 20.0, maxfev_per_dim: int = 400):
    """Nelder-Mead on the logistic surrogate from each start, then polish on the exact objective.

    Free parameters are confined to ``[-bound, bound]``: with a pinned
    coefficient the surrogate can otherwise keep improving as the sieve
    terms grow without limit. Returns ``(theta, value, agreement, diagnostics)``.
    """
    def inside(th):
        return np.all(np.abs(th) <= bound)

    def neg_smooth(th):
        return -problem.smooth(th) if inside(th) else 1e6

    def neg_exact(th):
        return -problem.exact(th) if inside(th) else 1e6

    cands, start_vals, hit_cap = [], [], 0
    for s in starts:
        s = np.clip(np.asarray(s, dtype=float), -bound, bound)
        start_vals.append(problem.exact(s))
        res = optimize.minimize(neg_smooth, s, method="Nelder-Mead",
                                options={"xatol": xatol, "fatol": 1e-12, "maxiter": maxiter,
                                         "maxfev": maxfev_per_dim * len(s), "adaptive": len(s) > 4})
        hit_cap += int(res.status != 0)
        cands.append(res.x)
    vals = np.array([problem.exact(c) for c in cands])
    k = int(np.argmax(vals))
    theta, value = cands[k], float(vals[k])
    if polish:
        res = optimize.minimize(neg_exact, theta, method="Nelder-Mead",
                                options={"xatol": xatol * 0.1, "fatol": 0.0, "maxiter": maxiter,
                                         "maxfev": maxfev_per_dim * len(theta),
                                         "initial_simplex": theta + np.vstack(
                                             [np.zeros(len(theta)), 0.02 * np.eye(len(theta))])})
        if -res.fun > value:
            theta, value = res.x, float(-res.fun)
    best_start = int(np.argmax(start_vals))
    if start_vals[best_start] > value:
        theta, value = np.asarray(starts[best_start], float), float(start_vals[best_start])
    agree = float(np.mean([np.max(np.abs(c - theta)) <= 1e-2 for c in cands]))
    diag = {"restart_values": vals.tolist(), "start_values": start_vals,
            "improved": bool(value > max(start_vals)), "nm_budget_exhausted": hit_cap,
            "at_bound": bool(np.any(np.abs(theta) >= 0.999 * bound))}
    return theta, value, agree, diag


# ---------------------------------------------------------------------------
# sieve estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SieveConfig:
    """Settings for :func:`estimate_sieve`.

    ``m`` must be pinned (fixed normalization) because a polynomial in log
    cost absorbs any affine change of ``z'm``; ``offset`` is the known
    log-cost intercept. Start values for the sieve coefficients are
    projections of ``N(0, s^2)`` inverses for each ``s`` in ``start_sds``.
    """

    normalization: Normalization = field(default_factory=lambda: Normalization(m_mode="fixed", m_fixed=((1, 1.0),)))
    degree: int = 3
    shared: bool = True
    offset: float = 0.0
    n_starts: int = 8
    start_sds: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    max_pairs: int = 200_000
    tau: float | None = None
    min_obs: int = 50
    seed: int = 0
    first_stage: PmrConfig | None = None

    def to_json(self) -> dict:
        return {"normalization": self.normalization.to_json(), "degree": self.degree, "shared": self.shared,
                "offset": self.offset, "n_starts": self.n_starts, "start_sds": list(self.start_sds),
                "max_pairs": self.max_pairs, "tau": self.tau, "min_obs": self.min_obs, "seed": self.seed,
                "first_stage": None if self.first_stage is None else self.first_stage.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "SieveConfig":
        kw = dict(obj)
        if "normalization" in kw:
            kw["normalization"] = Normalization.from_json(kw["normalization"])
        if "start_sds" in kw:
            kw["start_sds"] = tuple(kw["start_sds"])
        if kw.get("first_stage") is not None:
            kw["first_stage"] = PmrConfig.from_json(kw["first_stage"])
        return cls(**kw)


class RankDeficientBasis(ValueError):
    """The sieve basis is collinear on the observed cost range."""


@dataclass
class SieveFit:
    report: EstimateReport
    sieve: SieveSpec
    cost_range: tuple[float, float]
    central_range: tuple[float, float] = (float("nan"), float("nan"))

    def grid(self, n_grid: int = 100) -> np.ndarray:
        """Log-spaced evaluation grid over the 5-95% quantiles of fitted costs."""
        return np.exp(np.linspace(math.log(self.central_range[0]), math.log(self.central_range[1]), n_grid))


def estimate_sieve(tables, config: SieveConfig | None = None) -> SieveFit:
    """Joint rank maximization over ``(b, m, a)``."""
    return fit_rank_model(tables, config or SieveConfig())


def fit_rank_model(tables, config: SieveConfig, *, method: str = "sieve", n_extra: int = 0,
                   extra_index: Callable | None = None, extra_names: Sequence[str] = (),
                   m_scales: Sequence[float] = (1.0,), extra_start_sd: float = 0.0) -> SieveFit:
    """Sieve fit with optional extra parameters.

    ``extra_index(table, b, m, sieve, extra)`` returns the index when
    ``n_extra > 0``. Nelder-Mead starts combine PMR directions (free
    ``m`` components multiplied by each of ``m_scales``) with projected
    normal inverses for the sieve, and zero extra parameters.
    """
    t0 = time.perf_counter()
    tables = [tables] if isinstance(tables, PairOutcomeTable) else list(tables)
    n_obs = sum(t.n_rows for t in tables)
    if n_obs < config.min_obs:
        raise InsufficientData(f"{n_obs} rows available; sieve estimator needs at least {config.min_obs}")
    nz = config.normalization
    if nz.b_mode != "fixed":
        raise ValueError("sieve estimation requires a fixed-coefficient normalization of b")
    q_x, q_z = tables[0].q_x, tables[0].q_z
    bb, mb = _blocks(nz, q_x, q_z)

    # first stage: PMR directions give the starting (b, m) and the basis standardization
    fs = config.first_stage or PmrConfig(normalization=nz, smoothing=_default_fs_smoothing(),
                                         optimizer="exact1d" if _can_exact(bb, mb) else "nelder-mead",
                                         n_starts=5, seed=config.seed, min_obs=2)
    pm = estimate_pmr(tables, fs)
    xn = [f"beta_{n}" for n in tables[0].x_names]
    zn = [f"gamma_{n}" for n in tables[0].z_names]
    b0 = np.array([pm.coefficients[k] for k in xn])
    m0 = np.array([pm.coefficients[k] for k in zn])
    n_rows = 1 if config.shared else 2
    nb, nm, na = bb.n_free, mb.n_free, n_rows * config.degree
    rng = np.random.default_rng(config.seed)
    tau = config.tau if config.tau is not None else max(n_obs, 2) ** (-0.2) * 0.5
    pair_samples = [_sample_pairs(t, config.max_pairs, rng) for t in tables]
    sds = list(config.start_sds)
    best = None
    for ms in m_scales:
        # basis standardized on the starting cost index; one problem per m scale
        m_start = mb.expand(mb.contract(m0) * ms)
        lc = np.concatenate([np.concatenate(log_costs(t, m_start, config.offset)) for t in tables])
        center, scale = float(np.mean(lc)), float(np.std(lc) or 1.0)
        base = SieveSpec(config.degree, None, center, scale, config.offset, config.shared)
        B = base.basis(lc)[:, 1:]
        if config.degree >= 1 and np.linalg.matrix_rank(B) < config.degree:
            raise RankDeficientBasis(f"basis rank {np.linalg.matrix_rank(B)} < degree {config.degree}")

        # the constant term cancels, so only a_1..a_N are free (per product when not shared)
        def unpack(theta, _base=base):
            b = bb.expand(theta[:nb])
            m = mb.expand(theta[nb:nb + nm])
            a = theta[nb + nm:nb + nm + na].reshape(n_rows, config.degree)
            coef = np.hstack([np.zeros((n_rows, 1)), a])
            return b, m, _base.with_coef(coef[0] if config.shared else coef), theta[nb + nm + na:]

        def index(t, theta, _unpack=unpack):
            b, m, sv, extra = _unpack(theta)
            if n_extra:
                return extra_index(t, b, m, sv, extra)
            return sieve_index(t, b, m, sv)

        prob = _RankProblem(tables, index, pair_samples, tau)
        lo_hi = (float(np.quantile(np.exp(lc), 0.01)), float(np.quantile(np.exp(lc), 0.99)))
        starts = []
        for k in range(config.n_starts):
            s = sds[k % len(sds)] * (1.0 if k < len(sds) else float(np.exp(rng.normal(0, 0.3))))
            a0 = project_ginv(MatchValueDist.normal(0.0, s), base, lo_hi).coef_for()[1:]
            th = np.concatenate([bb.contract(b0), mb.contract(m_start), np.tile(a0, n_rows), np.zeros(n_extra)])
            if k >= len(sds):
                th = th + rng.normal(0, 0.05, th.size)
                if n_extra and extra_start_sd:
                    th[nb + nm + na:] = rng.normal(0, extra_start_sd, n_extra)
            starts.append(th)
        out = maximize_rank(prob, starts)
        if best is None or out[1] > best[1][1]:
            best = (unpack, out, center, scale)
    unpack, (theta, value, agree, diag), center, scale = best
    n_starts_total = config.n_starts * len(m_scales)
    b, m, sv, extra = unpack(theta)
    lc = np.concatenate([np.concatenate(log_costs(t, m, config.offset)) for t in tables])
    cost_range = (float(np.exp(lc.min())), float(np.exp(lc.max())))
    coefs = dict(zip(xn, map(float, b))) | dict(zip(zn, map(float, m)))
    coefs |= dict(zip(extra_names, map(float, extra)))
    for r in range(n_rows):
        for k in range(1, config.degree + 1):
            coefs[f"a{k}" + ("" if config.shared else f"_{'ij'[r]}")] = float(sv.coef_for(r)[k])
    diag.update({"first_stage": pm.coefficients, "tau": tau, "center": center, "scale": scale,
                 "cost_range": list(cost_range), "seconds": time.perf_counter() - t0,
                 "monotone_violations": monotone_violations(sv, cost_range)})
    rep = EstimateReport(method, coefs, value, n_obs, dict(coefs), n_starts_total, agree,
                         bool(diag["improved"]), diag, config_hash(config.to_json()), config.seed)
    central = (float(np.exp(np.quantile(lc, 0.05))), float(np.exp(np.quantile(lc, 0.95))))
    return SieveFit(rep, sv, cost_range, central)


def _can_exact(bb: _Block, mb: _Block) -> bool:
    return bb.mode == "fixed" and mb.mode == "fixed" and bb.n_free == 1 and mb.n_free == 1


def _default_fs_smoothing():
    from .pmr import SmoothingSpec
    return SmoothingSpec(scaled=True)


def monotone_violations(sieve: SieveSpec, cost_range, central: float = 0.9, n_grid: int = 200) -> int:
    """Grid points in the central ``central`` share of the log-cost range where the fit increases."""
    l0, l1 = math.log(cost_range[0]), math.log(cost_range[1])
    pad = 0.5 * (1 - central) * (l1 - l0)
    lv = np.linspace(l0 + pad, l1 - pad, n_grid)
    return int(np.sum(np.diff(sieve.at_log_cost(lv)) > 0))


def export_ginv_csv(sieve: SieveSpec, cost_range, path, n_grid: int = 200) -> Path:
    lv = np.linspace(math.log(cost_range[0]), math.log(cost_range[1]), n_grid)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cost", "value"])
        for c, v in zip(np.exp(lv), sieve.at_log_cost(lv)):
            w.writerow([repr(float(c)), repr(float(v))])
    return Path(path)


# ---------------------------------------------------------------------------
# MVD test
# ---------------------------------------------------------------------------

@dataclass
class MvdTestReport:
    """Centered error curve ``G~^{-1}(v) - G^^{-1}(v)`` on a cost grid.

    ``G^{-1}`` enters pairwise differences only, so its level is not
    identified; both curves are centered by their grid mean before
    differencing.
    """

    candidate: MatchValueDist
    grid: np.ndarray
    error: np.ndarray
    sup_norm: float
    l2: float
    threshold: float | None = None
    reject: bool | None = None

    def to_json(self) -> dict:
        return {"spec_version": SPEC_VERSION, "candidate": self.candidate.to_json(),
                "grid": self.grid.tolist(), "error": self.error.tolist(), "sup_norm": self.sup_norm,
                "l2": self.l2, "threshold": self.threshold, "reject": self.reject,
                "grid_bounds": [float(self.grid[0]), float(self.grid[-1])]}


def mvd_test(candidate: MatchValueDist, fitted: SieveSpec, grid, threshold: float | None = None,
             which: int = 0, fitted_range: tuple[float, float] | None = None) -> MvdTestReport:
    """Compare a candidate distribution's ``G^{-1}`` with the fitted sieve on ``grid`` (costs)."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or np.any(grid <= 0):
        raise ValueError("grid must be a 1-d array of at least two positive costs")
    if fitted_range is not None and (grid[0] < fitted_range[0] * (1 - 1e-12) or grid[-1] > fitted_range[1] * (1 + 1e-12)):
        raise ValueError("grid extends outside the fitted cost range")
    cand = ginv(grid, candidate, extrapolate_high=True)   # raises CostOutOfRange off the image
    fit = fitted(grid, which)
    err = (cand - cand.mean()) - (fit - fit.mean())
    sup = float(np.max(np.abs(err)))
    l2 = float(np.sqrt(np.mean(err ** 2)))
    reject = None if threshold is None else bool(sup > threshold)
    return MvdTestReport(candidate, grid, err, sup, l2, threshold, reject)


def rank_candidates(candidates: Sequence[MatchValueDist], fitted: SieveSpec, grid,
                    stat: str = "l2", **kw) -> list[MvdTestReport]:
    """Reports sorted by increasing error (the smallest-error candidate first)."""
    reps = [mvd_test(c, fitted, grid, **kw) for c in candidates]
    return sorted(reps, key=lambda r: getattr(r, "l2" if stat == "l2" else "sup_norm"))


def default_grid(cost_range, n_grid: int = 100, central: float = 0.9) -> np.ndarray:
    """Log-spaced grid over the central share of a cost range."""
    l0, l1 = math.log(cost_range[0]), math.log(cost_range[1])
    pad = 0.5 * (1 - central) * (l1 - l0)
    return np.exp(np.linspace(l0 + pad, l1 - pad, n_grid))
