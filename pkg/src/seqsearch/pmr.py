"""Pairwise maximum rank (PMR) objectives and estimator.

Only consumer pairs with ``S_a != S_b`` contribute to the objective. For a
discordant pair oriented so that ``S_a = 1`` and ``S_b = 0`` the three lines
reduce to::

    w1 * 1{(x_aij - x_bij)' b > 0}
  + w2 * 1{(z_aj  - z_bj )' m > 0}
  + w3 * 1{(z_ai  - z_bi )' m < 0}

where ``w1..w3`` are exact-match indicators (ideal objective) or kernel
weights (smoothed objective). All three weights and covariate differences
depend only on the data, so they are computed once per table and the
objective becomes a weighted count of half-space memberships.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, special

from .domain import EstimateReport, PairOutcomeTable, config_hash, to_jsonable


class InsufficientData(ValueError):
    """Too few usable rows for the requested estimator."""


# ---------------------------------------------------------------------------
# parameters and normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Normalization:
    """How the scale of ``b`` and ``m`` is pinned.

    Each block is either ``"fixed"`` (listed components held at given values,
    the rest free) or ``"unit"`` (unit Euclidean norm with ``|first| >= rho``).
    """

    b_mode: str = "fixed"
    b_fixed: tuple[tuple[int, float], ...] = ((0, -1.0),)
    m_mode: str = "unit"
    m_fixed: tuple[tuple[int, float], ...] = ()
    rho: float = 0.1

    def __post_init__(self):
        for mode, pins in ((self.b_mode, self.b_fixed), (self.m_mode, self.m_fixed)):
            if mode not in ("fixed", "unit"):
                raise ValueError(f"normalization mode must be 'fixed' or 'unit', got {mode!r}")
            if mode == "fixed" and not pins:
                raise ValueError("fixed normalization needs at least one pinned component")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")

    @classmethod
    def pinned(cls, b_fixed: dict, m_fixed: dict) -> "Normalization":
        return cls("fixed", tuple(sorted(b_fixed.items())), "fixed", tuple(sorted(m_fixed.items())))

    @classmethod
    def unit(cls, rho: float = 0.1) -> "Normalization":
        return cls("unit", (), "unit", (), rho)

    def to_json(self) -> dict:
        return {"b_mode": self.b_mode, "b_fixed": [list(p) for p in self.b_fixed],
                "m_mode": self.m_mode, "m_fixed": [list(p) for p in self.m_fixed], "rho": self.rho}

    @classmethod
    def from_json(cls, obj: dict) -> "Normalization":
        return cls(obj.get("b_mode", "fixed"),
                   tuple((int(k), float(v)) for k, v in obj.get("b_fixed", [[0, -1.0]])),
                   obj.get("m_mode", "unit"),
                   tuple((int(k), float(v)) for k, v in obj.get("m_fixed", [])),
                   float(obj.get("rho", 0.1)))


@dataclass(frozen=True)
class _Block:
    """Maps a free vector to one coefficient block under its normalization."""

    dim: int
    mode: str
    pins: tuple[tuple[int, float], ...]
    rho: float

    @property
    def free_idx(self) -> np.ndarray:
        pinned = {k for k, _ in self.pins}
        return np.array([k for k in range(self.dim) if k not in pinned], dtype=int)

    @property
    def n_free(self) -> int:
        return self.dim if self.mode == "unit" else len(self.free_idx)

    def expand(self, theta: np.ndarray) -> np.ndarray:
        if self.mode == "unit":
            nrm = np.linalg.norm(theta)
            return theta / nrm if nrm > 0 else np.full(self.dim, np.nan)
        out = np.empty(self.dim)
        for k, v in self.pins:
            out[k] = v
        out[self.free_idx] = theta
        return out

    def contract(self, coef: np.ndarray) -> np.ndarray:
        coef = np.asarray(coef, dtype=float)
        if self.mode == "unit":
            return coef / np.linalg.norm(coef)
        return coef[self.free_idx]

    def feasible(self, coef: np.ndarray) -> bool:
        if self.mode == "unit":
            return bool(np.all(np.isfinite(coef)) and abs(coef[0]) >= self.rho)
        return True

    def random_start(self, rng: np.random.Generator) -> np.ndarray:
        """A uniform direction on the sphere, rescaled to satisfy the pins."""
        for _ in range(1000):
            v = rng.standard_normal(self.dim)
            v /= np.linalg.norm(v)
            if self.mode == "unit":
                if abs(v[0]) >= self.rho:
                    return v
                continue
            k0, p0 = self.pins[0]
            if abs(v[k0]) < 0.05:
                continue
            v = v * (p0 / v[k0])
            return v[self.free_idx]
        raise RuntimeError("could not draw a feasible start")


@dataclass
class PmrParams:
    """Coefficient directions ``b`` (on x) and ``m`` (on z)."""

    b: np.ndarray
    m: np.ndarray
    normalization: Normalization = field(default_factory=Normalization)

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        self.m = np.asarray(self.m, dtype=float)

    def check(self, tol: float = 1e-12) -> None:
        nz = self.normalization
        for vec, mode, pins, name in ((self.b, nz.b_mode, nz.b_fixed, "b"), (self.m, nz.m_mode, nz.m_fixed, "m")):
            if mode == "unit":
                if abs(np.linalg.norm(vec) - 1) > tol or abs(vec[0]) < nz.rho - tol:
                    raise ValueError(f"{name} violates the unit-norm normalization")
            else:
                for k, v in pins:
                    if vec[k] != v:
                        raise ValueError(f"{name}[{k}] must be pinned at {v}")


def _blocks(nz: Normalization, q_x: int, q_z: int) -> tuple[_Block, _Block]:
    return (_Block(q_x, nz.b_mode, nz.b_fixed, nz.rho), _Block(q_z, nz.m_mode, nz.m_fixed, nz.rho))


# ---------------------------------------------------------------------------
# smoothing
# ---------------------------------------------------------------------------

_KERNELS = {
    "gaussian": lambda v: np.exp(-0.5 * v * v) / math.sqrt(2 * math.pi),
    "epanechnikov": lambda v: np.where(np.abs(v) < 1, 0.75 * (1 - v * v), 0.0),
}


@dataclass(frozen=True)
class SmoothingSpec:
    """Covariate-matching kernel and optional parameter-indicator smoother.

    ``bandwidth=None`` selects ``N_pairs ** (-1/5)`` per table. With
    ``scaled=True`` each line's bandwidth is additionally multiplied by the
    median stacked-covariate distance of that line (a Silverman-style rule
    that makes the kernel invariant to covariate units). The parameter
    smoother replaces ``1{v > 0}`` by the logistic CDF ``Lambda(v / tau)``;
    ``param_bandwidth=None`` reuses the covariate bandwidth rate.
    """

    kernel: str = "gaussian"
    bandwidth: float | None = None
    param_smoother: str | None = "logistic"
    param_bandwidth: float | None = None
    prune: float = 1e-12
    scaled: bool = False

    def __post_init__(self):
        if self.kernel not in _KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("bandwidth must be strictly positive")
        if self.param_bandwidth is not None and not self.param_bandwidth > 0:
            raise ValueError("param_bandwidth must be strictly positive")
        if self.param_smoother not in (None, "logistic"):
            raise ValueError("param_smoother must be None or 'logistic'")

    def K(self, v):
        return _KERNELS[self.kernel](np.asarray(v, dtype=float))

    def bandwidth_for(self, n_pairs: int) -> float:
        return self.bandwidth if self.bandwidth is not None else float(n_pairs) ** (-0.2)

    def to_json(self) -> dict:
        return {"kernel": self.kernel, "bandwidth": self.bandwidth, "param_smoother": self.param_smoother,
                "param_bandwidth": self.param_bandwidth, "prune": self.prune, "scaled": self.scaled}

    @classmethod
    def from_json(cls, obj: dict) -> "SmoothingSpec":
        return cls(**obj)


def default_bandwidth(table: PairOutcomeTable) -> float:
    return math.comb(table.n_rows, 2) ** (-0.2)


# ---------------------------------------------------------------------------
# pair precomputation
# ---------------------------------------------------------------------------

@dataclass
class PairLines:
    """Pruned discordant pairs of one table, one ``(diff, weight)`` set per line.

    ``norm`` is the number of unordered consumer pairs the objective is
    averaged over.
    """

    d1: np.ndarray   # x differences, line 1
    w1: np.ndarray
    d2: np.ndarray   # z_j differences, line 2
    w2: np.ndarray
    d3: np.ndarray   # z_i differences, line 3 (sign already flipped)
    w3: np.ndarray
    norm: float
    sigma: float
    n_rows: int
    sampled: bool = False
    line_sigma: tuple[float, float, float] = (float("nan"),) * 3

    def value(self, b, m, tau: float | None = None) -> float:
        if tau is None:
            s = (self.w1 @ (self.d1 @ b > 0) + self.w2 @ (self.d2 @ m > 0) + self.w3 @ (self.d3 @ m > 0))
        else:
            s = (self.w1 @ special.expit(self.d1 @ b / tau) + self.w2 @ special.expit(self.d2 @ m / tau)
                 + self.w3 @ special.expit(self.d3 @ m / tau))
        return float(s) / self.norm


def _discordant_index(S: np.ndarray, rng: np.random.Generator | None, n_sample: int | None):
    one, zero = np.flatnonzero(S == 1), np.flatnonzero(S == 0)
    if n_sample is None:
        a = np.repeat(one, len(zero))
        b = np.tile(zero, len(one))
        return a, b
    # uniform sample of unordered pairs; only discordant ones are kept
    n = len(S)
    p = rng.integers(0, n, size=(n_sample, 2))
    p = p[p[:, 0] != p[:, 1]]
    keep = S[p[:, 0]] != S[p[:, 1]]
    p = p[keep]
    flip = S[p[:, 0]] == 0
    a = np.where(flip, p[:, 1], p[:, 0])
    b = np.where(flip, p[:, 0], p[:, 1])
    return a, b


def prepare_lines(table: PairOutcomeTable, smoothing: SmoothingSpec | None, *,
                  row_cap: int = 20_000, seed: int = 0, chunk: int = 2_000_000) -> PairLines:
    """Precompute weights and differences for ``table``.

    ``smoothing=None`` gives exact-match indicator weights (ideal objective).
    Above ``row_cap`` rows a seeded uniform sample of ``C(row_cap, 2)``
    consumer pairs replaces full enumeration.
    """
    n = table.n_rows
    if n < 2:
        raise InsufficientData(f"table {table.pair} has {n} rows; need at least 2")
    n_pairs = math.comb(n, 2)
    sampled = n > row_cap
    rng = np.random.default_rng(seed) if sampled else None
    n_sample = math.comb(row_cap, 2) if sampled else None
    norm = float(n_sample if sampled else n_pairs)
    sigma = smoothing.bandwidth_for(int(norm)) if smoothing is not None else float("nan")

    ia, ib = _discordant_index(table.S, rng, n_sample)
    xd, zi, zj = table.x_diff, table.z_i, table.z_j
    scale = (1.0, 1.0, 1.0)
    if smoothing is not None and smoothing.scaled:
        scale = _median_distances(table, seed)
    parts = {k: [] for k in ("d1", "w1", "d2", "w2", "d3", "w3")}
    thr = 0.0 if smoothing is None else smoothing.prune * float(smoothing.K(0.0))
    for s in range(0, len(ia), chunk):
        a, b = ia[s:s + chunk], ib[s:s + chunk]
        dx, dzi, dzj = xd[a] - xd[b], zi[a] - zi[b], zj[a] - zj[b]
        if smoothing is None:
            exi, exj, exx = (dzi == 0).all(1), (dzj == 0).all(1), (dx == 0).all(1)
            w = (exi & exj).astype(float), (exi & exx).astype(float), (exj & exx).astype(float)
        else:
            ni, nj, nx = (dzi ** 2).sum(1), (dzj ** 2).sum(1), (dx ** 2).sum(1)
            K = smoothing.K
            w = (K(np.sqrt(ni + nj) / (sigma * scale[0])), K(np.sqrt(ni + nx) / (sigma * scale[1])),
                 K(np.sqrt(nj + nx) / (sigma * scale[2])))
        for name, d, wk in (("1", dx, w[0]), ("2", dzj, w[1]), ("3", -dzi, w[2])):
            keep = wk > thr
            parts["d" + name].append(d[keep])
            parts["w" + name].append(wk[keep])
    cat = {k: (np.concatenate(v) if v else np.zeros((0,))) for k, v in parts.items()}
    q_x, q_z = table.q_x, table.q_z
    return PairLines(cat["d1"].reshape(-1, q_x), cat["w1"], cat["d2"].reshape(-1, q_z), cat["w2"],
                     cat["d3"].reshape(-1, q_z), cat["w3"], norm, sigma, n, sampled,
                     tuple(sigma * c for c in scale))


def _median_distances(table: PairOutcomeTable, seed: int, n_max: int = 200_000) -> tuple[float, float, float]:
    """Median stacked-covariate distance of each line over all consumer pairs."""
    n = table.n_rows
    if math.comb(n, 2) <= n_max:
        a, b = np.triu_indices(n, 1)
    else:
        p = np.random.default_rng(seed).integers(0, n, size=(n_max, 2))
        p = p[p[:, 0] != p[:, 1]]
        a, b = p[:, 0], p[:, 1]
    xd = table.x_diff
    ni = ((table.z_i[a] - table.z_i[b]) ** 2).sum(1)
    nj = ((table.z_j[a] - table.z_j[b]) ** 2).sum(1)
    nx = ((xd[a] - xd[b]) ** 2).sum(1)
    med = [float(np.median(np.sqrt(v))) for v in (ni + nj, ni + nx, nj + nx)]
    return tuple(m if m > 0 else 1.0 for m in med)


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------

def _check_table(table: PairOutcomeTable):
    if table.n_rows == 0:
        raise InsufficientData("empty table")
    if table.n_rows < 2:
        raise InsufficientData("objective needs at least two rows")


def ideal_objective(table: PairOutcomeTable, params: PmrParams) -> float:
    """Exact-match objective ``Q`` in ``[0, 3]``."""
    _check_table(table)
    return prepare_lines(table, None).value(params.b, params.m)


def smoothed_objective(table: PairOutcomeTable, params: PmrParams,
                       smoothing: SmoothingSpec | None = None, *, surrogate: bool = False) -> float:
    """Kernel-matched objective ``SQ``.

    ``surrogate=True`` additionally smooths the parameter indicators with
    ``smoothing.param_smoother``.
    """
    _check_table(table)
    smoothing = smoothing or SmoothingSpec()
    lines = prepare_lines(table, smoothing)
    return lines.value(params.b, params.m, _tau(smoothing, lines) if surrogate else None)


def multi_pair_objective(tables: Sequence[PairOutcomeTable], params: PmrParams,
                         smoothing: SmoothingSpec | None = None) -> float:
    if not tables:
        raise InsufficientData("need at least one table")
    return float(sum(smoothed_objective(t, params, smoothing) for t in tables))


def _tau(smoothing: SmoothingSpec, lines: PairLines) -> float | None:
    if smoothing.param_smoother is None:
        return None
    return smoothing.param_bandwidth if smoothing.param_bandwidth is not None else lines.sigma


# ---------------------------------------------------------------------------
# exact maximization along one free coordinate
# ---------------------------------------------------------------------------

def _best_on_line(d: np.ndarray, w: np.ndarray, base: np.ndarray, bounds: tuple[float, float]):
    """Maximize ``sum_p w_p 1{t * d_p + base_p > 0}`` over ``t`` in ``bounds``.

    Returns ``(t_hat, value)``; ``t_hat`` is the midpoint of the best open
    interval between consecutive breakpoints (ties broken by the median
    of the tied intervals).
    """
    lo, hi = bounds
    const = float(w[(d == 0) & (base > 0)].sum())
    pos, neg = d > 0, d < 0
    tp = -base[pos] / d[pos]           # active for t > tp
    tn = -base[neg] / d[neg]           # active for t < tn
    wp, wn = w[pos], w[neg]
    pts = np.concatenate([tp, tn, [lo, hi]])
    pts = np.unique(np.clip(pts, lo, hi))
    mids = 0.5 * (pts[:-1] + pts[1:]) if len(pts) > 1 else np.array([lo])
    op, on = np.argsort(tp), np.argsort(tn)
    cum_p = np.concatenate([[0.0], np.cumsum(wp[op])])
    cum_n = np.concatenate([[0.0], np.cumsum(wn[on])])
    above = cum_p[np.searchsorted(tp[op], mids, side="left")]
    below = cum_n[-1] - cum_n[np.searchsorted(tn[on], mids, side="right")]
    vals = const + above + below
    best = vals.max()
    tied = np.flatnonzero(vals >= best - 1e-12 * max(1.0, abs(best)))
    k = tied[len(tied) // 2]
    return float(mids[k]), float(best)


def _exact_block(lines_list, which: str, block: _Block, bounds) -> np.ndarray:
    """Exact argmax of a block with one free component."""
    k = int(block.free_idx[0])
    fixed = np.zeros(block.dim)
    for j, v in block.pins:
        fixed[j] = v
    D, W, B = [], [], []
    for L in lines_list:
        pairs = [(L.d1, L.w1)] if which == "b" else [(L.d2, L.w2), (L.d3, L.w3)]
        for d, w in pairs:
            D.append(d[:, k])
            W.append(w / L.norm)
            B.append(d @ fixed)
    t, _ = _best_on_line(np.concatenate(D), np.concatenate(W), np.concatenate(B), bounds)
    return np.array([t])


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PmrConfig:
    """Optimizer, smoothing and normalization settings for :func:`estimate_pmr`."""

    normalization: Normalization = field(default_factory=Normalization)
    smoothing: SmoothingSpec = field(default_factory=SmoothingSpec)
    optimizer: str = "nelder-mead"       # or "exact1d"
    n_starts: int = 20
    min_obs: int = 50
    row_cap: int = 20_000
    seed: int = 0
    bounds: tuple[float, float] = (-20.0, 20.0)
    agree_tol: float = 1e-2
    nm_xatol: float = 1e-4
    nm_fatol: float = 1e-10
    nm_maxiter: int = 4000

    def __post_init__(self):
        if self.optimizer not in ("nelder-mead", "exact1d"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")

    def to_json(self) -> dict:
        return {"normalization": self.normalization.to_json(), "smoothing": self.smoothing.to_json(),
                "optimizer": self.optimizer, "n_starts": self.n_starts, "min_obs": self.min_obs,
                "row_cap": self.row_cap, "seed": self.seed, "bounds": list(self.bounds),
                "agree_tol": self.agree_tol, "nm_xatol": self.nm_xatol, "nm_fatol": self.nm_fatol,
                "nm_maxiter": self.nm_maxiter}

    @classmethod
    def from_json(cls, obj: dict) -> "PmrConfig":
        kw = dict(obj)
        if "normalization" in kw:
            kw["normalization"] = Normalization.from_json(kw["normalization"])
        if "smoothing" in kw:
            kw["smoothing"] = SmoothingSpec.from_json(kw["smoothing"])
        if "bounds" in kw:
            kw["bounds"] = tuple(kw["bounds"])
        return cls(**kw)


def _coef_names(table: PairOutcomeTable) -> tuple[list[str], list[str]]:
    return [f"beta_{n}" for n in table.x_names], [f"gamma_{n}" for n in table.z_names]


def estimate_pmr(tables: PairOutcomeTable | Sequence[PairOutcomeTable],
                 config: PmrConfig | None = None) -> EstimateReport:
    """Maximize the (summed) smoothed objective over the normalized parameter space."""
    t0 = time.perf_counter()
    config = config or PmrConfig()
    if isinstance(tables, PairOutcomeTable):
        tables = [tables]
    tables = list(tables)
    n_obs = sum(t.n_rows for t in tables)
    if not tables or n_obs < config.min_obs:
        raise InsufficientData(f"{n_obs} rows available; estimator needs at least {config.min_obs}")
    q_x, q_z = tables[0].q_x, tables[0].q_z
    bb, mb = _blocks(config.normalization, q_x, q_z)
    sm = config.smoothing
    lines = [prepare_lines(t, sm, row_cap=config.row_cap, seed=config.seed + k)
             for k, t in enumerate(tables) if t.n_rows >= 2]

    def sq(b, m, surrogate=False):
        return sum(L.value(b, m, _tau(sm, L) if surrogate else None) for L in lines)

    rng = np.random.default_rng(config.seed)
    diag: dict = {"sigma": [L.sigma for L in lines], "line_sigma": [list(L.line_sigma) for L in lines], "pairs_sampled": [L.sampled for L in lines],
                  "row_cap": config.row_cap, "n_tables": len(tables),
                  "distinct_first_x": int(len(np.unique(np.concatenate([t.x_diff[:, 0] for t in tables])))),
                  "distinct_first_z": int(len(np.unique(np.concatenate([t.z_i[:, 0] for t in tables]))))}
    # b and m enter disjoint lines, so the two blocks are optimized separately
    results = {}
    agreement = []
    improved_any = False
    for name, block in (("b", bb), ("m", mb)):
        if block.n_free == 0:
            results[name] = block.expand(np.zeros(0))
            agreement.append(1.0)
            continue

        def f(theta, surrogate, _name=name, _block=block):
            coef = _block.expand(theta)
            if not _block.feasible(coef):
                return -np.inf
            return _block_value(lines, _name, coef, sm, surrogate)

        if config.optimizer == "exact1d":
            if block.mode != "fixed" or block.n_free != 1:
                raise ValueError("exact1d needs a fixed normalization with one free component per block")
            theta = _exact_block(lines, name, block, config.bounds)
            results[name] = block.expand(theta)
            agreement.append(1.0)
            improved_any = True
            continue

        starts = [block.random_start(rng) for _ in range(config.n_starts)]
        cands, start_vals = [], []
        opts = {"xatol": config.nm_xatol, "fatol": config.nm_fatol, "maxiter": config.nm_maxiter}
        for s in starts:
            start_vals.append(f(s, False))
            res = optimize.minimize(lambda th: -max(f(th, True), -1e6), s, method="Nelder-Mead", options=opts)
            x = np.clip(res.x, *config.bounds) if block.mode == "fixed" else res.x
            # polish on the exact objective; the surrogate argmax can sit off the exact plateau
            pol = optimize.minimize(lambda th: -max(f(th, False), -1e6), x, method="Nelder-Mead", options=opts)
            xp = np.clip(pol.x, *config.bounds) if block.mode == "fixed" else pol.x
            cands.append(xp if f(xp, False) >= f(x, False) else x)
        vals = np.array([f(c, False) for c in cands])
        k = int(np.argmax(vals))
        best_coef = block.expand(cands[k])
        dist = [np.max(np.abs(block.expand(c) - best_coef)) for c in cands]
        agreement.append(float(np.mean(np.array(dist) <= config.agree_tol)))
        results[name] = best_coef
        diag[f"{name}_restart_values"] = vals.tolist()
        diag[f"{name}_start_values"] = start_vals
        if vals[k] < max(start_vals) - 1e-12:
            # never hand back something worse than a start point
            j = int(np.argmax(start_vals))
            results[name] = block.expand(starts[j])
        improved_any |= bool(vals[k] > max(start_vals) + 1e-15)

    b, m = results["b"], results["m"]
    value = sq(b, m)
    x_names, z_names = _coef_names(tables[0])
    coefs = dict(zip(x_names, map(float, b))) | dict(zip(z_names, map(float, m)))
    converged = improved_any or config.optimizer == "exact1d"
    if not converged:
        diag["non_improvement"] = True
    diag["seconds"] = time.perf_counter() - t0
    return EstimateReport(
        method="pmr", coefficients=coefs, objective=value, n_obs=n_obs,
        raw_coefficients=dict(coefs), n_restarts=0 if config.optimizer == "exact1d" else config.n_starts,
        restart_agreement=float(np.mean(agreement)), converged=converged, diagnostics=diag,
        config_hash=config_hash(config.to_json()), seed=config.seed,
    )


def _block_value(lines, which: str, coef, sm: SmoothingSpec, surrogate: bool) -> float:
    out = 0.0
    for L in lines:
        tau = _tau(sm, L) if surrogate else None
        if which == "b":
            s = L.w1 @ (special.expit(L.d1 @ coef / tau) if tau else (L.d1 @ coef > 0))
        else:
            if tau:
                s = L.w2 @ special.expit(L.d2 @ coef / tau) + L.w3 @ special.expit(L.d3 @ coef / tau)
            else:
                s = L.w2 @ (L.d2 @ coef > 0) + L.w3 @ (L.d3 @ coef > 0)
        out += float(s) / L.norm
    return out
