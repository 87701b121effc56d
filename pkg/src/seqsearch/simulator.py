"""Synthetic sequential-search markets, the Weitzman index policy and pair outcomes.

Product 0 is the outside option throughout. All per-consumer arrays are laid
out ``(n_consumers, n_products)`` with column 0 reserved for the outside good.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .domain import SPEC_VERSION, PairOutcomeTable, SearchRecord, config_hash, to_jsonable
from .model_core import MatchValueDist, ginv

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid or incomplete market configuration."""


# ---------------------------------------------------------------------------
# configuration and market
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarketConfig:
    """Data-generating process for one simulated market.

    ``x`` columns are ``("price", "x1", ...)`` and ``z`` columns are
    ``("position", "z1", ...)``; the leading column of each is endogenous
    through the quality shock ``xi``::

        price_aj    = price_mean + price_xi * xi_j + price_noise * U_aj
        position_aj = rank_j(position_xi * xi_j + N(0, 1))   (1 = top)
        delta_aj    = x_aj' beta + xbar_j' beta_xbar + z_aj' beta_zu + xi_j + nu_a + eta_aj
        c_aj        = exp(cost_intercept + z_aj' gamma)
        u_a0        = nu_a

    Consumer heterogeneity enters as ``beta_a = beta + d_a' beta_d`` and
    ``gamma_a = gamma + d_a' gamma_d``. Exogenous covariates, ``xbar`` and
    demographics are iid standard normal.
    """

    n_consumers: int
    n_products: int
    seed: int
    beta: tuple[float, ...] = (-1.0, 1.0)
    gamma: tuple[float, ...] = (0.2, 0.5)
    cost_intercept: float = -5.0
    match_dist: MatchValueDist | tuple[MatchValueDist, ...] = MatchValueDist.normal_var(0.0, 3.0)
    eta_sd: float = math.sqrt(0.5)
    nu_sd: float = 1.0
    xi_sd: float = 1.0
    price_mean: float = 2.0
    price_xi: float = 0.5
    price_noise: float = 3.0
    position_xi: float = 0.5
    beta_xbar: tuple[float, ...] = ()
    beta_zu: tuple[float, ...] = ()
    n_demographics: int = 0
    beta_d: tuple[tuple[float, ...], ...] = ()
    gamma_d: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self):
        if self.n_products < 2:
            raise ConfigError("n_products must be >= 2 (product 0 is the outside option)")
        if self.n_consumers < 1:
            raise ConfigError("n_consumers must be >= 1")
        if len(self.beta) < 1 or len(self.gamma) < 1:
            raise ConfigError("beta and gamma need at least the price / position entries")
        if isinstance(self.match_dist, tuple) and len(self.match_dist) != self.n_products - 1:
            raise ConfigError("per-product match_dist needs one entry per inside good")
        if self.beta_zu and len(self.beta_zu) != self.q_z:
            raise ConfigError("beta_zu must have one entry per z column")
        for name, mat, q in (("beta_d", self.beta_d, self.q_x), ("gamma_d", self.gamma_d, self.q_z)):
            if mat and (len(mat) != self.n_demographics or any(len(row) != q for row in mat)):
                raise ConfigError(f"{name} must be n_demographics x {q}")
        if min(self.eta_sd, self.nu_sd, self.xi_sd, self.price_noise) < 0:
            raise ConfigError("standard deviations must be non-negative")

    @property
    def q_x(self) -> int:
        return len(self.beta)

    @property
    def q_z(self) -> int:
        return len(self.gamma)

    @property
    def x_names(self) -> tuple[str, ...]:
        return ("price",) + tuple(f"x{k}" for k in range(1, self.q_x))

    @property
    def z_names(self) -> tuple[str, ...]:
        return ("position",) + tuple(f"z{k}" for k in range(1, self.q_z))

    def dist_for(self, j: int) -> MatchValueDist:
        if isinstance(self.match_dist, tuple):
            return self.match_dist[j - 1]
        return self.match_dist

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "match_dist":
                v = [d.to_json() for d in v] if isinstance(v, tuple) else v.to_json()
            out[f.name] = to_jsonable(v)
        return out

    REQUIRED = ("n_consumers", "n_products", "seed")

    @classmethod
    def from_json(cls, obj: dict) -> "MarketConfig":
        missing = [k for k in cls.REQUIRED if k not in obj]
        if missing:
            raise ConfigError(f"missing required field(s): {', '.join(missing)}")
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown field(s): {', '.join(sorted(unknown))}")
        kw = dict(obj)
        if "match_dist" in kw:
            md = kw["match_dist"]
            kw["match_dist"] = (tuple(MatchValueDist.from_json(d) for d in md)
                                if isinstance(md, list) else MatchValueDist.from_json(md))
        for k in ("beta", "gamma", "beta_xbar", "beta_zu"):
            if k in kw:
                kw[k] = tuple(float(v) for v in kw[k])
        for k in ("beta_d", "gamma_d"):
            if k in kw:
                kw[k] = tuple(tuple(float(v) for v in row) for row in kw[k])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class Market:
    """One realized market. Outside-option entries of ``x``/``z`` are zero."""

    config: MarketConfig
    xi: np.ndarray          # (J,)   xi[0] = 0
    xbar: np.ndarray        # (J, q_xbar)
    x: np.ndarray           # (n, J, q_x)
    z: np.ndarray           # (n, J, q_z)
    eta: np.ndarray         # (n, J)
    eps: np.ndarray         # (n, J)
    nu: np.ndarray          # (n,)
    demo: np.ndarray        # (n, n_demographics)

    @property
    def n_consumers(self) -> int:
        return self.x.shape[0]

    @property
    def n_products(self) -> int:
        return self.x.shape[1]

    def consumer_coefficients(self, beta=None, gamma=None):
        """Per-consumer ``(beta_a, gamma_a)`` arrays of shape ``(n, q)``."""
        cfg = self.config
        beta = np.asarray(cfg.beta if beta is None else beta, dtype=float)
        gamma = np.asarray(cfg.gamma if gamma is None else gamma, dtype=float)
        n = self.n_consumers
        b = np.broadcast_to(beta, (n, beta.size)).copy()
        g = np.broadcast_to(gamma, (n, gamma.size)).copy()
        if cfg.beta_d:
            b += self.demo @ np.asarray(cfg.beta_d)
        if cfg.gamma_d:
            g += self.demo @ np.asarray(cfg.gamma_d)
        return b, g

    def prior_utility(self, beta=None, gamma=None) -> np.ndarray:
        cfg = self.config
        b, _ = self.consumer_coefficients(beta, gamma)
        delta = np.einsum("ajk,ak->aj", self.x, b) + self.xi[None, :] + self.nu[:, None] + self.eta
        if cfg.beta_xbar:
            delta += (self.xbar @ np.asarray(cfg.beta_xbar))[None, :]
        if cfg.beta_zu:
            delta += np.einsum("ajk,k->aj", self.z, np.asarray(cfg.beta_zu))
        delta[:, 0] = self.nu
        return delta

    def costs(self, beta=None, gamma=None) -> np.ndarray:
        _, g = self.consumer_coefficients(beta, gamma)
        c = np.exp(self.config.cost_intercept + np.einsum("ajk,ak->aj", self.z, g))
        c[:, 0] = np.inf
        return c

    def reservation_utilities(self, beta=None, gamma=None) -> np.ndarray:
        """``r_aj = G_j^{-1}(c_aj) + delta_aj``; the outside column is ``-inf``."""
        delta = self.prior_utility(beta, gamma)
        c = self.costs(beta, gamma)
        r = np.full_like(delta, -np.inf)
        cfg = self.config
        if isinstance(cfg.match_dist, tuple):
            for j in range(1, self.n_products):
                r[:, j] = ginv(c[:, j], cfg.dist_for(j), extrapolate_high=True) + delta[:, j]
        else:
            r[:, 1:] = ginv(c[:, 1:], cfg.match_dist, extrapolate_high=True) + delta[:, 1:]
        return r

    def realized_utilities(self, beta=None, gamma=None) -> np.ndarray:
        u = self.prior_utility(beta, gamma) + self.eps
        u[:, 0] = self.nu
        return u


_STREAMS = ("xi", "price", "position", "x_exog", "z_exog", "eta", "eps", "nu", "xbar", "demo")


def generate_market(config: MarketConfig) -> Market:
    """Draw a market. Each shock family has its own seeded stream so adding,
    say, demographics does not perturb the other draws."""
    cfg = config
    n, J = cfg.n_consumers, cfg.n_products
    ss = np.random.SeedSequence(cfg.seed)
    rng = dict(zip(_STREAMS, (np.random.default_rng(s) for s in ss.spawn(len(_STREAMS)))))

    xi = np.zeros(J)
    xi[1:] = cfg.xi_sd * rng["xi"].standard_normal(J - 1)

    x = np.zeros((n, J, cfg.q_x))
    x[:, 1:, 0] = (cfg.price_mean + cfg.price_xi * xi[None, 1:]
                   + cfg.price_noise * rng["price"].uniform(size=(n, J - 1)))
    if cfg.q_x > 1:
        x[:, 1:, 1:] = rng["x_exog"].standard_normal((n, J - 1, cfg.q_x - 1))

    z = np.zeros((n, J, cfg.q_z))
    score = cfg.position_xi * xi[None, 1:] + rng["position"].standard_normal((n, J - 1))
    order = np.argsort(-score, axis=1, kind="stable")
    pos = np.empty_like(order)
    np.put_along_axis(pos, order, np.arange(1, J)[None, :].repeat(n, 0), axis=1)
    z[:, 1:, 0] = pos
    if cfg.q_z > 1:
        z[:, 1:, 1:] = rng["z_exog"].standard_normal((n, J - 1, cfg.q_z - 1))

    eta = np.zeros((n, J))
    eta[:, 1:] = cfg.eta_sd * rng["eta"].standard_normal((n, J - 1))
    eps = np.zeros((n, J))
    if isinstance(cfg.match_dist, tuple):
        u = rng["eps"].uniform(size=(n, J - 1))
        for j in range(1, J):
            eps[:, j] = cfg.dist_for(j).ppf(u[:, j - 1])
    else:
        d = cfg.match_dist
        if d.family == "normal":
            eps[:, 1:] = d.loc + d.scale * rng["eps"].standard_normal((n, J - 1))
        else:
            eps[:, 1:] = d.ppf(rng["eps"].uniform(size=(n, J - 1)))
    nu = cfg.nu_sd * rng["nu"].standard_normal(n)
    xbar = np.zeros((J, len(cfg.beta_xbar)))
    if cfg.beta_xbar:
        xbar[1:] = rng["xbar"].standard_normal((J - 1, len(cfg.beta_xbar)))
    demo = rng["demo"].standard_normal((n, cfg.n_demographics))
    return Market(cfg, xi, xbar, x, z, eta, eps, nu, demo)


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------

@dataclass
class SearchLog:
    """Vectorized outcome of the index policy for every consumer.

    ``order[a]`` lists inside goods by decreasing reservation utility; the
    first ``n_searched[a]`` of them were searched.
    """

    order: np.ndarray        # (n, J-1)
    n_searched: np.ndarray   # (n,)
    purchase: np.ndarray     # (n,)
    r: np.ndarray            # (n, J)
    u: np.ndarray            # (n, J)
    n_ties: int = 0

    @property
    def n_consumers(self) -> int:
        return len(self.n_searched)

    def searched(self, a: int) -> np.ndarray:
        return self.order[a, : self.n_searched[a]]

    def search_rank(self) -> np.ndarray:
        """``(n, J)`` array: step at which j was searched, ``-1`` if never."""
        n, J = self.r.shape
        rank = np.full((n, J), -1, dtype=np.int64)
        steps = np.arange(self.order.shape[1])[None, :]
        mask = steps < self.n_searched[:, None]
        rows = np.broadcast_to(np.arange(n)[:, None], self.order.shape)
        rank[rows[mask], self.order[mask]] = np.broadcast_to(steps, self.order.shape)[mask]
        return rank

    def records(self) -> list[SearchRecord]:
        out = []
        for a in range(self.n_consumers):
            s = self.searched(a)
            out.append(SearchRecord(a, tuple(int(j) for j in s),
                                    tuple(float(v) for v in self.u[a, s]), int(self.purchase[a])))
        return out


def _index_policy(r_inside: np.ndarray, u_inside: np.ndarray, u0: np.ndarray):
    """Selection, stopping and choice rules on ``(n, K)`` arrays.

    Returns the search order (column indices), the number searched and the
    chosen column (``-1`` for the outside option).
    """
    order = np.argsort(-r_inside, axis=1, kind="stable")          # ties -> lower id first
    r_sorted = np.take_along_axis(r_inside, order, axis=1)
    u_sorted = np.take_along_axis(u_inside, order, axis=1)
    best_before = np.maximum.accumulate(
        np.concatenate([u0[:, None], u_sorted[:, :-1]], axis=1), axis=1)
    go = np.logical_and.accumulate(r_sorted > best_before, axis=1)
    n_searched = go.sum(axis=1)
    masked = np.where(go, u_sorted, -np.inf)
    k_best = np.argmax(masked, axis=1)
    best_val = masked[np.arange(len(u0)), k_best]
    choice = np.where(best_val > u0, np.take_along_axis(order, k_best[:, None], 1)[:, 0], -1)
    ties = int(np.sum((r_sorted[:, 1:] == r_sorted[:, :-1]) & go[:, 1:]))
    return order, n_searched, choice, ties


def simulate_search(market: Market, beta=None, gamma=None) -> SearchLog:
    """Run the index policy for all consumers at the given (default: true) parameters."""
    r = market.reservation_utilities(beta, gamma)
    u = market.realized_utilities(beta, gamma)
    order, n_searched, choice, ties = _index_policy(r[:, 1:], u[:, 1:], u[:, 0])
    if ties:
        log.warning("%d reservation-utility ties among searched goods; broken by product id", ties)
    return SearchLog(order + 1, n_searched, np.where(choice >= 0, choice + 1, 0), r, u, ties)


def weitzman_search(market: Market, consumer: int, beta=None, gamma=None) -> SearchRecord:
    """Reference single-consumer implementation of the three rules."""
    r = market.reservation_utilities(beta, gamma)[consumer]
    u = market.realized_utilities(beta, gamma)[consumer]
    unsearched = list(range(1, market.n_products))
    best_val, best_j = u[0], 0
    searched, utils = [], []
    while unsearched:
        # selection: highest r among the unsearched, lowest id on ties
        j = max(unsearched, key=lambda k: (r[k], -k))
        if best_val >= r[j]:       # stopping rule
            break
        unsearched.remove(j)
        searched.append(j)
        utils.append(float(u[j]))
        if u[j] > best_val:
            best_val, best_j = u[j], j
    return SearchRecord(consumer, tuple(searched), tuple(utils), int(best_j))


# ---------------------------------------------------------------------------
# discrete instances: exact oracles for the index policy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteInstance:
    """Pandora's boxes with discrete prize distributions and a known outside value."""

    outside: float
    costs: tuple[float, ...]
    values: tuple[tuple[float, ...], ...]
    probs: tuple[tuple[float, ...], ...]

    MAX_BOXES = 4
    MAX_SUPPORT = 6

    def __post_init__(self):
        k = len(self.costs)
        if not (len(self.values) == len(self.probs) == k):
            raise ValueError("costs, values and probs must have one entry per box")
        if k > self.MAX_BOXES or any(len(v) > self.MAX_SUPPORT for v in self.values):
            raise ValueError(f"instance too large (at most {self.MAX_BOXES} boxes, "
                             f"{self.MAX_SUPPORT} support points)")
        for v, p in zip(self.values, self.probs):
            if len(v) != len(p) or min(p) < 0 or abs(sum(p) - 1) > 1e-12:
                raise ValueError("each box needs a probability vector summing to one")
        if min(self.costs, default=0.0) < 0:
            raise ValueError("costs must be non-negative")

    @classmethod
    def random(cls, rng: np.random.Generator, max_boxes=3, max_support=5) -> "DiscreteInstance":
        k = int(rng.integers(1, max_boxes + 1))
        vals, probs = [], []
        for _ in range(k):
            m = int(rng.integers(1, max_support + 1))
            vals.append(tuple(np.round(rng.normal(0.0, 1.0, m), 3)))
            probs.append(tuple(rng.dirichlet(np.ones(m))))
        costs = tuple(np.round(rng.exponential(0.3, k), 3))
        return cls(float(np.round(rng.normal(-0.5, 0.5), 3)), costs, tuple(vals), tuple(probs))

    def reservation_value(self, k: int) -> float:
        """Solve ``E[(V - r)^+] = c`` exactly; piecewise linear in r."""
        v = np.asarray(self.values[k], float)
        p = np.asarray(self.probs[k], float)
        c = self.costs[k]
        if c == 0:
            return float(v[p > 0].max()) if (p > 0).any() else -np.inf
        idx = np.argsort(v)[::-1]
        v, p = v[idx], p[idx]
        # on segment r in [v_{m+1}, v_m]: sum_{l<=m} p_l (v_l - r) = c
        for m in range(len(v)):
            pm, vm = p[: m + 1].sum(), (p[: m + 1] * v[: m + 1]).sum()
            if pm <= 0:
                continue
            r = (vm - c) / pm
            lower = v[m + 1] if m + 1 < len(v) else -np.inf
            if r >= lower:
                return float(r)
        raise AssertionError("unreachable")


def brute_force_policy_value(inst: DiscreteInstance) -> float:
    """Optimal expected payoff by backward induction over (opened set, best so far)."""
    k = len(inst.costs)
    cache: dict = {}

    def value(opened: frozenset, best: float) -> float:
        key = (opened, best)
        if key in cache:
            return cache[key]
        out = best
        for b in range(k):
            if b in opened:
                continue
            cont = -inst.costs[b] + sum(
                p * value(opened | {b}, max(best, v))
                for v, p in zip(inst.values[b], inst.probs[b]))
            out = max(out, cont)
        cache[key] = out
        return out

    return value(frozenset(), inst.outside)


def index_policy_value(inst: DiscreteInstance) -> float:
    """Exact expected payoff of the index policy by enumerating all prize draws."""
    k = len(inst.costs)
    r = np.array([inst.reservation_value(b) for b in range(k)])
    order = sorted(range(k), key=lambda b: (-r[b], b))
    total = 0.0
    for combo in itertools.product(*[range(len(v)) for v in inst.values]):
        prob = math.prod(inst.probs[b][combo[b]] for b in range(k))
        if prob == 0:
            continue
        best, paid = inst.outside, 0.0
        for b in order:
            if best >= r[b]:
                break
            paid += inst.costs[b]
            best = max(best, inst.values[b][combo[b]])
        total += prob * (best - paid)
    return total


def simulate_index_policy(inst: DiscreteInstance, n: int, rng: np.random.Generator):
    """Monte Carlo of the index policy; returns (mean payoff, standard error)."""
    k = len(inst.costs)
    r = np.array([inst.reservation_value(b) for b in range(k)])
    draws = np.column_stack([rng.choice(np.asarray(inst.values[b]), size=n, p=np.asarray(inst.probs[b]))
                             for b in range(k)])
    u0 = np.full(n, inst.outside)
    order, n_searched, choice, _ = _index_policy(np.broadcast_to(r, (n, k)), draws, u0)
    costs = np.asarray(inst.costs)[order]
    paid = np.where(np.arange(k)[None, :] < n_searched[:, None], costs, 0.0).sum(axis=1)
    got = np.where(choice >= 0, draws[np.arange(n), np.maximum(choice, 0)], inst.outside)
    pay = got - paid
    return float(pay.mean()), float(pay.std(ddof=1) / math.sqrt(n))


# ---------------------------------------------------------------------------
# pairwise outcomes
# ---------------------------------------------------------------------------

def _rank_matrix(records, n_consumers: int, n_products: int) -> np.ndarray:
    if isinstance(records, SearchLog):
        return records.search_rank()
    rank = np.full((n_consumers, n_products), -1, dtype=np.int64)
    for rec in records:
        for step, j in enumerate(rec.searched):
            rank[rec.consumer, j] = step
    return rank


def construct_outcomes(records, market: Market, pair: tuple[int, int]) -> PairOutcomeTable:
    """Rows for consumers who searched ``i`` or ``j``.

    ``S = 1`` when ``i`` was searched before ``j`` or ``i`` was searched and
    ``j`` was not; ``S = 0`` in the mirror cases.
    """
    i, j = pair
    if i == j:
        raise ValueError("pair must consist of two distinct products")
    if i == 0 or j == 0:
        raise ValueError("pair includes the outside option")
    if not (0 < i < market.n_products and 0 < j < market.n_products):
        raise ValueError(f"pair {pair} outside 1..{market.n_products - 1}")
    rank = _rank_matrix(records, market.n_consumers, market.n_products)
    ri, rj = rank[:, i], rank[:, j]
    keep = np.flatnonzero((ri >= 0) | (rj >= 0))
    ri, rj = ri[keep], rj[keep]
    S = ((ri >= 0) & ((rj < 0) | (ri < rj))).astype(np.int8)
    cfg = market.config
    return PairOutcomeTable(
        (i, j), keep, S,
        market.x[keep, i], market.x[keep, j], market.z[keep, i], market.z[keep, j],
        cfg.x_names, cfg.z_names,
        market.demo[keep] if cfg.n_demographics else None,
        tuple(f"d{k}" for k in range(cfg.n_demographics)),
    )


def draw_pairs(n_products: int, n_pairs: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Distinct unordered inside-good pairs drawn without replacement."""
    allp = list(itertools.combinations(range(1, n_products), 2))
    idx = rng.choice(len(allp), size=min(n_pairs, len(allp)), replace=False)
    return [allp[k] for k in idx]


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

MANIFEST_NOTES = {
    "exogenous_covariates": "iid standard normal (assumed; not pinned down by the design narrative)",
    "outside_option": "product 0, u_a0 = nu_a",
}


def market_frame(market: Market) -> pd.DataFrame:
    n, J = market.n_consumers, market.n_products
    cfg = market.config
    cols = {"consumer": np.repeat(np.arange(n), J), "product": np.tile(np.arange(J), n)}
    for k, name in enumerate(cfg.x_names):
        cols[f"x:{name}"] = market.x[:, :, k].ravel()
    for k, name in enumerate(cfg.z_names):
        cols[f"z:{name}"] = market.z[:, :, k].ravel()
    for k in range(market.xbar.shape[1]):
        cols[f"xbar:{k}"] = np.tile(market.xbar[:, k], n)
    cols["xi"] = np.tile(market.xi, n)
    cols["eta"] = market.eta.ravel()
    cols["eps"] = market.eps.ravel()
    cols["nu"] = np.repeat(market.nu, J)
    for k in range(market.demo.shape[1]):
        cols[f"demo:{k}"] = np.repeat(market.demo[:, k], J)
    return pd.DataFrame(cols)


def search_frame(slog: SearchLog) -> pd.DataFrame:
    rows = {"consumer": [], "step": [], "product": [], "utility": []}
    for a in range(slog.n_consumers):
        s = slog.searched(a)
        rows["consumer"].extend([a] * len(s))
        rows["step"].extend(range(len(s)))
        rows["product"].extend(s.tolist())
        rows["utility"].extend(slog.u[a, s].tolist())
    return pd.DataFrame(rows)


def save_market(market: Market, slog: SearchLog | None, out_dir) -> Path:
    """Write ``market.csv``, ``search_log.csv``, ``purchases.csv`` and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    market_frame(market).to_csv(out / "market.csv", index=False)
    if slog is not None:
        search_frame(slog).to_csv(out / "search_log.csv", index=False)
        pd.DataFrame({"consumer": np.arange(slog.n_consumers), "purchase": slog.purchase,
                      "n_searched": slog.n_searched}).to_csv(out / "purchases.csv", index=False)
    cfg_json = market.config.to_json()
    manifest = {"spec_version": SPEC_VERSION, "config": cfg_json, "seed": market.config.seed,
                "config_hash": config_hash(cfg_json), "notes": MANIFEST_NOTES,
                "files": sorted(p.name for p in out.glob("*.csv"))}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


def load_market(in_dir) -> tuple[Market, SearchLog | None]:
    """Inverse of :func:`save_market`; floats round-trip bit-exactly."""
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    cfg = MarketConfig.from_json(manifest["config"])
    df = pd.read_csv(src / "market.csv", float_precision="round_trip")
    n, J = cfg.n_consumers, cfg.n_products
    if len(df) != n * J:
        raise ValueError(f"market.csv has {len(df)} rows, expected {n * J}")
    df = df.sort_values(["consumer", "product"], kind="stable")

    def grid(col):
        return df[col].to_numpy(float).reshape(n, J)

    x = np.stack([grid(f"x:{nm}") for nm in cfg.x_names], axis=2)
    z = np.stack([grid(f"z:{nm}") for nm in cfg.z_names], axis=2)
    xbar = np.column_stack([grid(f"xbar:{k}")[0] for k in range(len(cfg.beta_xbar))]) \
        if cfg.beta_xbar else np.zeros((J, 0))
    demo = np.column_stack([grid(f"demo:{k}")[:, 0] for k in range(cfg.n_demographics)]) \
        if cfg.n_demographics else np.zeros((n, 0))
    market = Market(cfg, grid("xi")[0].copy(), xbar, x, z, grid("eta"), grid("eps"),
                    grid("nu")[:, 0].copy(), demo)
    slog = None
    if (src / "search_log.csv").exists():
        slog = simulate_search(market)
        sl = pd.read_csv(src / "search_log.csv")
        stored = _rank_matrix([], n, J)
        stored[sl["consumer"].to_numpy(), sl["product"].to_numpy()] = sl["step"].to_numpy()
        if not np.array_equal(stored, slog.search_rank()):
            raise ValueError("search_log.csv disagrees with the index policy on the stored market")
    return market, slog
