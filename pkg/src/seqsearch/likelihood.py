"""Simulated maximum likelihood with a logit-smoothed accept-reject simulator.

The econometrician's model ignores the quality shock ``xi``::

    r_aj = G_F^{-1}(exp(gamma0 + z_aj' gamma)) + x_aj' beta + eta_aj
    u_aj = x_aj' beta + eta_aj + eps_aj,        u_a0 = 0

For consumer ``a`` searching ``s_1, ..., s_K``, leaving ``U`` unsearched and
buying ``p``, each draw of ``(eps, eta)`` is scored by the product of
``Lambda(v / lam)`` over the Weitzman conditions ``v > 0``:

* selection:     ``r_{s_k} - r_{s_{k+1}}`` and ``r_{s_K} - max_U r``
* continuation:  ``r_{s_k} - max(u_0, u_{s_1}, ..., u_{s_{k-1}})``
* stopping:      ``max(u_0, u_{s_1..s_K}) - max_U r``
* choice:        ``u_p - max(u_0, u_s : s != p)`` (optional)
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import optimize

from .domain import EstimateReport, config_hash
from .model_core import MatchValueDist, ginv, ginv_derivative

FLOOR = 1e-12


@dataclass(frozen=True)
class LikelihoodConfig:
    """Assumed distributions, simulator settings and optimizer options."""

    match_dist: MatchValueDist = MatchValueDist.normal(0.0, 1.0)
    eta_dist: MatchValueDist = MatchValueDist.normal(0.0, 1.0)
    n_draws: int = 50
    scale: float = 1.0 / 3.0
    purchases: bool = True
    seed: int = 0
    gradient: str = "analytic"     # or "numeric"
    maxiter: int = 300
    gtol: float = 1e-5

    def __post_init__(self):
        if self.n_draws < 1:
            raise ValueError("n_draws must be >= 1")
        if not self.scale > 0:
            raise ValueError("scale must be > 0")
        if self.gradient not in ("analytic", "numeric"):
            raise ValueError("gradient must be 'analytic' or 'numeric'")
        if self.eta_dist.family != "normal":
            raise ValueError("eta must be normal")

    def to_json(self) -> dict:
        return {"match_dist": self.match_dist.to_json(), "eta_dist": self.eta_dist.to_json(),
                "n_draws": self.n_draws, "scale": self.scale, "purchases": self.purchases,
                "seed": self.seed, "gradient": self.gradient, "maxiter": self.maxiter, "gtol": self.gtol}

    @classmethod
    def from_json(cls, obj: dict) -> "LikelihoodConfig":
        kw = dict(obj)
        for k in ("match_dist", "eta_dist"):
            if k in kw:
                kw[k] = MatchValueDist.from_json(kw[k])
        return cls(**kw)


@dataclass
class SearchData:
    """Full consideration-set data for the likelihood.

    ``seq[a, :K[a]]`` are the searched goods in order (column indices into
    ``x``/``z``, which include the outside good at column 0); ``avail`` marks
    goods displayed to the consumer.
    """

    x: np.ndarray          # (n, J, q_x)
    z: np.ndarray          # (n, J, q_z)
    seq: np.ndarray        # (n, J-1) padded with -1
    K: np.ndarray          # (n,)
    purchase: np.ndarray   # (n,)  0 = outside
    avail: np.ndarray      # (n, J) bool; column 0 ignored
    x_names: tuple[str, ...] = ()
    z_names: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @classmethod
    def from_market(cls, market, slog) -> "SearchData":
        n, J = market.n_consumers, market.n_products
        steps = np.arange(J - 1)[None, :]
        seq = np.where(steps < slog.n_searched[:, None], slog.order, -1)
        avail = np.ones((n, J), dtype=bool)
        avail[:, 0] = False
        return cls(market.x, market.z, seq.astype(np.int64), slog.n_searched.astype(np.int64),
                   slog.purchase.astype(np.int64), avail, market.config.x_names, market.config.z_names)

    def take(self, idx) -> "SearchData":
        idx = np.asarray(idx)
        return SearchData(self.x[idx], self.z[idx], self.seq[idx], self.K[idx], self.purchase[idx],
                          self.avail[idx], self.x_names, self.z_names)


@numba.njit(cache=True)
def _sig(v):
    if v >= 0:
        e = math.exp(-v)
        return 1.0 / (1.0 + e)
    e = math.exp(v)
    return e / (1.0 + e)


@numba.njit(cache=True)
def _kernel(x, z, g, dg, beta, seq, K, purchase, avail, eps, eta, lam, use_choice, want_grad):
    """Per-consumer simulated probabilities and d log p / d theta.

    theta = (beta, gamma, gamma0); ``g``/``dg`` hold ``G^{-1}(c)`` and
    ``c * dG^{-1}/dc`` at the current parameters.
    """
    n, J, qx = x.shape
    qz = z.shape[2]
    R = eps.shape[1]
    P = qx + qz + 1
    prob = np.zeros(n)
    grad = np.zeros((n, P))
    xb = np.zeros(J)
    dr = np.zeros((J, P))
    du = np.zeros((J, P))
    acc = np.zeros(P)
    glog = np.zeros(P)
    for a in range(n):
        for j in range(1, J):
            s = 0.0
            for k in range(qx):
                s += x[a, j, k] * beta[k]
            xb[j] = s
            if want_grad:
                for k in range(qx):
                    dr[j, k] = x[a, j, k]
                    du[j, k] = x[a, j, k]
                for k in range(qz):
                    dr[j, qx + k] = dg[a, j] * z[a, j, k]
                    du[j, qx + k] = 0.0
                dr[j, qx + qz] = dg[a, j]
                du[j, qx + qz] = 0.0
        Ka = K[a]
        insearch = np.zeros(J, dtype=np.bool_)
        for k in range(Ka):
            insearch[seq[a, k]] = True
        pa = 0.0
        for k in range(P):
            acc[k] = 0.0
        for rr in range(R):
            logp = 0.0
            for k in range(P):
                glog[k] = 0.0
            # max unsearched reservation utility
            maxU = -np.inf
            jU = -1
            for j in range(1, J):
                if avail[a, j] and not insearch[j]:
                    rj = g[a, j] + xb[j] + eta[a, rr, j]
                    if rj > maxU:
                        maxU = rj
                        jU = j
            # walk the search sequence
            best = 0.0
            jb = 0
            prev_r = 0.0
            jprev = -1
            for k in range(Ka):
                j = seq[a, k]
                rj = g[a, j] + xb[j] + eta[a, rr, j]
                # continuation: r_j > best so far
                v = (rj - best) / lam
                sg = _sig(v)
                logp += math.log(max(sg, 1e-300))
                if want_grad:
                    w = (1.0 - sg) / lam
                    for q in range(P):
                        glog[q] += w * (dr[j, q] - (du[jb, q] if jb > 0 else 0.0))
                # selection chain
                if k > 0:
                    v = (prev_r - rj) / lam
                    sg = _sig(v)
                    logp += math.log(max(sg, 1e-300))
                    if want_grad:
                        w = (1.0 - sg) / lam
                        for q in range(P):
                            glog[q] += w * (dr[jprev, q] - dr[j, q])
                prev_r = rj
                jprev = j
                uj = xb[j] + eta[a, rr, j] + eps[a, rr, j]
                if uj > best:
                    best = uj
                    jb = j
            if jU >= 0:
                if Ka > 0:
                    v = (prev_r - maxU) / lam
                    sg = _sig(v)
                    logp += math.log(max(sg, 1e-300))
                    if want_grad:
                        w = (1.0 - sg) / lam
                        for q in range(P):
                            glog[q] += w * (dr[jprev, q] - dr[jU, q])
                # stopping
                v = (best - maxU) / lam
                sg = _sig(v)
                logp += math.log(max(sg, 1e-300))
                if want_grad:
                    w = (1.0 - sg) / lam
                    for q in range(P):
                        glog[q] += w * ((du[jb, q] if jb > 0 else 0.0) - dr[jU, q])
            if use_choice:
                p = purchase[a]
                up = 0.0
                if p > 0:
                    up = xb[p] + eta[a, rr, p] + eps[a, rr, p]
                other = -np.inf
                jo = -1
                if p > 0:
                    other = 0.0
                    jo = 0
                for k in range(Ka):
                    j = seq[a, k]
                    if j != p:
                        uj = xb[j] + eta[a, rr, j] + eps[a, rr, j]
                        if uj > other:
                            other = uj
                            jo = j
                if jo >= 0:
                    v = (up - other) / lam
                    sg = _sig(v)
                    logp += math.log(max(sg, 1e-300))
                    if want_grad:
                        w = (1.0 - sg) / lam
                        for q in range(P):
                            glog[q] += w * ((du[p, q] if p > 0 else 0.0) - (du[jo, q] if jo > 0 else 0.0))
            pr = math.exp(logp)
            pa += pr
            if want_grad:
                for q in range(P):
                    acc[q] += pr * glog[q]
        prob[a] = pa / R
        if want_grad and pa > 0:
            for q in range(P):
                grad[a, q] = acc[q] / pa
    return prob, grad


class SimulatedLikelihood:
    """Log-likelihood with draws fixed at construction (common random numbers)."""

    def __init__(self, data: SearchData, config: LikelihoodConfig):
        self.data = data
        self.config = config
        n, J = data.x.shape[:2]
        rng = np.random.default_rng(config.seed)
        e0 = rng.standard_normal((n, config.n_draws, J))
        h0 = rng.standard_normal((n, config.n_draws, J))
        md = config.match_dist
        if md.family == "normal":
            self.eps = md.loc + md.scale * e0
        else:
            from scipy.special import ndtr
            self.eps = md.ppf(ndtr(e0))
        self.eta = config.eta_dist.loc + config.eta_dist.scale * h0
        self.n_params = data.x.shape[2] + data.z.shape[2] + 1
        self.n_floored = 0

    def split(self, theta):
        qx, qz = self.data.x.shape[2], self.data.z.shape[2]
        return theta[:qx], theta[qx:qx + qz], theta[qx + qz]

    def _g(self, gamma, gamma0):
        d = self.data
        logc = gamma0 + np.einsum("ajk,k->aj", d.z, gamma)
        c = np.exp(np.clip(logc, -700, 700))
        dist = self.config.match_dist
        lo = 1e-12 * dist.scale
        c_in = np.maximum(c, lo)
        g = ginv(c_in, dist, extrapolate_high=True)
        dg = ginv_derivative(np.minimum(c_in, 40 * dist.scale), dist) * c_in
        dg = np.where(c_in >= 40 * dist.scale, -c_in, dg)
        dg = np.where(c > lo, dg, 0.0)
        return g, dg

    def probabilities(self, theta, want_grad=False):
        theta = np.asarray(theta, dtype=float)
        beta, gamma, gamma0 = self.split(theta)
        g, dg = self._g(gamma, gamma0)
        d = self.data
        return _kernel(d.x, d.z, g, dg, beta, d.seq, d.K, d.purchase, d.avail,
                       self.eps, self.eta, self.config.scale, self.config.purchases, want_grad)

    def loglik(self, theta) -> float:
        p, _ = self.probabilities(theta, False)
        self.n_floored = int(np.sum(~(p > FLOOR)))
        return float(np.sum(np.log(np.maximum(np.nan_to_num(p, nan=0.0), FLOOR))))

    def loglik_and_grad(self, theta):
        p, gr = self.probabilities(theta, True)
        ok = p > FLOOR
        self.n_floored = int(np.sum(~ok))
        ll = float(np.sum(np.log(np.maximum(np.nan_to_num(p, nan=0.0), FLOOR))))
        return ll, gr[ok].sum(axis=0)


def simulated_loglik(data: SearchData, theta, config: LikelihoodConfig | None = None) -> float:
    """``sum_a log max(p_a, 1e-12)`` at parameters ``theta = (beta, gamma, gamma0)``."""
    return SimulatedLikelihood(data, config or LikelihoodConfig()).loglik(theta)


def param_names(data: SearchData) -> list[str]:
    xn = data.x_names or tuple(f"x{k}" for k in range(data.x.shape[2]))
    zn = data.z_names or tuple(f"z{k}" for k in range(data.z.shape[2]))
    return [f"beta_{n}" for n in xn] + [f"gamma_{n}" for n in zn] + ["cost_intercept"]


def estimate_likelihood(data: SearchData, config: LikelihoodConfig | None = None,
                        start=None) -> EstimateReport:
    """BFGS on the simulated log-likelihood; reports raw and price-normalized estimates."""
    t0 = time.perf_counter()
    config = config or LikelihoodConfig()
    sl = SimulatedLikelihood(data, config)
    P = sl.n_params
    x0 = np.zeros(P) if start is None else np.asarray(start, dtype=float)
    if start is None:
        x0[0] = -1.0
        x0[-1] = -2.0
    scale = max(1.0, data.n)

    if config.gradient == "analytic":
        def fun(th):
            ll, gr = sl.loglik_and_grad(th)
            return -ll / scale, -gr / scale
        res = optimize.minimize(fun, x0, jac=True, method="BFGS",
                                options={"maxiter": config.maxiter, "gtol": config.gtol})
    else:
        res = optimize.minimize(lambda th: -sl.loglik(th) / scale, x0, method="BFGS",
                                options={"maxiter": config.maxiter, "gtol": config.gtol})
    theta = res.x
    names = param_names(data)
    raw = dict(zip(names, map(float, theta)))
    bp = theta[0]
    norm = dict(raw)
    if bp != 0:
        qx = data.x.shape[2]
        for k in range(qx):
            norm[names[k]] = float(theta[k] / abs(bp))
        norm["cost_intercept"] = float(theta[-1] - math.log(abs(bp)))
    ll = sl.loglik(theta)
    diag = {"n_iter": int(res.nit), "message": str(res.message), "n_floored": sl.n_floored,
            "purchases": config.purchases, "seconds": time.perf_counter() - t0}
    return EstimateReport(
        method="likelihood", coefficients=norm, objective=ll, n_obs=int(data.avail.sum()),
        raw_coefficients=raw, n_restarts=1, restart_agreement=1.0, converged=bool(res.success),
        diagnostics=diag, config_hash=config_hash(config.to_json()), seed=config.seed,
    )
