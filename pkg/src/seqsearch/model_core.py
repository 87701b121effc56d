"""Match-value distributions, the marginal-benefit function and its inverse.

The marginal benefit of searching at net threshold ``w`` is

    G(w) = int_w^inf (eps - w) f(eps) d eps = int_w^inf S(eps) d eps,

with ``S`` the survival function. ``G`` is strictly decreasing wherever the
density is positive, so ``G^{-1}`` maps a search cost to the gap ``r - delta``
between reservation and prior utility.

All three supported families are location-scale families, which gives
``G_{mu,s}(w) = s * G_0((w - mu) / s)`` and lets one cached standard table
serve every parameterisation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import numpy as np
from scipy import integrate, interpolate, optimize, special, stats

FAMILIES = ("normal", "type1ev", "logistic")
EULER_GAMMA = 0.57721566490153286061

# Truncation of the quadrature range, in scale units above max(w, loc).
# Gaussian tails are negligible past 12 sd; exponential tails need ~40 scales
# for the remainder to drop below 1e-15.
_QUAD_TAIL = {"normal": 12.0, "type1ev": 40.0, "logistic": 40.0}

# Default invertibility window for w = r - delta, in scale units around loc.
DEFAULT_W_BOUNDS = (-50.0, 40.0)

TABLE_FORMAT_VERSION = 1


class CostOutOfRange(ValueError):
    """A search cost lies outside the image of G on the configured window."""

    def __init__(self, cost, lo, hi):
        self.cost = cost
        self.lo = lo
        self.hi = hi
        super().__init__(
            f"cost {cost!r} outside the attainable range ({lo:.6g}, {hi:.6g})"
        )


@dataclass(frozen=True)
class MatchValueDist:
    """A match-value distribution ``F_j``.

    ``loc``/``scale`` are the mean/sd for the normal family and the usual
    location/scale for the (max-)Gumbel and logistic families.
    """

    family: str
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not (math.isfinite(self.loc) and math.isfinite(self.scale)):
            raise ValueError("distribution parameters must be finite")
        if self.scale <= 0:
            raise ValueError(f"scale must be strictly positive, got {self.scale}")

    # constructors -----------------------------------------------------------
    @classmethod
    def normal(cls, mean=0.0, sd=1.0):
        return cls("normal", float(mean), float(sd))

    @classmethod
    def normal_var(cls, mean=0.0, var=1.0):
        """Normal with the second parameter read as a variance, ``N(mean, var)``."""
        return cls("normal", float(mean), math.sqrt(var))

    @classmethod
    def type1ev(cls, loc=0.0, scale=1.0):
        return cls("type1ev", float(loc), float(scale))

    @classmethod
    def logistic(cls, loc=0.0, scale=1.0):
        return cls("logistic", float(loc), float(scale))

    # scipy frozen distribution ------------------------------------------------
    @property
    def _rv(self):
        if self.family == "normal":
            return stats.norm(self.loc, self.scale)
        if self.family == "type1ev":
            return stats.gumbel_r(self.loc, self.scale)
        return stats.logistic(self.loc, self.scale)

    def pdf(self, x):
        return self._rv.pdf(x)

    def cdf(self, x):
        return self._rv.cdf(x)

    def sf(self, x):
        return self._rv.sf(x)

    def ppf(self, q):
        return self._rv.ppf(q)

    def mean(self) -> float:
        return float(self._rv.mean())

    def standardized(self) -> "MatchValueDist":
        return MatchValueDist(self.family, 0.0, 1.0)

    def scaled(self, factor: float) -> "MatchValueDist":
        """Distribution of ``eps * factor`` for ``factor > 0``."""
        return MatchValueDist(self.family, self.loc * factor, self.scale * factor)

    # serialisation ----------------------------------------------------------
    def to_json(self) -> dict:
        if self.family == "normal":
            params = {"mean": self.loc, "sd": self.scale}
        else:
            params = {"location": self.loc, "scale": self.scale}
        return {"family": self.family, "params": params}

    @classmethod
    def from_json(cls, obj: dict) -> "MatchValueDist":
        family = obj["family"]
        params = obj.get("params", {})
        if family == "normal":
            if "var" in params:
                return cls.normal_var(params.get("mean", 0.0), params["var"])
            return cls.normal(params.get("mean", 0.0), params.get("sd", 1.0))
        return cls(family, float(params.get("location", 0.0)), float(params.get("scale", 1.0)))

    @property
    def label(self) -> str:
        if self.family == "normal":
            return f"N({self.loc:g},{self.scale ** 2:g})"
        return f"{self.family}({self.loc:g},{self.scale:g})"


def normalize_by_price(dist: MatchValueDist, price_coef: float) -> MatchValueDist:
    """Rescale ``dist`` to utility units where the price coefficient is -1.

    If ``u = delta + eps`` is divided by ``|price_coef|`` the match value becomes
    ``eps / |price_coef|``; for ``N(0, 1)`` this is ``N(0, 1 / price_coef**2)``.
    """
    if price_coef == 0 or not math.isfinite(price_coef):
        raise ValueError("price coefficient must be finite and non-zero")
    return dist.scaled(1.0 / abs(price_coef))


# ---------------------------------------------------------------------------
# marginal benefit
# ---------------------------------------------------------------------------

def _ein(x):
    """Entire exponential integral Ein(x) = int_0^x (1 - e^-t)/t dt, x >= 0."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 1.0
    xs = x[small]
    # alternating series, 25 terms are exact to double precision for x < 1
    term = xs.copy()
    acc = xs.copy()
    for k in range(2, 26):
        term = -term * xs / k
        acc = acc + term / k
    out[small] = acc
    xl = x[~small]
    out[~small] = special.exp1(xl) + np.log(xl) + EULER_GAMMA
    return out


def _g_standard_closed(t, family):
    """Closed-form G for the standardized family, vectorised over ``t``."""
    t = np.asarray(t, dtype=float)
    if family == "normal":
        return np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi) - t * special.ndtr(-t)
    if family == "logistic":
        return np.logaddexp(0.0, -t)
    # Gumbel (max): int_t^inf 1 - exp(-e^-u) du = Ein(e^-t)
    return _ein(np.exp(-t))


def _check_w(w):
    arr = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("marginal_benefit requires finite w")
    return arr


def _scalar_pdf(dist: MatchValueDist):
    """Plain-float density, avoiding frozen-scipy overhead inside quad."""
    mu, s = dist.loc, dist.scale
    if dist.family == "normal":
        c = 1.0 / (s * math.sqrt(2.0 * math.pi))
        return lambda e: c * math.exp(-0.5 * ((e - mu) / s) ** 2)
    if dist.family == "logistic":
        def f(e):
            t = math.exp(-abs(e - mu) / s)
            return t / (s * (1.0 + t) ** 2)
        return f
    def f(e):
        t = (e - mu) / s
        return math.exp(-t - math.exp(-t)) / s if t > -700 else 0.0
    return f


def marginal_benefit_quad(w: float, dist: MatchValueDist) -> float:
    """G(w) by adaptive quadrature of ``(eps - w) f(eps)`` over ``[w, U]``."""
    w = float(_check_w(w))
    upper = max(w, dist.loc) + _QUAD_TAIL[dist.family] * dist.scale
    if upper <= w:
        return 0.0
    pdf = _scalar_pdf(dist)

    def integrand(e):
        return (e - w) * pdf(e)

    pts = [dist.loc] if w < dist.loc < upper else None
    val, _ = integrate.quad(integrand, w, upper, points=pts, epsabs=1e-13, epsrel=1e-13, limit=400)
    return max(val, 0.0)


def marginal_benefit(w, dist: MatchValueDist, method: str = "closed"):
    """Marginal benefit of one more search at net threshold ``w``.

    Parameters
    ----------
    w : float or array_like
        Threshold ``r - delta`` in utility units.
    dist : MatchValueDist
    method : {"closed", "quad"}
        ``"closed"`` uses the analytic expression of each family,
        ``"quad"`` integrates the definition numerically (scalar loop).
    """
    arr = _check_w(w)
    if method == "quad":
        vals = np.array([marginal_benefit_quad(v, dist) for v in arr.ravel()]).reshape(arr.shape)
    elif method == "closed":
        vals = dist.scale * _g_standard_closed((arr - dist.loc) / dist.scale, dist.family)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(vals) if vals.ndim == 0 else vals


def cost_image(dist: MatchValueDist, w_bounds=DEFAULT_W_BOUNDS) -> tuple[float, float]:
    """Open interval of invertible costs ``(G(w_hi), G(w_lo))``; bounds in scale units."""
    lo_w = dist.loc + w_bounds[0] * dist.scale
    hi_w = dist.loc + w_bounds[1] * dist.scale
    return marginal_benefit(hi_w, dist), marginal_benefit(lo_w, dist)


def inverse_marginal_benefit(c: float, dist: MatchValueDist, w_bounds=DEFAULT_W_BOUNDS,
                             method: str = "closed") -> float:
    """Solve ``G(w) = c`` for ``w`` by bracketed Brent iteration.

    The bracket starts at ``loc +/- 2 scale`` and is doubled outwards until it
    holds the root or reaches ``w_bounds`` (scale units). Costs outside the
    image of G on that window raise :class:`CostOutOfRange`.
    """
    c = float(c)
    if not math.isfinite(c) or c <= 0:
        raise CostOutOfRange(c, *cost_image(dist, w_bounds))
    w_min = dist.loc + w_bounds[0] * dist.scale
    w_max = dist.loc + w_bounds[1] * dist.scale

    def f(v):
        return marginal_benefit(v, dist, method) - c

    lo = dist.loc - 2.0 * dist.scale
    hi = dist.loc + 2.0 * dist.scale
    width = 2.0 * dist.scale
    while f(lo) < 0:
        if lo <= w_min:
            raise CostOutOfRange(c, *cost_image(dist, w_bounds))
        width *= 2.0
        lo = max(dist.loc - width, w_min)
    while f(hi) > 0:
        if hi >= w_max:
            raise CostOutOfRange(c, *cost_image(dist, w_bounds))
        width *= 2.0
        hi = min(dist.loc + width, w_max)
    return optimize.brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


@dataclass(frozen=True)
class ReservationInputs:
    cost: float
    prior_utility: float
    dist: MatchValueDist


def reservation_utility(inputs: ReservationInputs) -> float:
    """``r = G^{-1}(c) + delta``."""
    return inverse_marginal_benefit(inputs.cost, inputs.dist) + inputs.prior_utility


# ---------------------------------------------------------------------------
# tabulated inverse
# ---------------------------------------------------------------------------

@dataclass
class GInverseTable:
    """Cubic Hermite table of ``w = G^{-1}(c)`` on a log-cost grid.

    Node slopes are exact: ``dw/dlog c = -c / S(w)``, so the interpolant is
    fourth-order accurate and, on any reasonable grid, monotone.
    """

    dist: MatchValueDist
    log_cost: np.ndarray
    w: np.ndarray
    slope: np.ndarray
    _spline: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.log_cost) < 16:
            raise ValueError("GInverseTable needs at least 16 grid points")
        if not np.all(np.diff(self.w) < 0):
            raise ValueError("tabulated G^{-1} is not strictly decreasing")
        self._spline = interpolate.CubicHermiteSpline(self.log_cost, self.w, self.slope)

    @property
    def cost_range(self) -> tuple[float, float]:
        return float(np.exp(self.log_cost[0])), float(np.exp(self.log_cost[-1]))

    @property
    def w_range(self) -> tuple[float, float]:
        return float(self.w[-1]), float(self.w[0])

    def __call__(self, c, extrapolate_high: bool = False):
        """Evaluate at cost(s) ``c``.

        With ``extrapolate_high`` costs above the grid use the exact large-cost
        branch ``G^{-1}(c) = E[eps] - c`` (valid once ``G(w) = E[eps] - w`` to
        machine precision, which holds at the default grid top).
        """
        c = np.asarray(c, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            lc = np.log(c)
        lo, hi = self.log_cost[0], self.log_cost[-1]
        bad_low = ~(lc >= lo)
        above = lc > hi
        bad = bad_low if extrapolate_high else (bad_low | above)
        if np.any(bad):
            raise CostOutOfRange(float(c[bad].ravel()[0]), *self.cost_range)
        out = self._spline(np.minimum(lc, hi))
        if extrapolate_high and np.any(above):
            out = np.where(above, self.dist.mean() - c, out)
        return float(out) if out.ndim == 0 else out

    def derivative(self, c):
        """``d G^{-1} / dc`` at ``c`` (inside the grid, or the linear branch above it)."""
        c = np.asarray(c, dtype=float)
        lc = np.log(c)
        hi = self.log_cost[-1]
        d = self._spline.derivative()(np.minimum(lc, hi)) / c
        return np.where(lc > hi, -1.0, d)

    # serialisation ----------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "format_version": TABLE_FORMAT_VERSION,
            "dist": self.dist.to_json(),
            "log_cost": self.log_cost.tolist(),
            "w": self.w.tolist(),
            "slope": self.slope.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GInverseTable":
        if obj.get("format_version") != TABLE_FORMAT_VERSION:
            raise ValueError(f"unsupported table format version {obj.get('format_version')!r}")
        return cls(MatchValueDist.from_json(obj["dist"]), np.array(obj["log_cost"]),
                   np.array(obj["w"]), np.array(obj["slope"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "GInverseTable":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _ginv_newton(c, dist: MatchValueDist, max_iter: int = 500) -> np.ndarray:
    """Vectorised Newton solve of G(w) = c.

    G is convex and decreasing with G' = -S, and G(w) >= E[eps] - w, so the
    iteration started at ``E[eps] - c`` approaches the root monotonically from
    the left. Nodes that fail to settle fall back to Brent.
    """
    w = dist.mean() - c
    done = np.zeros(c.shape, dtype=bool)
    for _ in range(max_iter):
        step = (marginal_benefit(w, dist) - c) / dist.sf(w)
        step = np.where(done | ~np.isfinite(step), 0.0, step)
        w = w + step
        done |= np.abs(step) <= 1e-15 * (1.0 + np.abs(w))
        if done.all():
            break
    for k in np.flatnonzero(~done):
        w[k] = inverse_marginal_benefit(float(c[k]), dist)
    return w


def build_ginverse_table(dist: MatchValueDist, cost_range: tuple[float, float],
                         n_grid: int = 256, w_bounds=DEFAULT_W_BOUNDS) -> GInverseTable:
    if n_grid < 16:
        raise ValueError(f"n_grid must be >= 16, got {n_grid}")
    c_lo, c_hi = cost_range
    g_lo, g_hi = cost_image(dist, w_bounds)
    if not (g_lo < c_lo < c_hi < g_hi):
        raise CostOutOfRange(c_lo if c_lo <= g_lo else c_hi, g_lo, g_hi)
    lc = np.linspace(math.log(c_lo), math.log(c_hi), n_grid)
    w = _ginv_newton(np.exp(lc), dist)
    slope = -np.exp(lc) / dist.sf(w)
    return GInverseTable(dist, lc, w, slope)


# The standardized tables cover costs [1e-12, 40] in scale units; at the top
# w is ~40 scales below loc where G(w) = E[eps] - w to machine precision.
_STD_COST_RANGE = (1e-12, 40.0)


@lru_cache(maxsize=None)
def standard_table(family: str) -> GInverseTable:
    return build_ginverse_table(MatchValueDist(family), _STD_COST_RANGE, n_grid=2048)


def ginv(c, dist: MatchValueDist, extrapolate_high: bool = False):
    """Vectorised ``G^{-1}`` via the cached standardized table.

    Uses ``G^{-1}_{mu,s}(c) = mu + s G_0^{-1}(c / s)``. Accuracy is ~1e-9
    against direct root-finding.
    """
    table = standard_table(dist.family)
    return dist.loc + dist.scale * table(np.asarray(c, dtype=float) / dist.scale,
                                         extrapolate_high=extrapolate_high)


def ginv_derivative(c, dist: MatchValueDist):
    """``d G^{-1}/dc`` via the standardized table (scale cancels)."""
    table = standard_table(dist.family)
    return table.derivative(np.asarray(c, dtype=float) / dist.scale)


def ginv_curve(dist: MatchValueDist, costs: Iterable[float]) -> np.ndarray:
    return np.asarray(ginv(np.asarray(list(costs), dtype=float), dist))
