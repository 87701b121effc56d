"""Brute-force reference implementations used as test oracles.

Every function here is a literal double loop over ordered consumer pairs
``a != a~`` with no vectorization, written from the objective definitions
and independent of the package internals. The ordered sum counts every
unordered pair twice, so it is divided by ``2 * C(n, 2)``.
"""
from __future__ import annotations

import math

import numpy as np

from seqsearch.domain import PairOutcomeTable


def gauss(v):
    return math.exp(-0.5 * v * v) / math.sqrt(2 * math.pi)


def _dot(u, v):
    return sum(float(p) * float(q) for p, q in zip(u, v))


def _eq(u, v):
    return all(float(p) == float(q) for p, q in zip(u, v))


def _dist(*pairs):
    return math.sqrt(sum((float(p) - float(q)) ** 2 for u, v in pairs for p, q in zip(u, v)))


def _norm(n):
    return 2 * math.comb(n, 2)


def random_table(rng, n, q_x=2, q_z=2, levels=2, pair=(1, 2), demo=0) -> PairOutcomeTable:
    """Table with small-integer covariates so that exact matches occur."""
    xi = rng.integers(0, levels, (n, q_x)).astype(float)
    xj = rng.integers(0, levels, (n, q_x)).astype(float)
    zi = rng.integers(0, levels, (n, q_z)).astype(float)
    zj = rng.integers(0, levels, (n, q_z)).astype(float)
    S = rng.integers(0, 2, n)
    d = rng.integers(-1, 2, (n, demo)).astype(float) if demo else None
    return PairOutcomeTable(pair, np.arange(n), S, xi, xj, zi, zj,
                            demo=d, demo_names=tuple(f"d{k}" for k in range(demo)))


def ideal(table, b, m):
    n = table.n_rows
    tot = 0.0
    for a in range(n):
        for c in range(n):
            if a == c:
                continue
            xa, xc = table.x_i[a] - table.x_j[a], table.x_i[c] - table.x_j[c]
            sa, sc = table.S[a], table.S[c]
            if _eq(table.z_i[a], table.z_i[c]) and _eq(table.z_j[a], table.z_j[c]):
                tot += (_dot(xa, b) > _dot(xc, b)) * (sa > sc) + (_dot(xa, b) < _dot(xc, b)) * (sa < sc)
            if _eq(table.z_i[a], table.z_i[c]) and _eq(xa, xc):
                ja, jc = _dot(table.z_j[a], m), _dot(table.z_j[c], m)
                tot += (ja > jc) * (sa > sc) + (ja < jc) * (sa < sc)
            if _eq(table.z_j[a], table.z_j[c]) and _eq(xa, xc):
                ia, ic = _dot(table.z_i[a], m), _dot(table.z_i[c], m)
                tot += (ia < ic) * (sa > sc) + (ia > ic) * (sa < sc)
    return tot / _norm(n)


def smoothed(table, b, m, sigma, kernel=gauss):
    n = table.n_rows
    tot = 0.0
    for a in range(n):
        for c in range(n):
            if a == c:
                continue
            xa, xc = table.x_i[a] - table.x_j[a], table.x_i[c] - table.x_j[c]
            sa, sc = table.S[a], table.S[c]
            k1 = kernel(_dist((table.z_i[a], table.z_i[c]), (table.z_j[a], table.z_j[c])) / sigma)
            k2 = kernel(_dist((table.z_i[a], table.z_i[c]), (xa, xc)) / sigma)
            k3 = kernel(_dist((table.z_j[a], table.z_j[c]), (xa, xc)) / sigma)
            tot += k1 * ((_dot(xa, b) > _dot(xc, b)) * (sa > sc) + (_dot(xa, b) < _dot(xc, b)) * (sa < sc))
            ja, jc = _dot(table.z_j[a], m), _dot(table.z_j[c], m)
            tot += k2 * ((ja > jc) * (sa > sc) + (ja < jc) * (sa < sc))
            ia, ic = _dot(table.z_i[a], m), _dot(table.z_i[c], m)
            tot += k3 * ((ia < ic) * (sa > sc) + (ia > ic) * (sa < sc))
    return tot / _norm(n)


def rank(h, S):
    n = len(h)
    tot = 0
    for a in range(n):
        for c in range(n):
            if a != c:
                tot += (h[a] > h[c]) * (S[a] > S[c]) + (h[a] < h[c]) * (S[a] < S[c])
    return tot / _norm(n)


def poly(a, t):
    return sum(float(c) * t ** k for k, c in enumerate(a))


def gtilde_index(table, b, m, gi, gj, offset=0.0):
    return [gi(math.exp(offset + _dot(table.z_i[a], m))) - gj(math.exp(offset + _dot(table.z_j[a], m)))
            + _dot(table.x_i[a] - table.x_j[a], b) for a in range(table.n_rows)]


def gq_index(table, b, m, a_i, a_j, center=0.0, scale=1.0, offset=0.0):
    def phi(coef, zrow, mm):
        return poly(coef, ((offset + _dot(zrow, mm)) - center) / scale)
    return [phi(a_i, table.z_i[a], m) - phi(a_j, table.z_j[a], m) + _dot(table.x_i[a] - table.x_j[a], b)
            for a in range(table.n_rows)]


def zq_index(table, b, b_z, m, a_i, a_j, zu, **kw):
    base = gq_index(table, b, m, a_i, a_j, **kw)
    return [base[a] + _dot([table.z_i[a][k] - table.z_j[a][k] for k in zu], b_z) for a in range(table.n_rows)]


def dq_index(table, b_bar, b_d, m_bar, m_d, a_i, a_j, center=0.0, scale=1.0, offset=0.0):
    out = []
    for a in range(table.n_rows):
        d = table.demo[a]
        ba = [b_bar[k] + sum(d[l] * b_d[l][k] for l in range(len(d))) for k in range(len(b_bar))]
        ma = [m_bar[k] + sum(d[l] * m_d[l][k] for l in range(len(d))) for k in range(len(m_bar))]
        ti = ((offset + _dot(table.z_i[a], ma)) - center) / scale
        tj = ((offset + _dot(table.z_j[a], ma)) - center) / scale
        out.append(poly(a_i, ti) - poly(a_j, tj) + _dot(table.x_i[a] - table.x_j[a], ba))
    return out


def xq(consumers, b_xbar):
    """``consumers`` maps id -> list of (S, h, xbar_diff, matched) tuples."""
    tot = 0.0
    for rows in consumers.values():
        if not rows:
            continue
        acc = 0.0
        for S, h, xd, matched in rows:
            v = h + _dot(xd, b_xbar)
            acc += matched * (S * (v > 0) + (1 - S) * (v < 0))
        tot += acc / len(rows)
    return tot


def _sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v)) if v >= 0 else math.exp(v) / (1.0 + math.exp(v))


def search_probability(x, z, seq, purchase, avail, g, beta, eps, eta, lam, choice=True, hard=False):
    """Simulated probability of one consumer's search path.

    ``g[j]`` is ``G^{-1}`` of good ``j``'s cost, ``eps``/``eta`` are
    ``(R, J)`` draws. With ``hard`` every smoothed factor becomes an indicator.
    """
    J = len(g)
    f = (lambda v: float(v > 0)) if hard else (lambda v: _sigmoid(v / lam))
    tot = 0.0
    for d in range(eps.shape[0]):
        r = {j: g[j] + _dot(x[j], beta) + eta[d][j] for j in range(1, J)}
        u = {0: 0.0} | {j: _dot(x[j], beta) + eta[d][j] + eps[d][j] for j in range(1, J)}
        uns = [j for j in range(1, J) if avail[j] and j not in seq]
        p = 1.0
        for k, j in enumerate(seq):
            p *= f(r[j] - max([u[0]] + [u[s] for s in seq[:k]]))
            if k + 1 < len(seq):
                p *= f(r[j] - r[seq[k + 1]])
        if uns:
            top = max(r[j] for j in uns)
            if seq:
                p *= f(r[seq[-1]] - top)
            p *= f(max([u[0]] + [u[s] for s in seq]) - top)
        if choice:
            others = ([0] if purchase != 0 else []) + [s for s in seq if s != purchase]
            if others:
                p *= f(u[purchase] - max(u[o] for o in others))
        tot += p
    return tot / eps.shape[0]
