"""Slow, literal reference implementations used to check the fast code paths.

Nothing here imports the implementation under test beyond plain data types.
"""
import datetime as dt
import itertools
import math
from fractions import Fraction

import numpy as np


# --- features ---------------------------------------------------------------

def _rate(rates, ts):
    day = dt.datetime.fromtimestamp(ts, tz=dt.timezone.utc).date()
    chosen = rates.rates[0]
    for d, r in zip(rates.dates, rates.rates):
        if d <= day:
            chosen = r
    return Fraction(chosen)


def _role(t, a):
    ins = [io.address for io in t.inputs]
    outs = [io.address for io in t.outputs]
    if t.is_coinbase and a in outs:
        return "coinbase"
    if a in ins and a in outs:
        return "payback"
    if a in ins:
        return "spent"
    return "received"


def _mean(xs):
    return sum(xs, Fraction(0)) / len(xs) if xs else Fraction(0)


def _std(xs):
    if not xs:
        return 0.0
    mu = _mean(xs)
    return math.sqrt(float(sum((x - mu) ** 2 for x in xs) / len(xs)))


def oracle_moments(xs):
    """Two-pass central moments with exact rationals."""
    xs = [Fraction(x) for x in xs]
    if not xs:
        return [0.0] * 4
    n = len(xs)
    mu = sum(xs) / n
    c2 = sum((x - mu) ** 2 for x in xs) / n
    c3 = sum((x - mu) ** 3 for x in xs) / n
    c4 = sum((x - mu) ** 4 for x in xs) / n
    if c2 == 0:
        return [float(mu), 0.0, 0.0, 0.0]
    var = float(c2)
    return [float(mu), var, float(c3) / var**1.5, float(c4) / var**2]


def _bucket(amount):
    for i in range(-3, 7):
        if Fraction(10) ** i <= amount < Fraction(10) ** (i + 1):
            return i
    return None


def oracle_features(history, rates):
    """Every feature computed by its own pass over the history."""
    a = history.address
    txs = sorted(history.txs, key=lambda t: (t.timestamp, t.txid))
    roles = [_role(t, a) for t in txs]
    own_in = [sum((Fraction(io.value_btc) for io in t.inputs if io.address == a), Fraction(0)) for t in txs]
    own_out = [sum((Fraction(io.value_btc) for io in t.outputs if io.address == a), Fraction(0)) for t in txs]
    rate = [_rate(rates, t.timestamp) for t in txs]
    n = len(txs)

    def count(role):
        return sum(1 for r in roles if r == role)

    def idx(role):
        return [i for i, r in enumerate(roles) if r == role]

    n_sp, n_rc, n_cb, n_pb = count("spent"), count("received"), count("coinbase"), count("payback")
    lifetime = Fraction(txs[-1].timestamp - txs[0].timestamp, 86400)
    spent_usd = [own_in[i] * rate[i] for i in idx("spent")]
    recv_usd = [own_out[i] * rate[i] for i in idx("received")]
    cb_usd = [own_out[i] * rate[i] for i in idx("coinbase")]
    pb_usd = [abs(own_out[i] - own_in[i]) * rate[i] for i in idx("payback")]
    overall_usd = [(own_in[i] + own_out[i]) * rate[i] for i in range(n)]
    intervals = [Fraction(txs[i + 1].timestamp - txs[i].timestamp, 86400) for i in range(n - 1)]
    balances = [sum(own_out[: i + 1]) - sum(own_in[: i + 1]) for i in range(n)]
    balances_usd = [balances[i] * rate[i] for i in range(n)]
    n_inputs = [Fraction(len(txs[i].inputs)) for i in idx("spent")]
    n_outputs = [Fraction(len(txs[i].outputs)) for i in idx("spent")]

    v = [float(n / max(lifetime, 1)), n_rc / n, n_cb / n]
    for amounts, total in ((spent_usd, n_sp), (recv_usd, n_rc)):
        for i in range(-3, 7):
            hits = sum(1 for x in amounts if x > 0 and _bucket(x) == i)
            v.append(hits / max(total, 1))
    v += [n_pb / n, float(_mean(n_inputs)), float(_mean(n_outputs))]
    v += [
        float(lifetime),
        float(sum(own_in)),
        float(sum(own_out)),
        float(sum(own_in[i] * rate[i] for i in range(n))),
        float(sum(own_out[i] * rate[i] for i in range(n))),
        n, n_sp, n_rc, n_cb, n_pb,
        float(_mean(balances)), _std(balances),
        float(_mean(balances_usd)), _std(balances_usd),
        _std(n_inputs), _std(n_outputs),
    ]
    for xs in (overall_usd, spent_usd, recv_usd, cb_usd, pb_usd, intervals):
        v += oracle_moments(xs)
    v += [
        sum(1 for t in txs if len(t.inputs) >= 2),
        sum(1 for t in txs if len(t.outputs) >= 2),
        sum(1 for t in txs if len(t.inputs) >= 2 and len(t.outputs) >= 2),
    ]
    return np.array(v, dtype=float)


# --- correlation ------------------------------------------------------------

def oracle_ranks(x):
    """Average 1-based ranks by counting, O(n^2)."""
    x = list(x)
    out = []
    for xi in x:
        below = sum(1 for y in x if y < xi)
        equal = sum(1 for y in x if y == xi)
        out.append(below + (equal + 1) / 2)
    return out


def oracle_spearman(x, y):
    rx, ry = oracle_ranks(x), oracle_ranks(y)
    n = len(rx)
    mx, my = math.fsum(rx) / n, math.fsum(ry) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(rx, ry))
    sxx = math.fsum((a - mx) ** 2 for a in rx)
    syy = math.fsum((b - my) ** 2 for b in ry)
    if sxx == 0 or syy == 0:
        return 0.0
    return sxy / math.sqrt(sxx * syy)


# --- qubo -------------------------------------------------------------------

def qubo_objective(rho_o, rho, alpha, x):
    """Objective evaluated straight from the correlations, not from Q."""
    n = len(x)
    rel = sum(x[j] * abs(rho_o[j]) for j in range(n))
    red = sum(x[j] * x[k] * abs(rho[j][k]) for j in range(n) for k in range(n) if j != k)
    return -alpha * rel + (1 - alpha) * red


def brute_force_min(q):
    n = q.shape[0]
    best = None
    for bits in itertools.product((0, 1), repeat=n):
        x = np.array(bits, dtype=float)
        e = float(x @ q @ x)
        if best is None or e < best[0]:
            best = (e, bits)
    return best


# --- metrics ----------------------------------------------------------------

def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def random_correlations(rng, n):
    """Symmetric |rho| in [0, 1] with unit diagonal, plus an outcome vector."""
    upper = np.triu(rng.uniform(0, 1, (n, n)), 1)
    pairs = upper + upper.T
    np.fill_diagonal(pairs, 1.0)
    return rng.uniform(0, 1, n), pairs
