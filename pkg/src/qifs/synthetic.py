"""Synthetic labelled transaction histories with planted class signal.

Every address draws a behaviour profile (activity level, gap lengths, role
mix, amount distribution, input/output fan-in/out) from one class-independent
distribution. Addresses of the target class then get selected profile knobs
("levers") pushed in the direction that moves each planted feature. Lever
strength is raised round by round until every planted feature shows the
requested standardized mean difference on the generated sample.
"""
from __future__ import annotations

import datetime as dt
import hashlib
import itertools
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Dict, List, Tuple

import numpy as np

from .errors import InvalidConfig
from .features import FEATURE_INDEX, FEATURE_NAMES, extract_features
from .ingest import RateTable, rate_at
from .txmodel import HISTORY_CAP, AddressClass, AddressHistory, TxRecord

DEFAULT_PLANTED = ("f_spent_em1", "f_received_em2", "avg_n_inputs", "avg_n_outputs", "r_coinbase")

SPAN_START = dt.date(2013, 1, 1)
SPAN_END = dt.date(2019, 12, 31)
GENESIS_TS = 1231006505
MAX_ROUNDS = 10
GROWTH = 1.6
# fraction of the planted traits a single target address expresses
TRAIT_SHARE = 0.4

ROLES = ("coinbase", "spent", "received", "payback")
BASE_ROLE_WEIGHTS = np.array([0.01, 0.49, 0.35, 0.15])
ROLE_CONCENTRATION = 50.0
SATOSHI = Decimal("0.00000001")
MAX_BTC = 21_000_000.0
AMT_CENTER = math.log(150.0)


@dataclass(frozen=True)
class SyntheticConfig:
    addresses_per_class: int = 100
    tx_count_range: Tuple[int, int] = (10, 150)
    planted_informative_features: Tuple[str, ...] = DEFAULT_PLANTED
    class_separation: float = 1.5
    seed: int = 0
    target_class: AddressClass = AddressClass.MIXER

    def __post_init__(self):
        lo, hi = self.tx_count_range
        if self.addresses_per_class < 1:
            raise InvalidConfig("addresses_per_class must be positive")
        if not 1 <= lo <= hi <= HISTORY_CAP:
            raise InvalidConfig(f"tx_count_range must satisfy 1 <= min <= max <= {HISTORY_CAP}")
        if not self.class_separation > 0 or not math.isfinite(self.class_separation):
            raise InvalidConfig("class_separation must be a positive number")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed must be an unsigned 64-bit integer")
        unknown = [n for n in self.planted_informative_features if n not in FEATURE_INDEX]
        if unknown:
            raise InvalidConfig(f"planted features not in the canonical list: {unknown}")
        object.__setattr__(self, "planted_informative_features", tuple(self.planted_informative_features))
        object.__setattr__(self, "target_class", AddressClass(self.target_class))


# ---------------------------------------------------------------------------
# levers: which profile knob moves which feature, and in which direction


def lever_for(feature: str) -> Tuple[str, int]:
    if feature in ("lifetime",) or feature in ("m1_interval", "m2_interval"):
        return "gap", +1
    if feature == "f_tx":
        return "gap", -1
    if feature in ("m3_interval", "m4_interval"):
        return "burst", +1
    if feature == "n_tx":
        return "ntx", +1
    for role in ROLES:
        if feature in (f"r_{role}", f"n_{role}"):
            return f"w_{role}", +1
    if feature in ("n_spent",):
        return "w_spent", +1
    for prefix, role in (("f_spent_", "spent"), ("f_received_", "received")):
        if feature.startswith(prefix):
            return f"bucket_{role}_{feature[len(prefix):]}", +1
    if feature in ("btc_spent", "usd_spent"):
        return "amt_spent", +1
    if feature in ("btc_received", "usd_received"):
        return "amt_received", +1
    if feature.startswith("mean_balance") or feature.startswith("std_balance"):
        return "hoard", +1
    if feature == "avg_n_inputs":
        return "fan_in", +1
    if feature == "avg_n_outputs":
        return "fan_out", +1
    if feature == "std_n_inputs":
        return "disp_in", +1
    if feature == "std_n_outputs":
        return "disp_out", +1
    if feature[0] == "m" and feature[1] in "1234":
        group = feature[3:]
        kind = "amt" if feature[1] in "12" else "tail"
        return f"{kind}_{group}", +1
    if feature == "t_n_input":
        return "multi_in", +1
    if feature == "t_n_output":
        return "multi_out", +1
    if feature == "t_overall":
        return "multi_both", +1
    raise InvalidConfig(f"no lever for feature {feature!r}")  # pragma: no cover


assert all(lever_for(name) for name in FEATURE_NAMES)


@dataclass
class _Profile:
    n_tx: int
    start: float
    gap_mu: float
    burst_q: float
    weights: np.ndarray
    amt_mu: Dict[str, float]
    amt_sigma: float
    tail_q: Dict[str, float]
    lam_in: Dict[str, float]
    lam_out: Dict[str, float]
    disp_in: float = 0.0
    disp_out: float = 0.0
    shift_in: float = 0.0
    shift_out: float = 0.0
    bucket: Dict[str, Tuple[int, float]] = field(default_factory=dict)


def _base_profile(rng: np.random.Generator, cfg: SyntheticConfig, t0: float, t1: float) -> _Profile:
    lo, hi = cfg.tx_count_range
    shared_mu = AMT_CENTER + rng.normal(0.0, 0.6)
    return _Profile(
        n_tx=int(rng.integers(lo, hi + 1)),
        start=float(rng.uniform(t0, t0 + 0.7 * (t1 - t0))),
        gap_mu=math.log(3.0) + rng.normal(0.0, 0.5),
        burst_q=float(rng.uniform(0.0, 0.05)),
        weights=rng.dirichlet(ROLE_CONCENTRATION * BASE_ROLE_WEIGHTS),
        amt_mu={role: shared_mu + rng.normal(0.0, 0.3) for role in ROLES},
        amt_sigma=float(rng.uniform(0.5, 1.2)),
        tail_q={role: float(rng.uniform(0.0, 0.04)) for role in ROLES},
        lam_in={role: float(rng.uniform(0.2, 1.5)) for role in ROLES},
        lam_out={role: float(rng.uniform(0.3, 1.5)) for role in ROLES},
    )


def _apply_lever(p: _Profile, lever: str, sign: int, s: float, cfg: SyntheticConfig, rng) -> None:
    if lever == "gap":
        p.gap_mu += sign * 0.8 * min(s, 6.0)
    elif lever == "burst":
        p.burst_q = min(0.3, p.burst_q + 0.04 * s)
    elif lever == "ntx":
        lo, hi = cfg.tx_count_range
        u = rng.uniform()
        p.n_tx = lo + min(hi - lo, int((hi - lo + 1) * u ** (1.0 / (1.0 + 2.0 * s))))
    elif lever.startswith("w_"):
        j = ROLES.index(lever[2:])
        w = p.weights.copy()
        if lever in ("w_payback", "w_coinbase"):
            # draw the extra share from the other sending roles only so the
            # received ratio does not turn into a mirror image of the planted one
            keep = math.exp(-0.5 * s)
            for k, role in enumerate(ROLES):
                if k != j and role != "received":
                    moved = w[k] * min(0.85, 1.0 - keep)
                    w[k] -= moved
                    w[j] += moved
        else:
            w[j] *= math.exp(min(s, 8.0))
        p.weights = w / w.sum()
    elif lever.startswith("bucket_"):
        _, role, tag = lever.split("_")
        decade = -int(tag[2:]) if tag.startswith("em") else int(tag[1:])
        p.bucket[role] = (decade, min(0.95, 0.3 * s))
    elif lever.startswith("amt_") or lever.startswith("tail_"):
        kind, group = lever.split("_", 1)
        roles = ROLES if group == "overall" else (group,)
        for role in roles:
            if kind == "amt":
                # shifting a lognormal scales its spread too, so the effect
                # size would plateau; tighten the per-address spread as well
                p.amt_mu[role] = AMT_CENTER + (p.amt_mu[role] - AMT_CENTER) * math.exp(-0.5 * s) + 0.8 * min(s, 10.0)
                p.tail_q[role] *= math.exp(-s)
            else:
                p.tail_q[role] = min(0.3, p.tail_q[role] + 0.04 * s)
        if group in ("coinbase", "payback"):
            # the moments of a role only exist if the role occurs
            j = ROLES.index(group)
            w = p.weights.copy()
            w[j] = max(w[j], 0.15)
            p.weights = w / w.sum()
    elif lever == "hoard":
        shift = 0.6 * min(s, 8.0)
        p.amt_mu["received"] += shift
        p.amt_mu["coinbase"] += shift
        p.amt_mu["spent"] -= shift
        p.amt_mu["payback"] -= shift
    elif lever == "fan_in":
        # a fixed extra count moves the mean without widening the spread
        p.shift_in += min(s, 40.0)
    elif lever == "fan_out":
        p.shift_out += min(s, 40.0)
    elif lever == "disp_in":
        p.disp_in = min(0.5, 0.15 * s)
    elif lever == "disp_out":
        p.disp_out = min(0.5, 0.15 * s)
    elif lever.startswith("multi_"):
        kinds = {"in": ("in",), "out": ("out",), "both": ("in", "out")}[lever[6:]]
        for role in ROLES:
            if "in" in kinds:
                p.lam_in[role] += min(s, 20.0)
            if "out" in kinds:
                p.lam_out[role] += min(s, 20.0)
    else:  # pragma: no cover
        raise InvalidConfig(f"unknown lever {lever}")


# ---------------------------------------------------------------------------
# transactions


def _btc(amount: float) -> Decimal:
    value = Decimal(repr(min(max(float(amount), 1e-8), MAX_BTC))).quantize(SATOSHI, rounding=ROUND_HALF_EVEN)
    return max(value, SATOSHI)


def _counterparty(rng) -> str:
    return "cp" + format(int(rng.integers(0, 2**48)), "012x")


def _split(total: float, parts: int, rng) -> List[float]:
    if parts == 1:
        return [total]
    return list(total * rng.dirichlet(np.ones(parts)))


def _fan(rng, lam: float, disp: float, shift: float = 0.0) -> int:
    if disp and rng.uniform() < disp:
        lam += 6.0
    return 1 + int(round(shift)) + int(rng.poisson(lam))


def _make_tx(address: str, j: int, ts: int, role: str, btc: float, p: _Profile, rng, seed: int) -> TxRecord:
    txid = hashlib.sha256(f"{seed}:{address}:{j}".encode()).hexdigest()
    height = max(0, (ts - GENESIS_TS) // 600)
    spend = role == "spent"
    n_out = _fan(rng, p.lam_out[role], p.disp_out if spend else 0.0, p.shift_out if spend else 0.0)
    if role == "coinbase":
        others = [(_counterparty(rng), _btc(v)) for v in _split(btc * 0.2, n_out - 1, rng)] if n_out > 1 else []
        return TxRecord(txid, height, ts, (), ((address, _btc(btc)),) + tuple(others), True)
    n_in = _fan(rng, p.lam_in[role], p.disp_in if spend else 0.0, p.shift_in if spend else 0.0)
    if role == "received":
        inputs = [(_counterparty(rng), _btc(v)) for v in _split(btc * 1.3, n_in, rng)]
        outputs = [(address, _btc(btc))]
        outputs += [(_counterparty(rng), _btc(v)) for v in _split(btc * 0.3, n_out - 1, rng)] if n_out > 1 else []
        return TxRecord(txid, height, ts, tuple(inputs), tuple(outputs))
    own = 1 + int(rng.binomial(n_in - 1, 0.5)) if n_in > 1 else 1
    inputs = [(address, _btc(v)) for v in _split(btc, own, rng)]
    inputs += [(_counterparty(rng), _btc(v)) for v in _split(btc * 0.5, n_in - own, rng)] if n_in > own else []
    if role == "spent":
        outputs = [(_counterparty(rng), _btc(v)) for v in _split(btc * 0.999, n_out, rng)]
    else:
        change = btc * float(rng.uniform(0.05, 0.9))
        outputs = [(address, _btc(change))]
        outputs += [(_counterparty(rng), _btc(v)) for v in _split(btc - change, n_out, rng)]
    return TxRecord(txid, height, ts, tuple(inputs), tuple(outputs))


def _usd_amount(p: _Profile, role: str, rng) -> float:
    bucket = p.bucket.get(role)
    if bucket is not None and rng.uniform() < bucket[1]:
        return 10.0 ** (bucket[0] + rng.uniform(0.05, 0.95))
    amount = math.exp(p.amt_mu[role] + p.amt_sigma * rng.normal())
    if rng.uniform() < p.tail_q[role]:
        amount *= 50.0
    return amount


def _coinbase_btc(ts: int, p: _Profile, rng) -> float:
    # miners are paid close to the block subsidy; the per-address level is
    # set by its amount knob and only the fees vary from block to block
    height = max(0, (ts - GENESIS_TS) // 600)
    subsidy = 50.0 / 2 ** min(height // 210_000, 32)
    amount = subsidy * math.exp(p.amt_mu["coinbase"] - AMT_CENTER) * (1.0 + rng.uniform(0.0, 0.02))
    if rng.uniform() < p.tail_q["coinbase"]:
        amount *= 50.0
    return amount


def _history(address: str, label, p: _Profile, rates: RateTable, rng, seed: int) -> AddressHistory:
    txs = []
    t = p.start
    gap_mean = math.exp(p.gap_mu)
    for j in range(p.n_tx):
        if j:
            gap = rng.exponential(gap_mean)
            if rng.uniform() < p.burst_q:
                gap *= 25.0
            t += max(gap * 86400.0, 1.0)
        ts = int(t)
        role = ROLES[int(rng.choice(4, p=p.weights))]
        if role == "coinbase":
            btc = _coinbase_btc(ts, p, rng)
        else:
            btc = _usd_amount(p, role, rng) / float(rate_at(rates, ts))
        txs.append(_make_tx(address, j, ts, role, btc, p, rng, seed))
    return AddressHistory(address, label, tuple(txs))


def synthetic_rates(seed: int) -> RateTable:
    """Daily geometric random walk spanning the synthetic time window."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7A7E]))
    days = (SPAN_END - SPAN_START).days + 1
    drift = math.log(7000.0 / 13.5) / days
    log_rate = math.log(13.5) + np.cumsum(drift + rng.normal(0.0, 0.03, size=days))
    dates = tuple(SPAN_START + dt.timedelta(days=i) for i in range(days))
    rates = tuple(max(Decimal("0.01"), Decimal(f"{math.exp(v):.2f}")) for v in log_rate)
    return RateTable(dates, rates)


def _span(rates: RateTable) -> Tuple[float, float]:
    def ts(d):
        return dt.datetime(d.year, d.month, d.day, tzinfo=dt.timezone.utc).timestamp()

    return ts(rates.dates[0]), ts(rates.dates[-1])


def _traits_per_address(n_traits: int) -> int:
    if n_traits <= 2:
        return n_traits
    return max(2, round(TRAIT_SHARE * n_traits))


def _generate(cfg: SyntheticConfig, rates: RateTable, strengths: Dict[str, float]) -> List[AddressHistory]:
    t0, t1 = _span(rates)
    levers = {}
    for name in cfg.planted_informative_features:
        lever, sign = lever_for(name)
        levers[(lever, sign)] = strengths[name]
    traits = sorted(levers)
    # cycling through every combination keeps each trait's share of the
    # target class exact instead of leaving it to sampling luck
    combos = list(itertools.combinations(range(len(traits)), _traits_per_address(len(traits))))
    histories = []
    for ci, cls in enumerate(AddressClass):
        for i in range(cfg.addresses_per_class):
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, ci, i]))
            profile = _base_profile(rng, cfg, t0, t1)
            if cls is cfg.target_class and traits:
                # each target address shows only some of the traits, so the
                # planted columns are informative without mirroring each other
                for j in combos[i % len(combos)]:
                    lever, sign = traits[j]
                    _apply_lever(profile, lever, sign, levers[traits[j]], cfg, rng)
            histories.append(_history(f"{cls.value}-{i:04d}", cls, profile, rates, rng, cfg.seed))
    return histories


def effect_size(values: np.ndarray, is_target: np.ndarray) -> float:
    """Standardized mean difference (target minus rest) with pooled std."""
    a = values[is_target]
    b = values[~is_target]
    if a.size < 2 or b.size < 2:
        return 0.0
    pooled = ((a.size - 1) * a.var(ddof=1) + (b.size - 1) * b.var(ddof=1)) / (a.size + b.size - 2)
    diff = a.mean() - b.mean()
    if pooled == 0:
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return float(diff / math.sqrt(pooled))


def generate_synthetic(cfg: SyntheticConfig) -> Tuple[List[AddressHistory], RateTable]:
    """Deterministic labelled histories and a matching rate table."""
    rates = synthetic_rates(cfg.seed)
    planted = cfg.planted_informative_features
    strengths = {name: 1.0 for name in planted}
    for _ in range(MAX_ROUNDS):
        histories = _generate(cfg, rates, strengths)
        if not planted:
            return histories, rates
        X = np.vstack([extract_features(h, rates)[[FEATURE_INDEX[n] for n in planted]] for h in histories])
        is_target = np.array([h.label is cfg.target_class for h in histories])
        short = [n for j, n in enumerate(planted) if not abs(effect_size(X[:, j], is_target)) >= cfg.class_separation]
        if not short:
            return histories, rates
        # features sharing a lever move together
        short_levers = {lever_for(n) for n in short}
        for name in planted:
            if lever_for(name) in short_levers:
                strengths[name] *= GROWTH
    raise InvalidConfig(
        f"could not reach separation {cfg.class_separation} for {short} after {MAX_ROUNDS} rounds"
    )


def planted_effect_sizes(histories, rates, cfg: SyntheticConfig) -> Dict[str, float]:
    is_target = np.array([h.label is cfg.target_class for h in histories])
    X = np.vstack([extract_features(h, rates) for h in histories])
    return {n: effect_size(X[:, FEATURE_INDEX[n]], is_target) for n in cfg.planted_informative_features}
