"""Per-address transaction-history summaries and the feature matrix.

Every address is summarised by 69 numbers in a fixed order
(:data:`FEATURE_NAMES`): 26 basic statistics, 16 extra statistics, 24
distribution moments and 3 transaction-pattern counts.

Sums and power sums are accumulated exactly (``Decimal`` under a wide
context that traps any rounding) and divided out as rationals only when the
vector is finalised. That keeps the single forward pass numerically identical
to a textbook two-pass computation, even for variances of large USD amounts
where float power sums would cancel badly.
"""
from __future__ import annotations

import csv
import decimal
import math
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateOutcome, EmptyHistory, LengthMismatch, NonPositiveAmount, ParseError
from .ingest import RateTable, rate_at
from .txmodel import AddressClass, AddressHistory, TxRole, classify_role

DECADES = tuple(range(-3, 7))
SECONDS_PER_DAY = 86400


def _decade_tag(i: int) -> str:
    return f"em{-i}" if i < 0 else f"e{i}"


MOMENT_GROUPS = ("overall", "spent", "received", "coinbase", "payback", "interval")

BASIC_FEATURES = (
    ("f_tx", "r_received", "r_coinbase")
    + tuple(f"f_spent_{_decade_tag(i)}" for i in DECADES)
    + tuple(f"f_received_{_decade_tag(i)}" for i in DECADES)
    + ("r_payback", "avg_n_inputs", "avg_n_outputs")
)
EXTRA_FEATURES = (
    "lifetime",
    "btc_spent",
    "btc_received",
    "usd_spent",
    "usd_received",
    "n_tx",
    "n_spent",
    "n_received",
    "n_coinbase",
    "n_payback",
    "mean_balance_btc",
    "std_balance_btc",
    "mean_balance_usd",
    "std_balance_usd",
    "std_n_inputs",
    "std_n_outputs",
)
MOMENT_FEATURES = tuple(f"m{k}_{group}" for group in MOMENT_GROUPS for k in (1, 2, 3, 4))
PATTERN_FEATURES = ("t_n_input", "t_n_output", "t_overall")

FEATURE_NAMES: Tuple[str, ...] = BASIC_FEATURES + EXTRA_FEATURES + MOMENT_FEATURES + PATTERN_FEATURES
N_FEATURES = len(FEATURE_NAMES)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}

assert (len(BASIC_FEATURES), len(EXTRA_FEATURES), len(MOMENT_FEATURES), len(PATTERN_FEATURES)) == (26, 16, 24, 3)

_DECADE_EDGES = tuple(Fraction(10) ** i for i in DECADES + (7,))

# wide enough that products of 4 amounts never round; Inexact makes sure
EXACT = decimal.Context(prec=10_000, traps=[decimal.Inexact, decimal.InvalidOperation], Emin=-999999, Emax=999999)


def _exact(x) -> Decimal:
    if isinstance(x, Decimal):
        return x
    if isinstance(x, Fraction):
        raise TypeError("Fraction samples are not supported; pass Decimal, int or float")
    return Decimal(x)


def decade_bucket(usd_amount) -> Optional[int]:
    """Exponent ``i`` in [-3, 6] with ``10**i <= usd_amount < 10**(i+1)``.

    Returns ``None`` outside that range. Comparison is exact, so 1000 lands
    in bucket 3 regardless of float rounding.
    """
    amount = usd_amount if isinstance(usd_amount, Fraction) else _exact(usd_amount)
    if amount <= 0:
        raise NonPositiveAmount(f"amount must be positive, got {usd_amount}")
    if amount < _DECADE_EDGES[0] or amount >= _DECADE_EDGES[-1]:
        return None
    for i, upper in zip(DECADES, _DECADE_EDGES[1:]):
        if amount < upper:
            return i
    return None  # pragma: no cover


class MomentAccumulator:
    """Streaming raw power sums, finalised into (mean, variance, skewness, kurtosis).

    ``scale`` divides every sample at finalisation time, e.g. 86400 to add
    seconds but report days.
    """

    __slots__ = ("n", "s1", "s2", "s3", "s4", "scale")

    def __init__(self, scale=1):
        self.n = 0
        self.s1 = self.s2 = self.s3 = self.s4 = Decimal(0)
        self.scale = Fraction(scale)

    def add(self, x) -> None:
        x = _exact(x)
        ctx = EXACT
        x2 = ctx.multiply(x, x)
        self.n += 1
        self.s1 = ctx.add(self.s1, x)
        self.s2 = ctx.add(self.s2, x2)
        self.s3 = ctx.add(self.s3, ctx.multiply(x2, x))
        self.s4 = ctx.add(self.s4, ctx.multiply(x2, x2))

    def central(self):
        """Exact mean and 2nd..4th central moments (as Fractions)."""
        n = self.n
        c = self.scale
        mu = Fraction(self.s1) / (n * c)
        e2 = Fraction(self.s2) / (n * c**2)
        e3 = Fraction(self.s3) / (n * c**3)
        e4 = Fraction(self.s4) / (n * c**4)
        mu2 = mu * mu
        c2 = e2 - mu2
        c3 = e3 - 3 * mu * e2 + 2 * mu2 * mu
        c4 = e4 - 4 * mu * e3 + 6 * mu2 * e2 - 3 * mu2 * mu2
        return mu, c2, c3, c4

    def mean_std(self) -> Tuple[float, float]:
        if self.n == 0:
            return 0.0, 0.0
        c = self.scale
        mu = Fraction(self.s1) / (self.n * c)
        var = Fraction(self.s2) / (self.n * c**2) - mu * mu
        return float(mu), math.sqrt(float(var))

    def finalize(self) -> Tuple[float, float, float, float]:
        if self.n == 0:
            return 0.0, 0.0, 0.0, 0.0
        mu, c2, c3, c4 = self.central()
        if c2 == 0:
            return float(mu), 0.0, 0.0, 0.0
        var = float(c2)
        return float(mu), var, float(c3) / math.sqrt(var) ** 3, float(c4) / var**2


def moments(samples: Iterable) -> Tuple[float, float, float, float]:
    """Mean, population variance, skewness and kurtosis (not excess).

    Empty input gives all zeros; zero variance gives zero skewness and
    kurtosis.

    >>> moments([1, 2, 3])
    (2.0, 0.6666666666666666, 0.0, 1.5)
    """
    acc = MomentAccumulator()
    for x in samples:
        acc.add(x)
    return acc.finalize()


def _ratio(num, den) -> Fraction:
    return Fraction(num, den) if den else Fraction(0)


def extract_features(history: AddressHistory, rates: RateTable) -> np.ndarray:
    """Summarise one address history as a length-69 float vector.

    Walks ``history.txs`` exactly once; all per-tx state lives in running
    counters and exact moment accumulators.
    """
    address = history.address
    ctx = EXACT
    add, mul = ctx.add, ctx.multiply
    zero = Decimal(0)
    rate_cache = {}

    n_tx = 0
    n_role = {role: 0 for role in TxRole}
    spent_buckets = [0] * len(DECADES)
    received_buckets = [0] * len(DECADES)
    spent_inputs = MomentAccumulator()
    spent_outputs = MomentAccumulator()
    btc_spent = btc_received = usd_spent = usd_received = zero
    balance = zero
    balance_btc = MomentAccumulator()
    balance_usd = MomentAccumulator()
    groups = {name: MomentAccumulator() for name in MOMENT_GROUPS}
    # intervals are accumulated in seconds and reported in days
    groups["interval"] = MomentAccumulator(scale=SECONDS_PER_DAY)
    t_in = t_out = t_both = 0
    first_ts = prev_ts = None

    for tx in history.txs:
        role = classify_role(tx, address)
        rate = rate_cache.get(tx.timestamp)
        if rate is None:
            rate = rate_cache[tx.timestamp] = rate_at(rates, tx.timestamp)

        own_in = own_out = zero
        for io in tx.inputs:
            if io.address == address:
                own_in = add(own_in, io.value_btc)
        for io in tx.outputs:
            if io.address == address:
                own_out = add(own_out, io.value_btc)
        in_usd = mul(own_in, rate)
        out_usd = mul(own_out, rate)

        n_tx += 1
        n_role[role] += 1
        btc_spent = add(btc_spent, own_in)
        btc_received = add(btc_received, own_out)
        usd_spent = add(usd_spent, in_usd)
        usd_received = add(usd_received, out_usd)

        balance = add(balance, ctx.subtract(own_out, own_in))
        balance_btc.add(balance)
        balance_usd.add(mul(balance, rate))

        groups["overall"].add(add(in_usd, out_usd))
        if role is TxRole.SPENT:
            groups["spent"].add(in_usd)
            spent_inputs.add(len(tx.inputs))
            spent_outputs.add(len(tx.outputs))
            if in_usd > 0:
                b = decade_bucket(in_usd)
                if b is not None:
                    spent_buckets[b - DECADES[0]] += 1
        elif role is TxRole.RECEIVED:
            groups["received"].add(out_usd)
            if out_usd > 0:
                b = decade_bucket(out_usd)
                if b is not None:
                    received_buckets[b - DECADES[0]] += 1
        elif role is TxRole.COINBASE:
            groups["coinbase"].add(out_usd)
        else:
            groups["payback"].add(abs(ctx.subtract(out_usd, in_usd)))

        if prev_ts is None:
            first_ts = tx.timestamp
        else:
            groups["interval"].add(tx.timestamp - prev_ts)
        prev_ts = tx.timestamp

        n_inputs, n_outputs = len(tx.inputs), len(tx.outputs)
        t_in += n_inputs >= 2
        t_out += n_outputs >= 2
        t_both += n_inputs >= 2 and n_outputs >= 2

    if n_tx == 0:
        raise EmptyHistory(f"history of {address!r} is empty")

    n_spent = n_role[TxRole.SPENT]
    n_received = n_role[TxRole.RECEIVED]
    n_coinbase = n_role[TxRole.COINBASE]
    n_payback = n_role[TxRole.PAYBACK]
    lifetime = Fraction(prev_ts - first_ts, SECONDS_PER_DAY)

    avg_in, std_in = spent_inputs.mean_std()
    avg_out, std_out = spent_outputs.mean_std()
    mean_bal_btc, std_bal_btc = balance_btc.mean_std()
    mean_bal_usd, std_bal_usd = balance_usd.mean_std()

    values: List[float] = [
        float(n_tx / max(lifetime, Fraction(1))),
        float(Fraction(n_received, n_tx)),
        float(Fraction(n_coinbase, n_tx)),
    ]
    values += [float(_ratio(c, n_spent)) for c in spent_buckets]
    values += [float(_ratio(c, n_received)) for c in received_buckets]
    values += [float(Fraction(n_payback, n_tx)), avg_in, avg_out]
    values += [
        float(lifetime),
        float(btc_spent),
        float(btc_received),
        float(usd_spent),
        float(usd_received),
        n_tx,
        n_spent,
        n_received,
        n_coinbase,
        n_payback,
        mean_bal_btc,
        std_bal_btc,
        mean_bal_usd,
        std_bal_usd,
        std_in,
        std_out,
    ]
    for name in MOMENT_GROUPS:
        values += groups[name].finalize()
    values += [t_in, t_out, t_both]
    # normalise -0.0 so CSV output is sign-stable
    return np.asarray(values, dtype=np.float64) + 0.0


@dataclass(frozen=True)
class FeatureMatrix:
    """Rows of address features plus the one-vs-rest outcome vector."""

    names: Tuple[str, ...]
    X: np.ndarray
    outcomes: np.ndarray
    target_class: AddressClass
    addresses: Tuple[str, ...] = ()
    labels: Tuple[Optional[AddressClass], ...] = ()

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.outcomes, dtype=np.int8)
        if X.ndim != 2 or X.shape[1] != len(self.names):
            raise LengthMismatch(f"matrix shape {X.shape} does not match {len(self.names)} names")
        if X.shape[0] != y.shape[0]:
            raise LengthMismatch("rows and outcomes differ in length")
        if X.shape[0] < 2:
            raise DegenerateOutcome("need at least two rows")
        if not np.all(np.isfinite(X)):
            raise ValueError("feature matrix contains non-finite values")
        if y.min() == y.max():
            raise DegenerateOutcome(f"all outcomes are {int(y[0])} for target {self.target_class.value}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.names.index(name)]

    def select_columns(self, names: Sequence[str]) -> "FeatureMatrix":
        idx = [self.names.index(name) for name in names]
        return FeatureMatrix(tuple(names), self.X[:, idx], self.outcomes, self.target_class, self.addresses, self.labels)


def build_matrix(histories: Sequence[AddressHistory], rates: RateTable, target: AddressClass) -> FeatureMatrix:
    target = AddressClass(target)
    outcomes = np.array([int(h.label is target) for h in histories], dtype=np.int8)
    if len(histories) < 2 or outcomes.min() == outcomes.max():
        raise DegenerateOutcome(f"target {target.value} does not split the {len(histories)} histories")
    X = np.vstack([extract_features(h, rates) for h in histories])
    return FeatureMatrix(
        FEATURE_NAMES,
        X,
        outcomes,
        target,
        tuple(h.address for h in histories),
        tuple(h.label for h in histories),
    )


def format_value(v: float) -> str:
    return format(float(v) + 0.0, ".12g")


def write_matrix_csv(path, histories: Sequence[AddressHistory], X: np.ndarray, names=FEATURE_NAMES) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["address", "label", *names])
        for h, row in zip(histories, X):
            writer.writerow([h.address, h.label.value if h.label else "", *map(format_value, row)])


def read_matrix_csv(path, target: AddressClass) -> FeatureMatrix:
    """Load a feature CSV and binarise its labels against ``target``."""
    path = Path(path)
    target = AddressClass(target)
    addresses, labels, rows = [], [], []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["address", "label"] or len(header) < 3:
            raise ParseError("expected header address,label,<features>", 1, path)
        names = tuple(header[2:])
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} columns, got {len(row)}", reader.line_num, path)
            try:
                rows.append([float(v) for v in row[2:]])
                labels.append(AddressClass.parse(row[1]) if row[1] else None)
            except ValueError as exc:
                raise ParseError(str(exc), reader.line_num, path) from None
            addresses.append(row[0])
    outcomes = np.array([int(label is target) for label in labels], dtype=np.int8)
    X = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(names))
    return FeatureMatrix(names, X, outcomes, target, tuple(addresses), tuple(labels))
