"""Loading and writing the normalised on-disk formats.

Transactions are JSON Lines, labels and rates are small CSV files. The
loaders validate eagerly and report the offending line.
"""
from __future__ import annotations

import bisect
import csv
import datetime as dt
import json
from collections import defaultdict
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Tuple

from .errors import (
    DuplicateAddress,
    EmptyTable,
    InvariantError,
    NonMonotonicDates,
    NonPositiveRate,
    ParseError,
    UnknownLabel,
)
from .txmodel import HISTORY_CAP, AddressClass, AddressHistory, TxIO, TxRecord

MAX_NUMBER_DECIMALS = 8


@dataclass(frozen=True)
class RateTable:
    """Daily USD/BTC rates keyed by UTC calendar date."""

    dates: Tuple[dt.date, ...]
    rates: Tuple[Decimal, ...]

    def __post_init__(self):
        if len(self.dates) != len(self.rates):
            raise ValueError("dates and rates differ in length")
        for i, (day, rate) in enumerate(zip(self.dates, self.rates)):
            if i and day <= self.dates[i - 1]:
                raise NonMonotonicDates(f"date {day} does not follow {self.dates[i - 1]}")
            if not rate > 0:
                raise NonPositiveRate(f"rate on {day} is {rate}")
        object.__setattr__(self, "_ordinals", tuple(d.toordinal() for d in self.dates))

    def __len__(self):
        return len(self.dates)

    def items(self):
        return zip(self.dates, self.rates)


def utc_date(t: int) -> dt.date:
    return dt.datetime.fromtimestamp(t, tz=dt.timezone.utc).date()


def rate_at(table: RateTable, t: int) -> Decimal:
    """Rate of the latest listed date on or before the UTC date of ``t``.

    Timestamps before the first listed date get the first rate.
    """
    if not len(table):
        raise EmptyTable("rate table is empty")
    ordinal = utc_date(t).toordinal()
    i = bisect.bisect_right(table._ordinals, ordinal) - 1
    return table.rates[max(i, 0)]


def _parse_value(raw, line, path):
    if isinstance(raw, bool) or not isinstance(raw, (str, int, Decimal)):
        raise ParseError(f"value_btc must be a decimal string or number, got {raw!r}", line, path)
    if isinstance(raw, Decimal):
        # bare JSON number; parse_float hands it over as Decimal already
        if raw.as_tuple().exponent < -MAX_NUMBER_DECIMALS:
            raise ParseError(f"numeric value_btc {raw} has more than {MAX_NUMBER_DECIMALS} decimals", line, path)
        return raw
    try:
        value = Decimal(raw)
    except InvalidOperation:
        raise ParseError(f"bad decimal {raw!r}", line, path) from None
    if not value.is_finite():
        raise ParseError(f"bad decimal {raw!r}", line, path)
    return value


def _parse_ios(items, key, line, path):
    if not isinstance(items, list):
        raise ParseError(f"{key} must be an array", line, path)
    out = []
    for item in items:
        if not isinstance(item, dict) or "address" not in item or "value_btc" not in item:
            raise ParseError(f"{key} entries need address and value_btc", line, path)
        value = _parse_value(item["value_btc"], line, path)
        if value < 0:
            raise InvariantError(f"negative value_btc {value}", line, path)
        out.append(TxIO(str(item["address"]), value))
    return tuple(out)


def parse_tx_line(text: str, line: int = None, path=None) -> TxRecord:
    try:
        obj = json.loads(text, parse_float=Decimal)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", line, path) from None
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object", line, path)
    try:
        txid = obj["txid"]
        height = obj["block_height"]
        timestamp = obj["timestamp"]
        is_coinbase = obj["is_coinbase"]
        inputs = _parse_ios(obj["inputs"], "inputs", line, path)
        outputs = _parse_ios(obj["outputs"], "outputs", line, path)
    except KeyError as exc:
        raise ParseError(f"missing key {exc.args[0]!r}", line, path) from None
    if not isinstance(txid, str):
        raise ParseError("txid must be a string", line, path)
    for name, v in (("block_height", height), ("timestamp", timestamp)):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ParseError(f"{name} must be an integer", line, path)
    if not isinstance(is_coinbase, bool):
        raise ParseError("is_coinbase must be a boolean", line, path)
    try:
        return TxRecord(txid, height, timestamp, inputs, outputs, is_coinbase)
    except InvariantError as exc:
        raise InvariantError(str(exc), line, path) from None


def load_transactions(path) -> Iterator[TxRecord]:
    """Stream :class:`TxRecord` objects from a JSON Lines file, in file order."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            yield parse_tx_line(text, lineno, path)


def _io_json(ios):
    return [{"address": io.address, "value_btc": str(io.value_btc)} for io in ios]


def tx_to_json(tx: TxRecord) -> str:
    return json.dumps(
        {
            "txid": tx.txid,
            "block_height": tx.block_height,
            "timestamp": tx.timestamp,
            "is_coinbase": tx.is_coinbase,
            "inputs": _io_json(tx.inputs),
            "outputs": _io_json(tx.outputs),
        },
        separators=(",", ":"),
    )


def write_transactions(path, txs: Iterable[TxRecord]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for tx in txs:
            fh.write(tx_to_json(tx) + "\n")


def _reader(fh, expected, path):
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != expected:
        raise ParseError(f"expected header {','.join(expected)}", 1, path)
    return reader


def load_labels(path) -> Dict[str, AddressClass]:
    """Read ``address,label`` rows; repeated rows must agree."""
    path = Path(path)
    labels: Dict[str, AddressClass] = {}
    with path.open(encoding="utf-8", newline="") as fh:
        reader = _reader(fh, ["address", "label"], path)
        for row in reader:
            if not row or not any(cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise ParseError("expected 2 columns", reader.line_num, path)
            address, raw = row[0].strip(), row[1]
            try:
                label = AddressClass.parse(raw)
            except UnknownLabel:
                raise UnknownLabel(f"unknown label {raw!r} for {address}", reader.line_num, path) from None
            if address in labels and labels[address] is not label:
                raise DuplicateAddress(
                    f"{address} labelled both {labels[address].value} and {label.value}", reader.line_num, path
                )
            labels[address] = label
    return labels


def write_labels(path, labels: Dict[str, AddressClass]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["address", "label"])
        for address, label in labels.items():
            writer.writerow([address, label.value])


def load_rates(path) -> RateTable:
    path = Path(path)
    dates: List[dt.date] = []
    rates: List[Decimal] = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = _reader(fh, ["date", "usd_per_btc"], path)
        for row in reader:
            if not row:
                continue
            line = reader.line_num
            if len(row) != 2:
                raise ParseError("expected 2 columns", line, path)
            try:
                day = dt.date.fromisoformat(row[0].strip())
                rate = Decimal(row[1].strip())
            except (ValueError, InvalidOperation):
                raise ParseError(f"bad row {row!r}", line, path) from None
            if dates and day <= dates[-1]:
                raise NonMonotonicDates(f"date {day} does not follow {dates[-1]}", line, path)
            if not rate.is_finite() or rate <= 0:
                raise NonPositiveRate(f"rate {rate} on {day}", line, path)
            dates.append(day)
            rates.append(rate)
    return RateTable(tuple(dates), tuple(rates))


def write_rates(path, table: RateTable) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "usd_per_btc"])
        for day, rate in table.items():
            writer.writerow([day.isoformat(), str(rate)])


def build_histories(
    txs: Iterable[TxRecord], labels: Dict[str, AddressClass], cap: int = HISTORY_CAP
) -> List[AddressHistory]:
    """Group transactions by labelled address.

    Unlabelled addresses are dropped. Each history keeps the ``cap`` earliest
    transactions by (timestamp, txid). Output follows the order of ``labels``.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    by_address = defaultdict(list)
    for tx in txs:
        touched = {io.address for io in tx.inputs} | {io.address for io in tx.outputs}
        for address in touched:
            if address in labels:
                by_address[address].append(tx)
    histories = []
    for address, label in labels.items():
        found = by_address.get(address)
        if not found:
            continue
        found.sort(key=TxRecord.sort_key)
        histories.append(AddressHistory(address, label, tuple(found[:cap])))
    return histories
