"""Domain types for transactions, labelled addresses and per-address roles."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from decimal import Decimal
from typing import NamedTuple, Optional, Tuple

from .errors import AddressNotInTx, InvariantError, UnknownLabel

HISTORY_CAP = 1000


class AddressClass(str, enum.Enum):
    EXCHANGE = "exchange"
    FAUCET = "faucet"
    GAMBLING = "gambling"
    MARKET = "market"
    MIXER = "mixer"
    POOL = "pool"

    @classmethod
    def parse(cls, text: str) -> "AddressClass":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise UnknownLabel(f"unknown address class {text!r}") from None

    def __str__(self):
        return self.value


class TxRole(str, enum.Enum):
    COINBASE = "coinbase"
    SPENT = "spent"
    RECEIVED = "received"
    PAYBACK = "payback"


class TxIO(NamedTuple):
    address: str
    value_btc: Decimal


@dataclass(frozen=True)
class TxRecord:
    txid: str
    block_height: int
    timestamp: int
    inputs: Tuple[TxIO, ...]
    outputs: Tuple[TxIO, ...]
    is_coinbase: bool = False

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(TxIO(a, Decimal(v)) for a, v in self.inputs))
        object.__setattr__(self, "outputs", tuple(TxIO(a, Decimal(v)) for a, v in self.outputs))
        if self.block_height < 0:
            raise InvariantError(f"tx {self.txid}: negative block height")
        for io in self.inputs + self.outputs:
            if not io.value_btc.is_finite() or io.value_btc < 0:
                raise InvariantError(f"tx {self.txid}: invalid value {io.value_btc} for {io.address}")
        if self.is_coinbase and self.inputs:
            raise InvariantError(f"tx {self.txid}: coinbase tx must not list spendable inputs")
        if not self.is_coinbase and not self.inputs:
            raise InvariantError(f"tx {self.txid}: non-coinbase tx without inputs")

    def input_addresses(self) -> frozenset:
        return frozenset(io.address for io in self.inputs)

    def output_addresses(self) -> frozenset:
        return frozenset(io.address for io in self.outputs)

    def mentions(self, address: str) -> bool:
        return any(io.address == address for io in self.inputs) or any(
            io.address == address for io in self.outputs
        )

    def sort_key(self):
        return (self.timestamp, self.txid)


def classify_role(tx: TxRecord, address: str) -> TxRole:
    """Role of ``address`` in ``tx``.

    Coinbase is checked first, then payback (address on both sides), then
    spent / received. Duplicate entries count as plain presence.
    """
    in_inputs = any(io.address == address for io in tx.inputs)
    in_outputs = any(io.address == address for io in tx.outputs)
    if not (in_inputs or in_outputs):
        raise AddressNotInTx(f"address {address!r} does not appear in tx {tx.txid}")
    if tx.is_coinbase and in_outputs:
        return TxRole.COINBASE
    if in_inputs and in_outputs:
        return TxRole.PAYBACK
    if in_inputs:
        return TxRole.SPENT
    return TxRole.RECEIVED


@dataclass(frozen=True)
class AddressHistory:
    """Transactions touching one address, normalised to (timestamp, txid) order."""

    address: str
    label: Optional[AddressClass]
    txs: Tuple[TxRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        txs = tuple(sorted(self.txs, key=TxRecord.sort_key))
        for tx in txs:
            if not tx.mentions(self.address):
                raise AddressNotInTx(f"tx {tx.txid} does not mention {self.address!r}")
        object.__setattr__(self, "txs", txs)

    def __len__(self):
        return len(self.txs)
