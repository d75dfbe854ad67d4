from decimal import Decimal

import pytest

from qifs.synthetic import SyntheticConfig, generate_synthetic
from qifs.txmodel import TxIO, TxRecord


def tx(txid, ts, inputs=(), outputs=(), coinbase=False, height=0):
    """Build a TxRecord from (address, value) pairs; values may be str or number."""
    return TxRecord(
        txid,
        height,
        ts,
        tuple(TxIO(a, Decimal(str(v))) for a, v in inputs),
        tuple(TxIO(a, Decimal(str(v))) for a, v in outputs),
        coinbase,
    )


@pytest.fixture(scope="session")
def small_config():
    """30 addresses per class, enough for every pair of traits to recur; Mixer is the target."""
    return SyntheticConfig(addresses_per_class=30, seed=11)


@pytest.fixture(scope="session")
def small_synthetic(small_config):
    return generate_synthetic(small_config)
