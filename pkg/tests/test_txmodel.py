from decimal import Decimal

import pytest
from hypothesis import given, strategies as st

from qifs.errors import AddressNotInTx, InvariantError, UnknownLabel
from qifs.txmodel import AddressClass, AddressHistory, TxIO, TxRecord, TxRole, classify_role

from conftest import tx


def test_address_class_has_six_lowercase_variants():
    assert [c.value for c in AddressClass] == ["exchange", "faucet", "gambling", "market", "mixer", "pool"]
    assert AddressClass.parse("MiXeR") is AddressClass.MIXER
    with pytest.raises(UnknownLabel):
        AddressClass.parse("bank")


def test_coinbase_output_is_coinbase():
    t = tx("c", 1, outputs=[("A", 6.25)], coinbase=True)
    assert classify_role(t, "A") is TxRole.COINBASE


def test_both_sides_is_payback():
    t = tx("p", 1, inputs=[("A", 2)], outputs=[("B", 1), ("A", 0.9)])
    assert classify_role(t, "A") is TxRole.PAYBACK
    assert classify_role(t, "B") is TxRole.RECEIVED


def test_outputs_only_is_received_inputs_only_is_spent():
    t = tx("r", 1, inputs=[("B", 1)], outputs=[("A", 1)])
    assert classify_role(t, "A") is TxRole.RECEIVED
    assert classify_role(t, "B") is TxRole.SPENT


def test_coinbase_beats_payback_for_repeated_outputs():
    t = tx("c", 1, outputs=[("A", 1), ("A", 2)], coinbase=True)
    assert classify_role(t, "A") is TxRole.COINBASE


def test_absent_address_raises():
    with pytest.raises(AddressNotInTx):
        classify_role(tx("x", 1, inputs=[("B", 1)], outputs=[("C", 1)]), "A")


def test_invariants_rejected():
    with pytest.raises(InvariantError):
        tx("n", 1, inputs=[("A", -1)], outputs=[("B", 1)])
    with pytest.raises(InvariantError):
        tx("n", 1, inputs=[], outputs=[("B", 1)])
    with pytest.raises(InvariantError):
        tx("n", 1, inputs=[("A", 1)], outputs=[("B", 1)], coinbase=True)


def test_history_sorts_by_timestamp_then_txid():
    txs = (tx("b", 5, [("X", 1)], [("A", 1)]), tx("a", 5, [("X", 1)], [("A", 1)]), tx("z", 1, [("X", 1)], [("A", 1)]))
    h = AddressHistory("A", AddressClass.POOL, txs)
    assert [t.txid for t in h.txs] == ["z", "a", "b"]


def test_history_rejects_foreign_tx():
    with pytest.raises(AddressNotInTx):
        AddressHistory("A", None, (tx("b", 5, [("X", 1)], [("Y", 1)]),))


addresses = st.sampled_from(["A", "B", "C"])
sides = st.lists(st.tuples(addresses, st.integers(0, 10**8)), max_size=4)


@st.composite
def tx_and_address(draw):
    coinbase = draw(st.booleans())
    outputs = draw(sides.filter(bool))
    inputs = [] if coinbase else draw(sides.filter(bool))
    record = TxRecord(
        "t", 0, 0,
        tuple(TxIO(a, Decimal(v) / 10**8) for a, v in inputs),
        tuple(TxIO(a, Decimal(v) / 10**8) for a, v in outputs),
        coinbase,
    )
    present = sorted({a for a, _ in inputs} | {a for a, _ in outputs})
    return record, draw(st.sampled_from(present))


@given(tx_and_address())
def test_role_is_exactly_one_and_deterministic(pair):
    record, address = pair
    role = classify_role(record, address)
    assert role in set(TxRole)
    assert classify_role(record, address) is role
    in_inputs = any(io.address == address for io in record.inputs)
    in_outputs = any(io.address == address for io in record.outputs)
    expected = (
        TxRole.COINBASE if record.is_coinbase
        else TxRole.PAYBACK if in_inputs and in_outputs
        else TxRole.SPENT if in_inputs
        else TxRole.RECEIVED
    )
    assert role is expected


@given(st.lists(st.integers(0, 10**9), min_size=1, max_size=3), st.lists(st.integers(0, 10**9), min_size=1, max_size=3))
def test_payback_precedence_ignores_amounts(ins, outs):
    record = tx("p", 0, [("A", v / 1e8) for v in ins], [("A", v / 1e8) for v in outs])
    assert classify_role(record, "A") is TxRole.PAYBACK
