import gzip
import io
import json
import random

import pytest
from hypothesis import given, strategies as st

from specsim.trace import (
    AccessSets,
    Block,
    Op,
    OpKind,
    StorageCell,
    TraceFormatError,
    TraceValidationError,
    Transaction,
    TxKind,
    canonical_address,
    canonical_key,
    contract_call,
    derive_access_sets,
    load_trace,
    other_op,
    read_op,
    read_trace,
    save_trace,
    sets_conflict,
    value_transfer,
    write_op,
    write_trace,
)

from .helpers import C1K1, cell, g1_block


# --- strategies ------------------------------------------------------------

cells = st.builds(cell, st.integers(0, 3), st.integers(0, 2))


def _ops():
    storage = st.builds(
        lambda c, gas, write: write_op(c, gas) if write else read_op(c, gas),
        cells, st.integers(0, 500), st.booleans())
    other = st.builds(other_op, st.integers(0, 500), st.integers(1, 5))
    return st.one_of(storage, other)


def _txs(index):
    call = st.builds(lambda ops: contract_call(f"tx{index}", index, ops),
                     st.lists(_ops(), max_size=6))
    transfer = st.builds(lambda gas: value_transfer(f"tx{index}", index, gas),
                         st.integers(0, 30000))
    return st.one_of(call, transfer)


@st.composite
def blocks(draw, number=None):
    n = draw(st.integers(0, 6))
    txs = tuple(draw(_txs(i)) for i in range(n))
    return Block(number if number is not None else draw(st.integers(0, 10 ** 9)), txs)


@st.composite
def traces(draw):
    numbers = sorted(draw(st.sets(st.integers(0, 10 ** 6), max_size=5)))
    return [draw(blocks(number=n)) for n in numbers]


# --- model invariants ------------------------------------------------------

def test_storage_cell_validation():
    with pytest.raises(TraceValidationError):
        StorageCell("ab", "0" * 64)
    with pytest.raises(TraceValidationError):
        StorageCell("0" * 40, "0" * 63)
    with pytest.raises(TraceValidationError):
        StorageCell("0" * 39 + "G", "0" * 64)
    # uppercase is rejected: equality must stay byte-wise
    with pytest.raises(TraceValidationError):
        StorageCell("A" + "0" * 39, "0" * 64)


def test_canonical_helpers():
    assert canonical_address("0xAB") == "ab".zfill(40)
    assert canonical_key("0x5") == "5".zfill(64)
    with pytest.raises(TraceValidationError):
        canonical_address("0x" + "f" * 41)
    with pytest.raises(TraceValidationError):
        canonical_address("not-hex")


def test_op_invariants():
    with pytest.raises(TraceValidationError):
        Op(OpKind.READ, 5)  # missing cell
    with pytest.raises(TraceValidationError):
        Op(OpKind.OTHER, 5, 1, C1K1)  # OTHER carries no cell
    with pytest.raises(TraceValidationError):
        Op(OpKind.WRITE, 5, 2, C1K1)  # storage ops are single instructions
    with pytest.raises(TraceValidationError):
        Op(OpKind.OTHER, -1, 1)
    with pytest.raises(TraceValidationError):
        Op(OpKind.OTHER, 1, 0)


def test_transaction_totals_must_match():
    ops = (other_op(5), read_op(C1K1, 3))
    with pytest.raises(TraceValidationError, match="gas_total"):
        Transaction("t", 0, TxKind.CONTRACT_CALL, ops, 9, 2)
    with pytest.raises(TraceValidationError, match="instr_total"):
        Transaction("t", 0, TxKind.CONTRACT_CALL, ops, 8, 3)
    assert Transaction("t", 0, TxKind.CONTRACT_CALL, ops, 8, 2).gas_total == 8


def test_value_transfer_carries_gas_but_no_ops():
    tx = value_transfer("v", 0, 21000)
    assert tx.gas_total == 21000 and tx.ops == () and tx.instr_total == 0
    with pytest.raises(TraceValidationError):
        Transaction("v", 0, TxKind.VALUE_TRANSFER, (other_op(1),), 1, 1)


def test_block_indices_must_be_contiguous():
    txs = (value_transfer("a", 0, 1), value_transfer("b", 2, 1))
    with pytest.raises(TraceValidationError, match="index"):
        Block(0, txs)
    with pytest.raises(TraceValidationError):
        Block(-1, ())


# --- access sets and conflicts ----------------------------------------------

def test_access_sets_of_other_only_tx_are_empty():
    tx = contract_call("t", 0, [other_op(5)])
    assert derive_access_sets(tx) == AccessSets(frozenset(), frozenset())


def test_access_sets_by_definition():
    c1, c2 = cell(1, 1), cell(2, 1)
    tx = contract_call("t", 0, [read_op(c1, 1), write_op(c1, 1), read_op(c2, 1)])
    sets = derive_access_sets(tx)
    assert sets.reads == {c1, c2}
    assert sets.writes == {c1}


def test_sets_conflict_cases():
    c1, c2 = cell(1, 1), cell(2, 1)
    reads_c1 = AccessSets(frozenset({c1}), frozenset())
    writes_c1 = AccessSets(frozenset(), frozenset({c1}))
    writes_c2 = AccessSets(frozenset(), frozenset({c2}))
    assert not sets_conflict(reads_c1, reads_c1)           # no write, no conflict
    assert sets_conflict(writes_c1, reads_c1)              # one access is a write
    assert sets_conflict(reads_c1, writes_c1)
    assert not sets_conflict(writes_c1, writes_c2)         # disjoint cells


@given(blocks())
def test_sets_conflict_symmetric(block):
    sets = [derive_access_sets(tx) for tx in block.transactions]
    for a in sets:
        for b in sets:
            assert sets_conflict(a, b) == sets_conflict(b, a)


@given(_txs(0), st.randoms(use_true_random=False))
def test_access_sets_order_insensitive(tx, rng):
    shuffled = list(tx.ops)
    rng.shuffle(shuffled)
    permuted = contract_call(tx.id, tx.index, shuffled) if tx.kind is TxKind.CONTRACT_CALL else tx
    assert derive_access_sets(permuted) == derive_access_sets(tx)


@given(_txs(0))
def test_write_free_txs_never_self_conflict(tx):
    sets = derive_access_sets(tx)
    if not sets.writes:
        assert not sets_conflict(sets, sets)


# --- codec ------------------------------------------------------------------

def test_read_trace_empty_stream():
    assert read_trace(io.StringIO("")) == []


def test_single_transfer_round_trip():
    block = Block(1, (value_transfer("0xabc", 0, 21000),))
    sink = io.StringIO()
    write_trace([block], sink)
    assert read_trace(io.StringIO(sink.getvalue())) == [block]


def test_write_trace_empty_is_empty_output():
    sink = io.StringIO()
    write_trace([], sink)
    assert sink.getvalue() == ""


def test_gas_total_mismatch_names_transaction():
    line = json.dumps({
        "number": 4,
        "transactions": [{
            "id": "0xbad", "index": 0, "kind": "call", "gas_total": 99, "instr_total": 1,
            "ops": [{"kind": "o", "gas": 5, "n": 1}],
        }],
    })
    with pytest.raises(TraceValidationError) as excinfo:
        read_trace(io.StringIO(line))
    assert "0xbad" in str(excinfo.value)
    assert "gas_total" in str(excinfo.value)


def test_malformed_line_carries_line_number():
    stream = io.StringIO('{"number":0,"transactions":[]}\nnot json\n')
    with pytest.raises(TraceFormatError) as excinfo:
        read_trace(stream)
    assert excinfo.value.line_number == 2


@pytest.mark.parametrize("doc", [
    {"number": 0},
    {"transactions": []},
    {"number": "x", "transactions": []},
    {"number": 0, "transactions": [{"id": "t", "index": 0, "kind": "weird",
                                    "gas_total": 0, "instr_total": 0, "ops": []}]},
    {"number": 0, "transactions": [{"id": "t", "index": 0, "kind": "call",
                                    "gas_total": 1, "instr_total": 1,
                                    "ops": [{"kind": "z", "gas": 1, "n": 1}]}]},
])
def test_structural_problems_are_format_errors(doc):
    with pytest.raises(TraceFormatError):
        read_trace(io.StringIO(json.dumps(doc)))


def test_block_numbers_must_increase():
    block = Block(5, ())
    sink = io.StringIO()
    with pytest.raises(TraceValidationError):
        write_trace([block, block], sink)
    text = "\n".join(['{"number":5,"transactions":[]}'] * 2)
    with pytest.raises(TraceValidationError):
        read_trace(io.StringIO(text))


def test_canonical_bytes_are_stable():
    sinks = []
    for _ in range(2):
        sink = io.StringIO()
        write_trace([g1_block()], sink)
        sinks.append(sink.getvalue())
    assert sinks[0] == sinks[1]
    # canonical form: no extraneous whitespace, fixed key order
    assert ' ' not in sinks[0]
    assert sinks[0].startswith('{"number":7,"transactions":[{"id":"T1","index":0,"kind":"call",')


def test_read_trace_accepts_bytes():
    sink = io.StringIO()
    write_trace([g1_block()], sink)
    data = sink.getvalue().encode("utf-8")
    assert read_trace(io.BytesIO(data)) == [g1_block()]


@given(traces())
def test_round_trip_identity(trace):
    sink = io.StringIO()
    write_trace(trace, sink)
    assert read_trace(io.StringIO(sink.getvalue())) == trace


def test_save_and_load_plain_and_gzip(tmp_path):
    trace = [g1_block(3), g1_block(9)]
    plain = tmp_path / "t.jsonl"
    zipped = tmp_path / "t.jsonl.gz"
    save_trace(trace, plain)
    save_trace(trace, zipped)
    assert load_trace(plain) == trace
    assert load_trace(zipped) == trace
    with gzip.open(zipped, "rt", encoding="utf-8") as fh:
        assert fh.read() == plain.read_text(encoding="utf-8")


def test_gzip_output_bytes_are_reproducible(tmp_path):
    a, b = tmp_path / "a.jsonl.gz", tmp_path / "b.jsonl.gz"
    save_trace([g1_block()], a)
    save_trace([g1_block()], b)
    assert a.read_bytes() == b.read_bytes()
