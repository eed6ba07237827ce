"""Ingestion of Ethereum client debug traces (structLog documents) into the
canonical trace format.

Storage context across internal calls follows EVM semantics: CALL and
STATICCALL run against the callee's storage, DELEGATECALL and CALLCODE stay
in the caller's storage, and contracts still being created execute under a
synthetic per-transaction context label. Context pushes materialize only when
the record depth actually increases, so calls that never enter a frame
(failed calls, targets without code) leave the context stack aligned with the
record depth.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

from .trace import (
    Block,
    Op,
    OpKind,
    StorageCell,
    TraceValidationError,
    Transaction,
    TxKind,
    canonical_address,
    contract_call,
    value_transfer,
)

__all__ = [
    "GethTraceError",
    "StructLogRecord",
    "TxEnvelope",
    "convert_block",
    "convert_tx",
    "read_envelopes",
    "read_struct_log",
]

_ADDRESS_MASK = (1 << 160) - 1
_CALL_OPS = frozenset({"CALL", "STATICCALL"})
_DELEGATE_OPS = frozenset({"DELEGATECALL", "CALLCODE"})
_CREATE_OPS = frozenset({"CREATE", "CREATE2"})

# intrinsic cost of a plain ether transfer, charged when the envelope is silent
DEFAULT_TRANSFER_GAS = 21000


class GethTraceError(Exception):
    """A structLog stream or envelope sidecar is malformed or inconsistent."""


@dataclass(frozen=True)
class StructLogRecord:
    """One row of the client tracing API output (top of stack = last element)."""

    pc: int
    op: str
    gas: int
    gas_cost: int
    depth: int
    stack: tuple[str, ...] = ()

    @classmethod
    def from_json(cls, doc: Mapping) -> "StructLogRecord":
        try:
            return cls(pc=int(doc["pc"]), op=str(doc["op"]), gas=int(doc["gas"]),
                       gas_cost=int(doc["gasCost"]), depth=int(doc["depth"]),
                       stack=tuple(str(w) for w in doc.get("stack") or ()))
        except (KeyError, TypeError, ValueError) as exc:
            raise GethTraceError(f"bad structLog record: {exc}") from None


@dataclass(frozen=True)
class TxEnvelope:
    """Per-transaction sidecar data the record stream itself does not carry."""

    id: str
    to: str | None
    block_number: int
    index: int
    kind: TxKind
    gas: int = DEFAULT_TRANSFER_GAS

    def __post_init__(self) -> None:
        if self.kind is TxKind.CONTRACT_CALL:
            if self.to is None:
                raise GethTraceError(f"tx {self.id}: contract-call envelope needs a recipient")
            object.__setattr__(self, "to", canonical_address(self.to))
        elif self.to is not None:
            object.__setattr__(self, "to", canonical_address(self.to))


def _word_int(word: str, where: str) -> int:
    try:
        return int(word, 16)
    except ValueError:
        raise GethTraceError(f"{where}: bad stack word {word!r}") from None


def _word_address(word: str, where: str) -> str:
    """Low 20 bytes of a stack word, as a canonical contract address."""
    return f"{_word_int(word, where) & _ADDRESS_MASK:040x}"


def _word_key(word: str, where: str) -> str:
    return f"{_word_int(word, where):064x}"


def _context_contract(context: str) -> str:
    """Storage-owning address for a context entry.

    Synthetic creation labels are not addresses; they map to a stable derived
    address so storage cells stay well-formed and distinct per creation."""
    if context.startswith("create:"):
        return hashlib.sha256(context.encode("utf-8")).hexdigest()[:40]
    return context


def _entered_context(envelope: TxEnvelope, call_record: StructLogRecord,
                     contexts: list[str], creations: int) -> tuple[str, int]:
    op = call_record.op
    where = f"tx {envelope.id} pc {call_record.pc}"
    if op in _CALL_OPS:
        if len(call_record.stack) < 2:
            raise GethTraceError(f"{where}: {op} missing callee stack operand")
        return _word_address(call_record.stack[-2], where), creations
    if op in _DELEGATE_OPS:
        # storage context stays with the caller
        return contexts[-1], creations
    if op in _CREATE_OPS:
        return f"create:{envelope.id}:{creations}", creations + 1
    raise GethTraceError(f"{where}: depth increased after non-call op {op}")


def convert_tx(envelope: TxEnvelope, records: Sequence[StructLogRecord]) -> Transaction:
    """Convert one transaction's execution records into a canonical transaction.

    SLOAD/SSTORE become READ/WRITE ops on (current context, stack top); every
    other record folds into OTHER runs carrying the summed gasCost and the
    record count. Zero-cost records still count as instructions.
    """
    if envelope.kind is TxKind.VALUE_TRANSFER:
        if records:
            raise GethTraceError(f"tx {envelope.id}: value transfers carry no records")
        return value_transfer(envelope.id, envelope.index, envelope.gas)

    ops: list[Op] = []
    other_gas = 0
    other_n = 0
    contexts = [envelope.to]
    creations = 0
    previous: StructLogRecord | None = None

    def flush() -> None:
        nonlocal other_gas, other_n
        if other_n:
            ops.append(Op(OpKind.OTHER, other_gas, other_n))
            other_gas = other_n = 0

    for record in records:
        where = f"tx {envelope.id} pc {record.pc}"
        if record.depth < 1:
            raise GethTraceError(f"{where}: depth {record.depth} below 1")
        if previous is None:
            if record.depth != 1:
                raise GethTraceError(f"tx {envelope.id}: trace starts at depth {record.depth}")
        else:
            step = record.depth - previous.depth
            if step == 1:
                entered, creations = _entered_context(envelope, previous, contexts, creations)
                contexts.append(entered)
            elif step == -1:
                contexts.pop()
            elif step != 0:
                raise GethTraceError(f"{where}: depth jumped by {step}")
        if len(contexts) != record.depth:
            raise GethTraceError(f"{where}: context stack out of sync with depth")
        if record.op in ("SLOAD", "SSTORE"):
            if not record.stack:
                raise GethTraceError(f"{where}: {record.op} missing stack operand")
            flush()
            cell = StorageCell(_context_contract(contexts[-1]), _word_key(record.stack[-1], where))
            kind = OpKind.READ if record.op == "SLOAD" else OpKind.WRITE
            ops.append(Op(kind, record.gas_cost, 1, cell))
        else:
            other_gas += record.gas_cost
            other_n += 1
        previous = record
    flush()
    return contract_call(envelope.id, envelope.index, ops)


def convert_block(number: int, envelopes: Sequence[TxEnvelope],
                  records_by_tx: Mapping[str, Sequence[StructLogRecord]]) -> Block:
    """Convert one block's envelopes plus per-transaction record streams."""
    txs = []
    for position, envelope in enumerate(envelopes):
        if envelope.index != position:
            raise GethTraceError(
                f"block {number}: envelope {envelope.id} out of order "
                f"(index {envelope.index} at position {position})")
        if envelope.block_number != number:
            raise GethTraceError(
                f"block {number}: envelope {envelope.id} belongs to block {envelope.block_number}")
        try:
            txs.append(convert_tx(envelope, records_by_tx.get(envelope.id, ())))
        except TraceValidationError as exc:
            raise GethTraceError(f"tx {envelope.id}: {exc}") from None
    return Block(number, tuple(txs))


def read_struct_log(source) -> list[StructLogRecord]:
    """Read a tracing API document: either {"structLogs": [...]} or a bare
    record array, from a file object or an already-parsed value."""
    doc = json.load(source) if hasattr(source, "read") else source
    if isinstance(doc, Mapping) and "structLogs" in doc:
        doc = doc["structLogs"]
    if not isinstance(doc, list):
        raise GethTraceError("expected a structLogs array")
    return [StructLogRecord.from_json(record) for record in doc]


def read_envelopes(source) -> tuple[int, list[TxEnvelope]]:
    """Read a block's envelope sidecar: {"number": N, "transactions": [...]}
    where each entry carries id, index, kind ("call"|"transfer"), to, gas."""
    doc = json.load(source) if hasattr(source, "read") else source
    try:
        number = int(doc["number"])
        raw = doc["transactions"]
    except (KeyError, TypeError, ValueError) as exc:
        raise GethTraceError(f"bad envelope sidecar: {exc}") from None
    envelopes = []
    for item in raw:
        try:
            kind = TxKind(str(item["kind"]))
            envelopes.append(TxEnvelope(
                id=str(item["id"]), to=item.get("to"), block_number=number,
                index=int(item["index"]), kind=kind,
                gas=int(item.get("gas", DEFAULT_TRANSFER_GAS))))
        except (KeyError, TypeError, ValueError) as exc:
            raise GethTraceError(f"bad envelope entry: {exc}") from None
    return number, envelopes
