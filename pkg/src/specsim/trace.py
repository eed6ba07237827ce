"""Canonical transaction-trace model and its line-delimited serialization.

A trace is an ordered list of blocks; each block serializes to exactly one
JSON line, so corpora stream, concatenate, and diff cleanly. All model types
are immutable values, validated on construction, and safe to share across
threads or processes.
"""

from __future__ import annotations

import gzip
import io
import json
import os
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

__all__ = [
    "AccessSets",
    "Block",
    "Op",
    "OpKind",
    "StorageCell",
    "TraceError",
    "TraceFormatError",
    "TraceValidationError",
    "Transaction",
    "TxKind",
    "canonical_address",
    "canonical_key",
    "contract_call",
    "derive_access_sets",
    "load_trace",
    "other_op",
    "read_op",
    "read_trace",
    "save_trace",
    "sets_conflict",
    "value_transfer",
    "write_op",
    "write_trace",
]

_HEX_DIGITS = frozenset("0123456789abcdef")


class TraceError(Exception):
    """Base class for trace decoding and validation failures."""


class TraceFormatError(TraceError):
    """A line of a trace stream could not be decoded."""

    def __init__(self, reason: str, line_number: int | None = None):
        self.reason = reason
        self.line_number = line_number
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(prefix + reason)


class TraceValidationError(TraceError):
    """Decoded data violates a model invariant."""


def _require_hex(value, width: int, what: str) -> None:
    if not isinstance(value, str) or len(value) != width or not set(value) <= _HEX_DIGITS:
        raise TraceValidationError(f"{what} must be exactly {width} lowercase hex chars, got {value!r}")


def canonical_address(text: str) -> str:
    """Normalize an address-like string ("0xAB..", short hex) to 40 lowercase hex chars."""
    body = text.lower().removeprefix("0x")
    if body and len(body) <= 40 and set(body) <= _HEX_DIGITS:
        return body.zfill(40)
    raise TraceValidationError(f"cannot read {text!r} as a contract address")


def canonical_key(text: str) -> str:
    """Normalize a storage-key string to 64 lowercase hex chars."""
    body = text.lower().removeprefix("0x")
    if body and len(body) <= 64 and set(body) <= _HEX_DIGITS:
        return body.zfill(64)
    raise TraceValidationError(f"cannot read {text!r} as a storage key")


@dataclass(frozen=True, order=True)
class StorageCell:
    """One persistent-storage location (contract address + storage key).

    The unit of locking and of conflict attribution; equality is byte-wise
    on the canonical lowercase hex forms.
    """

    contract: str
    key: str

    def __post_init__(self) -> None:
        _require_hex(self.contract, 40, "contract")
        _require_hex(self.key, 64, "key")


class OpKind(Enum):
    READ = "r"
    WRITE = "w"
    OTHER = "o"


class TxKind(Enum):
    CONTRACT_CALL = "call"
    VALUE_TRANSFER = "transfer"


@dataclass(frozen=True)
class Op:
    """One step of a transaction trace.

    READ/WRITE touch exactly one storage cell and count as one instruction.
    OTHER run-length-compresses a span of non-storage instructions, carrying
    their aggregate gas.
    """

    kind: OpKind
    gas: int
    instructions: int = 1
    cell: StorageCell | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.gas, int) or isinstance(self.gas, bool) or self.gas < 0:
            raise TraceValidationError(f"op gas must be a non-negative integer, got {self.gas!r}")
        if not isinstance(self.instructions, int) or isinstance(self.instructions, bool) or self.instructions < 1:
            raise TraceValidationError(f"op instruction count must be a positive integer, got {self.instructions!r}")
        if self.kind is OpKind.OTHER:
            if self.cell is not None:
                raise TraceValidationError("OTHER ops carry no storage cell")
        else:
            if self.cell is None:
                raise TraceValidationError(f"{self.kind.name} op requires a storage cell")
            if self.instructions != 1:
                raise TraceValidationError("storage ops are single instructions")


def read_op(cell: StorageCell, gas: int) -> Op:
    return Op(OpKind.READ, gas, 1, cell)


def write_op(cell: StorageCell, gas: int) -> Op:
    return Op(OpKind.WRITE, gas, 1, cell)


def other_op(gas: int, instructions: int = 1) -> Op:
    return Op(OpKind.OTHER, gas, instructions)


@dataclass(frozen=True)
class Transaction:
    """An ordered op trace plus its cost totals; the unit of speculation."""

    id: str
    index: int
    kind: TxKind
    ops: tuple[Op, ...]
    gas_total: int
    instr_total: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "ops", tuple(self.ops))
        if not isinstance(self.index, int) or self.index < 0:
            raise TraceValidationError(f"tx {self.id!r}: index must be a non-negative integer")
        if self.kind is TxKind.VALUE_TRANSFER:
            if self.ops:
                raise TraceValidationError(f"tx {self.id!r}: value transfers carry no ops")
            if self.gas_total < 0 or self.instr_total < 0:
                raise TraceValidationError(f"tx {self.id!r}: totals must be non-negative")
            return
        gas = sum(op.gas for op in self.ops)
        instr = sum(op.instructions for op in self.ops)
        if self.gas_total != gas:
            raise TraceValidationError(
                f"tx {self.id!r}: gas_total {self.gas_total} != sum of op gas {gas}")
        if self.instr_total != instr:
            raise TraceValidationError(
                f"tx {self.id!r}: instr_total {self.instr_total} != sum of op instructions {instr}")


def contract_call(tx_id: str, index: int, ops: Iterable[Op]) -> Transaction:
    """Build a contract-call transaction with totals derived from its ops."""
    ops = tuple(ops)
    return Transaction(
        tx_id, index, TxKind.CONTRACT_CALL, ops,
        sum(op.gas for op in ops), sum(op.instructions for op in ops))


def value_transfer(tx_id: str, index: int, gas: int) -> Transaction:
    """Build a plain value transfer: gas but no trace ops."""
    return Transaction(tx_id, index, TxKind.VALUE_TRANSFER, (), gas, 0)


@dataclass(frozen=True)
class Block:
    number: int
    transactions: tuple[Transaction, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "transactions", tuple(self.transactions))
        if not isinstance(self.number, int) or self.number < 0:
            raise TraceValidationError(f"block number must be a non-negative integer, got {self.number!r}")
        for position, tx in enumerate(self.transactions):
            if tx.index != position:
                raise TraceValidationError(
                    f"block {self.number}: tx {tx.id!r} has index {tx.index}, expected {position}")


@dataclass(frozen=True)
class AccessSets:
    """The storage cells a transaction reads and writes."""

    reads: frozenset[StorageCell]
    writes: frozenset[StorageCell]


def derive_access_sets(tx: Transaction) -> AccessSets:
    """Collect the full read/write sets of a transaction, independent of any schedule."""
    reads = frozenset(op.cell for op in tx.ops if op.kind is OpKind.READ)
    writes = frozenset(op.cell for op in tx.ops if op.kind is OpKind.WRITE)
    return AccessSets(reads, writes)


def sets_conflict(a: AccessSets, b: AccessSets) -> bool:
    """True iff the two access-set pairs share a cell and at least one touch is a write."""
    return bool(a.writes & (b.reads | b.writes)) or bool(b.writes & a.reads)


# --- codec ---------------------------------------------------------------
#
# Canonical form: one block per line, fixed key order, no extra whitespace.
#   block: number, transactions
#   tx:    id, index, kind ("call"|"transfer"), gas_total, instr_total, ops
#   op:    kind ("r"|"w"|"o"), contract, key, gas, n
# OTHER ops omit contract/key. Files ending ".gz" are gzip-compressed.


def _op_to_json(op: Op) -> dict:
    if op.kind is OpKind.OTHER:
        return {"kind": "o", "gas": op.gas, "n": op.instructions}
    return {"kind": op.kind.value, "contract": op.cell.contract, "key": op.cell.key,
            "gas": op.gas, "n": op.instructions}


def _tx_to_json(tx: Transaction) -> dict:
    return {"id": tx.id, "index": tx.index, "kind": tx.kind.value,
            "gas_total": tx.gas_total, "instr_total": tx.instr_total,
            "ops": [_op_to_json(op) for op in tx.ops]}


def block_to_line(block: Block) -> str:
    """Serialize one block to its canonical single-line JSON form."""
    doc = {"number": block.number,
           "transactions": [_tx_to_json(tx) for tx in block.transactions]}
    return json.dumps(doc, separators=(",", ":"))


def _take(obj, key: str, kinds, where: str):
    if not isinstance(obj, dict):
        raise TraceFormatError(f"{where}: expected an object")
    if key not in obj:
        raise TraceFormatError(f"{where}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, kinds) or isinstance(value, bool):
        raise TraceFormatError(f"{where}: field {key!r} has unexpected type {type(value).__name__}")
    return value


def _op_from_json(obj, where: str) -> Op:
    kind = _take(obj, "kind", str, where)
    gas = _take(obj, "gas", int, where)
    n = _take(obj, "n", int, where)
    if kind == "o":
        return Op(OpKind.OTHER, gas, n)
    if kind in ("r", "w"):
        cell = StorageCell(_take(obj, "contract", str, where), _take(obj, "key", str, where))
        return Op(OpKind(kind), gas, n, cell)
    raise TraceFormatError(f"{where}: unknown op kind {kind!r}")


def _tx_from_json(obj, where: str) -> Transaction:
    tx_id = _take(obj, "id", str, where)
    index = _take(obj, "index", int, where)
    kind = _take(obj, "kind", str, where)
    if kind not in ("call", "transfer"):
        raise TraceFormatError(f"{where}: unknown tx kind {kind!r}")
    gas_total = _take(obj, "gas_total", int, where)
    instr_total = _take(obj, "instr_total", int, where)
    raw_ops = _take(obj, "ops", list, where)
    ops = tuple(_op_from_json(op, f"{where} op {i}") for i, op in enumerate(raw_ops))
    return Transaction(tx_id, index, TxKind(kind), ops, gas_total, instr_total)


def block_from_line(line: str, line_number: int | None = None) -> Block:
    """Decode one canonical block line; errors carry the line number."""
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"invalid JSON ({exc.msg})", line_number) from None
    where = f"line {line_number}" if line_number is not None else "block"
    try:
        number = _take(doc, "number", int, where)
        raw_txs = _take(doc, "transactions", list, where)
        txs = tuple(_tx_from_json(tx, f"{where} tx {i}") for i, tx in enumerate(raw_txs))
        return Block(number, txs)
    except TraceValidationError as exc:
        raise TraceValidationError(f"{where}: {exc}") from None


def read_trace(stream) -> list[Block]:
    """Read a line-delimited trace stream (text or bytes) into validated blocks."""
    blocks: list[Block] = []
    last: int | None = None
    for line_number, raw in enumerate(stream, start=1):
        if isinstance(raw, (bytes, bytearray)):
            raw = raw.decode("utf-8")
        line = raw.strip()
        if not line:
            continue
        block = block_from_line(line, line_number)
        if last is not None and block.number <= last:
            raise TraceValidationError(
                f"line {line_number}: block numbers must be strictly increasing "
                f"({block.number} after {last})")
        last = block.number
        blocks.append(block)
    return blocks


def write_trace(blocks: Sequence[Block], sink) -> None:
    """Write blocks in canonical form; write_trace then read_trace is the identity."""
    last: int | None = None
    for block in blocks:
        if last is not None and block.number <= last:
            raise TraceValidationError(
                f"block numbers must be strictly increasing ({block.number} after {last})")
        last = block.number
        data = block_to_line(block) + "\n"
        try:
            sink.write(data)
        except TypeError:
            sink.write(data.encode("utf-8"))


def save_trace(blocks: Sequence[Block], path) -> None:
    """Write a trace file; ".gz" paths are gzip-compressed with pinned metadata
    so identical traces always produce identical bytes."""
    path = os.fspath(path)
    if path.endswith(".gz"):
        with open(path, "wb") as raw:
            # filename and mtime pinned so equal traces give equal bytes
            with gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as gz:
                with io.TextIOWrapper(gz, encoding="utf-8", newline="\n") as text:
                    write_trace(blocks, text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            write_trace(blocks, fh)


def load_trace(path) -> list[Block]:
    """Read a trace file written by save_trace (gzip detected by ".gz" suffix)."""
    path = os.fspath(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rt", encoding="utf-8") as fh:
        return read_trace(fh)
