"""Deterministic simulation of greedy speculative execution over one block.

A simulated machine runs a fixed number of worker threads: idle threads pull
transactions from a shared queue in block order and execute their ops against
a per-phase lock table. The first denied lock request aborts the transaction;
aborted transactions keep every lock they already hold, are re-queued into
later concurrent phases when configured, and are finally replayed serially at
full cost. Virtual time exists only per thread, so the whole simulation is a
pure function of its inputs.

Scheduling is fixed for determinism: pending op events are processed in
ascending (virtual time, transaction index) order; every executed op — the
conflicting one included — is charged to its thread and advances that
thread's clock by the op's clock weight.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Mapping, Sequence

from .trace import Block, Op, OpKind, StorageCell, Transaction, TxKind

__all__ = [
    "BlockOutcome",
    "ClockMode",
    "ConflictEvent",
    "CostProxy",
    "LockMode",
    "LockTable",
    "PhaseOutcome",
    "SimConfig",
    "compute_speedup",
    "run_concurrent_phase",
    "simulate_block",
    "transaction_cost",
]


class LockMode(Enum):
    RW = "rw"
    MUTEX = "mutex"


class CostProxy(Enum):
    GAS = "gas"
    INSTRUCTIONS = "instructions"


class ClockMode(Enum):
    INSTRUCTIONS = "instructions"
    PROXY = "proxy"


@dataclass(frozen=True)
class SimConfig:
    """Knobs of the simulated machine; hashable so configs can key result maps."""

    threads: int
    lock_mode: LockMode = LockMode.RW
    phases: int = 1
    proxy: CostProxy = CostProxy.GAS
    clock: ClockMode = ClockMode.INSTRUCTIONS
    predictor: bool = False
    include_transfers: bool = False
    excluded_contracts: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.phases < 1:
            raise ValueError("phases must be >= 1")
        object.__setattr__(self, "excluded_contracts", frozenset(self.excluded_contracts))


class _LockState:
    __slots__ = ("readers", "writer")

    def __init__(self) -> None:
        self.readers: set[int] = set()
        self.writer: int | None = None


class LockTable:
    """Per-cell read-write (or mutex) locks for one concurrent phase.

    Entries are never removed while the phase runs, and aborted transactions
    keep every lock they acquired; that is what makes the committed set safe
    to replay in any interleaving.
    """

    def __init__(self, mode: LockMode = LockMode.RW):
        self.mode = mode
        self._cells: dict[StorageCell, _LockState] = {}
        self._frozen = False

    def request(self, cell: StorageCell, kind: OpKind, tx: int) -> int | None:
        """Request `cell` in read or write mode on behalf of transaction `tx`.

        Returns None when granted, otherwise the index of a transaction
        holding the cell in a conflicting mode (the lowest such index when
        several readers block a write). A denied request leaves the table
        unchanged; grants are re-entrant, and a sole reader may upgrade to a
        write.
        """
        if self._frozen:
            raise RuntimeError("phase ended: lock table is frozen")
        if kind is OpKind.OTHER:
            raise ValueError("OTHER ops take no locks")
        state = self._cells.get(cell)
        if state is None:
            state = self._cells[cell] = _LockState()
        if self.mode is LockMode.MUTEX:
            # single conflict set: reads and writes take the same exclusive hold
            if state.writer is None or state.writer == tx:
                state.writer = tx
                return None
            return state.writer
        if kind is OpKind.READ:
            if state.writer is not None and state.writer != tx:
                return state.writer
            state.readers.add(tx)
            return None
        if state.writer is not None and state.writer != tx:
            return state.writer
        others = state.readers - {tx}
        if others:
            return min(others)
        state.writer = tx
        return None

    def freeze(self) -> None:
        """End the phase: any further request is a usage error."""
        self._frozen = True

    def holders(self, cell: StorageCell) -> tuple[frozenset[int], int | None]:
        state = self._cells.get(cell)
        if state is None:
            return frozenset(), None
        return frozenset(state.readers), state.writer


@dataclass(frozen=True)
class ConflictEvent:
    """One denied lock request: `aborted_tx` ran into `holder_tx`'s hold on `cell`."""

    cell: StorageCell
    aborted_tx: int
    holder_tx: int
    phase: int
    op_position: int


@dataclass(frozen=True)
class PhaseOutcome:
    """Result of one concurrent phase.

    `thread_cost` includes partial work of aborted transactions; those
    partials (prior ops plus the conflicting op) are also recorded per
    transaction in `aborted_partial_cost`. `tx_thread` maps every
    transaction that ran in this phase to the thread that ran it.
    """

    committed: frozenset[int]
    aborted: frozenset[int]
    thread_cost: tuple[int, ...]
    aborted_partial_cost: Mapping[int, int]
    conflicts: tuple[ConflictEvent, ...]
    tx_thread: Mapping[int, int]


@dataclass(frozen=True)
class BlockOutcome:
    """Everything the metrics layer needs about one simulated block."""

    block_number: int
    config: SimConfig
    calls: int
    phases: tuple[PhaseOutcome, ...]
    sequential_bin: tuple[int, ...]
    sequential_cost: int
    seq_baseline_cost: int


def transaction_cost(tx: Transaction, proxy: CostProxy) -> int:
    """Full execution cost of a transaction under the chosen time proxy."""
    return tx.gas_total if proxy is CostProxy.GAS else tx.instr_total


def _op_cost(op: Op, proxy: CostProxy) -> int:
    return op.gas if proxy is CostProxy.GAS else op.instructions


def _op_clock_weight(op: Op, config: SimConfig) -> int:
    if config.clock is ClockMode.INSTRUCTIONS:
        return op.instructions
    return _op_cost(op, config.proxy)


def _tx_clock_weight(tx: Transaction, config: SimConfig) -> int:
    if config.clock is ClockMode.INSTRUCTIONS:
        return tx.instr_total
    return transaction_cost(tx, config.proxy)


def run_concurrent_phase(txs: Sequence[Transaction], config: SimConfig,
                         phase: int = 0) -> PhaseOutcome:
    """Run one speculative phase over `txs` (given in block order)."""
    by_index = {tx.index: tx for tx in txs}
    queue = list(txs)
    queue.reverse()  # pop() from the end == pull in block order
    locks = LockTable(config.lock_mode)
    clock = [0] * config.threads
    cost = [0] * config.threads
    charged: dict[int, int] = {}
    tx_thread: dict[int, int] = {}
    committed: set[int] = set()
    aborted: set[int] = set()
    conflicts: list[ConflictEvent] = []
    # one pending event per busy thread: (virtual time, tx index, op position, thread)
    events: list[tuple[int, int, int, int]] = []

    def pull(thread: int) -> None:
        while queue:
            tx = queue.pop()
            tx_thread[tx.index] = thread
            if tx.ops:
                heapq.heappush(events, (clock[thread], tx.index, 0, thread))
                return
            # ops-free transactions (value transfers) commit instantly at full cost
            cost[thread] += transaction_cost(tx, config.proxy)
            clock[thread] += _tx_clock_weight(tx, config)
            charged[tx.index] = transaction_cost(tx, config.proxy)
            committed.add(tx.index)

    for thread in range(config.threads):
        pull(thread)

    while events:
        time, index, position, thread = heapq.heappop(events)
        tx = by_index[index]
        op = tx.ops[position]
        cost[thread] += _op_cost(op, config.proxy)
        charged[index] = charged.get(index, 0) + _op_cost(op, config.proxy)
        clock[thread] = time + _op_clock_weight(op, config)
        holder = None
        if op.kind is not OpKind.OTHER:
            holder = locks.request(op.cell, op.kind, index)
        if holder is not None:
            conflicts.append(ConflictEvent(op.cell, index, holder, phase, position))
            aborted.add(index)
        elif position + 1 < len(tx.ops):
            heapq.heappush(events, (clock[thread], index, position + 1, thread))
            continue
        else:
            committed.add(index)
        pull(thread)

    locks.freeze()
    return PhaseOutcome(
        committed=frozenset(committed),
        aborted=frozenset(aborted),
        thread_cost=tuple(cost),
        aborted_partial_cost={i: charged[i] for i in sorted(aborted)},
        conflicts=tuple(conflicts),
        tx_thread=tx_thread,
    )


def _is_simulated(tx: Transaction, config: SimConfig) -> bool:
    if tx.kind is TxKind.VALUE_TRANSFER and not config.include_transfers:
        return False
    if config.excluded_contracts:
        for op in tx.ops:
            if op.cell is not None and op.cell.contract in config.excluded_contracts:
                return False
    return True


def simulate_block(block: Block, config: SimConfig) -> BlockOutcome:
    """Simulate one block: the configured number of concurrent phases (each
    re-running the previous phase's aborted set against a fresh lock table),
    then a sequential replay of whatever still aborted. Pure and deterministic."""
    simulated = [tx for tx in block.transactions if _is_simulated(tx, config)]
    calls = sum(1 for tx in simulated if tx.kind is TxKind.CONTRACT_CALL)
    remaining = simulated
    outcomes = []
    for phase in range(config.phases):
        outcome = run_concurrent_phase(remaining, config, phase)
        outcomes.append(outcome)
        remaining = [tx for tx in remaining if tx.index in outcome.aborted]
    return BlockOutcome(
        block_number=block.number,
        config=config,
        calls=calls,
        phases=tuple(outcomes),
        sequential_bin=tuple(tx.index for tx in remaining),
        sequential_cost=sum(transaction_cost(tx, config.proxy) for tx in remaining),
        seq_baseline_cost=sum(transaction_cost(tx, config.proxy) for tx in simulated),
    )


def compute_speedup(outcome: BlockOutcome) -> Fraction:
    """Sequential baseline cost over the simulated parallel schedule cost.

    The schedule cost is the per-phase maximum thread cost summed over
    concurrent phases, plus the sequential replay cost. Under the
    perfect-predictor flag, aborted transactions' speculative work is struck
    from their threads before taking each phase maximum; the bins are
    untouched. Blocks with nothing to simulate yield 1 by convention.
    """
    denominator = 0
    for phase in outcome.phases:
        costs = list(phase.thread_cost)
        if outcome.config.predictor:
            for index, partial in phase.aborted_partial_cost.items():
                costs[phase.tx_thread[index]] -= partial
        denominator += max(costs)
    denominator += outcome.sequential_cost
    if denominator == 0:
        return Fraction(1)
    return Fraction(outcome.seq_baseline_cost, denominator)
