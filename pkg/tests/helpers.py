"""Shared fixtures: golden micro-traces, random block builders, and an
independent single-step reference simulator used to cross-check the engine.
"""

from __future__ import annotations

import random
from collections import defaultdict, deque
from dataclasses import replace

from specsim.engine import (
    BlockOutcome,
    ClockMode,
    ConflictEvent,
    CostProxy,
    LockMode,
    PhaseOutcome,
    SimConfig,
    transaction_cost,
)
from specsim.trace import (
    Block,
    OpKind,
    StorageCell,
    TxKind,
    contract_call,
    other_op,
    read_op,
    value_transfer,
    write_op,
)
from specsim.workload import contract_address, storage_key


def cell(contract: int, key: int) -> StorageCell:
    return StorageCell(contract_address(contract), storage_key(key))


C1K1 = cell(1, 1)


def g1_block(number: int = 7) -> Block:
    """Three calls, one write/read collision on C1.k1, one independent call."""
    return Block(number, (
        contract_call("T1", 0, [other_op(5, 1), write_op(C1K1, 20), other_op(5, 1)]),
        contract_call("T2", 1, [read_op(C1K1, 2), other_op(8, 1)]),
        contract_call("T3", 2, [other_op(10, 2)]),
    ))


G1_CONFIG = SimConfig(threads=2)


def m1_block(number: int = 0) -> Block:
    """Two equal single-READ calls on the same cell."""
    return Block(number, (
        contract_call("A", 0, [read_op(C1K1, 200)]),
        contract_call("B", 1, [read_op(C1K1, 200)]),
    ))


def three_writer_block(number: int = 1) -> Block:
    """Three single-WRITE calls on one cell with gas 10/20/30."""
    return Block(number, tuple(
        contract_call(f"W{i}", i, [write_op(C1K1, gas)])
        for i, gas in enumerate((10, 20, 30))))


def random_block(rng: random.Random, number: int = 0, max_txs: int = 10,
                 contracts: int = 3, keys: int = 2, transfers: bool = False) -> Block:
    """Small random block over a tight cell pool (so conflicts actually happen)."""
    txs = []
    for index in range(rng.randint(0, max_txs)):
        if transfers and rng.random() < 0.2:
            txs.append(value_transfer(f"x{number}-{index}", index, rng.randint(0, 21000)))
            continue
        ops = []
        for _ in range(rng.randint(0, 6)):
            roll = rng.random()
            if roll < 0.4:
                ops.append(other_op(rng.randint(0, 30), rng.randint(1, 3)))
            else:
                target = cell(rng.randrange(contracts), rng.randrange(keys))
                gas = rng.randint(0, 25)
                ops.append(write_op(target, gas) if roll < 0.7 else read_op(target, gas))
        txs.append(contract_call(f"t{number}-{index}", index, ops))
    return Block(number, tuple(txs))


def merge_blocks(a: Block, b: Block) -> Block:
    """Concatenate two blocks' transactions under `a`'s number, re-indexed."""
    combined = list(a.transactions) + list(b.transactions)
    return Block(a.number, tuple(
        replace(tx, index=i, id=f"{tx.id}#{i}") for i, tx in enumerate(combined)))


def merge_traces(a: list[Block], b: list[Block]) -> list[Block]:
    return [merge_blocks(x, y) for x, y in zip(a, b)]


# --- independent reference simulator --------------------------------------
#
# Single-step scheduler with its own lock bookkeeping: global time advances
# one tick at a time and due ops are taken lowest-transaction-index first.
# Shares no scheduling code with specsim.engine.


def _op_cost(op, proxy):
    return op.gas if proxy is CostProxy.GAS else op.instructions


def _op_weight(op, config):
    if config.clock is ClockMode.INSTRUCTIONS:
        return op.instructions
    return _op_cost(op, config.proxy)


def _tx_weight(tx, config):
    if config.clock is ClockMode.INSTRUCTIONS:
        return tx.instr_total
    return transaction_cost(tx, config.proxy)


def naive_phase(txs, config: SimConfig, phase: int = 0) -> PhaseOutcome:
    pending = deque(txs)
    frames: list[dict | None] = [None] * config.threads
    clock = [0] * config.threads
    cost = [0] * config.threads
    charged: dict[int, int] = defaultdict(int)
    readers: dict[StorageCell, set[int]] = defaultdict(set)
    writer: dict[StorageCell, int] = {}
    mutex_holder: dict[StorageCell, int] = {}
    committed: set[int] = set()
    aborted: set[int] = set()
    conflicts: list[ConflictEvent] = []
    tx_thread: dict[int, int] = {}

    def try_lock(target, kind, tx):
        if config.lock_mode is LockMode.MUTEX:
            holder = mutex_holder.get(target)
            if holder is None or holder == tx:
                mutex_holder[target] = tx
                return None
            return holder
        if kind is OpKind.READ:
            holder = writer.get(target)
            if holder is not None and holder != tx:
                return holder
            readers[target].add(tx)
            return None
        holder = writer.get(target)
        if holder is not None and holder != tx:
            return holder
        others = readers[target] - {tx}
        if others:
            return min(others)
        writer[target] = tx
        return None

    def assign(thread):
        while pending:
            tx = pending.popleft()
            tx_thread[tx.index] = thread
            if tx.ops:
                frames[thread] = {"tx": tx, "pos": 0, "start": clock[thread]}
                return
            cost[thread] += transaction_cost(tx, config.proxy)
            charged[tx.index] += transaction_cost(tx, config.proxy)
            clock[thread] += _tx_weight(tx, config)
            committed.add(tx.index)
        frames[thread] = None

    for thread in range(config.threads):
        assign(thread)

    now = 0
    while any(frames):
        while True:
            due = [i for i in range(config.threads)
                   if frames[i] is not None and frames[i]["start"] == now]
            if not due:
                break
            thread = min(due, key=lambda i: frames[i]["tx"].index)
            frame = frames[thread]
            tx, pos = frame["tx"], frame["pos"]
            op = tx.ops[pos]
            cost[thread] += _op_cost(op, config.proxy)
            charged[tx.index] += _op_cost(op, config.proxy)
            clock[thread] = now + _op_weight(op, config)
            holder = None
            if op.kind is not OpKind.OTHER:
                holder = try_lock(op.cell, op.kind, tx.index)
            if holder is not None:
                conflicts.append(ConflictEvent(op.cell, tx.index, holder, phase, pos))
                aborted.add(tx.index)
                assign(thread)
            elif pos + 1 < len(tx.ops):
                frame["pos"] = pos + 1
                frame["start"] = clock[thread]
            else:
                committed.add(tx.index)
                assign(thread)
        now += 1

    return PhaseOutcome(
        committed=frozenset(committed),
        aborted=frozenset(aborted),
        thread_cost=tuple(cost),
        aborted_partial_cost={i: charged[i] for i in sorted(aborted)},
        conflicts=tuple(conflicts),
        tx_thread=tx_thread,
    )


def naive_simulate_block(block: Block, config: SimConfig) -> BlockOutcome:
    simulated = []
    for tx in block.transactions:
        if tx.kind is TxKind.VALUE_TRANSFER and not config.include_transfers:
            continue
        if any(op.cell is not None and op.cell.contract in config.excluded_contracts
               for op in tx.ops):
            continue
        simulated.append(tx)
    calls = sum(1 for tx in simulated if tx.kind is TxKind.CONTRACT_CALL)
    remaining = simulated
    phases = []
    for phase in range(config.phases):
        outcome = naive_phase(remaining, config, phase)
        phases.append(outcome)
        remaining = [tx for tx in remaining if tx.index in outcome.aborted]
    return BlockOutcome(
        block_number=block.number,
        config=config,
        calls=calls,
        phases=tuple(phases),
        sequential_bin=tuple(tx.index for tx in remaining),
        sequential_cost=sum(transaction_cost(tx, config.proxy) for tx in remaining),
        seq_baseline_cost=sum(transaction_cost(tx, config.proxy) for tx in simulated),
    )
