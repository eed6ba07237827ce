"""Seeded synthetic trace generator with tunable contention.

Contract popularity follows a bounded zipf law (exponent 0 = uniform) and
storage keys are uniform within a contract, so raising the skew concentrates
traffic on few contracts the way popular on-chain contracts do. An optional
hot-contract mode instead routes a fixed fraction of calls to one contract
with a small key set.

Every block draws from its own PRNG stream — ``PCG64(SeedSequence([seed,
block_number]))`` — so generating blocks in parallel, in any order, or in
isolation reproduces the serial corpus byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trace import Block, StorageCell, contract_call, other_op, read_op, write_op

__all__ = ["GenParams", "contract_address", "generate", "generate_block", "storage_key"]

# non-storage instructions are priced like cheap arithmetic: 5 gas apiece
OTHER_GAS_PER_INSTRUCTION = 5


def contract_address(index: int) -> str:
    """Deterministic 40-hex address of generated contract `index`."""
    return f"{index:040x}"


def storage_key(index: int) -> str:
    """Deterministic 64-hex storage key `index`."""
    return f"{index:064x}"


@dataclass(frozen=True)
class GenParams:
    """Shape of a synthetic corpus.

    Count-like knobs accept either an int or a (mean, spread) pair sampled
    uniformly from [mean - spread, mean + spread]. `ops_per_call` counts the
    storage accesses of a call; each is preceded by a run of non-storage
    instructions costing `other_gas`, with one trailing run after the last
    access. When `hot_fraction` > 0, that share of calls goes to contract 0
    restricted to `hot_keys` keys, and the zipf law covers the rest.
    """

    blocks: int
    calls_per_block: int | tuple[int, int] = 20
    ops_per_call: int | tuple[int, int] = (6, 3)
    contracts: int = 50
    keys_per_contract: int = 32
    contract_skew: float = 0.0
    write_ratio: float = 0.5
    other_gas: int | tuple[int, int] = (400, 200)
    read_gas: int = 200
    write_gas: int = 20000
    hot_fraction: float = 0.0
    hot_keys: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.blocks < 0:
            raise ValueError("blocks must be >= 0")
        if self.contracts < 1:
            raise ValueError("contracts must be >= 1")
        if self.keys_per_contract < 1 or self.hot_keys < 1:
            raise ValueError("key counts must be >= 1")
        if self.contract_skew < 0:
            raise ValueError("contract_skew must be >= 0")
        if not 0.0 <= self.write_ratio <= 1.0:
            raise ValueError("write_ratio must be within [0, 1]")
        if not 0.0 <= self.hot_fraction <= 1.0:
            raise ValueError("hot_fraction must be within [0, 1]")
        if self.hot_fraction > 0 and self.contracts < 2:
            raise ValueError("hot-contract mode needs at least 2 contracts")
        if self.read_gas < 0 or self.write_gas < 0:
            raise ValueError("storage gas must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        for name in ("calls_per_block", "ops_per_call", "other_gas"):
            value = getattr(self, name)
            if isinstance(value, (tuple, list)):
                mean, spread = value
                if mean < 0 or spread < 0:
                    raise ValueError(f"{name} mean and spread must be >= 0")
                object.__setattr__(self, name, (int(mean), int(spread)))
            elif value < 0:
                raise ValueError(f"{name} must be >= 0")


def _block_rng(params: GenParams, number: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([params.seed, number])))


def _sample_count(rng: np.random.Generator, spec) -> int:
    if isinstance(spec, tuple):
        mean, spread = spec
        return max(0, int(rng.integers(mean - spread, mean + spread + 1)))
    return int(spec)


def _zipf_weights(count: int, skew: float) -> np.ndarray:
    ranks = np.arange(1, count + 1, dtype=float)
    weights = ranks ** -skew if skew else np.ones(count)
    return weights / weights.sum()


def generate_block(params: GenParams, number: int) -> Block:
    """Generate block `number` from its dedicated PRNG stream."""
    rng = _block_rng(params, number)
    hot = params.hot_fraction > 0
    cold = params.contracts - 1 if hot else params.contracts
    weights = _zipf_weights(cold, params.contract_skew)

    def other_run():
        gas = _sample_count(rng, params.other_gas)
        return other_op(gas, max(1, gas // OTHER_GAS_PER_INSTRUCTION))

    txs = []
    for position in range(_sample_count(rng, params.calls_per_block)):
        if hot and rng.random() < params.hot_fraction:
            contract, n_keys = 0, params.hot_keys
        else:
            contract = int(rng.choice(cold, p=weights)) + (1 if hot else 0)
            n_keys = params.keys_per_contract
        address = contract_address(contract)
        ops = []
        for _ in range(_sample_count(rng, params.ops_per_call)):
            ops.append(other_run())
            cell = StorageCell(address, storage_key(int(rng.integers(n_keys))))
            if rng.random() < params.write_ratio:
                ops.append(write_op(cell, params.write_gas))
            else:
                ops.append(read_op(cell, params.read_gas))
        ops.append(other_run())
        txs.append(contract_call(f"b{number}-t{position}", position, ops))
    return Block(number, tuple(txs))


def generate(params: GenParams) -> list[Block]:
    """Generate the whole corpus; equivalent to per-block generation in any order."""
    return [generate_block(params, number) for number in range(params.blocks)]
