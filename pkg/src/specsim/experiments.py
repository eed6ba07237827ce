"""Experiment matrices: the baseline strategy plus its variant sweeps
(core counts, lock modes, phase counts, cost proxies, perfect prediction,
hot-contract exclusion, block sampling) over one trace corpus.

Every (block, configuration) simulation is independent, so corpora can be
fanned out over a process pool; results are merged in block order and are
identical for any worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from itertools import product
from typing import Callable, Mapping, Sequence

from .engine import ClockMode, CostProxy, LockMode, SimConfig, simulate_block
from .metrics import AggregateReport, BlockMetrics, aggregate, block_metrics, top_conflicting_contracts
from .trace import Block, canonical_address

__all__ = [
    "ExclusionSpec",
    "ExperimentError",
    "ExperimentManifest",
    "ExperimentMatrix",
    "ExperimentResult",
    "NO_EXCLUSION",
    "apply_contract_filter",
    "auto_top_k_exclusion",
    "config_key",
    "load_experiment_manifest",
    "run_experiment",
    "simulate_corpus",
]


class ExperimentError(Exception):
    """Simulation or manifest failure, annotated with its source."""


@dataclass(frozen=True)
class ExclusionSpec:
    """A named set of contracts to drop from the replay: either an explicit
    address set or the top-k most conflicting contracts of a baseline pass."""

    name: str
    contracts: frozenset[str] = frozenset()
    auto_top: int = 0

    def __post_init__(self) -> None:
        if self.auto_top < 0:
            raise ValueError("auto_top must be >= 0")
        if self.auto_top and self.contracts:
            raise ValueError("use explicit contracts or auto_top, not both")
        object.__setattr__(self, "contracts", frozenset(self.contracts))


NO_EXCLUSION = ExclusionSpec("none")


@dataclass(frozen=True)
class ExperimentMatrix:
    """Axes of the sweep; the run covers their full cartesian product.
    A sampling stride of s keeps every s-th block of the corpus."""

    thread_counts: tuple[int, ...] = (16, 32, 64)
    lock_modes: tuple[LockMode, ...] = (LockMode.RW,)
    phase_counts: tuple[int, ...] = (1,)
    proxies: tuple[CostProxy, ...] = (CostProxy.GAS,)
    clocks: tuple[ClockMode, ...] = (ClockMode.INSTRUCTIONS,)
    predictor_flags: tuple[bool, ...] = (False,)
    exclusions: tuple[ExclusionSpec, ...] = (NO_EXCLUSION,)
    stride: int = 1
    include_transfers: bool = False

    def __post_init__(self) -> None:
        for name in ("thread_counts", "lock_modes", "phase_counts", "proxies",
                     "clocks", "predictor_flags", "exclusions"):
            values = tuple(getattr(self, name))
            if not values:
                raise ValueError(f"{name} must not be empty")
            object.__setattr__(self, name, values)
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


_PROXY_TAG = {CostProxy.GAS: "gas", CostProxy.INSTRUCTIONS: "instr"}
_CLOCK_TAG = {ClockMode.INSTRUCTIONS: "clk_instr", ClockMode.PROXY: "clk_proxy"}


def config_key(config: SimConfig, exclusion: str = "none") -> str:
    """Canonical configuration name, e.g. "t16-rw-p1-gas-clk_instr-pred0-excl_none";
    used for report files and for deterministic result ordering."""
    return (f"t{config.threads}-{config.lock_mode.value}-p{config.phases}-"
            f"{_PROXY_TAG[config.proxy]}-{_CLOCK_TAG[config.clock]}-"
            f"pred{int(config.predictor)}-excl_{exclusion}")


def _touches(tx, excluded: frozenset[str]) -> bool:
    return any(op.cell is not None and op.cell.contract in excluded for op in tx.ops)


def apply_contract_filter(blocks: Sequence[Block], excluded) -> list[Block]:
    """Drop every transaction whose ops touch any excluded contract's storage.

    Block structure is preserved; surviving transactions are re-indexed so
    each block stays contiguous."""
    excluded = frozenset(excluded)
    if not excluded:
        return list(blocks)
    filtered = []
    for block in blocks:
        kept = [tx for tx in block.transactions if not _touches(tx, excluded)]
        if len(kept) == len(block.transactions):
            filtered.append(block)
        else:
            filtered.append(Block(block.number, tuple(
                replace(tx, index=i) for i, tx in enumerate(kept))))
    return filtered


def _metrics_job(args) -> BlockMetrics:
    block, config = args
    try:
        return block_metrics(simulate_block(block, config))
    except Exception as exc:
        raise ExperimentError(f"block {block.number}: {exc}") from exc


def simulate_corpus(blocks: Sequence[Block], config: SimConfig, *,
                    jobs: int = 1, pool: ProcessPoolExecutor | None = None) -> list[BlockMetrics]:
    """Per-block metrics for a corpus; `jobs`/`pool` only affect wall time."""
    args = [(block, config) for block in blocks]
    if pool is None and jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as owned:
            return list(owned.map(_metrics_job, args, chunksize=_chunksize(len(args))))
    if pool is not None:
        return list(pool.map(_metrics_job, args, chunksize=_chunksize(len(args))))
    return [_metrics_job(a) for a in args]


def _chunksize(items: int) -> int:
    return max(1, items // 64)


def auto_top_k_exclusion(blocks: Sequence[Block], base_config: SimConfig, k: int, *,
                         jobs: int = 1, pool: ProcessPoolExecutor | None = None) -> frozenset[str]:
    """One baseline pass over `blocks`, returning its k most conflicting
    contracts as an exclusion set for a second pass."""
    if k < 1:
        raise ValueError("k must be >= 1")
    metrics = simulate_corpus(blocks, base_config, jobs=jobs, pool=pool)
    return frozenset(contract for contract, _ in top_conflicting_contracts(metrics, k))


@dataclass(frozen=True)
class ExperimentResult:
    key: str
    config: SimConfig
    exclusion: str
    excluded_contracts: frozenset[str]
    report: AggregateReport


def run_experiment(blocks: Sequence[Block], matrix: ExperimentMatrix, *,
                   jobs: int = 1,
                   progress: Callable[[str], None] | None = None) -> dict[str, ExperimentResult]:
    """Simulate the whole matrix over `blocks` and aggregate one report per
    configuration; the result map is ordered by configuration key."""
    sampled = list(blocks)[::matrix.stride]
    combos = []
    for threads, lock, phases, proxy, clock, predictor, exclusion in product(
            matrix.thread_counts, matrix.lock_modes, matrix.phase_counts,
            matrix.proxies, matrix.clocks, matrix.predictor_flags, matrix.exclusions):
        base = SimConfig(threads=threads, lock_mode=lock, phases=phases, proxy=proxy,
                         clock=clock, predictor=predictor,
                         include_transfers=matrix.include_transfers)
        combos.append((config_key(base, exclusion.name), base, exclusion))
    combos.sort(key=lambda combo: combo[0])

    auto_cache: dict[tuple[SimConfig, int], frozenset[str]] = {}
    results: dict[str, ExperimentResult] = {}
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 and len(sampled) > 1 else None
    try:
        for key, base, exclusion in combos:
            excluded = exclusion.contracts
            if exclusion.auto_top:
                cache_key = (base, exclusion.auto_top)
                if cache_key not in auto_cache:
                    auto_cache[cache_key] = auto_top_k_exclusion(
                        sampled, base, exclusion.auto_top, pool=pool)
                excluded = auto_cache[cache_key]
            config = replace(base, excluded_contracts=excluded)
            metrics = simulate_corpus(sampled, config, pool=pool)
            results[key] = ExperimentResult(key, config, exclusion.name,
                                            frozenset(excluded), aggregate(metrics))
            if progress is not None:
                progress(key)
    finally:
        if pool is not None:
            pool.shutdown()
    return results


# --- manifest ------------------------------------------------------------
#
# JSON document:
#   {"trace": "corpus.jsonl", "out_dir": "reports",
#    "threads": [16, 32, 64], "locks": ["rw"], "phases": [1],
#    "proxies": ["gas"], "clocks": ["instructions"], "predictors": [false],
#    "exclusions": ["none", {"name": "top5", "top": 5},
#                   {"name": "pinned", "contracts": ["0x.."]}],
#    "stride": 1, "include_transfers": false}


@dataclass(frozen=True)
class ExperimentManifest:
    trace_path: str
    out_dir: str
    matrix: ExperimentMatrix


_LOCK_FROM_TAG = {"rw": LockMode.RW, "mutex": LockMode.MUTEX}
_PROXY_FROM_TAG = {"gas": CostProxy.GAS, "instructions": CostProxy.INSTRUCTIONS,
                   "instr": CostProxy.INSTRUCTIONS}
_CLOCK_FROM_TAG = {"instructions": ClockMode.INSTRUCTIONS, "instr": ClockMode.INSTRUCTIONS,
                   "proxy": ClockMode.PROXY}


def _parse_exclusion(raw) -> ExclusionSpec:
    if raw == "none":
        return NO_EXCLUSION
    if isinstance(raw, Mapping):
        name = str(raw.get("name", ""))
        if not name:
            raise ExperimentError("exclusion entries need a name")
        if "top" in raw:
            return ExclusionSpec(name, auto_top=int(raw["top"]))
        contracts = frozenset(canonical_address(c) for c in raw.get("contracts", ()))
        return ExclusionSpec(name, contracts=contracts)
    raise ExperimentError(f"cannot read exclusion entry {raw!r}")


def _parse_tags(doc: Mapping, field: str, table: Mapping, default: tuple) -> tuple:
    if field not in doc:
        return default
    values = []
    for raw in doc[field]:
        tag = str(raw).lower()
        if tag not in table:
            raise ExperimentError(f"manifest field {field!r}: unknown value {raw!r}")
        values.append(table[tag])
    return tuple(values)


def load_experiment_manifest(source) -> ExperimentManifest:
    """Read a sweep manifest from a path, file object, or parsed document."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, encoding="utf-8") as fh:
            doc = json.load(fh)
    elif hasattr(source, "read"):
        doc = json.load(source)
    else:
        doc = source
    try:
        trace_path = str(doc["trace"])
        out_dir = str(doc["out_dir"])
    except (KeyError, TypeError) as exc:
        raise ExperimentError(f"manifest needs trace and out_dir fields: {exc}") from None
    try:
        matrix = ExperimentMatrix(
            thread_counts=tuple(int(t) for t in doc.get("threads", (16, 32, 64))),
            lock_modes=_parse_tags(doc, "locks", _LOCK_FROM_TAG, (LockMode.RW,)),
            phase_counts=tuple(int(p) for p in doc.get("phases", (1,))),
            proxies=_parse_tags(doc, "proxies", _PROXY_FROM_TAG, (CostProxy.GAS,)),
            clocks=_parse_tags(doc, "clocks", _CLOCK_FROM_TAG, (ClockMode.INSTRUCTIONS,)),
            predictor_flags=tuple(bool(p) for p in doc.get("predictors", (False,))),
            exclusions=tuple(_parse_exclusion(e) for e in doc.get("exclusions", ("none",))),
            stride=int(doc.get("stride", 1)),
            include_transfers=bool(doc.get("include_transfers", False)),
        )
    except (TypeError, ValueError) as exc:
        raise ExperimentError(f"bad manifest: {exc}") from None
    return ExperimentManifest(trace_path, out_dir, matrix)
