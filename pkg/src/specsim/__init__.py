"""specsim: deterministic simulation and analysis of speculative parallel
execution over blockchain transaction traces.

The package splits into a trace data model (`trace`), the speculative
execution engine (`engine`), statistics (`metrics`), experiment sweeps
(`experiments`), a client debug-trace adapter (`gethtrace`), a synthetic
workload generator (`workload`), and a command-line front end (`cli`).
"""

from .engine import (
    BlockOutcome,
    ClockMode,
    ConflictEvent,
    CostProxy,
    LockMode,
    LockTable,
    PhaseOutcome,
    SimConfig,
    compute_speedup,
    run_concurrent_phase,
    simulate_block,
    transaction_cost,
)
from .experiments import (
    ExclusionSpec,
    ExperimentManifest,
    ExperimentMatrix,
    ExperimentResult,
    apply_contract_filter,
    auto_top_k_exclusion,
    config_key,
    load_experiment_manifest,
    run_experiment,
    simulate_corpus,
)
from .gethtrace import StructLogRecord, TxEnvelope, convert_block, convert_tx
from .metrics import (
    AggregateReport,
    BlockMetrics,
    aggregate,
    block_metrics,
    top_conflicting_contracts,
)
from .trace import (
    AccessSets,
    Block,
    Op,
    OpKind,
    StorageCell,
    TraceError,
    TraceFormatError,
    TraceValidationError,
    Transaction,
    TxKind,
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
from .workload import GenParams, generate, generate_block

__version__ = "0.1.0"
