"""Per-block and corpus-level statistics: speed-ups, conflict rates,
speed-up distributions, storage hot-spot histograms, contract rankings.

Aggregation weights every block by its simulated contract-call count, so
empty or transfer-only blocks carry zero weight. All ratios are kept as
exact rationals internally; serialized documents carry floats alongside the
exact forms.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .engine import BlockOutcome, compute_speedup
from .trace import StorageCell, TraceFormatError

__all__ = [
    "AggregateReport",
    "BlockMetrics",
    "HistogramBin",
    "aggregate",
    "block_metrics",
    "block_metrics_from_json",
    "block_metrics_to_json",
    "read_block_metrics",
    "read_report",
    "report_to_json",
    "top_conflicting_contracts",
    "write_block_metrics",
    "write_hotspot_histogram_csv",
    "write_report",
    "write_speedup_histogram_csv",
]

BIN_WIDTH = Fraction(1, 4)
DEFAULT_HISTOGRAM_CAP = 16
DEFAULT_TOP_CONTRACTS = 5


@dataclass(frozen=True)
class BlockMetrics:
    """One simulated block reduced to the numbers the reports need."""

    block_number: int
    speedup: Fraction
    calls: int
    aborts: int
    conflicts_by_cell: Mapping[StorageCell, int]
    conflicts_by_contract: Mapping[str, int]

    @property
    def conflict_rate(self) -> Fraction:
        return Fraction(self.aborts, self.calls) if self.calls else Fraction(0)


def block_metrics(outcome: BlockOutcome) -> BlockMetrics:
    """Count conflict events per cell (attributed to the cell's contract)
    across all concurrent phases and pair them with the block speed-up."""
    by_cell: Counter[StorageCell] = Counter()
    for phase in outcome.phases:
        for event in phase.conflicts:
            by_cell[event.cell] += 1
    by_contract: Counter[str] = Counter()
    for cell, count in by_cell.items():
        by_contract[cell.contract] += count
    return BlockMetrics(
        block_number=outcome.block_number,
        speedup=compute_speedup(outcome),
        calls=outcome.calls,
        aborts=len(outcome.sequential_bin),
        conflicts_by_cell=dict(sorted(by_cell.items())),
        conflicts_by_contract=dict(sorted(by_contract.items())),
    )


@dataclass(frozen=True)
class HistogramBin:
    """One speed-up bin [low, high); `high` is None for the open overflow bin."""

    low: Fraction
    high: Fraction | None
    count: int
    density: Fraction


@dataclass(frozen=True)
class AggregateReport:
    blocks: int
    calls: int
    aborts: int
    weighted_speedup: Fraction
    weighted_conflict_rate: Fraction
    slowdown_fraction: Fraction
    speedup_histogram: tuple[HistogramBin, ...] | None
    hotspot_histogram: tuple[tuple[int, int], ...]
    top_contracts: tuple[tuple[str, int], ...]


def _speedup_histogram(weighted: Sequence[BlockMetrics], cap: int) -> tuple[HistogramBin, ...]:
    overflow = int(Fraction(cap) / BIN_WIDTH)
    counts: Counter[int] = Counter()
    for m in weighted:
        counts[min(int(m.speedup / BIN_WIDTH), overflow)] += 1
    total = sum(counts.values())
    bins = []
    for index in range(max(counts) + 1):
        count = counts.get(index, 0)
        high = None if index == overflow else (index + 1) * BIN_WIDTH
        bins.append(HistogramBin(index * BIN_WIDTH, high, count, Fraction(count, total) / BIN_WIDTH))
    return tuple(bins)


def _cell_conflict_totals(metrics: Sequence[BlockMetrics]) -> Counter:
    totals: Counter[StorageCell] = Counter()
    for m in metrics:
        for cell, count in m.conflicts_by_cell.items():
            totals[cell] += count
    return totals


def top_conflicting_contracts(metrics: Sequence[BlockMetrics], k: int) -> list[tuple[str, int]]:
    """Contracts ranked by total conflict count, descending; ties break on the
    address hex ascending. Only contracts with at least one conflict appear."""
    if k < 1:
        raise ValueError("k must be >= 1")
    totals: Counter[str] = Counter()
    for m in metrics:
        for contract, count in m.conflicts_by_contract.items():
            totals[contract] += count
    ranked = sorted(totals.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:k]


def aggregate(metrics: Sequence[BlockMetrics], *,
              histogram_cap: int = DEFAULT_HISTOGRAM_CAP,
              top_k: int = DEFAULT_TOP_CONTRACTS) -> AggregateReport:
    """Weighted corpus report. Speed-up bins are 0.25 wide with density
    normalized so the total area is exactly 1; speed-ups at or above
    `histogram_cap` collapse into a final open bin."""
    total_calls = sum(m.calls for m in metrics)
    total_aborts = sum(m.aborts for m in metrics)
    weighted = [m for m in metrics if m.calls > 0]
    if total_calls:
        weighted_speedup = sum((m.speedup * m.calls for m in weighted), Fraction(0)) / total_calls
        conflict_rate = Fraction(total_aborts, total_calls)
        histogram = _speedup_histogram(weighted, histogram_cap)
        slowdown = Fraction(sum(1 for m in weighted if m.speedup < 1), len(weighted))
    else:
        # zero-weight corpus: unit speed-up by convention, histogram omitted
        weighted_speedup = Fraction(1)
        conflict_rate = Fraction(0)
        histogram = None
        slowdown = Fraction(0)
    by_count: Counter[int] = Counter()
    for count in _cell_conflict_totals(metrics).values():
        by_count[count] += 1
    return AggregateReport(
        blocks=len(metrics),
        calls=total_calls,
        aborts=total_aborts,
        weighted_speedup=weighted_speedup,
        weighted_conflict_rate=conflict_rate,
        slowdown_fraction=slowdown,
        speedup_histogram=histogram,
        hotspot_histogram=tuple(sorted(by_count.items())),
        top_contracts=tuple(top_conflicting_contracts(metrics, top_k)),
    )


# --- serialization -------------------------------------------------------


def block_metrics_to_json(m: BlockMetrics) -> dict:
    return {
        "block": m.block_number,
        "speedup": str(m.speedup),
        "calls": m.calls,
        "aborts": m.aborts,
        "conflicts_by_cell": [[cell.contract, cell.key, n] for cell, n in m.conflicts_by_cell.items()],
        "conflicts_by_contract": [[contract, n] for contract, n in m.conflicts_by_contract.items()],
    }


def block_metrics_from_json(doc: Mapping) -> BlockMetrics:
    try:
        return BlockMetrics(
            block_number=int(doc["block"]),
            speedup=Fraction(doc["speedup"]),
            calls=int(doc["calls"]),
            aborts=int(doc["aborts"]),
            conflicts_by_cell={StorageCell(c, k): int(n) for c, k, n in doc["conflicts_by_cell"]},
            conflicts_by_contract={c: int(n) for c, n in doc["conflicts_by_contract"]},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"bad block-metrics record: {exc}") from None


def write_block_metrics(metrics: Sequence[BlockMetrics], sink) -> None:
    """One JSON document per line, canonical key order."""
    for m in metrics:
        sink.write(json.dumps(block_metrics_to_json(m), separators=(",", ":")) + "\n")


def read_block_metrics(stream) -> list[BlockMetrics]:
    out = []
    for line_number, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"invalid JSON ({exc.msg})", line_number) from None
        out.append(block_metrics_from_json(doc))
    return out


def report_to_json(report: AggregateReport, label: str = "") -> dict:
    """Structured report document, canonical key order, floats plus exact forms."""
    if report.speedup_histogram is None:
        histogram = None
    else:
        histogram = [
            {"low": float(b.low), "high": None if b.high is None else float(b.high),
             "count": b.count, "density": float(b.density)}
            for b in report.speedup_histogram
        ]
    return {
        "config": label,
        "blocks": report.blocks,
        "calls": report.calls,
        "aborts": report.aborts,
        "weighted_speedup": float(report.weighted_speedup),
        "weighted_speedup_exact": str(report.weighted_speedup),
        "weighted_conflict_rate": float(report.weighted_conflict_rate),
        "slowdown_fraction": float(report.slowdown_fraction),
        "slowdown_fraction_exact": str(report.slowdown_fraction),
        "speedup_histogram": histogram,
        "hotspot_histogram": [{"conflicts": n, "cells": cells} for n, cells in report.hotspot_histogram],
        "top_contracts": [{"contract": c, "conflicts": n} for c, n in report.top_contracts],
    }


def write_report(report: AggregateReport, sink, label: str = "") -> None:
    sink.write(json.dumps(report_to_json(report, label), indent=2) + "\n")


def read_report(stream) -> AggregateReport:
    """Rebuild an AggregateReport from its document form (exact fields win)."""
    doc = json.load(stream) if hasattr(stream, "read") else stream
    try:
        raw_hist = doc["speedup_histogram"]
        if raw_hist is None:
            histogram = None
        else:
            total = sum(b["count"] for b in raw_hist)
            histogram = tuple(
                HistogramBin(
                    low=index * BIN_WIDTH,
                    high=None if b["high"] is None else (index + 1) * BIN_WIDTH,
                    count=int(b["count"]),
                    density=Fraction(int(b["count"]), total) / BIN_WIDTH,
                )
                for index, b in enumerate(raw_hist)
            )
        return AggregateReport(
            blocks=int(doc["blocks"]),
            calls=int(doc["calls"]),
            aborts=int(doc["aborts"]),
            weighted_speedup=Fraction(doc["weighted_speedup_exact"]),
            weighted_conflict_rate=(Fraction(int(doc["aborts"]), int(doc["calls"]))
                                    if int(doc["calls"]) else Fraction(0)),
            slowdown_fraction=Fraction(doc["slowdown_fraction_exact"]),
            speedup_histogram=histogram,
            hotspot_histogram=tuple((int(b["conflicts"]), int(b["cells"]))
                                    for b in doc["hotspot_histogram"]),
            top_contracts=tuple((b["contract"], int(b["conflicts"]))
                                for b in doc["top_contracts"]),
        )
    except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
        raise TraceFormatError(f"bad report document: {exc}") from None


def write_speedup_histogram_csv(report: AggregateReport, sink) -> None:
    """Plot-ready bins: bin_low, bin_high, density (overflow bin ends at inf)."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["bin_low", "bin_high", "density"])
    for b in report.speedup_histogram or ():
        high = float("inf") if b.high is None else float(b.high)
        writer.writerow([float(b.low), high, float(b.density)])


def write_hotspot_histogram_csv(report: AggregateReport, sink) -> None:
    """Cells per conflict count: bin_low, bin_high, count (unit-wide bins)."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["bin_low", "bin_high", "count"])
    for conflicts, cells in report.hotspot_histogram:
        writer.writerow([conflicts, conflicts + 1, cells])
