"""Command-line front end for the whole pipeline:

    specsim convert   client debug traces -> canonical trace file
    specsim generate  synthetic corpus -> canonical trace file
    specsim simulate  trace + one configuration -> report, per-block metrics, CSVs
    specsim report    per-block metrics file -> report + CSVs (no re-simulation)
    specsim sweep     manifest -> one report per configuration + index

Progress goes to stderr, data to files only; equal inputs and flags produce
byte-identical output files regardless of --jobs. Exit status: 0 success,
1 input/validation error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .engine import ClockMode, CostProxy, LockMode, SimConfig
from .experiments import (
    ExperimentError,
    auto_top_k_exclusion,
    config_key,
    load_experiment_manifest,
    run_experiment,
    simulate_corpus,
)
from .gethtrace import GethTraceError, TxKind, convert_block, read_envelopes, read_struct_log
from .metrics import (
    aggregate,
    read_block_metrics,
    write_block_metrics,
    write_hotspot_histogram_csv,
    write_report,
    write_speedup_histogram_csv,
)
from .trace import TraceError, canonical_address, load_trace, save_trace
from .workload import GenParams, generate

__all__ = ["build_parser", "main"]

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2

_LOCK = {"rw": LockMode.RW, "mutex": LockMode.MUTEX}
_PROXY = {"gas": CostProxy.GAS, "instructions": CostProxy.INSTRUCTIONS}
_CLOCK = {"instructions": ClockMode.INSTRUCTIONS, "proxy": ClockMode.PROXY}


def _pair(text: str) -> int | tuple[int, int]:
    """Parse "N" as an int or "MEAN,SPREAD" as a pair."""
    parts = text.split(",")
    if len(parts) == 1:
        return int(parts[0])
    if len(parts) == 2:
        return int(parts[0]), int(parts[1])
    raise argparse.ArgumentTypeError(f"expected N or MEAN,SPREAD, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", metavar="PATH",
                        help="output file, prefix, or directory (command-specific)")
    common.add_argument("--seed", type=int, default=None, help="override the generator seed")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    common.add_argument("--jobs", type=int, default=None, metavar="N",
                        help="worker processes (default: $SPECSIM_JOBS or 1)")

    parser = argparse.ArgumentParser(
        prog="specsim",
        description="simulate speculative parallel execution of blockchain transaction traces")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("convert", parents=[common],
                       help="convert client debug traces into the canonical trace format")
    p.add_argument("--envelopes", nargs="+", required=True, metavar="FILE",
                   help="per-block envelope sidecar files")
    p.add_argument("--logs-dir", required=True, metavar="DIR",
                   help="directory holding one structLog document per call tx (<txid>.json)")
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("generate", parents=[common], help="generate a synthetic trace corpus")
    p.add_argument("--params", metavar="FILE", help="generator parameters as a JSON manifest")
    p.add_argument("--blocks", type=int, default=None)
    p.add_argument("--calls", type=_pair, default=20, metavar="N|MEAN,SPREAD",
                   help="contract calls per block")
    p.add_argument("--ops", type=_pair, default=(6, 3), metavar="N|MEAN,SPREAD",
                   help="storage accesses per call")
    p.add_argument("--contracts", type=int, default=50)
    p.add_argument("--keys", type=int, default=32, help="storage keys per contract")
    p.add_argument("--skew", type=float, default=0.0, help="zipf exponent over contracts")
    p.add_argument("--write-ratio", type=float, default=0.5)
    p.add_argument("--other-gas", type=_pair, default=(400, 200), metavar="N|MEAN,SPREAD")
    p.add_argument("--read-gas", type=int, default=200)
    p.add_argument("--write-gas", type=int, default=20000)
    p.add_argument("--hot-fraction", type=float, default=0.0,
                   help="route this share of calls to one hot contract")
    p.add_argument("--hot-keys", type=int, default=4)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("simulate", parents=[common],
                       help="simulate a trace under one configuration and report")
    p.add_argument("--trace", required=True, metavar="FILE")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("report", parents=[common],
                       help="aggregate a per-block metrics file into a report")
    p.add_argument("--metrics", required=True, metavar="FILE")
    p.add_argument("--label", default="custom", help="configuration label for the report")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("sweep", parents=[common],
                       help="run an experiment matrix from a manifest file")
    p.add_argument("--manifest", required=True, metavar="FILE")
    p.set_defaults(func=_cmd_sweep)
    return parser


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, required=True)
    p.add_argument("--locks", choices=sorted(_LOCK), default="rw")
    p.add_argument("--phases", type=int, default=1, help="concurrent phases before the sequential one")
    p.add_argument("--proxy", choices=sorted(_PROXY), default="gas")
    p.add_argument("--clock", choices=sorted(_CLOCK), default="instructions")
    p.add_argument("--predictor", action="store_true",
                   help="perfect conflict prediction: aborted work costs nothing")
    p.add_argument("--include-transfers", action="store_true")
    p.add_argument("--exclude", action="append", default=[], metavar="ADDR",
                   help="drop transactions touching this contract (repeatable)")
    p.add_argument("--exclude-top", type=int, default=0, metavar="K",
                   help="also exclude the K most conflicting contracts of a baseline pass")
    p.add_argument("--stride", type=int, default=1, help="keep every stride-th block")


def _jobs(args) -> int:
    jobs = args.jobs if args.jobs is not None else int(os.environ.get("SPECSIM_JOBS", "1"))
    if jobs < 1:
        raise ValueError("--jobs must be >= 1")
    return jobs


def _progress(args, message: str) -> None:
    if not args.quiet:
        print(f"specsim: {message}", file=sys.stderr)


def _require_out(args) -> str:
    if not args.out:
        raise ValueError("this command writes data to files: --out is required")
    return args.out


def _ensure_parent(path: Path) -> None:
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)


def _write_text(path: Path, write) -> None:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write(fh)


def _write_report_files(prefix: str, label: str, report, metrics=None) -> list[str]:
    base = Path(prefix)
    written = []
    report_path = base.with_name(base.name + ".json")
    _write_text(report_path, lambda fh: write_report(report, fh, label))
    written.append(str(report_path))
    if metrics is not None:
        path = base.with_name(base.name + "_blocks.jsonl")
        _write_text(path, lambda fh: write_block_metrics(metrics, fh))
        written.append(str(path))
    path = base.with_name(base.name + "_speedup_hist.csv")
    _write_text(path, lambda fh: write_speedup_histogram_csv(report, fh))
    written.append(str(path))
    path = base.with_name(base.name + "_hotspot_hist.csv")
    _write_text(path, lambda fh: write_hotspot_histogram_csv(report, fh))
    written.append(str(path))
    return written


def _cmd_convert(args) -> int:
    out = _require_out(args)
    logs_dir = Path(args.logs_dir)
    blocks = []
    for envelope_path in args.envelopes:
        with open(envelope_path, encoding="utf-8") as fh:
            number, envelopes = read_envelopes(fh)
        records = {}
        for envelope in envelopes:
            if envelope.kind is TxKind.CONTRACT_CALL:
                with open(logs_dir / f"{envelope.id}.json", encoding="utf-8") as fh:
                    records[envelope.id] = read_struct_log(fh)
        blocks.append(convert_block(number, envelopes, records))
    blocks.sort(key=lambda block: block.number)
    save_trace(blocks, out)
    _progress(args, f"converted {len(blocks)} block(s) -> {out}")
    return EXIT_OK


def _params_from_args(args) -> GenParams:
    if args.params:
        with open(args.params, encoding="utf-8") as fh:
            doc = json.load(fh)
        try:
            fields = {key: tuple(value) if isinstance(value, list) else value
                      for key, value in doc.items()}
            params = GenParams(**fields)
        except TypeError as exc:
            raise ValueError(f"bad generator manifest: {exc}") from None
    else:
        if args.blocks is None:
            raise ValueError("generate needs --blocks (or a --params manifest)")
        params = GenParams(
            blocks=args.blocks, calls_per_block=args.calls, ops_per_call=args.ops,
            contracts=args.contracts, keys_per_contract=args.keys,
            contract_skew=args.skew, write_ratio=args.write_ratio,
            other_gas=args.other_gas, read_gas=args.read_gas, write_gas=args.write_gas,
            hot_fraction=args.hot_fraction, hot_keys=args.hot_keys)
    if args.seed is not None:
        params = replace(params, seed=args.seed)
    return params


def _cmd_generate(args) -> int:
    out = _require_out(args)
    params = _params_from_args(args)
    blocks = generate(params)
    save_trace(blocks, out)
    _progress(args, f"generated {len(blocks)} block(s) -> {out}")
    return EXIT_OK


def _config_from_args(args) -> SimConfig:
    return SimConfig(
        threads=args.threads,
        lock_mode=_LOCK[args.locks],
        phases=args.phases,
        proxy=_PROXY[args.proxy],
        clock=_CLOCK[args.clock],
        predictor=args.predictor,
        include_transfers=args.include_transfers,
    )


def _cmd_simulate(args) -> int:
    out = _require_out(args)
    if args.stride < 1:
        raise ValueError("--stride must be >= 1")
    jobs = _jobs(args)
    blocks = load_trace(args.trace)[::args.stride]
    config = _config_from_args(args)
    excluded = frozenset(canonical_address(addr) for addr in args.exclude)
    exclusion_label = "none" if not (excluded or args.exclude_top) else "custom"
    if args.exclude_top:
        excluded |= auto_top_k_exclusion(blocks, config, args.exclude_top, jobs=jobs)
        exclusion_label = f"top{args.exclude_top}"
    config = replace(config, excluded_contracts=excluded)
    metrics = simulate_corpus(blocks, config, jobs=jobs)
    report = aggregate(metrics)
    label = config_key(config, exclusion_label)
    written = _write_report_files(out, label, report, metrics)
    _progress(args, f"{label}: weighted speed-up {float(report.weighted_speedup):.4f} "
                    f"over {report.blocks} block(s)")
    for path in written:
        _progress(args, f"wrote {path}")
    return EXIT_OK


def _cmd_report(args) -> int:
    out = _require_out(args)
    with open(args.metrics, encoding="utf-8") as fh:
        metrics = read_block_metrics(fh)
    report = aggregate(metrics)
    for path in _write_report_files(out, args.label, report):
        _progress(args, f"wrote {path}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    manifest = load_experiment_manifest(args.manifest)
    out_dir = Path(args.out or manifest.out_dir)
    trace_path = Path(manifest.trace_path)
    if not trace_path.is_absolute():
        trace_path = Path(args.manifest).parent / trace_path
    blocks = load_trace(trace_path)
    results = run_experiment(blocks, manifest.matrix, jobs=_jobs(args),
                             progress=None if args.quiet else
                             lambda key: print(f"specsim: {key}", file=sys.stderr))
    out_dir.mkdir(parents=True, exist_ok=True)
    index = []
    for key, result in results.items():
        _write_report_files(str(out_dir / key), key, result.report)
        index.append({
            "key": key,
            "exclusion": result.exclusion,
            "excluded_contracts": sorted(result.excluded_contracts),
            "report": f"{key}.json",
            "speedup_hist": f"{key}_speedup_hist.csv",
            "hotspot_hist": f"{key}_hotspot_hist.csv",
        })
    index_doc = {"trace": manifest.trace_path, "configs": index}
    _write_text(out_dir / "index.json",
                lambda fh: fh.write(json.dumps(index_doc, indent=2) + "\n"))
    _progress(args, f"wrote {len(index)} report(s) + index -> {out_dir}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage/help to the right stream
        code = exc.code if exc.code is not None else EXIT_OK
        return code if isinstance(code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except (TraceError, GethTraceError, ExperimentError, ValueError) as exc:
        print(f"specsim: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"specsim: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
