"""Command line interface.

Subcommands: synth, graph, cluster, compare, inspect.  Exit codes:
0 success, 2 usage/validation error, 3 span or cluster not found,
4 internal invariant breach.  All randomness flows from --seed; identical
inputs and flags produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

from . import analysis, graph, states, synth
from .errors import (
    InvalidParameter,
    MalformedRecord,
    NestingViolation,
    NonMonotonicTimestamp,
    OverlappingSpan,
    SwitchConflict,
    TooFewSpans,
    TraceAnalysisError,
    UnknownEventKind,
    UnmatchedEnd,
)
from .events import extract_spans, read_trace, write_trace

# bad inputs and parameters exit 2; remaining TraceAnalysisErrors exit 4
_INPUT_ERRORS = (InvalidParameter, TooFewSpans, MalformedRecord,
                 UnknownEventKind, NonMonotonicTimestamp, NestingViolation,
                 SwitchConflict, UnmatchedEnd, OverlappingSpan,
                 FileNotFoundError)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_FOUND = 3
EXIT_INTERNAL = 4


class _NotFound(Exception):
    pass


def _atomic_write(path: Path, data: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_text(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def _load_pipeline(trace_path: str):
    events = read_trace(trace_path)
    db = states.build_state_db(events)
    extraction = extract_spans(events)
    return events, db, extraction


def cmd_synth(args) -> int:
    spec = synth.ScenarioSpec(
        scenario=args.scenario, seed=args.seed, n_spans=args.spans,
        slow_fraction=args.slow_fraction, workers=args.workers,
        fast_us=args.fast_us, slowdown=args.slowdown,
        filler_events=args.filler_events, jitter=args.jitter)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    suffix = ".jsonl.gz" if args.gz else ".jsonl"
    trace_path = out_dir / f"trace{suffix}"
    gt_path = out_dir / "ground_truth.json"
    tmp_trace = trace_path.with_name(trace_path.name + ".tmp")
    gt: list[dict] = []
    try:
        write_trace(synth.iter_events(spec, gt), tmp_trace)
        os.replace(tmp_trace, trace_path)
    except BaseException:
        if tmp_trace.exists():
            tmp_trace.unlink()
        raise
    _atomic_write(gt_path, _json_text(synth.ground_truth_dict(spec, gt)))
    print(f"wrote {trace_path} and {gt_path}")
    return EXIT_OK


def cmd_graph(args) -> int:
    _, db, extraction = _load_pipeline(args.trace)
    span = next((s for s in extraction.spans if s.span_id == args.span), None)
    if span is None:
        raise _NotFound(f"span {args.span!r} not found in {args.trace}")
    g = graph.build_span_graph(db, span, max_depth=args.max_depth)
    if args.canonical:
        g = graph.canonicalize(g)
    dot = graph.to_dot(g, percentages=not args.no_percentages,
                       min_edge_us=args.min_edge_us)
    _atomic_write(Path(args.out), dot)
    if args.json:
        _atomic_write(Path(args.json), _json_text(graph.to_json_dict(g)))
    root = g.root
    print(f"span {span.span_id}: root {root.label} total {root.total_us} µs, "
          f"{len(g.nodes)} nodes, {len(g.edges)} edges")
    return EXIT_OK


def _features_by_span(db, extraction):
    return {s.span_id: analysis.extract_features(db, s) for s in extraction.spans}


def cmd_cluster(args) -> int:
    _, db, extraction = _load_pipeline(args.trace)
    feats = _features_by_span(db, extraction)
    clustering = analysis.cluster_spans(feats, args.k, args.seed)
    report = analysis.clustering_report_dict(clustering, feats)
    _atomic_write(Path(args.out), _json_text(report))
    sizes = [sum(1 for c in clustering.assignments.values() if c == i)
             for i in range(args.k)]
    print(f"clustered {len(feats)} spans into k={args.k} "
          f"(sizes {', '.join(map(str, sizes))}) -> {args.out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    _, db, extraction = _load_pipeline(args.trace)
    with open(args.report, encoding="utf-8") as fh:
        report = json.load(fh)
    by_cluster: dict[int, list[str]] = {}
    for rec in report["spans"]:
        by_cluster.setdefault(rec["cluster"], []).append(rec["span_id"])
    spans_by_id = {s.span_id: s for s in extraction.spans}
    reps = []
    for cluster_id in (args.left, args.right):
        ids = by_cluster.get(cluster_id)
        if not ids:
            raise _NotFound(f"cluster {cluster_id} has no spans in {args.report}")
        graphs = []
        for sid in sorted(ids):
            span = spans_by_id.get(sid)
            if span is None:
                raise _NotFound(f"span {sid!r} from report not in trace")
            graphs.append(graph.canonicalize(
                graph.build_span_graph(db, span, max_depth=args.max_depth)))
        reps.append(analysis.representative(graphs))
    cg = analysis.compare(reps[0], reps[1], stat=args.stat)
    _atomic_write(Path(args.out), analysis.comparison_to_dot(cg))
    if args.json:
        _atomic_write(Path(args.json),
                      _json_text(analysis.comparison_to_json_dict(cg)))
    styles = [e.style.value for e in cg.edges.values()]
    print(f"compared clusters {args.left} vs {args.right}: "
          f"{styles.count('solid')} solid, {styles.count('dashed')} dashed, "
          f"{styles.count('dotted')} dotted -> {args.out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    _, db, _ = _load_pipeline(args.trace)
    t_a = args.from_ns if args.from_ns is not None else db.t_min
    t_b = args.to_ns if args.to_ns is not None else db.t_max + 1
    lines = []
    for key in db.keys():
        if args.key and not key.startswith(args.key):
            continue
        for sv in db.query_range(key, t_a, t_b):
            lines.append(f"{key}\t[{sv.start}, {sv.end})\t{sv.value}")
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        _atomic_write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="waitgraph",
        description="Reconstruct thread states from kernel-style traces and "
                    "localize off-CPU latency with waiting-dependency graphs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scenario trace")
    p.add_argument("--scenario", required=True,
                   choices=["lock", "cpu", "disk", "mixed",
                            "lock_contention", "cpu_contention", "disk_contention"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spans", type=int, default=20)
    p.add_argument("--slow-fraction", type=float, default=0.5)
    p.add_argument("--workers", type=int, default=3)
    p.add_argument("--fast-us", type=float, default=None)
    p.add_argument("--slowdown", type=float, default=None)
    p.add_argument("--filler-events", type=int, default=24)
    p.add_argument("--jitter", type=float, default=0.015)
    p.add_argument("--gz", action="store_true", help="gzip the trace file")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("graph", help="build one span's dependency graph")
    p.add_argument("trace")
    p.add_argument("--span", required=True)
    p.add_argument("--out", required=True, help="DOT output path")
    p.add_argument("--json", default=None, help="also dump the graph as JSON")
    p.add_argument("--canonical", action="store_true",
                   help="re-key nodes by comm/syscall name")
    p.add_argument("--no-percentages", action="store_true")
    p.add_argument("--min-edge-us", type=int, default=0)
    p.add_argument("--max-depth", type=int, default=16)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("cluster", help="extract features and k-means group spans")
    p.add_argument("trace")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="JSON report path")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("compare", help="diff two cluster representative graphs")
    p.add_argument("trace")
    p.add_argument("--report", required=True, help="cluster report JSON")
    p.add_argument("--left", type=int, required=True)
    p.add_argument("--right", type=int, required=True)
    p.add_argument("--stat", choices=["count", "duration"], default="count")
    p.add_argument("--out", required=True, help="DOT output path")
    p.add_argument("--json", default=None)
    p.add_argument("--max-depth", type=int, default=16)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("inspect", help="dump state database slices")
    p.add_argument("trace")
    p.add_argument("--key", default=None, help="key prefix filter")
    p.add_argument("--from", dest="from_ns", type=int, default=None)
    p.add_argument("--to", dest="to_ns", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _NotFound as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_FOUND
    except TraceAnalysisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
