"""Portable trace event model: JSONL reader/writer and execution spans.

A trace file is UTF-8 text, one JSON object per line, optionally gzip
compressed (detected by magic bytes).  Required keys on every record:

    ts    int   nanoseconds since trace origin, non-decreasing
    cpu   int   CPU index, >= 0
    tid   int   thread the event is attributed to, >= 1
    comm  str   name of that thread
    kind  str   one of the kinds below

plus the kind-specific payload keys listed in ``PAYLOAD_FIELDS``.  Unknown
extra keys are ignored on read.  All durations inside the package are
integer nanoseconds; user-facing output is microseconds.
"""

from __future__ import annotations

import gc
import gzip
import io
import json
import sys
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Callable, Iterable, Iterator

from .errors import (
    MalformedRecord,
    NestingViolation,
    NonMonotonicTimestamp,
    OverlappingSpan,
    UnknownEventKind,
    UnmatchedEnd,
)


class EventKind(str, Enum):
    SCHED_SWITCH = "sched_switch"
    SCHED_WAKEUP = "sched_wakeup"
    SYSCALL_ENTRY = "syscall_entry"
    SYSCALL_EXIT = "syscall_exit"
    IRQ_ENTRY = "irq_entry"
    IRQ_EXIT = "irq_exit"
    SOFTIRQ_ENTRY = "softirq_entry"
    SOFTIRQ_EXIT = "softirq_exit"
    HRTIMER_EXPIRE_ENTRY = "hrtimer_expire_entry"
    HRTIMER_EXPIRE_EXIT = "hrtimer_expire_exit"
    BLOCK_RQ_ISSUE = "block_rq_issue"
    BLOCK_RQ_COMPLETE = "block_rq_complete"
    PAGE_FAULT = "page_fault"
    IO_READ = "io_read"
    IO_WRITE = "io_write"
    SPAN_BEGIN = "span_begin"
    SPAN_END = "span_end"


PREV_STATES = ("runnable", "blocked")
WAKER_CONTEXTS = ("task", "irq", "softirq", "hrtimer")


def _pos_int(v: object) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and v >= 1


def _nonneg_int(v: object) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and v >= 0


def _nonempty_str(v: object) -> bool:
    return isinstance(v, str) and len(v) > 0


# kind -> ordered (key, validator) pairs; the order is also the canonical
# serialization order used by write_trace.
PAYLOAD_FIELDS: dict[EventKind, tuple[tuple[str, Callable[[object], bool]], ...]] = {
    EventKind.SCHED_SWITCH: (
        ("prev_tid", _pos_int),
        ("prev_state", lambda v: v in PREV_STATES),
        ("next_tid", _pos_int),
    ),
    EventKind.SCHED_WAKEUP: (
        ("waker_tid", _pos_int),
        ("wakee_tid", _pos_int),
        ("waker_context", lambda v: v in WAKER_CONTEXTS),
    ),
    EventKind.SYSCALL_ENTRY: (("name", _nonempty_str),),
    EventKind.SYSCALL_EXIT: (("name", _nonempty_str),),
    EventKind.IRQ_ENTRY: (("irq", _nonneg_int),),
    EventKind.IRQ_EXIT: (("irq", _nonneg_int),),
    EventKind.SOFTIRQ_ENTRY: (("vec", _nonneg_int),),
    EventKind.SOFTIRQ_EXIT: (("vec", _nonneg_int),),
    EventKind.HRTIMER_EXPIRE_ENTRY: (),
    EventKind.HRTIMER_EXPIRE_EXIT: (),
    EventKind.BLOCK_RQ_ISSUE: (("dev", _nonempty_str),),
    EventKind.BLOCK_RQ_COMPLETE: (("dev", _nonempty_str),),
    EventKind.PAGE_FAULT: (),
    EventKind.IO_READ: (("bytes", _nonneg_int),),
    EventKind.IO_WRITE: (("bytes", _nonneg_int),),
    EventKind.SPAN_BEGIN: (("span_id", _nonempty_str),),
    EventKind.SPAN_END: (("span_id", _nonempty_str),),
}

_KIND_BY_VALUE = {k.value: k for k in EventKind}

# entry kind -> (exit kind, payload key identifying the nesting token)
_NESTING_FAMILIES: dict[EventKind, tuple[EventKind, str | None]] = {
    EventKind.SYSCALL_ENTRY: (EventKind.SYSCALL_EXIT, "name"),
    EventKind.IRQ_ENTRY: (EventKind.IRQ_EXIT, "irq"),
    EventKind.SOFTIRQ_ENTRY: (EventKind.SOFTIRQ_EXIT, "vec"),
    EventKind.HRTIMER_EXPIRE_ENTRY: (EventKind.HRTIMER_EXPIRE_EXIT, None),
}
_EXIT_TO_ENTRY = {ex: (en, tok) for en, (ex, tok) in _NESTING_FAMILIES.items()}


@dataclass(frozen=True, slots=True)
class TraceEvent:
    """One timestamped kernel-style event."""

    ts: int
    cpu: int
    tid: int
    comm: str
    kind: EventKind
    payload: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.payload[key]


@dataclass(frozen=True)
class ExecutionSpan:
    """A delimited task execution on one root thread, [t_start, t_end)."""

    span_id: str
    root_tid: int
    t_start: int
    t_end: int
    label: str | None = None

    def __post_init__(self):
        if self.t_start >= self.t_end:
            raise ValueError(f"span {self.span_id}: t_start >= t_end")

    @property
    def duration_ns(self) -> int:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class OpenSpan:
    """A begin delimiter that never saw its matching end."""

    span_id: str
    root_tid: int
    t_start: int


@dataclass
class SpanExtraction:
    spans: list[ExecutionSpan]
    open_spans: list[OpenSpan]


def _open_stream(source) -> tuple[io.TextIOBase, bool]:
    """Return a text stream over *source*, transparently ungzipping."""
    if isinstance(source, (str, Path)):
        raw: BinaryIO = open(source, "rb")
        owns = True
    elif isinstance(source, (bytes, bytearray)):
        raw = io.BytesIO(bytes(source))
        owns = True
    else:
        raw = source
        owns = False
    head = raw.read(2)
    raw.seek(-len(head), io.SEEK_CUR)
    if head == b"\x1f\x8b":
        return io.TextIOWrapper(gzip.GzipFile(fileobj=raw), encoding="utf-8"), owns
    return io.TextIOWrapper(raw, encoding="utf-8"), owns


def _parse_line(line: str, lineno: int) -> TraceEvent:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(lineno, f"invalid JSON: {exc.msg}") from exc
    if type(obj) is not dict:
        raise MalformedRecord(lineno, "record is not a JSON object")
    # hot path: grab and type-check the required fields without indirection
    try:
        ts = obj["ts"]
        cpu = obj["cpu"]
        tid = obj["tid"]
        comm = obj["comm"]
        kind_str = obj["kind"]
    except KeyError as exc:
        raise MalformedRecord(lineno, f"missing key {exc.args[0]!r}") from exc
    if type(ts) is not int or ts < 0 or type(cpu) is not int or cpu < 0 \
            or type(tid) is not int or tid < 1 \
            or type(comm) is not str or not comm:
        raise MalformedRecord(lineno, "bad ts/cpu/tid/comm field")
    kind = _KIND_BY_VALUE.get(kind_str) if type(kind_str) is str else None
    if kind is None:
        if type(kind_str) is not str:
            raise MalformedRecord(lineno, "missing or non-string 'kind'")
        raise UnknownEventKind(lineno, kind_str)
    payload = {}
    for key, check in PAYLOAD_FIELDS[kind]:
        try:
            value = obj[key]
        except KeyError as exc:
            raise MalformedRecord(lineno, f"{kind_str}: missing key {key!r}") from exc
        if not check(value):
            raise MalformedRecord(lineno, f"{kind_str}: bad value for {key!r}: {value!r}")
        payload[key] = sys.intern(value) if type(value) is str else value
    if kind is EventKind.SCHED_SWITCH and payload["prev_tid"] == payload["next_tid"]:
        raise MalformedRecord(lineno, "sched_switch: prev_tid == next_tid")
    return TraceEvent(ts, cpu, tid, sys.intern(comm), kind, payload)


def read_trace(source) -> list[TraceEvent]:
    """Parse a JSONL trace into timestamp-ordered events.

    *source* may be a path, raw bytes, or a seekable binary file object.
    Raises MalformedRecord / UnknownEventKind / NonMonotonicTimestamp /
    NestingViolation with the offending 1-based line number.
    """
    # pause the cycle collector while allocating millions of records; the
    # event graph is acyclic so the pause only avoids wasted full-heap scans
    was_enabled = gc.isenabled()
    if was_enabled:
        gc.disable()
    try:
        return list(iter_trace(source))
    finally:
        if was_enabled:
            gc.enable()


def event_to_record(ev: TraceEvent) -> dict:
    """Canonical JSON-ready dict for one event (fixed key order)."""
    rec = {"ts": ev.ts, "cpu": ev.cpu, "tid": ev.tid, "comm": ev.comm,
           "kind": ev.kind.value}
    for key, _ in PAYLOAD_FIELDS[ev.kind]:
        rec[key] = ev.payload[key]
    return rec


def write_trace(events: Iterable[TraceEvent], dest) -> None:
    """Write events as canonical JSONL; gzip when the path ends in .gz."""
    if isinstance(dest, (str, Path)):
        opener = gzip.open if str(dest).endswith(".gz") else open
        with opener(dest, "wt", encoding="utf-8") as fh:
            _write_lines(events, fh)
    else:
        _write_lines(events, dest)


def _write_lines(events: Iterable[TraceEvent], fh) -> None:
    for ev in events:
        fh.write(json.dumps(event_to_record(ev), ensure_ascii=False,
                            separators=(",", ":")))
        fh.write("\n")


@dataclass
class SpanDelimiter:
    """Maps events onto span begin/end markers.

    ``begin`` and ``end`` return the span key for a delimiting event and
    None otherwise; ``root_tid`` picks the root thread from the begin event.
    """

    begin: Callable[[TraceEvent], str | None]
    end: Callable[[TraceEvent], str | None]
    root_tid: Callable[[TraceEvent], int] = lambda ev: ev.tid


def span_marker_delimiter() -> SpanDelimiter:
    """The canonical delimiter: explicit span_begin/span_end events."""
    return SpanDelimiter(
        begin=lambda ev: ev.payload["span_id"] if ev.kind is EventKind.SPAN_BEGIN else None,
        end=lambda ev: ev.payload["span_id"] if ev.kind is EventKind.SPAN_END else None,
    )


def syscall_pair_delimiter(begin_name: str, end_name: str) -> SpanDelimiter:
    """Predicate-style delimiter: a syscall entry pair on one thread opens
    and closes a span keyed by tid (e.g. accept/shutdown on a server)."""

    def _begin(ev: TraceEvent) -> str | None:
        if ev.kind is EventKind.SYSCALL_ENTRY and ev.payload["name"] == begin_name:
            return f"tid{ev.tid}"
        return None

    def _end(ev: TraceEvent) -> str | None:
        if ev.kind is EventKind.SYSCALL_EXIT and ev.payload["name"] == end_name:
            return f"tid{ev.tid}"
        return None

    return SpanDelimiter(begin=_begin, end=_end)


def extract_spans(events: Iterable[TraceEvent],
                  delimiter: SpanDelimiter | None = None) -> SpanExtraction:
    """Collect delimited execution spans from an event sequence.

    Completed spans come back in begin order; begins that never close are
    reported separately as open spans.  Raises UnmatchedEnd for an end with
    no open begin and OverlappingSpan when a span id is re-opened.
    """
    delim = delimiter or span_marker_delimiter()
    open_by_key: dict[str, OpenSpan] = {}
    order: list[str] = []
    done: list[ExecutionSpan] = []
    for ev in events:
        key = delim.begin(ev)
        if key is not None:
            if key in open_by_key:
                raise OverlappingSpan(f"span {key!r} re-opened at ts={ev.ts}")
            open_by_key[key] = OpenSpan(key, delim.root_tid(ev), ev.ts)
            order.append(key)
            continue
        key = delim.end(ev)
        if key is not None:
            opened = open_by_key.pop(key, None)
            if opened is None:
                raise UnmatchedEnd(f"span {key!r} ended at ts={ev.ts} with no begin")
            done.append(ExecutionSpan(key, opened.root_tid, opened.t_start, ev.ts))
    still_open = [open_by_key[k] for k in order if k in open_by_key]
    done.sort(key=lambda s: (s.t_start, s.span_id))
    return SpanExtraction(spans=done, open_spans=still_open)


def iter_trace(source) -> Iterator[TraceEvent]:
    """Streaming variant of read_trace (same validation, constant memory)."""
    stream, owns = _open_stream(source)
    prev_ts = -1
    stacks: dict[int, list[tuple[EventKind, object]]] = {}
    entry_families = _NESTING_FAMILIES
    exit_families = _EXIT_TO_ENTRY
    parse = _parse_line
    try:
        for lineno, line in enumerate(stream, start=1):
            head = line[0] if line else "\n"
            if head == "\n" or (head in " \t\r" and not line.strip()):
                continue
            ev = parse(line, lineno)
            if ev.ts < prev_ts:
                raise NonMonotonicTimestamp(lineno, ev.ts, prev_ts)
            prev_ts = ev.ts
            kind = ev.kind
            if kind in entry_families:
                tok_key = entry_families[kind][1]
                tok = ev.payload[tok_key] if tok_key else None
                stacks.setdefault(ev.tid, []).append((kind, tok))
            elif kind in exit_families:
                entry_kind, tok_key = exit_families[kind]
                tok = ev.payload[tok_key] if tok_key else None
                stack = stacks.get(ev.tid) or []
                if not stack or stack[-1] != (entry_kind, tok):
                    raise NestingViolation(
                        f"{kind.value} for tid {ev.tid} does not match an open entry",
                        line=lineno)
                stack.pop()
            yield ev
    finally:
        if owns:
            stream.close()
