"""Thread/resource state reconstruction into an interval-indexed database.

Events are folded, in a single pass, into half-open interval records
``[start, end)`` each holding one value for one key.  Keys are slash paths:

    thread/{tid}/state        ThreadState (running/runnable/interrupted/blocked)
    thread/{tid}/syscall      innermost active syscall name
    thread/{tid}/cpu          CPU index while the thread is running
    thread/{tid}/pagefaults   cumulative page fault count (step function)
    thread/{tid}/bytes_read   cumulative bytes read
    thread/{tid}/bytes_written cumulative bytes written
    cpu/{idx}/current_tid     thread occupying the CPU
    disk/{dev}/active_tid     thread whose request the device is serving

Per key, intervals are disjoint and sorted by start; point queries bisect,
range queries clip.  Block I/O requests are matched FIFO per device and the
device is modeled as serving one request at a time, so the active_tid
intervals of one device never overlap.
"""

from __future__ import annotations

import gc
import json
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .errors import NestingViolation, SwitchConflict
from .events import EventKind, TraceEvent


class StateKind(str, Enum):
    RUNNING = "running"
    RUNNABLE = "runnable"
    INTERRUPTED = "interrupted"
    BLOCKED = "blocked"


class BlockReason(str, Enum):
    TASK = "task"
    DISK = "disk"
    TIMER = "timer"
    NETWORK = "network"
    FUTEX = "futex"
    UNKNOWN = "unknown"


@dataclass(frozen=True, slots=True)
class ThreadState:
    kind: StateKind
    reason: BlockReason | None = None
    waker_tid: int | None = None

    def __str__(self) -> str:
        if self.kind is not StateKind.BLOCKED:
            return self.kind.value
        if self.reason in (BlockReason.TASK, BlockReason.FUTEX):
            return f"blocked({self.reason.value}:{self.waker_tid})"
        return f"blocked({self.reason.value})"


RUNNING = ThreadState(StateKind.RUNNING)
RUNNABLE = ThreadState(StateKind.RUNNABLE)
INTERRUPTED = ThreadState(StateKind.INTERRUPTED)


@dataclass(frozen=True, slots=True)
class StateValue:
    """One attribute value over a half-open interval [start, end)."""

    start: int
    end: int
    key: str
    value: object

    @property
    def duration_ns(self) -> int:
        return self.end - self.start

    def clipped(self, t_a: int, t_b: int) -> "StateValue":
        s, e = max(self.start, t_a), min(self.end, t_b)
        if s == self.start and e == self.end:
            return self
        return StateValue(s, e, self.key, self.value)


def thread_state_key(tid: int) -> str:
    return f"thread/{tid}/state"


def thread_syscall_key(tid: int) -> str:
    return f"thread/{tid}/syscall"


def thread_cpu_key(tid: int) -> str:
    return f"thread/{tid}/cpu"


def thread_counter_key(tid: int, counter: str) -> str:
    return f"thread/{tid}/{counter}"


def cpu_current_key(cpu: int) -> str:
    return f"cpu/{cpu}/current_tid"


def disk_active_key(dev: str) -> str:
    return f"disk/{dev}/active_tid"


# Linux softirq vector numbers for the default wake-reason mapping.
SOFTIRQ_TIMER = 1
SOFTIRQ_NET_TX = 2
SOFTIRQ_NET_RX = 3
SOFTIRQ_BLOCK = 4

DEFAULT_SOFTIRQ_REASONS = {
    SOFTIRQ_TIMER: BlockReason.TIMER,
    SOFTIRQ_NET_TX: BlockReason.NETWORK,
    SOFTIRQ_NET_RX: BlockReason.NETWORK,
    SOFTIRQ_BLOCK: BlockReason.DISK,
}


@dataclass
class WakeReasonConfig:
    """Maps the interrupt context active at wakeup time to a block reason."""

    softirq_reasons: dict[int, BlockReason] = field(
        default_factory=lambda: dict(DEFAULT_SOFTIRQ_REASONS))
    irq_reasons: dict[int, BlockReason] = field(default_factory=dict)


class StateDatabase:
    """Immutable interval store with point and range queries."""

    def __init__(self, intervals: dict[str, list[StateValue]], comms: dict[int, str],
                 t_min: int, t_max: int, events_consumed: int):
        self._intervals = intervals
        self._starts = {k: [sv.start for sv in ivs] for k, ivs in intervals.items()}
        self.comms = comms
        self.t_min = t_min
        self.t_max = t_max
        self.events_consumed = events_consumed

    def keys(self) -> list[str]:
        return sorted(self._intervals)

    def intervals(self, key: str) -> list[StateValue]:
        """The raw sorted interval list for a key (do not mutate)."""
        return self._intervals.get(key, [])

    def iter_all(self) -> Iterator[StateValue]:
        for key in self.keys():
            yield from self._intervals[key]

    def comm(self, tid: int) -> str:
        return self.comms.get(tid, f"tid{tid}")

    def thread_tids(self) -> list[int]:
        tids = []
        for key in self._intervals:
            if key.startswith("thread/") and key.endswith("/state"):
                tids.append(int(key.split("/")[1]))
        return sorted(tids)

    def query_at(self, key: str, t: int) -> object | None:
        """The value holding at instant t, or None."""
        ivs = self._intervals.get(key)
        if not ivs:
            return None
        i = bisect_right(self._starts[key], t) - 1
        if i >= 0 and ivs[i].end > t:
            return ivs[i].value
        return None

    def query_range(self, key: str, t_a: int, t_b: int) -> list[StateValue]:
        """All intervals intersecting [t_a, t_b), clipped, ordered by start."""
        if t_a >= t_b:
            raise ValueError("query_range: t_a must be < t_b")
        ivs = self._intervals.get(key)
        if not ivs:
            return []
        i = bisect_right(self._starts[key], t_a) - 1
        if i < 0 or ivs[i].end <= t_a:
            i += 1
        out = []
        while i < len(ivs) and ivs[i].start < t_b:
            if ivs[i].end > t_a:
                out.append(ivs[i].clipped(t_a, t_b))
            i += 1
        return out

    def last_value_before(self, key: str, t: int) -> object | None:
        """Value of the most recent interval starting strictly before t."""
        ivs = self._intervals.get(key)
        if not ivs:
            return None
        i = bisect_right(self._starts[key], t - 1) - 1
        return ivs[i].value if i >= 0 else None

    def counter_delta(self, tid: int, counter: str, t_a: int, t_b: int) -> int:
        """Number of counted units in [t_a, t_b) for a cumulative counter."""
        key = thread_counter_key(tid, counter)

        def cum(t: int) -> int:
            v = self.query_at(key, t)
            if v is not None:
                return int(v)
            prior = self.last_value_before(key, t)
            return int(prior) if prior is not None else 0

        return cum(t_b - 1) - cum(t_a - 1)

    # -- resource occupancy ------------------------------------------------

    def disk_usage_by_thread(self, t_a: int, t_b: int,
                             dev: str | None = None) -> dict[int, list[StateValue]]:
        """Per-tid clipped disk service intervals intersecting the range."""
        if dev is not None:
            keys = [disk_active_key(dev)]
        else:
            keys = [k for k in self.keys() if k.startswith("disk/")]
        usage: dict[int, list[StateValue]] = {}
        for key in keys:
            for sv in self.query_range(key, t_a, t_b):
                usage.setdefault(int(sv.value), []).append(sv)
        for ivs in usage.values():
            ivs.sort(key=lambda sv: sv.start)
        return usage

    def threads_using_disk(self, t_a: int, t_b: int,
                           dev: str | None = None) -> list[tuple[int, int]]:
        """(tid, total overlap ns) for threads whose I/O the disk served in
        the range; zero-overlap threads omitted; ordered by tid."""
        usage = self.disk_usage_by_thread(t_a, t_b, dev)
        out = [(tid, sum(sv.duration_ns for sv in ivs)) for tid, ivs in usage.items()]
        return sorted((t, d) for t, d in out if d > 0)

    def cpu_usage_by_thread(self, cpu: int, t_a: int, t_b: int) -> dict[int, list[StateValue]]:
        usage: dict[int, list[StateValue]] = {}
        for sv in self.query_range(cpu_current_key(cpu), t_a, t_b):
            usage.setdefault(int(sv.value), []).append(sv)
        return usage

    def threads_on_cpu(self, cpu: int, t_a: int, t_b: int) -> list[tuple[int, int]]:
        """(tid, total running overlap ns) on one CPU in the range."""
        usage = self.cpu_usage_by_thread(cpu, t_a, t_b)
        out = [(tid, sum(sv.duration_ns for sv in ivs)) for tid, ivs in usage.items()]
        return sorted((t, d) for t, d in out if d > 0)

    def last_cpu_before(self, tid: int, t: int) -> int | None:
        v = self.last_value_before(thread_cpu_key(tid), t)
        return int(v) if v is not None else None


class _Builder:
    def __init__(self, wake_config: WakeReasonConfig):
        self.cfg = wake_config
        self.intervals: dict[str, list[StateValue]] = {}
        self.open: dict[str, tuple[int, object]] = {}
        self.comms: dict[int, str] = {}
        self.irq_stack: dict[int, list[tuple[str, int | None]]] = {}
        self.syscall_stack: dict[int, list[str]] = {}
        self.dev_fifo: dict[str, deque[tuple[int, int]]] = {}
        self.dev_last_end: dict[str, int] = {}
        self.counters: dict[tuple[int, str], int] = {}
        self.running_cpu: dict[int, int] = {}  # tid -> cpu while running
        self.t_min: int | None = None
        self.t_max: int = 0
        self.count = 0

    # interval plumbing: one open value per key; zero-length intervals are
    # dropped so state flips at a shared timestamp never violate t_i < t_j.
    def set_open(self, key: str, t: int, value: object) -> None:
        cur = self.open.get(key)
        if cur is not None:
            start, old = cur
            if old == value:
                return
            if start < t:
                self.intervals.setdefault(key, []).append(StateValue(start, t, key, old))
        self.open[key] = (t, value)

    def close_open(self, key: str, t: int) -> None:
        cur = self.open.pop(key, None)
        if cur is not None and cur[0] < t:
            start, old = cur
            self.intervals.setdefault(key, []).append(StateValue(start, t, key, old))

    def open_value(self, key: str) -> object | None:
        cur = self.open.get(key)
        return cur[1] if cur is not None else None

    def replace_open_value(self, key: str, value: object) -> None:
        start, _ = self.open[key]
        self.open[key] = (start, value)

    # thread state helpers
    def thread_state(self, tid: int) -> ThreadState | None:
        return self.open_value(thread_state_key(tid))  # type: ignore[return-value]

    def set_thread_state(self, tid: int, t: int, st: ThreadState) -> None:
        self.set_open(thread_state_key(tid), t, st)

    def mark_running(self, tid: int, cpu: int, t: int) -> None:
        """A thread first observed through its own actor event (syscall,
        I/O, counter, span marker) was already executing on that CPU."""
        if self.thread_state(tid) is not None:
            return
        self.set_thread_state(tid, t, RUNNING)
        self.set_open(thread_cpu_key(tid), t, cpu)
        self.running_cpu[tid] = cpu
        if self.open_value(cpu_current_key(cpu)) is None:
            self.set_open(cpu_current_key(cpu), t, tid)

    _ACTOR_KINDS = frozenset((
        EventKind.SYSCALL_ENTRY, EventKind.SYSCALL_EXIT,
        EventKind.BLOCK_RQ_ISSUE, EventKind.PAGE_FAULT,
        EventKind.IO_READ, EventKind.IO_WRITE,
        EventKind.SPAN_BEGIN, EventKind.SPAN_END,
    ))

    def handle(self, ev: TraceEvent) -> None:
        self.count += 1
        if self.t_min is None:
            self.t_min = ev.ts
        self.t_max = ev.ts
        if ev.tid not in self.comms:
            self.comms[ev.tid] = ev.comm
        kind = ev.kind
        if kind in self._ACTOR_KINDS:
            self.mark_running(ev.tid, ev.cpu, ev.ts)
        if kind is EventKind.SCHED_SWITCH:
            self._on_switch(ev)
        elif kind is EventKind.SCHED_WAKEUP:
            if ev.payload["waker_context"] == "task":
                self.mark_running(ev.payload["waker_tid"], ev.cpu, ev.ts)
            self._on_wakeup(ev)
        elif kind in (EventKind.IRQ_ENTRY, EventKind.SOFTIRQ_ENTRY,
                      EventKind.HRTIMER_EXPIRE_ENTRY):
            self._on_irq_entry(ev)
        elif kind in (EventKind.IRQ_EXIT, EventKind.SOFTIRQ_EXIT,
                      EventKind.HRTIMER_EXPIRE_EXIT):
            self._on_irq_exit(ev)
        elif kind is EventKind.SYSCALL_ENTRY:
            stack = self.syscall_stack.setdefault(ev.tid, [])
            stack.append(ev.payload["name"])
            self.set_open(thread_syscall_key(ev.tid), ev.ts, ev.payload["name"])
        elif kind is EventKind.SYSCALL_EXIT:
            stack = self.syscall_stack.get(ev.tid)
            if not stack or stack[-1] != ev.payload["name"]:
                raise NestingViolation(
                    f"syscall_exit({ev.payload['name']}) without entry for tid {ev.tid}")
            stack.pop()
            if stack:
                self.set_open(thread_syscall_key(ev.tid), ev.ts, stack[-1])
            else:
                self.close_open(thread_syscall_key(ev.tid), ev.ts)
        elif kind is EventKind.BLOCK_RQ_ISSUE:
            self.dev_fifo.setdefault(ev.payload["dev"], deque()).append((ev.tid, ev.ts))
        elif kind is EventKind.BLOCK_RQ_COMPLETE:
            self._on_rq_complete(ev)
        elif kind is EventKind.PAGE_FAULT:
            self._bump_counter(ev.tid, "pagefaults", 1, ev.ts)
        elif kind is EventKind.IO_READ:
            self._bump_counter(ev.tid, "bytes_read", ev.payload["bytes"], ev.ts)
        elif kind is EventKind.IO_WRITE:
            self._bump_counter(ev.tid, "bytes_written", ev.payload["bytes"], ev.ts)
        # span_begin / span_end carry no state.

    def _bump_counter(self, tid: int, counter: str, delta: int, t: int) -> None:
        if delta == 0:
            return
        total = self.counters.get((tid, counter), 0) + delta
        self.counters[(tid, counter)] = total
        self.set_open(thread_counter_key(tid, counter), t, total)

    def _on_switch(self, ev: TraceEvent) -> None:
        t, cpu = ev.ts, ev.cpu
        prev, nxt = ev.payload["prev_tid"], ev.payload["next_tid"]
        cpu_key = cpu_current_key(cpu)
        occupant = self.open_value(cpu_key)
        if occupant is not None and occupant != prev:
            raise SwitchConflict(
                f"ts={t}: cpu {cpu} runs tid {occupant}, switch names prev {prev}")
        nxt_state = self.thread_state(nxt)
        if nxt_state is not None and nxt_state.kind is StateKind.RUNNING:
            raise SwitchConflict(
                f"ts={t}: tid {nxt} already running on cpu {self.running_cpu.get(nxt)}")
        if ev.payload["prev_state"] == "blocked":
            out_state = ThreadState(StateKind.BLOCKED, BlockReason.UNKNOWN, None)
        else:
            out_state = RUNNABLE
        self.set_thread_state(prev, t, out_state)
        self.close_open(thread_cpu_key(prev), t)
        self.running_cpu.pop(prev, None)
        self.set_thread_state(nxt, t, RUNNING)
        self.set_open(thread_cpu_key(nxt), t, cpu)
        self.running_cpu[nxt] = cpu
        self.set_open(cpu_key, t, nxt)

    def _wake_reason(self, ev: TraceEvent) -> ThreadState:
        ctx = ev.payload["waker_context"]
        waker = ev.payload["waker_tid"]
        wakee = ev.payload["wakee_tid"]
        if ctx == "task":
            # A task wake that ends a wait inside futex is a futex handoff.
            stack = self.syscall_stack.get(wakee)
            if stack and "futex" in stack[-1]:
                return ThreadState(StateKind.BLOCKED, BlockReason.FUTEX, waker)
            return ThreadState(StateKind.BLOCKED, BlockReason.TASK, waker)
        if ctx == "hrtimer":
            return ThreadState(StateKind.BLOCKED, BlockReason.TIMER, None)
        stack = self.irq_stack.get(ev.cpu, [])
        if ctx == "softirq":
            for fam, token in reversed(stack):
                if fam == "softirq":
                    reason = self.cfg.softirq_reasons.get(token, BlockReason.UNKNOWN)
                    return ThreadState(StateKind.BLOCKED, reason, None)
        elif ctx == "irq":
            for fam, token in reversed(stack):
                if fam == "irq":
                    reason = self.cfg.irq_reasons.get(token, BlockReason.UNKNOWN)
                    return ThreadState(StateKind.BLOCKED, reason, None)
        return ThreadState(StateKind.BLOCKED, BlockReason.UNKNOWN, None)

    def _on_wakeup(self, ev: TraceEvent) -> None:
        wakee = ev.payload["wakee_tid"]
        key = thread_state_key(wakee)
        cur = self.thread_state(wakee)
        if cur is not None and cur.kind is StateKind.BLOCKED:
            # The reason is only known now, from the waking context: patch
            # the still-open blocked interval before closing it.
            self.replace_open_value(key, self._wake_reason(ev))
            self.set_open(key, ev.ts, RUNNABLE)
        elif cur is None:
            self.set_open(key, ev.ts, RUNNABLE)
        # already runnable/running: spurious wake, no transition

    def _on_irq_entry(self, ev: TraceEvent) -> None:
        stack = self.irq_stack.setdefault(ev.cpu, [])
        if ev.kind is EventKind.IRQ_ENTRY:
            stack.append(("irq", ev.payload["irq"]))
        elif ev.kind is EventKind.SOFTIRQ_ENTRY:
            stack.append(("softirq", ev.payload["vec"]))
        else:
            stack.append(("hrtimer", None))
        if len(stack) == 1:
            occupant = self.open_value(cpu_current_key(ev.cpu))
            if occupant is not None:
                st = self.thread_state(int(occupant))
                if st is not None and st.kind is StateKind.RUNNING:
                    self.set_thread_state(int(occupant), ev.ts, INTERRUPTED)

    def _on_irq_exit(self, ev: TraceEvent) -> None:
        fam = {"irq_exit": "irq", "softirq_exit": "softirq",
               "hrtimer_expire_exit": "hrtimer"}[ev.kind.value]
        token = ev.payload.get("irq") if fam == "irq" else (
            ev.payload.get("vec") if fam == "softirq" else None)
        stack = self.irq_stack.get(ev.cpu, [])
        if not stack or stack[-1] != (fam, token):
            raise NestingViolation(
                f"{ev.kind.value} on cpu {ev.cpu} does not match an open entry")
        stack.pop()
        if not stack:
            occupant = self.open_value(cpu_current_key(ev.cpu))
            if occupant is not None:
                st = self.thread_state(int(occupant))
                if st is not None and st.kind is StateKind.INTERRUPTED:
                    self.set_thread_state(int(occupant), ev.ts, RUNNING)

    def _on_rq_complete(self, ev: TraceEvent) -> None:
        dev = ev.payload["dev"]
        fifo = self.dev_fifo.get(dev)
        if not fifo:
            raise NestingViolation(f"block_rq_complete on {dev} without an issue")
        tid, issued = fifo.popleft()
        service_start = max(issued, self.dev_last_end.get(dev, 0))
        if service_start < ev.ts:
            key = disk_active_key(dev)
            self.intervals.setdefault(key, []).append(
                StateValue(service_start, ev.ts, key, tid))
        self.dev_last_end[dev] = ev.ts

    def finish(self) -> StateDatabase:
        end = self.t_max
        for key in sorted(self.open):
            self.close_open(key, end)
        return StateDatabase(self.intervals, self.comms,
                             self.t_min if self.t_min is not None else 0,
                             end, self.count)


def build_state_db(events: Iterable[TraceEvent],
                   wake_config: WakeReasonConfig | None = None) -> StateDatabase:
    """Fold an ordered event stream into a StateDatabase in one pass.

    Mapping rules:
      - sched_switch: next thread -> running (and cpu/{idx}/current_tid),
        previous -> runnable or blocked per prev_state; the blocked reason
        stays unknown until the wakeup that ends it reveals the context.
      - sched_wakeup: wakee blocked -> runnable; reason patched from the
        waker context (task/futex handoff, hrtimer -> timer, irq/softirq
        via the configured per-vector mapping).
      - irq/softirq/hrtimer entry+exit: the thread current on that CPU is
        interrupted for the outermost nested duration.
      - syscall entry/exit: thread/{tid}/syscall holds the innermost name.
      - block_rq_issue/complete: FIFO-matched per device into
        disk/{dev}/active_tid service intervals.
      - page_fault / io_read / io_write: cumulative step-function counters.
    """
    builder = _Builder(wake_config or WakeReasonConfig())
    handle = builder.handle
    was_enabled = gc.isenabled()
    if was_enabled:
        gc.disable()
    try:
        for ev in events:
            handle(ev)
    finally:
        if was_enabled:
            gc.enable()
    return builder.finish()


# -- snapshot ---------------------------------------------------------------

SNAPSHOT_MAGIC = "waitgraph-statedb"
SNAPSHOT_VERSION = 1


def _encode_value(v: object) -> object:
    if isinstance(v, ThreadState):
        enc: dict[str, object] = {"state": v.kind.value}
        if v.reason is not None:
            enc["reason"] = v.reason.value
        if v.waker_tid is not None:
            enc["waker"] = v.waker_tid
        return enc
    return v


def _decode_value(v: object) -> object:
    if isinstance(v, dict):
        return ThreadState(StateKind(v["state"]),
                           BlockReason(v["reason"]) if "reason" in v else None,
                           v.get("waker"))
    return v


def save_snapshot(db: StateDatabase, path: str | Path) -> None:
    """Serialize the full database; reload then re-save is byte-identical."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {"magic": SNAPSHOT_MAGIC, "version": SNAPSHOT_VERSION,
                  "t_min": db.t_min, "t_max": db.t_max,
                  "events_consumed": db.events_consumed,
                  "comms": {str(t): c for t, c in sorted(db.comms.items())}}
        fh.write(json.dumps(header, ensure_ascii=False, sort_keys=True,
                            separators=(",", ":")) + "\n")
        for key in db.keys():
            for sv in db.intervals(key):
                rec = {"k": key, "s": sv.start, "e": sv.end,
                       "v": _encode_value(sv.value)}
                fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True,
                                    separators=(",", ":")) + "\n")


def load_snapshot(path: str | Path) -> StateDatabase:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("magic") != SNAPSHOT_MAGIC or header.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"{path}: not a state database snapshot")
        intervals: dict[str, list[StateValue]] = {}
        for line in fh:
            rec = json.loads(line)
            key = rec["k"]
            intervals.setdefault(key, []).append(
                StateValue(rec["s"], rec["e"], key, _decode_value(rec["v"])))
    comms = {int(t): c for t, c in header["comms"].items()}
    return StateDatabase(intervals, comms, header["t_min"], header["t_max"],
                         header["events_consumed"])
