"""Deterministic synthetic traces for three contention scenarios.

Each scenario emits delimited spans on a root thread plus the surrounding
scheduler choreography, with ground-truth labels for every span:

  lock_contention  slow worker spans block inside fcntl behind peer threads
                   holding a shared lock (~91% of the span inside fcntl,
                   ~82% of that blocked on peers, the rest waiting for CPU);
  cpu_contention   a periodic task is preempted by an irq-handler thread
                   occupying its CPU (9 ms slow vs 1 ms normal);
  disk_contention  server spans block in newfstat while a grep-like thread
                   holds ~43% of the disk service time and two kworker-like
                   threads share the rest;
  mixed            spans drawn from all three.

Identical (scenario, seed, parameters) produce byte-identical traces.
Timing targets are realized by exact integer partition plus seeded jitter,
so measured shares land within a couple of percent of the targets.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

from .errors import InvalidParameter
from .events import EventKind, TraceEvent, write_trace

SCENARIOS = ("lock_contention", "cpu_contention", "disk_contention", "mixed")
_ALIASES = {"lock": "lock_contention", "cpu": "cpu_contention",
            "disk": "disk_contention", "mixed": "mixed"}

# per-scenario (fast span ns, slow/fast ratio)
_DEFAULT_TIMING = {
    "lock_contention": (2_815_000, 40_148_000 / 2_815_000),
    "cpu_contention": (1_000_000, 9.0),
    "disk_contention": (3_000_000, 10.0),
}


@dataclass
class ScenarioSpec:
    scenario: str
    seed: int = 0
    n_spans: int = 20
    slow_fraction: float = 0.5
    workers: int = 3                  # peer threads contending for the lock
    fast_us: float | None = None      # override the fast-span duration
    slowdown: float | None = None     # slow = fast * slowdown
    lock_syscall: str = "fcntl"
    disk_syscall: str = "newfstat"
    irq_thread_name: str = "irq/154-hpd"
    filler_events: int = 24           # counter events per span while running
    jitter: float = 0.015

    def __post_init__(self):
        self.scenario = _ALIASES.get(self.scenario, self.scenario)
        if self.scenario not in SCENARIOS:
            raise InvalidParameter(f"unknown scenario {self.scenario!r}")
        if not 0.0 <= self.slow_fraction <= 1.0:
            raise InvalidParameter("slow_fraction must be within [0, 1]")
        if self.n_spans < 1:
            raise InvalidParameter("n_spans must be >= 1")
        if self.workers < 1:
            raise InvalidParameter("workers must be >= 1")
        if self.filler_events < 0:
            raise InvalidParameter("filler_events must be >= 0")
        if not 0.0 <= self.jitter <= 0.05:
            raise InvalidParameter("jitter must be within [0, 0.05]")
        if self.slowdown is not None and self.slowdown <= 1.0:
            raise InvalidParameter("slowdown must be > 1")
        if self.fast_us is not None and self.fast_us <= 0:
            raise InvalidParameter("fast_us must be > 0")


def _split_exact(total: int, n: int) -> list[int]:
    base, rem = divmod(total, n)
    return [base + 1] * rem + [base] * (n - rem)


def _split_jitter(total: int, n: int, rng: random.Random,
                  rel: float = 0.2) -> list[int]:
    """Partition *total* into n jittered parts that sum exactly."""
    if n == 1:
        return [total]
    weights = [1.0 + rng.uniform(-rel, rel) for _ in range(n)]
    scale = total / sum(weights)
    parts = [int(w * scale) for w in weights]
    for i in range(total - sum(parts)):
        parts[i % n] += 1
    return parts


# thread/cpu layout (disjoint across scenarios so "mixed" can combine them)
_BOOT_BASE = 800
_LOCK_CPU, _CPU_CPU, _DISK_CPU = 0, 1, 2
_GREP_CPU, _KW1_CPU, _KW2_CPU = 3, 4, 5
_LOCK_FILLER, _CPU_FILLER, _DISK_FILLER = 900, 901, 902
_CPU_ROOT_TID, _IRQ_TID = 3267, 4001
_GREP_TID, _KW1_TID, _KW2_TID = 9739, 5001, 5002
_IRQ_LINE = 154
_SOFTIRQ_BLOCK_VEC = 4
_DISK_DEV = "sda"


class _Gen:
    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        self.rng = random.Random(spec.seed)
        self.now = 1_000
        fast, ratio = _DEFAULT_TIMING.get(spec.scenario, _DEFAULT_TIMING["lock_contention"])
        if spec.fast_us is not None:
            fast = int(spec.fast_us * 1000)
        if spec.slowdown is not None:
            ratio = spec.slowdown
        self.fast_ns = fast
        self.slow_ns = int(fast * ratio)
        self.comms: dict[int, str] = {}
        self.gt_spans: list[dict] = []

    def ev(self, ts: int, cpu: int, tid: int, kind: EventKind,
           **payload) -> TraceEvent:
        return TraceEvent(ts, cpu, tid, self.comms[tid], kind, payload)

    def register(self, tid: int, comm: str) -> None:
        self.comms[tid] = comm

    def jittered(self, target: int) -> int:
        j = self.spec.jitter
        return max(1, int(target * (1.0 + self.rng.uniform(-j, j))))

    def switch(self, ts: int, cpu: int, prev: int, prev_state: str,
               nxt: int) -> TraceEvent:
        return self.ev(ts, cpu, prev, EventKind.SCHED_SWITCH,
                       prev_tid=prev, prev_state=prev_state, next_tid=nxt)

    def filler(self, out: list[TraceEvent], cpu: int, tid: int,
               start: int, length: int, count: int) -> None:
        """Counter events spread across a running segment (start, start+length)."""
        if count <= 0:
            return
        spacing = length // (count + 1)
        if spacing < 1:
            raise InvalidParameter(
                f"filler_events={count} does not fit a {length} ns segment")
        kinds = (EventKind.PAGE_FAULT, EventKind.IO_READ, EventKind.IO_WRITE)
        for i in range(count):
            kind = kinds[i % 3]
            payload = {} if kind is EventKind.PAGE_FAULT \
                else {"bytes": 1024 * self.rng.randint(1, 8)}
            out.append(self.ev(start + spacing * (i + 1), cpu, tid, kind, **payload))

    # -- lock contention -----------------------------------------------------

    def lock_prologue(self) -> list[TraceEvent]:
        self.register(_BOOT_BASE + _LOCK_CPU, f"swapper/{_LOCK_CPU}")
        self.register(_LOCK_FILLER, f"swapper/{_LOCK_CPU}")
        for k in range(self.spec.workers):
            self.register(20_001 + k, "apache2")
        out = [self.switch(self.now, _LOCK_CPU, _BOOT_BASE + _LOCK_CPU,
                           "runnable", _LOCK_FILLER)]
        self.now += 1_000
        return out

    def lock_span(self, idx: int, span_id: str, slow: bool) -> list[TraceEvent]:
        spec = self.spec
        root = 10_000 + idx
        self.register(root, "apache2")
        peers = [20_001 + k for k in range(spec.workers)]
        total = self.jittered(self.slow_ns if slow else self.fast_ns)
        out: list[TraceEvent] = []
        out.append(self.switch(self.now, _LOCK_CPU, _LOCK_FILLER, "runnable", root))
        self.now += 2_000
        t0 = self.now
        out.append(self.ev(t0, _LOCK_CPU, root, EventKind.SPAN_BEGIN, span_id=span_id))
        if slow:
            # 91% of the span inside the lock syscall; within it 82% blocked
            # on the peer holding the lock and ~17.7% runnable behind it.
            in_sys = round(total * 0.91)
            prefix = round(total * 0.054)
            post = total - in_sys - prefix
            rounds = spec.workers
            run_in = max(rounds + 1, round(in_sys * 0.003))
            blocked_total = round(in_sys * 0.82)
            runnable_total = in_sys - blocked_total - run_in
            if blocked_total < rounds or runnable_total < rounds:
                raise InvalidParameter("span too short for the contention rounds")
            run_slices = _split_exact(run_in, rounds + 1)
            blocks = _split_jitter(blocked_total, rounds, self.rng)
            waits = _split_jitter(runnable_total, rounds, self.rng)
            self.filler(out, _LOCK_CPU, root, t0, prefix, spec.filler_events)
            t = t0 + prefix
            out.append(self.ev(t, _LOCK_CPU, root, EventKind.SYSCALL_ENTRY,
                               name=spec.lock_syscall))
            t += run_slices[0]
            for r in range(rounds):
                peer = peers[r % len(peers)]
                out.append(self.switch(t, _LOCK_CPU, root, "blocked", peer))
                t += blocks[r]
                out.append(self.ev(t, _LOCK_CPU, peer, EventKind.SCHED_WAKEUP,
                                   waker_tid=peer, wakee_tid=root,
                                   waker_context="task"))
                t += waits[r]
                out.append(self.switch(t, _LOCK_CPU, peer, "runnable", root))
                t += run_slices[r + 1]
            out.append(self.ev(t, _LOCK_CPU, root, EventKind.SYSCALL_EXIT,
                               name=spec.lock_syscall))
            t += post
        else:
            prefix = round(total * 0.90)
            self.filler(out, _LOCK_CPU, root, t0, prefix, spec.filler_events)
            t = t0 + prefix
            out.append(self.ev(t, _LOCK_CPU, root, EventKind.SYSCALL_ENTRY,
                               name="writev"))
            t = t0 + total - 500
            out.append(self.ev(t, _LOCK_CPU, root, EventKind.SYSCALL_EXIT,
                               name="writev"))
            t = t0 + total
        t_end = t0 + total
        out.append(self.ev(t_end, _LOCK_CPU, root, EventKind.SPAN_END,
                           span_id=span_id))
        self.now = t_end + 2_000
        out.append(self.switch(self.now, _LOCK_CPU, root, "blocked", _LOCK_FILLER))
        self.now += self.rng.randint(50_000, 150_000)
        self.gt_spans.append({
            "span_id": span_id, "label": "slow" if slow else "fast",
            "injected_cause": "lock_contention" if slow else "none",
            "expected_path": (["apache2", spec.lock_syscall, "apache2#2"]
                              if slow else ["apache2"]),
        })
        return out

    # -- cpu contention -------------------------------------------------------

    def cpu_prologue(self) -> list[TraceEvent]:
        self.register(_BOOT_BASE + _CPU_CPU, f"swapper/{_CPU_CPU}")
        self.register(_CPU_FILLER, f"swapper/{_CPU_CPU}")
        self.register(_CPU_ROOT_TID, "ktimersoftd/3")
        self.register(_IRQ_TID, self.spec.irq_thread_name)
        out = [self.switch(self.now, _CPU_CPU, _BOOT_BASE + _CPU_CPU,
                           "runnable", _IRQ_TID)]
        self.now += 1_000
        out.append(self.switch(self.now, _CPU_CPU, _IRQ_TID, "blocked",
                               _CPU_FILLER))
        self.now += 1_000
        return out

    def cpu_span(self, idx: int, span_id: str, slow: bool) -> list[TraceEvent]:
        spec = self.spec
        root = _CPU_ROOT_TID
        total = self.jittered(self.slow_ns if slow else self.fast_ns)
        out: list[TraceEvent] = []
        # periodic activation: a timer wake ends the inter-span sleep
        out.append(self.ev(self.now, _CPU_CPU, _CPU_FILLER,
                           EventKind.HRTIMER_EXPIRE_ENTRY))
        self.now += 500
        out.append(self.ev(self.now, _CPU_CPU, _CPU_FILLER, EventKind.SCHED_WAKEUP,
                           waker_tid=_CPU_FILLER, wakee_tid=root,
                           waker_context="hrtimer"))
        self.now += 500
        out.append(self.ev(self.now, _CPU_CPU, _CPU_FILLER,
                           EventKind.HRTIMER_EXPIRE_EXIT))
        self.now += 1_000
        out.append(self.switch(self.now, _CPU_CPU, _CPU_FILLER, "runnable", root))
        self.now += 1_000
        t0 = self.now
        out.append(self.ev(t0, _CPU_CPU, root, EventKind.SPAN_BEGIN, span_id=span_id))
        if slow:
            irq_ns = 20_000
            runnable = round(total * 8 / 9)
            running = total - irq_ns - runnable
            a1 = round(running * 0.45)
            a1b = round(running * 0.05)
            a2 = running - a1 - a1b
            self.filler(out, _CPU_CPU, root, t0, a1, spec.filler_events)
            t = t0 + a1
            out.append(self.ev(t, _CPU_CPU, root, EventKind.IRQ_ENTRY, irq=_IRQ_LINE))
            out.append(self.ev(t + 5_000, _CPU_CPU, root, EventKind.SCHED_WAKEUP,
                               waker_tid=root, wakee_tid=_IRQ_TID,
                               waker_context="irq"))
            t += irq_ns
            out.append(self.ev(t, _CPU_CPU, root, EventKind.IRQ_EXIT, irq=_IRQ_LINE))
            t += a1b
            out.append(self.switch(t, _CPU_CPU, root, "runnable", _IRQ_TID))
            t += runnable
            out.append(self.switch(t, _CPU_CPU, _IRQ_TID, "blocked", root))
            t += a2
        else:
            self.filler(out, _CPU_CPU, root, t0, total, spec.filler_events)
        t_end = t0 + total
        out.append(self.ev(t_end, _CPU_CPU, root, EventKind.SPAN_END,
                           span_id=span_id))
        self.now = t_end + 2_000
        out.append(self.switch(self.now, _CPU_CPU, root, "blocked", _CPU_FILLER))
        self.now += self.rng.randint(100_000, 300_000)
        self.gt_spans.append({
            "span_id": span_id, "label": "slow" if slow else "fast",
            "injected_cause": "cpu_contention" if slow else "none",
            "expected_path": (["ktimersoftd/3", "CPU", spec.irq_thread_name]
                              if slow else ["ktimersoftd/3"]),
        })
        return out

    # -- disk contention --------------------------------------------------------

    def disk_prologue(self) -> list[TraceEvent]:
        for cpu, tid, comm in ((_DISK_CPU, _DISK_FILLER, f"swapper/{_DISK_CPU}"),
                               (_GREP_CPU, _GREP_TID, "grep"),
                               (_KW1_CPU, _KW1_TID, "kworker/u8:1"),
                               (_KW2_CPU, _KW2_TID, "kworker/u8:2")):
            self.register(_BOOT_BASE + cpu, f"swapper/{cpu}")
            self.register(tid, comm)
        out = []
        for cpu, tid in ((_DISK_CPU, _DISK_FILLER), (_GREP_CPU, _GREP_TID),
                         (_KW1_CPU, _KW1_TID), (_KW2_CPU, _KW2_TID)):
            out.append(self.switch(self.now, cpu, _BOOT_BASE + cpu, "runnable", tid))
            self.now += 1_000
        return out

    def disk_span(self, idx: int, span_id: str, slow: bool) -> list[TraceEvent]:
        spec = self.spec
        root = 11_000 + idx
        self.register(root, "apache2")
        total = self.jittered(self.slow_ns if slow else self.fast_ns)
        out: list[TraceEvent] = []
        out.append(self.switch(self.now, _DISK_CPU, _DISK_FILLER, "runnable", root))
        self.now += 2_000
        t0 = self.now
        out.append(self.ev(t0, _DISK_CPU, root, EventKind.SPAN_BEGIN,
                           span_id=span_id))
        if slow:
            in_sys = round(total * 0.90)
            prefix = round(total * 0.05)
            post = total - in_sys - prefix
            eps = max(1_000, round(in_sys * 0.004))
            self.filler(out, _DISK_CPU, root, t0, prefix, spec.filler_events)
            t1 = t0 + prefix
            out.append(self.ev(t1, _DISK_CPU, root, EventKind.SYSCALL_ENTRY,
                               name=spec.disk_syscall))
            tb = t1 + eps
            out.append(self.switch(tb, _DISK_CPU, root, "blocked", _DISK_FILLER))
            tw = t1 + in_sys - eps
            self._disk_traffic(out, tb, tw, in_sys)
            out.append(self.ev(tw - 1_000, _DISK_CPU, _DISK_FILLER,
                               EventKind.SOFTIRQ_ENTRY, vec=_SOFTIRQ_BLOCK_VEC))
            out.append(self.ev(tw, _DISK_CPU, _DISK_FILLER, EventKind.SCHED_WAKEUP,
                               waker_tid=_DISK_FILLER, wakee_tid=root,
                               waker_context="softirq"))
            out.append(self.ev(tw, _DISK_CPU, _DISK_FILLER,
                               EventKind.SOFTIRQ_EXIT, vec=_SOFTIRQ_BLOCK_VEC))
            out.append(self.switch(tw, _DISK_CPU, _DISK_FILLER, "runnable", root))
            t2 = t1 + in_sys
            out.append(self.ev(t2, _DISK_CPU, root, EventKind.SYSCALL_EXIT,
                               name=spec.disk_syscall))
            t = t2 + post
        else:
            prefix = round(total * 0.45)
            self.filler(out, _DISK_CPU, root, t0, prefix, spec.filler_events)
            t = t0 + prefix
            out.append(self.ev(t, _DISK_CPU, root, EventKind.SYSCALL_ENTRY,
                               name=spec.disk_syscall))
            t += round(total * 0.10)
            out.append(self.ev(t, _DISK_CPU, root, EventKind.SYSCALL_EXIT,
                               name=spec.disk_syscall))
            t = t0 + total
        t_end = t0 + total
        out.append(self.ev(t_end, _DISK_CPU, root, EventKind.SPAN_END,
                           span_id=span_id))
        self.now = t_end + 2_000
        out.append(self.switch(self.now, _DISK_CPU, root, "blocked", _DISK_FILLER))
        self.now += self.rng.randint(50_000, 150_000)
        self.gt_spans.append({
            "span_id": span_id, "label": "slow" if slow else "fast",
            "injected_cause": "disk_contention" if slow else "none",
            "expected_path": (["apache2", spec.disk_syscall, "DISK", "grep"]
                              if slow else ["apache2"]),
        })
        return out

    def _disk_traffic(self, out: list[TraceEvent], tb: int, tw: int,
                      in_sys: int) -> None:
        """Sequential disk requests inside the blocked window: the grep
        thread holds 43% of the syscall wall, two kworkers share the rest."""
        window = (tw - 1_000) - tb
        grep_total = round(in_sys * 0.43)
        idle_total = max(0, round(in_sys * 0.02))
        kw_total = window - grep_total - idle_total
        if kw_total < 2:
            raise InvalidParameter("disk span too short for the traffic plan")
        grep_chunks = _split_jitter(grep_total, 4, self.rng)
        kw1_chunks = _split_jitter(kw_total // 2, 2, self.rng)
        kw2_chunks = _split_jitter(kw_total - kw_total // 2, 2, self.rng)
        order = [(_GREP_TID, _GREP_CPU, grep_chunks[0]),
                 (_KW1_TID, _KW1_CPU, kw1_chunks[0]),
                 (_GREP_TID, _GREP_CPU, grep_chunks[1]),
                 (_KW2_TID, _KW2_CPU, kw2_chunks[0]),
                 (_GREP_TID, _GREP_CPU, grep_chunks[2]),
                 (_KW1_TID, _KW1_CPU, kw1_chunks[1]),
                 (_GREP_TID, _GREP_CPU, grep_chunks[3]),
                 (_KW2_TID, _KW2_CPU, kw2_chunks[1])]
        gaps = _split_exact(idle_total, len(order))
        t = tb
        for (tid, cpu, dur), gap in zip(order, gaps):
            t += gap
            out.append(self.ev(t, cpu, tid, EventKind.BLOCK_RQ_ISSUE,
                               dev=_DISK_DEV))
            t += dur
            out.append(self.ev(t, cpu, tid, EventKind.BLOCK_RQ_COMPLETE,
                               dev=_DISK_DEV))


def _span_emitters(gen: _Gen) -> tuple[list[Callable], list[TraceEvent]]:
    scenario = gen.spec.scenario
    prologue: list[TraceEvent] = []
    if scenario in ("lock_contention", "mixed"):
        prologue += gen.lock_prologue()
    if scenario in ("cpu_contention", "mixed"):
        prologue += gen.cpu_prologue()
    if scenario in ("disk_contention", "mixed"):
        prologue += gen.disk_prologue()
    emitters = {"lock_contention": [gen.lock_span],
                "cpu_contention": [gen.cpu_span],
                "disk_contention": [gen.disk_span],
                "mixed": [gen.lock_span, gen.cpu_span, gen.disk_span]}[scenario]
    return emitters, prologue


def iter_events(spec: ScenarioSpec, gt_out: list[dict] | None = None) -> Iterator[TraceEvent]:
    """Stream the scenario's events; ground-truth records accumulate into
    gt_out (one per span, in emission order)."""
    gen = _Gen(spec)
    emitters, prologue = _span_emitters(gen)
    yield from prologue
    for i in range(spec.n_spans):
        emit = emitters[gen.rng.randrange(len(emitters))] if len(emitters) > 1 \
            else emitters[0]
        slow = gen.rng.random() < spec.slow_fraction
        span_id = f"s{i:04d}"
        yield from emit(i, span_id, slow)
    if gt_out is not None:
        gt_out.extend(gen.gt_spans)


def ground_truth_dict(spec: ScenarioSpec, gt_spans: list[dict]) -> dict:
    return {"scenario": spec.scenario, "seed": spec.seed,
            "n_spans": spec.n_spans, "spans": gt_spans}


def generate(spec: ScenarioSpec) -> tuple[list[TraceEvent], dict]:
    """Materialize the trace and its ground truth."""
    gt: list[dict] = []
    events = list(iter_events(spec, gt))
    return events, ground_truth_dict(spec, gt)


def generate_files(spec: ScenarioSpec, trace_path: str | Path,
                   ground_truth_path: str | Path) -> None:
    """Stream the trace to disk and write the ground-truth JSON."""
    gt: list[dict] = []
    write_trace(iter_events(spec, gt), trace_path)
    with open(ground_truth_path, "w", encoding="utf-8") as fh:
        json.dump(ground_truth_dict(spec, gt), fh, ensure_ascii=False,
                  indent=2, sort_keys=True)
        fh.write("\n")
