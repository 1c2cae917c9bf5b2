"""Waiting-dependency graph construction and export.

An edge src -> dst means "src waited on dst", weighted by the waited
nanoseconds and counting the contributing episodes.  The walk over the root
thread's execution states handles three waiting shapes:

  blocked on another thread   root -> [active syscall ->] waker thread,
                              then the waker's own graph over the blocked
                              interval is merged in;
  blocked on disk             root -> [syscall ->] DISK -> each thread whose
                              I/O the disk served during the wait, weighted
                              by service overlap;
  runnable (waiting for CPU)  root -> [syscall ->] CPU -> each thread that
                              occupied the last CPU this thread ran on.

Node identities inside one build: threads are (tid, comm), syscall nodes
belong to the waiting thread's context as (tid, name), and CPU/DISK are
per-graph singletons.  ``canonicalize`` re-keys threads by comm and
syscalls by name so graphs from different executions can be merged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .errors import RootConflict
from .events import ExecutionSpan
from .states import (
    BlockReason,
    StateDatabase,
    StateKind,
    StateValue,
    thread_state_key,
    thread_syscall_key,
)

NodeId = tuple


class NodeKind(str, Enum):
    THREAD = "thread"
    SYSCALL = "syscall"
    RESOURCE = "resource"


def thread_node_id(tid: int, comm: str) -> NodeId:
    return ("thread", tid, comm)


def syscall_node_id(owner_tid: int, name: str) -> NodeId:
    return ("syscall", owner_tid, name)


def resource_node_id(label: str) -> NodeId:
    return ("resource", label)


CPU_NODE = resource_node_id("CPU")
DISK_NODE = resource_node_id("DISK")


@dataclass
class DepNode:
    node_id: NodeId
    kind: NodeKind
    label: str
    total_ns: int = 0

    @property
    def total_us(self) -> int:
        return round(self.total_ns / 1000)


@dataclass
class DepEdge:
    src: NodeId
    dst: NodeId
    weight_ns: int
    count: int = 1
    devices: frozenset[str] = frozenset()

    @property
    def weight_us(self) -> int:
        return round(self.weight_ns / 1000)


@dataclass
class DepGraph:
    root_id: NodeId
    nodes: dict[NodeId, DepNode] = field(default_factory=dict)
    edges: dict[tuple[NodeId, NodeId], DepEdge] = field(default_factory=dict)
    span: ExecutionSpan | None = None
    cycle_detected: bool = False
    depth_truncated: bool = False

    @property
    def root(self) -> DepNode:
        return self.nodes[self.root_id]

    def out_edges(self, node_id: NodeId) -> list[DepEdge]:
        return [e for (s, _), e in self.edges.items() if s == node_id]

    def in_edges(self, node_id: NodeId) -> list[DepEdge]:
        return [e for (_, d), e in self.edges.items() if d == node_id]


def _node_label(node_id: NodeId) -> str:
    kind = node_id[0]
    if kind == "thread":
        return f"{node_id[2]}-{node_id[1]}" if len(node_id) == 3 else node_id[1]
    if kind == "syscall":
        return node_id[2] if len(node_id) == 3 else node_id[1]
    return node_id[1]


def _node_kind(node_id: NodeId) -> NodeKind:
    return NodeKind(node_id[0])


def merged_span_total(ivs: list[StateValue]) -> int:
    """Total covered nanoseconds of a sorted interval list, overlaps merged
    (a thread served on two devices at once must not count twice)."""
    total = 0
    cur_s = cur_e = None
    for iv in ivs:
        if cur_e is None:
            cur_s, cur_e = iv.start, iv.end
        elif iv.start <= cur_e:
            cur_e = max(cur_e, iv.end)
        else:
            total += cur_e - cur_s
            cur_s, cur_e = iv.start, iv.end
    if cur_e is not None:
        total += cur_e - cur_s
    return total


def ensure_node(graph: DepGraph, node_id: NodeId) -> DepNode:
    node = graph.nodes.get(node_id)
    if node is None:
        node = DepNode(node_id, _node_kind(node_id), _node_label(node_id))
        graph.nodes[node_id] = node
    return node


def _fold_edge(edges: dict, src: NodeId, dst: NodeId, weight: int,
               count: int, devices: frozenset[str]) -> None:
    key = (src, dst)
    cur = edges.get(key)
    if cur is None:
        edges[key] = DepEdge(src, dst, weight, count, devices)
    else:
        cur.weight_ns += weight
        cur.count += count
        if devices:
            cur.devices = cur.devices | devices


def add_to_graph(graph: DepGraph, edge: DepEdge) -> DepGraph:
    """Insert an edge, summing weight and count with an existing (src, dst).

    Resource destinations accumulate incoming weight as their node total.
    """
    ensure_node(graph, edge.src)
    dst = ensure_node(graph, edge.dst)
    _fold_edge(graph.edges, edge.src, edge.dst, edge.weight_ns, edge.count,
               edge.devices)
    if dst.kind is NodeKind.RESOURCE:
        dst.total_ns += edge.weight_ns
    return graph


def merge_graphs(g1: DepGraph, g2: DepGraph,
                 super_root: NodeId | None = None) -> DepGraph:
    """Union of two graphs: matching edges sum weight and count, node
    totals sum.  Different roots require an explicit super_root."""
    if g1.root_id == g2.root_id:
        root = g1.root_id
    elif super_root is not None:
        root = super_root
    else:
        raise RootConflict(f"cannot merge roots {g1.root_id} and {g2.root_id}")
    out = DepGraph(root_id=root, span=g1.span,
                   cycle_detected=g1.cycle_detected or g2.cycle_detected,
                   depth_truncated=g1.depth_truncated or g2.depth_truncated)
    if super_root is not None:
        ensure_node(out, root)
    for g in (g1, g2):
        for node_id, node in g.nodes.items():
            mine = ensure_node(out, node_id)
            mine.total_ns += node.total_ns
        # resource totals already carried over with the node totals
        for edge in g.edges.values():
            _fold_edge(out.edges, edge.src, edge.dst, edge.weight_ns,
                       edge.count, edge.devices)
    return out


class _GraphBuilder:
    """Recursive walk over execution states, accumulating into one graph.

    Merging a freshly built sub-graph is edge-wise identical to adding its
    edges one by one, so the walk threads a single accumulator through the
    recursion instead of materializing throwaway graphs.
    """

    def __init__(self, db: StateDatabase, max_depth: int):
        self.db = db
        self.max_depth = max_depth
        self.graph: DepGraph | None = None
        self.visited: set[tuple[int, int, int]] = set()
        self.stack_tids: list[int] = []

    def build(self, root_tid: int, ts_s: int, ts_e: int) -> DepGraph:
        root_id = thread_node_id(root_tid, self.db.comm(root_tid))
        self.graph = DepGraph(root_id=root_id)
        ensure_node(self.graph, root_id).total_ns += ts_e - ts_s
        self.visited.add((root_tid, ts_s, ts_e))
        self.stack_tids.append(root_tid)
        self._walk(root_tid, ts_s, ts_e, depth=0)
        self.stack_tids.pop()
        return self.graph

    def _thread_id(self, tid: int) -> NodeId:
        return thread_node_id(tid, self.db.comm(tid))

    def _syscall_context(self, tid: int, t: int) -> str | None:
        v = self.db.query_at(thread_syscall_key(tid), t)
        return v if isinstance(v, str) else None

    def _syscall_wall(self, tid: int, name: str, ts_s: int, ts_e: int) -> int:
        return sum(sv.duration_ns
                   for sv in self.db.query_range(thread_syscall_key(tid), ts_s, ts_e)
                   if sv.value == name)

    def _edge(self, src: NodeId, dst: NodeId, weight: int,
              devices: frozenset[str] = frozenset()) -> None:
        add_to_graph(self.graph, DepEdge(src, dst, weight, 1, devices))

    def _recurse(self, tid: int, ws: int, we: int, depth: int) -> None:
        if we <= ws:
            return
        if tid in self.stack_tids:
            self.graph.cycle_detected = True
            return
        key = (tid, ws, we)
        if key in self.visited:
            return
        if depth + 1 > self.max_depth:
            self.graph.depth_truncated = True
            return
        self.visited.add(key)
        self.stack_tids.append(tid)
        ensure_node(self.graph, self._thread_id(tid)).total_ns += we - ws
        self._walk(tid, ws, we, depth + 1)
        self.stack_tids.pop()

    def _walk(self, tid: int, ts_s: int, ts_e: int, depth: int) -> None:
        states = self.db.query_range(thread_state_key(tid), ts_s, ts_e)
        me = self._thread_id(tid)
        syscalls_seen: set[str] = set()

        def syscall_node(name: str) -> NodeId:
            sid = syscall_node_id(tid, name)
            if name not in syscalls_seen:
                syscalls_seen.add(name)
                node = ensure_node(self.graph, sid)
                node.total_ns += self._syscall_wall(tid, name, ts_s, ts_e)
            return sid

        for sv in states:
            st = sv.value
            dur = sv.duration_ns
            if dur <= 0 or st.kind is StateKind.RUNNING \
                    or st.kind is StateKind.INTERRUPTED:
                continue
            ctx = self._syscall_context(tid, sv.start)
            if st.kind is StateKind.BLOCKED:
                if st.reason in (BlockReason.TASK, BlockReason.FUTEX) \
                        and st.waker_tid is not None:
                    waker = self._thread_id(st.waker_tid)
                    if ctx is not None:
                        sid = syscall_node(ctx)
                        self._edge(me, sid, dur)
                        self._edge(sid, waker, dur)
                    else:
                        self._edge(me, waker, dur)
                    self._recurse(st.waker_tid, sv.start, sv.end, depth)
                elif st.reason is BlockReason.DISK:
                    if ctx is not None:
                        sid = syscall_node(ctx)
                        self._edge(me, sid, dur)
                        self._edge(sid, DISK_NODE, dur)
                    else:
                        self._edge(me, DISK_NODE, dur)
                    usage = self.db.disk_usage_by_thread(sv.start, sv.end)
                    usage.pop(tid, None)
                    for utid in sorted(usage):
                        ivs = usage[utid]
                        overlap = merged_span_total(ivs)
                        if overlap <= 0:
                            continue
                        devs = frozenset(iv.key.split("/")[1] for iv in ivs)
                        self._edge(DISK_NODE, self._thread_id(utid), overlap, devs)
                        self._recurse(utid, ivs[0].start, ivs[-1].end, depth)
                # other blocked reasons (timer/network/unknown) name no
                # culprit thread or tracked resource: no edges.
            elif st.kind is StateKind.RUNNABLE:
                if ctx is not None:
                    sid = syscall_node(ctx)
                    self._edge(me, sid, dur)
                    self._edge(sid, CPU_NODE, dur)
                else:
                    self._edge(me, CPU_NODE, dur)
                cpu = self.db.last_cpu_before(tid, sv.start)
                if cpu is None:
                    continue
                usage = self.db.cpu_usage_by_thread(cpu, sv.start, sv.end)
                usage.pop(tid, None)
                for utid in sorted(usage):
                    ivs = usage[utid]
                    overlap = merged_span_total(ivs)
                    if overlap <= 0:
                        continue
                    self._edge(CPU_NODE, self._thread_id(utid), overlap,
                               frozenset((f"cpu{cpu}",)))
                    self._recurse(utid, ivs[0].start, ivs[-1].end, depth)


def build_depgraph(db: StateDatabase, root_tid: int, ts_s: int, ts_e: int,
                   max_depth: int = 16) -> DepGraph:
    """Build the waiting-dependency graph of one thread over [ts_s, ts_e).

    A root thread absent from the range yields a graph with the root node
    only.  Recursion is guarded by a per-build visited set and a depth cap;
    mutual waits set cycle_detected instead of recursing forever.
    """
    if ts_s >= ts_e:
        raise ValueError("build_depgraph: ts_s must be < ts_e")
    return _GraphBuilder(db, max_depth).build(root_tid, ts_s, ts_e)


def build_span_graph(db: StateDatabase, span: ExecutionSpan,
                     max_depth: int = 16) -> DepGraph:
    g = build_depgraph(db, span.root_tid, span.t_start, span.t_end, max_depth)
    g.span = span
    return g


# -- cross-execution canonicalization ---------------------------------------

def canonicalize(graph: DepGraph) -> DepGraph:
    """Re-key nodes with execution-independent identities.

    Thread nodes become ("thread", comm) with the root first and remaining
    same-comm threads disambiguated as comm#2, comm#3 in ascending tid
    order; syscall nodes become ("syscall", name); resources are unchanged.
    Collapsed identities merge their totals and edges.
    """
    mapping: dict[NodeId, NodeId] = {}
    taken: dict[str, int] = {}
    thread_ids = [nid for nid in graph.nodes if nid[0] == "thread"]
    thread_ids.sort(key=lambda nid: (nid != graph.root_id, nid[1]))
    for nid in thread_ids:
        comm = nid[2]
        n = taken.get(comm, 0) + 1
        taken[comm] = n
        name = comm if n == 1 else f"{comm}#{n}"
        mapping[nid] = ("thread", name)
    for nid in graph.nodes:
        if nid[0] == "syscall":
            mapping[nid] = ("syscall", nid[2])
        elif nid[0] == "resource":
            mapping[nid] = nid
    out = DepGraph(root_id=mapping[graph.root_id], span=graph.span,
                   cycle_detected=graph.cycle_detected,
                   depth_truncated=graph.depth_truncated)
    for nid, node in graph.nodes.items():
        target = ensure_node(out, mapping[nid])
        target.total_ns += node.total_ns
    # resource totals travel with the nodes, so edges fold without them
    for edge in graph.edges.values():
        _fold_edge(out.edges, mapping[edge.src], mapping[edge.dst],
                   edge.weight_ns, edge.count, edge.devices)
    return out


# -- export ------------------------------------------------------------------

_DOT_SHAPES = {NodeKind.THREAD: "box", NodeKind.SYSCALL: "ellipse",
               NodeKind.RESOURCE: "diamond"}


def node_id_str(node_id: NodeId) -> str:
    return ":".join(str(p) for p in node_id)


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(graph: DepGraph, percentages: bool = True,
           min_edge_us: int = 0) -> str:
    """Render a deterministic DOT digraph.

    Node labels carry the total microseconds; edge labels carry the waited
    microseconds and, when enabled, the share of the source node's total.
    min_edge_us hides (display only) edges below the threshold.
    """
    lines = ["digraph waits {", "  rankdir=TB;"]
    for node_id in sorted(graph.nodes, key=node_id_str):
        node = graph.nodes[node_id]
        label = f"{node.label} ({node.total_us} µs)"
        shape = _DOT_SHAPES[node.kind]
        extra = ", penwidth=2" if node_id == graph.root_id else ""
        lines.append(f"  {_quote(node_id_str(node_id))} "
                     f"[shape={shape}, label={_quote(label)}{extra}];")
    for key in sorted(graph.edges, key=lambda k: (node_id_str(k[0]), node_id_str(k[1]))):
        edge = graph.edges[key]
        if edge.weight_us < min_edge_us:
            continue
        label = f"{edge.weight_us} µs"
        if percentages:
            src_total = graph.nodes[edge.src].total_ns
            if src_total > 0:
                label += f" ({round(100 * edge.weight_ns / src_total)}%)"
        lines.append(f"  {_quote(node_id_str(edge.src))} -> "
                     f"{_quote(node_id_str(edge.dst))} [label={_quote(label)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_json_dict(graph: DepGraph) -> dict:
    """JSON-ready dump: {nodes: [...], edges: [...]} plus span metadata."""
    nodes = []
    for node_id in sorted(graph.nodes, key=node_id_str):
        node = graph.nodes[node_id]
        nodes.append({"id": node_id_str(node_id), "kind": node.kind.value,
                      "label": node.label, "total_us": node.total_ns / 1000})
    edges = []
    for key in sorted(graph.edges, key=lambda k: (node_id_str(k[0]), node_id_str(k[1]))):
        edge = graph.edges[key]
        rec = {"src": node_id_str(edge.src), "dst": node_id_str(edge.dst),
               "weight_us": edge.weight_ns / 1000, "count": edge.count}
        if edge.devices:
            rec["devices"] = sorted(edge.devices)
        edges.append(rec)
    out = {"root": node_id_str(graph.root_id), "nodes": nodes, "edges": edges,
           "cycle_detected": graph.cycle_detected,
           "depth_truncated": graph.depth_truncated}
    if graph.span is not None:
        out["span_id"] = graph.span.span_id
        out["range_ns"] = [graph.span.t_start, graph.span.t_end]
    return out
