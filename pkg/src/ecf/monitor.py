"""Online conflict-ECF monitor.

The monitor mirrors the call stack from interpreter events and cuts the
execution into segments (maximal same-object runs).  When the stack returns
to quiescence it analyses each object separately:

* every invocation that encloses a deeper segment of the same object gets a
  matrix entry recording whether that segment commutes with the
  invocation's prefix and with its suffix;
* the entries induce happens-before edges between invocations (the IOC
  graph); an acyclic graph certifies the execution and any topological order
  is a callback-free witness.

Two invocations of the same object that do not nest are ordered by time when
their accesses conflict.  Without those edges, two callbacks that conflict
with each other could be put in an order that does not preserve their
conflict.  ``sibling_edges=False`` turns them off.
"""
from __future__ import annotations

import bisect
import graphlib
import heapq
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .interp import Event, Trace

ECF = "ECF"
NOT_ECF = "NotECF"


class InstrumentationFault(Exception):
    pass


@dataclass(eq=False)
class Segment:
    obj: str
    inv: int          # id of the invocation the segment belongs to
    R: set
    W: set
    D: int            # stack depth (0-based) when the segment opened
    I: int            # global index within the execution
    pdepth: int = 0   # depth counted in invocations of ``obj`` only
    pindex: int = 0   # index among the segments of ``obj``
    first_event: int = 0
    last_event: int = 0

    def key(self) -> tuple:
        return (frozenset(self.R), frozenset(self.W), self.pdepth, self.pindex)

    def __repr__(self):
        def fmt(s):
            return "{" + ",".join(sorted(loc_str(l) for l in s)) + "}"
        return f"<{self.obj} {fmt(self.R)},{fmt(self.W)},{self.pdepth},{self.pindex}>"


@dataclass(eq=False)
class Invocation:
    id: int
    caller: Optional[int]
    obj: str
    pdepth: int
    label: str
    segments: list = field(default_factory=list)

    @property
    def first(self) -> int:
        return self.segments[0].pindex

    @property
    def last(self) -> int:
        return self.segments[-1].pindex

    def encloses(self, s: Segment) -> bool:
        return (s.obj == self.obj and s.inv != self.id
                and self.first < s.pindex < self.last)


def loc_str(loc) -> str:
    f, k = loc
    return f if k is None else f"{f}[{k}]"


def commute(a, b) -> bool:
    """Two access summaries commute when no location is written by one and touched by the other."""
    ra, wa = (a.R, a.W) if isinstance(a, Segment) else a
    rb, wb = (b.R, b.W) if isinstance(b, Segment) else b
    return ra.isdisjoint(wb) and rb.isdisjoint(wa) and wa.isdisjoint(wb)


def union_rw(segs: Iterable[Segment]) -> tuple:
    r, w = set(), set()
    for s in segs:
        r |= s.R
        w |= s.W
    return r, w


def prefix_set(inv: Invocation, s: Segment) -> list:
    _require_enclosed(inv, s)
    return [x for x in inv.segments if x.pindex < s.pindex]


def suffix_set(inv: Invocation, s: Segment) -> list:
    _require_enclosed(inv, s)
    return [x for x in inv.segments if x.pindex > s.pindex]


def _require_enclosed(inv: Invocation, s: Segment):
    if not inv.encloses(s) or s.pdepth <= inv.pdepth:
        raise InstrumentationFault(f"{inv.label} does not enclose segment {s.pindex}")


# --------------------------------------------------------------------------
# Analysis


@dataclass
class Matrix:
    entries: dict = field(default_factory=dict)  # (inv id, seg pindex) -> (prefix ok, suffix ok)
    aborts: list = field(default_factory=list)   # (inv id, seg pindex) with (False, False)
    cells: int = 0  # set elements kept for the cumulative unions

    def __len__(self):
        return len(self.entries)


def calculate_commutativity_matrix(segs: list, invs: list) -> Matrix:
    """``segs`` are one object's segments in index order; ``invs`` its invocations."""
    mat = Matrix()
    for inv in invs:
        own = inv.segments
        if len(own) < 2:
            continue
        # running unions: pre[j] covers own[0..j], suf[j] covers own[j..]
        pre, suf = [], [None] * len(own)
        r, w = set(), set()
        for s in own:
            r, w = r | s.R, w | s.W
            pre.append((r, w))
        r, w = set(), set()
        for j in range(len(own) - 1, -1, -1):
            r, w = r | own[j].R, w | own[j].W
            suf[j] = (r, w)
        mat.cells += sum(len(a) + len(b) for a, b in pre) + sum(len(a) + len(b) for a, b in suf)
        idx = [s.pindex for s in own]
        for s in segs[inv.first:inv.last - 1]:  # pindex first+1 .. last-1
            if s.inv == inv.id:
                continue
            j = bisect.bisect_left(idx, s.pindex)
            p_ok = commute(s, pre[j - 1])
            s_ok = commute(s, suf[j])
            mat.entries[(inv.id, s.pindex)] = (p_ok, s_ok)
            if not p_ok and not s_ok:
                mat.aborts.append((inv.id, s.pindex))
    return mat


def calculate_ioc(mat: Matrix, segs: list, invs: list, sibling_edges: bool = True) -> set:
    """Edges ``(a, b)`` meaning invocation ``a`` must precede ``b``."""
    seg_inv = {s.pindex: s.inv for s in segs}
    edges = set()
    for (outer, p), (p_ok, s_ok) in mat.entries.items():
        inner = seg_inv[p]
        if not p_ok:
            edges.add((outer, inner))
        if not s_ok:
            edges.add((inner, outer))
    if sibling_edges:
        spans = [(inv.first, inv.last, inv.id, union_rw(inv.segments)) for inv in invs]
        spans.sort()
        for a in range(len(spans)):
            fa, la, ida, ua = spans[a]
            for b in range(a + 1, len(spans)):
                fb, lb, idb, ub = spans[b]
                if fb < la:
                    continue  # b is nested in a
                if not commute(ua, ub):
                    edges.add((ida, idb))
    return edges


def topological_order(nodes: Iterable[int], edges: set) -> Optional[list]:
    """Smallest-id-first topological order, or None when the graph has a cycle."""
    nodes = sorted(set(nodes))
    succ = {n: [] for n in nodes}
    indeg = {n: 0 for n in nodes}
    for a, b in edges:
        succ[a].append(b)
        indeg[b] += 1
    heap = [n for n in nodes if indeg[n] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(heap, m)
    return order if len(order) == len(nodes) else None


def find_cycle(nodes: Iterable[int], edges: set) -> list:
    preds = {n: set() for n in nodes}
    for a, b in edges:
        preds[b].add(a)
    try:
        graphlib.TopologicalSorter(preds).prepare()
    except graphlib.CycleError as exc:
        cyc = list(exc.args[1][:-1])
        k = cyc.index(min(cyc))
        return cyc[k:] + cyc[:k]
    return []


@dataclass
class ObjectReport:
    obj: str
    verdict: str
    m: int
    n: int
    witness: Optional[list] = None   # invocation labels
    cycle: Optional[list] = None     # invocation labels
    edges: list = field(default_factory=list)
    early_abort: list = field(default_factory=list)
    witness_ids: Optional[list] = None

    def to_json(self) -> dict:
        d = {"obj": self.obj, "verdict": self.verdict, "m": self.m, "n": self.n}
        if self.witness is not None:
            d["witnessOrder"] = self.witness
        if self.cycle is not None:
            d["cycle"] = self.cycle
        if self.early_abort:
            d["earlyAbort"] = [list(x) for x in self.early_abort]
        d["edges"] = [list(e) for e in self.edges]
        return d


def check_ecf(obj: str, nodes: list, edges: set, labels: dict) -> ObjectReport:
    order = topological_order(nodes, edges)
    rep = ObjectReport(obj, ECF if order is not None else NOT_ECF, 0, len(nodes),
                       edges=sorted([labels[a], labels[b]] for a, b in edges))
    if order is not None:
        rep.witness_ids = order
        rep.witness = [labels[i] for i in order]
    else:
        rep.cycle = [labels[i] for i in find_cycle(nodes, edges)]
    return rep


@dataclass
class ExecutionReport:
    exec_id: int
    objects: list
    aborted: bool = False
    call: Optional[str] = None
    memory_items: int = 0

    def verdict(self, obj: str) -> Optional[str]:
        for o in self.objects:
            if o.obj == obj:
                return o.verdict
        return None

    def object(self, obj: str) -> Optional[ObjectReport]:
        for o in self.objects:
            if o.obj == obj:
                return o
        return None

    @property
    def ecf(self) -> bool:
        return all(o.verdict == ECF for o in self.objects)

    def to_json(self) -> dict:
        d = {"execId": self.exec_id, "aborted": self.aborted,
             "objects": [o.to_json() for o in self.objects]}
        if self.call is not None:
            d["call"] = self.call
        return d


def analyse(segments: list, invocations: list, exec_id: int = 0,
            sibling_edges: bool = True) -> ExecutionReport:
    objs = {}
    for s in segments:
        objs.setdefault(s.obj, []).append(s)
    labels = {inv.id: inv.label for inv in invocations}
    reports = []
    memory = 0
    by_obj: dict = {}
    for inv in invocations:
        by_obj.setdefault(inv.obj, []).append(inv)
    for obj, segs in objs.items():
        invs = by_obj[obj]
        if len(invs) == 1:
            # a lone invocation has nothing to be reordered against
            inv = invs[0]
            reports.append(ObjectReport(obj, ECF, len(segs), 1, [inv.label],
                                        witness_ids=[inv.id]))
            memory += sum(len(s.R) + len(s.W) + 1 for s in segs) + 1
            continue
        mat = calculate_commutativity_matrix(segs, invs)
        edges = calculate_ioc(mat, segs, invs, sibling_edges)
        rep = check_ecf(obj, [inv.id for inv in invs], edges, labels)
        rep.m = len(segs)
        rep.early_abort = [(labels[i], p) for i, p in mat.aborts]
        if mat.aborts:
            rep.verdict = NOT_ECF
        reports.append(rep)
        memory += (len(mat.entries) + mat.cells + len(edges)
                   + sum(len(s.R) + len(s.W) + 1 for s in segs) + len(invs))
    return ExecutionReport(exec_id, reports, memory_items=memory)


# --------------------------------------------------------------------------
# Instrumentation


class Monitor:
    """Event observer; produces one :class:`ExecutionReport` per complete execution."""

    def __init__(self, sibling_edges: bool = True, keep_executions: bool = False):
        self.sibling_edges = sibling_edges
        self.keep_executions = keep_executions
        self.reports: list = []
        self.executions: list = []  # (segments, invocations) when kept
        self._exec_id = 0
        self.reset()

    def reset(self):
        self.stack: list = []        # (obj, inv, opened_new_invocation)
        self.segments: list = []
        self.invocations: list = []
        self.cur: Optional[Segment] = None
        self._seg_count: dict = {}
        self._inv_count: dict = {}
        self._active: dict = {}

    # hooks
    def upon_invocation(self, obj: str):
        stack = self.stack
        if stack and stack[-1][0] == obj:
            stack.append((obj, stack[-1][1], False))
            return
        caller = stack[-1][1].id if stack else None
        pdepth = self._active.get(obj, 0)
        self._active[obj] = pdepth + 1
        n = self._inv_count[obj] = self._inv_count.get(obj, 0) + 1
        inv = Invocation(len(self.invocations) + 1, caller, obj, pdepth, f"{obj}#{n}")
        self.invocations.append(inv)
        stack.append((obj, inv, True))
        self._add_segment(obj, inv)

    def upon_return(self, obj: str) -> Optional[ExecutionReport]:
        stack = self.stack
        if not stack or stack[-1][0] != obj:
            raise InstrumentationFault(f"return from {obj} without a matching invocation")
        _, inv, fresh = stack.pop()
        if fresh:
            self._active[obj] -= 1
        if stack:
            top_obj, top_inv, _ = stack[-1]
            if top_obj != obj:
                self._add_segment(top_obj, top_inv)
            return None
        return self._quiescent()

    def upon_read(self, obj: str, fname: str, key=None):
        self._check_active(obj)
        self.cur.R.add((fname, key))

    def upon_write(self, obj: str, fname: str, key=None):
        self._check_active(obj)
        self.cur.W.add((fname, key))

    def _check_active(self, obj: str):
        if not self.stack or self.stack[-1][0] != obj:
            raise InstrumentationFault(f"access by {obj} while it is not active")

    def _add_segment(self, obj: str, inv: Invocation):
        p = self._seg_count[obj] = self._seg_count.get(obj, 0) + 1
        seg = Segment(obj, inv.id, set(), set(), len(self.stack) - 1, len(self.segments) + 1,
                      inv.pdepth, p)
        self.segments.append(seg)
        inv.segments.append(seg)
        self.cur = seg

    def _quiescent(self) -> ExecutionReport:
        self._exec_id += 1
        rep = analyse(self.segments, self.invocations, self._exec_id, self.sibling_edges)
        if self.keep_executions:
            self.executions.append((self.segments, self.invocations))
        self.reports.append(rep)
        self.reset()
        return rep

    # event adapter
    def observe(self, ev: Event) -> Optional[ExecutionReport]:
        kind = ev.kind
        if kind == "enter":
            self.upon_invocation(ev.obj)
            self.cur.first_event = self.cur.first_event or ev.i
            self.cur.last_event = ev.i
            return None
        cur = self.cur
        if cur is None or not self.stack or self.stack[-1][0] != ev.obj:
            raise InstrumentationFault(f"event of {ev.obj} while it is not active")
        if not cur.first_event:
            cur.first_event = ev.i
        cur.last_event = ev.i
        if kind == "read":
            cur.R.add((ev.field, ev.key))
        elif kind == "write":
            cur.W.add((ev.field, ev.key))
        elif kind == "return":
            return self.upon_return(ev.obj)
        return None

    __call__ = observe

    def abort_execution(self) -> ExecutionReport:
        """Discard a half-observed execution (assertion failure) and record it as skipped."""
        self._exec_id += 1
        rep = ExecutionReport(self._exec_id, [], aborted=True)
        self.reports.append(rep)
        self.reset()
        return rep


def instrument(trace: Trace, sibling_edges: bool = True) -> tuple:
    """Segments and invocations of one complete execution trace."""
    mon = Monitor(sibling_edges)
    segs, invs = None, None
    for ev in trace.events:
        if ev.kind == "return" and len(mon.stack) == 1:
            segs, invs = mon.segments, mon.invocations
        mon.observe(ev)
    if segs is None:
        raise InstrumentationFault("trace does not return to quiescence")
    return segs, invs


def check_ecf_all(trace: Trace, sibling_edges: bool = True, exec_id: int = 1) -> ExecutionReport:
    if trace.aborted:
        return ExecutionReport(exec_id, [], aborted=True,
                               call=trace.call.describe() if trace.call else None)
    mon = Monitor(sibling_edges)
    rep = None
    for ev in trace.events:
        rep = mon.observe(ev) or rep
    if rep is None:
        raise InstrumentationFault("trace does not return to quiescence")
    rep.exec_id = exec_id
    rep.call = trace.call.describe() if trace.call else None
    return rep


def segment_table(segs: list, obj: str) -> list:
    """The (R, W, depth, index) tuples of ``obj``'s segments, as plain data."""
    return [s.key() for s in segs if s.obj == obj]
