"""Static conflict-SECF decision for finite-state objects.

The object's environment is closed off: every external call either returns
a value from the havoc domain or first lets the environment call back into
the object any number of times.  Bounding the stack at two frames of the
object (a main invocation and one callback) and running the automaton M in
lockstep turns the question into reachability over a finite configuration
graph, explored breadth-first with parent pointers so a rejecting path can
be turned into a concrete counterexample.

Map fields need a declared key domain.  Any write of a value outside a
location's domain, and any access with a key outside its key domain, prunes
the path.
"""
from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional

from .interp import Interpreter, TopCall
from .lang import (
    Assert, AssignLocal, BinOp, Block, Call, CodeContext, Const, Contract, Enter, If, Method,
    ObjRef, ReadField, Return, SelfRef, Skip, UnOp, Var, While, WriteField, expr_objrefs,
    iter_exprs, iter_primitives, parse_contracts,
)

SECF = "SECF_C"
NOT_SECF = "NotSECF_C"
UNKNOWN = "Unknown"
DEFAULT_CAP = 10_000_000


class DeciderBound(Exception):
    pass


class UnsupportedProgram(Exception):
    pass


# --------------------------------------------------------------------------
# Automaton M over depth-two event streams
#
# State: (d, prefixR, prefixW, delayedR, delayedW, curR, curW, status).  Sets
# are anything supporting & and | (frozensets here, bitmasks in the decider).

ACCEPT = "accept"
REJECT = "reject"


def _commutes(r1, w1, r2, w2) -> bool:
    return not (r1 & w2) and not (r2 & w1) and not (w1 & w2)


def m_initial(empty=frozenset()) -> tuple:
    return (0, empty, empty, empty, empty, empty, empty, None)


def m_step(state: tuple, kind: str, loc=None, empty=frozenset()) -> tuple:
    d, pr, pw, dr, dw, cr, cw, status = state
    if status == REJECT:
        return state
    if kind == "read":
        return (d, pr, pw, dr, dw, cr | loc, cw, status)
    if kind == "write":
        return (d, pr, pw, dr, dw, cr, cw | loc, status)
    if kind == "enter":
        if d == 0:
            return (1, empty, empty, empty, empty, empty, empty, None)
        if d == 1:
            if not _commutes(cr, cw, dr, dw):
                return (d, pr, pw, dr, dw, cr, cw, REJECT)
            return (2, pr | cr, pw | cw, dr, dw, empty, empty, None)
        raise ValueError("M only handles executions of depth two")
    if kind == "return":
        if d == 2:
            if not _commutes(cr, cw, pr, pw) or not _commutes(cr, cw, dr, dw):
                dr, dw = dr | cr, dw | cw
            return (1, pr, pw, dr, dw, empty, empty, None)
        if d == 1:
            if not _commutes(cr, cw, dr, dw):
                return (d, pr, pw, dr, dw, cr, cw, REJECT)
            return (0, pr, pw, dr, dw, empty, empty, ACCEPT)
        raise ValueError("return without a matching enter")
    raise ValueError(f"unknown event kind {kind!r}")


def run_M(events: Iterable[tuple]) -> str:
    """``events`` are ``(kind, location)`` pairs; returns ``accept`` or ``reject``."""
    st = m_initial()
    for kind, loc in events:
        st = m_step(st, kind, frozenset([loc]) if loc is not None else None)
        if st[-1] == REJECT:
            return REJECT
    if st[0] != 0:
        raise ValueError("event stream ends inside an execution")
    return ACCEPT


def m_events(trace, o: str) -> list:
    """The events of ``o`` as an M input stream."""
    out = []
    for e in trace.events if hasattr(trace, "events") else trace:
        if e.obj != o:
            continue
        if e.kind == "enter":
            if e.peer == o:
                raise ValueError("self-calls are outside the depth-two fragment")
            out.append(("enter", None))
        elif e.kind == "return":
            out.append(("return", None))
        elif e.kind in ("read", "write"):
            out.append((e.kind, (e.field, e.key)))
    return out


# --------------------------------------------------------------------------
# Specs


@dataclass
class FiniteObjectSpec:
    contract: Contract
    field_domains: dict          # field -> [values] | {"keyDomain": [...], "valueDomain": [...]}
    arg_domain: list
    havoc_domain: list
    universe: list = field(default_factory=list)  # other object names
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        names = {self.contract.name} | set(self.universe)
        for e in iter_exprs(self.contract.body):
            names.update(expr_objrefs(e))
        for p in iter_primitives(self.contract.body):
            if isinstance(p, Call) and not p.dynamic:
                names.add(p.callee)
        self.universe = sorted(names)
        placeholders = [Contract(n, (), (Method(None, (), (), Block((Return(),))),))
                        for n in self.universe if n != self.contract.name]
        self.ctx = CodeContext([self.contract] + placeholders)
        for f in self.contract.fields:
            if f.name not in self.field_domains:
                raise ValueError(f"no domain for field {f.name}")
            dom = self.field_domains[f.name]
            if f.is_map != isinstance(dom, dict):
                raise ValueError(f"domain of {f.name} does not match its declaration")
            vals = dom["valueDomain"] if f.is_map else dom
            if not vals or (f.is_map and not dom["keyDomain"]):
                raise ValueError(f"empty domain for {f.name}")
        if not self.arg_domain or not self.havoc_domain:
            raise ValueError("argument and havoc domains must be nonempty")

    @property
    def name(self) -> str:
        return self.contract.name

    def locations(self) -> list:
        locs = []
        for f in self.contract.fields:
            dom = self.field_domains[f.name]
            if f.is_map:
                locs.extend((f.name, self.key_value(k)) for k in dom["keyDomain"])
            else:
                locs.append((f.name, None))
        return locs

    def value_domain(self, loc) -> list:
        dom = self.field_domains[loc[0]]
        vals = dom["valueDomain"] if isinstance(dom, dict) else dom
        return [self.key_value(v) for v in vals]

    def key_value(self, v) -> int:
        if isinstance(v, str):
            return self.ctx.object_id(v.lstrip("@"))
        return int(v)

    def args(self) -> list:
        return [self.key_value(v) for v in self.arg_domain]

    def havocs(self) -> list:
        return [self.key_value(v) for v in self.havoc_domain]


# --------------------------------------------------------------------------
# Control-flow graph of the object's body

_ARITH = {
    "+": lambda a, b: a + b, "-": lambda a, b: a - b, "*": lambda a, b: a * b,
    "=": lambda a, b: int(a == b), "!=": lambda a, b: int(a != b),
    "<": lambda a, b: int(a < b), "<=": lambda a, b: int(a <= b),
    ">": lambda a, b: int(a > b), ">=": lambda a, b: int(a >= b),
}


def _compile_expr(e, slots: dict, ctx: CodeContext, self_name: str) -> Callable:
    t = type(e)
    if t is Const:
        v = e.value
        return lambda env: v
    if t is Var:
        i = slots[e.name]
        return lambda env: env[i]
    if t is ObjRef:
        v = ctx.object_id(e.name)
        return lambda env: v
    if t is SelfRef:
        v = ctx.object_id(self_name)
        return lambda env: v
    if t is UnOp:
        f = _compile_expr(e.operand, slots, ctx, self_name)
        if e.op == "not":
            return lambda env: int(not f(env))
        return lambda env: -f(env)
    if t is BinOp:
        l = _compile_expr(e.left, slots, ctx, self_name)
        r = _compile_expr(e.right, slots, ctx, self_name)
        if e.op == "and":
            return lambda env: int(bool(l(env)) and bool(r(env)))
        if e.op == "or":
            return lambda env: int(bool(l(env)) or bool(r(env)))
        op = _ARITH[e.op]
        return lambda env: op(l(env), r(env))
    raise TypeError(e)


@dataclass
class Instr:
    kind: str                 # prim | branch | end
    prim: object = None
    cond: Optional[Callable] = None
    next: int = -1
    alt: int = -1
    key: Optional[Callable] = None
    expr: Optional[Callable] = None
    args: tuple = ()


class CFG:
    def __init__(self, contract: Contract, ctx: CodeContext):
        self.contract = contract
        self.ctx = ctx
        self.local_names = sorted(contract.locals)
        self.slots = {n: i for i, n in enumerate(self.local_names)}
        self.instrs: list = []
        end = self._emit(Instr("end"))
        self.entry = self._comp(contract.body, end)
        self.call_pcs = [pc for pc, ins in enumerate(self.instrs)
                         if ins.kind == "prim" and isinstance(ins.prim, Call)]

    def _emit(self, ins: Instr) -> int:
        self.instrs.append(ins)
        return len(self.instrs) - 1

    def _x(self, e):
        return _compile_expr(e, self.slots, self.ctx, self.contract.name)

    def _comp(self, cmd, nxt: int) -> int:
        t = type(cmd)
        if t is Block:
            for c in reversed(cmd.body):
                nxt = self._comp(c, nxt)
            return nxt
        if t is If:
            then = self._comp(cmd.then, nxt)
            orelse = self._comp(cmd.orelse, nxt)
            return self._emit(Instr("branch", cond=self._x(cmd.cond), next=then, alt=orelse))
        if t is While:
            pc = self._emit(Instr("branch"))
            body = self._comp(cmd.body, pc)
            ins = self.instrs[pc]
            ins.cond, ins.next, ins.alt = self._x(cmd.cond), body, nxt
            return pc
        ins = Instr("prim", prim=cmd, next=nxt)
        if t is AssignLocal:
            ins.expr = self._x(cmd.expr)
        elif t in (ReadField, WriteField) and cmd.key is not None:
            ins.key = self._x(cmd.key)
        elif t is Assert:
            ins.cond = self._x(cmd.cond)
        elif t is Call:
            ins.args = tuple(self._x(a) for a in cmd.args)
        return self._emit(ins)

    def initial_env(self, method: Optional[str], args: tuple) -> tuple:
        k = self.contract
        env = [0] * len(self.local_names)
        env[self.slots["arg"]] = args[0] if args else 0
        if k.is_dispatching:
            env[self.slots["sel"]] = k.selector(method)
        for p, v in zip(k.method_named(method).params, args):
            env[self.slots[p]] = v
        return tuple(env)


# --------------------------------------------------------------------------
# Configuration graph


@dataclass(frozen=True)
class Label:
    kind: str   # root | step | havoc | callback | cbreturn | end
    detail: tuple = ()


class DepthTwoSystem:
    """A_o restricted to two frames, optionally in product with M.

    A configuration is ``(store, frames, m)``: ``store`` a tuple over the
    object's locations, ``frames`` a tuple of ``(pc, env)`` pairs (main
    first), ``m`` the automaton state or None.
    """

    def __init__(self, spec: FiniteObjectSpec, callbacks: bool = True, monitor: bool = True,
                 max_frames: int = 2, summaries: Optional[dict] = None):
        self.spec = spec
        self.ctx = spec.ctx
        self.cfg = CFG(spec.contract, spec.ctx)
        self.locs = spec.locations()
        self.loc_index = {l: i for i, l in enumerate(self.locs)}
        self.domains = [frozenset(spec.value_domain(l)) for l in self.locs]
        self.callbacks = callbacks
        self.monitor = monitor
        self.max_frames = max_frames
        self.summaries = summaries  # store -> set of stores, replaces callbacks when given
        self.o_id = self.ctx.object_id(spec.name)
        self.arg_values = spec.args()
        self.havoc_values = spec.havocs()
        self.entries = []
        for m in spec.contract.methods:
            arity = len(m.params) if m.name is not None else 1
            for args in itertools.product(self.arg_values, repeat=arity):
                self.entries.append((m.name, tuple(args)))

    # stores
    def all_stores(self) -> list:
        return list(itertools.product(*[sorted(d) for d in self.domains]))

    def store_of(self, concrete: dict) -> tuple:
        vals = []
        for f, k in self.locs:
            v = concrete.get(f, {} if k is not None else 0)
            vals.append(v.get(k, 0) if k is not None else v)
        return tuple(vals)

    def store_dict(self, store: tuple) -> dict:
        out: dict = {}
        for (f, k), v in zip(self.locs, store):
            if k is None:
                out[f] = v
            else:
                out.setdefault(f, {})[k] = v
        return out

    def _bit(self, i: int):
        return 1 << i

    def root(self, store: tuple, method, args) -> tuple:
        env = self.cfg.initial_env(method, args)
        m = m_step(m_initial(0), "enter", empty=0) if self.monitor else None
        return (store, ((self.cfg.entry, env),), m)

    def call_target(self, ins: Instr, env: tuple) -> Optional[str]:
        """Callee name of a call, or None when the path must be pruned."""
        call = ins.prim
        if call.dynamic:
            v = env[self.cfg.slots[call.callee]]
            name = self.ctx.object_name(v)
        else:
            name = call.callee if call.callee in self.ctx else None
        if name is None or name == self.spec.name:
            return None
        return name

    def successors(self, conf: tuple):
        """Yield ``(label, next)``; ``next`` is a configuration or ("end", store, m)."""
        store, frames, m = conf
        pc, env = frames[-1]
        cfg = self.cfg
        ins = cfg.instrs[pc]
        if ins.kind == "end":
            return
        if ins.kind == "branch":
            npc = ins.next if ins.cond(env) else ins.alt
            yield Label("step"), (store, frames[:-1] + ((npc, env),), m)
            return
        prim = ins.prim
        t = type(prim)
        slots = cfg.slots
        if t is AssignLocal:
            env2 = _set(env, slots[prim.target], ins.expr(env))
            yield Label("step"), (store, frames[:-1] + ((ins.next, env2),), m)
        elif t is ReadField or t is WriteField:
            key = ins.key(env) if ins.key is not None else None
            li = self.loc_index.get((prim.field, key))
            if li is None:
                return
            if t is ReadField:
                env = _set(env, slots[prim.target], store[li])
                if m is not None:
                    m = m_step(m, "read", 1 << li, 0)
            else:
                v = env[slots[prim.source]]
                if v not in self.domains[li]:
                    return
                store = store[:li] + (v,) + store[li + 1:]
                if m is not None:
                    m = m_step(m, "write", 1 << li, 0)
            yield Label("step"), (store, frames[:-1] + ((ins.next, env),), m)
        elif t is Assert:
            if ins.cond(env):
                yield Label("step"), (store, frames[:-1] + ((ins.next, env),), m)
        elif t is Skip or t is Enter:
            yield Label("step"), (store, frames[:-1] + ((ins.next, env),), m)
        elif t is Return:
            if m is not None:
                m = m_step(m, "return", None, 0)
            if len(frames) == 1:
                yield Label("end"), ("end", store, m)
            else:
                yield Label("cbreturn"), (store, frames[:-1], m)
        elif t is Call:
            callee = self.call_target(ins, env)
            if callee is None:
                return
            args = tuple(a(env) for a in ins.args)
            for v in self.havoc_values:
                env2 = _set(_set(env, slots["res"], v), slots[prim.target], v)
                yield (Label("havoc", (callee, prim.method, args, v, len(frames))),
                       (store, frames[:-1] + ((ins.next, env2),), m))
            if self.summaries is not None:
                for s2 in sorted(self.summaries.get(store, ())):
                    yield Label("summary", (callee, s2)), (s2, frames, m)
            elif self.callbacks and len(frames) < self.max_frames:
                for method, cargs in self.entries:
                    m2 = m_step(m, "enter", None, 0) if m is not None else None
                    frame = (cfg.entry, cfg.initial_env(method, cargs))
                    yield (Label("callback", (callee, method, cargs, len(frames))),
                           (store, frames + (frame,), m2))


def _set(env: tuple, i: int, v: int) -> tuple:
    return env[:i] + (v,) + env[i + 1:]


def build_a_o(spec: FiniteObjectSpec, variant: str = "A") -> DepthTwoSystem:
    """``A``: external calls may call back; ``A0``: they only return a havoc value."""
    if variant not in ("A", "A0"):
        raise ValueError(variant)
    return DepthTwoSystem(spec, callbacks=(variant == "A"), monitor=False)


# --------------------------------------------------------------------------
# Summaries and the call states I_0


def execution_summaries(spec: FiniteObjectSpec, cap: Optional[int] = None) -> dict:
    """Least fixpoint of store-to-store effects of complete invocations of unbounded depth."""
    cap = cap or spec.cap
    summaries: dict = {}
    while True:
        sys = DepthTwoSystem(spec, callbacks=False, monitor=False, max_frames=1,
                             summaries=summaries)
        new: dict = {}
        for store in sys.all_stores():
            ends = set()
            for method, args in sys.entries:
                for _, nxt in _explore(sys, [sys.root(store, method, args)], cap):
                    if nxt[0] == "end":
                        ends.add(nxt[1])
            new[store] = ends
        if new == summaries:
            return summaries
        summaries = new


def reachable_call_states(spec: FiniteObjectSpec, cap: Optional[int] = None) -> set:
    """I_0: ``(pc, store, env)`` at call points reachable in A_o (any callback depth)."""
    cap = cap or spec.cap
    summaries = execution_summaries(spec, cap)
    sys = DepthTwoSystem(spec, callbacks=False, monitor=False, max_frames=1, summaries=summaries)
    roots = [sys.root(s, m, a) for s in sys.all_stores() for m, a in sys.entries]
    out = set()
    seen = set(roots)
    queue = deque(roots)
    while queue:
        conf = queue.popleft()
        store, frames, _ = conf
        pc, env = frames[-1]
        if pc in sys.cfg.call_pcs:
            out.add((pc, store, env))
        for _, nxt in sys.successors(conf):
            if nxt[0] == "end" or nxt in seen:
                continue
            if len(seen) >= cap:
                raise DeciderBound(f"more than {cap} configurations")
            seen.add(nxt)
            queue.append(nxt)
    return out


def _explore(sys: DepthTwoSystem, roots: list, cap: int):
    seen = set(roots)
    queue = deque(roots)
    while queue:
        conf = queue.popleft()
        for label, nxt in sys.successors(conf):
            if nxt[0] == "end":
                yield label, nxt
                continue
            if nxt in seen:
                continue
            if len(seen) >= cap:
                raise DeciderBound(f"more than {cap} configurations")
            seen.add(nxt)
            queue.append(nxt)


# --------------------------------------------------------------------------
# Decision


@dataclass
class StubCall:
    callee: str
    method: Optional[str]
    args: tuple
    value: int
    callbacks: list = field(default_factory=list)  # (method, args)


@dataclass
class Counterexample:
    store: dict
    method: Optional[str]
    args: tuple
    calls: list                     # StubCall in the order the stubs are entered
    labels: list
    complete: bool = True

    def to_json(self) -> dict:
        return {
            "store": {f: ({str(k): v for k, v in x.items()} if isinstance(x, dict) else x)
                      for f, x in self.store.items()},
            "method": self.method, "args": list(self.args),
            "calls": [{"callee": c.callee, "method": c.method, "args": list(c.args),
                       "value": c.value, "callbacks": [[m, list(a)] for m, a in c.callbacks]}
                      for c in self.calls],
            "complete": self.complete,
        }


@dataclass
class Decision:
    verdict: str
    configurations: int
    counterexample: Optional[Counterexample] = None
    call_states: int = 0
    note: str = ""
    replay: Optional[object] = None  # (trace, report) of the concrete replay

    def to_json(self) -> dict:
        d = {"verdict": self.verdict, "configurations": self.configurations,
             "callStates": self.call_states}
        if self.counterexample is not None:
            d["counterexample"] = self.counterexample.to_json()
        if self.note:
            d["note"] = self.note
        return d


def decide_secf_c(spec: FiniteObjectSpec, include_call_states: bool = True,
                  initial_stores: Optional[Iterable[tuple]] = None) -> Decision:
    """Explore A²_o × M from Σ_o (and I_0); NotSECF_C iff M can reject."""
    sys = DepthTwoSystem(spec)
    stores = list(initial_stores) if initial_stores is not None else sys.all_stores()
    roots = []
    for s in stores:
        for method, args in sys.entries:
            roots.append(sys.root(s, method, args))
    parent: dict = {r: (None, Label("root", (r[0], method, args)))
                    for r, (method, args) in zip(roots, [e for _ in stores for e in sys.entries])}
    n_call_states = 0
    note = ""
    if include_call_states:
        try:
            call_states = reachable_call_states(spec, spec.cap)
        except DeciderBound as exc:
            return Decision(UNKNOWN, 0, note=str(exc))
        n_call_states = len(call_states)
        fresh = (1, 0, 0, 0, 0, 0, 0, None)
        for pc, store, env in sorted(call_states):
            r = (store, ((pc, env),), fresh)
            if r not in parent:
                parent[r] = (None, Label("root", (store, None, None)))
                roots.append(r)
        note = "call-state roots computed over callbacks of any depth"
    queue = deque(roots)
    while queue:
        conf = queue.popleft()
        for label, nxt in sys.successors(conf):
            m = nxt[2]
            if m is not None and m[-1] == REJECT:
                path = _path(parent, conf) + [(label, nxt)]
                cex = _counterexample(sys, path)
                return Decision(NOT_SECF, len(parent), cex, n_call_states, note)
            if nxt[0] == "end" or nxt in parent:
                continue
            if len(parent) >= spec.cap:
                return Decision(UNKNOWN, len(parent), None, n_call_states,
                                f"configuration cap {spec.cap} reached")
            parent[nxt] = (conf, label)
            queue.append(nxt)
    return Decision(SECF, len(parent), None, n_call_states, note)


def _path(parent: dict, conf) -> list:
    out = []
    while conf is not None:
        prev, label = parent[conf]
        out.append((label, conf))
        conf = prev
    out.reverse()
    return out


def _complete(sys: DepthTwoSystem, conf: tuple) -> Optional[list]:
    """Some continuation of ``conf`` (ignoring M) that reaches quiescence."""
    plain = (conf[0], conf[1], None)
    parent = {plain: None}
    queue = deque([plain])
    while queue:
        c = queue.popleft()
        for label, nxt in sys.successors(c):
            if nxt[0] == "end":
                path = [(label, nxt)]
                while parent[c] is not None:
                    prev, lab = parent[c]
                    path.append((lab, c))
                    c = prev
                path.reverse()
                return path
            if nxt not in parent and len(parent) < sys.spec.cap:
                parent[nxt] = (c, label)
                queue.append(nxt)
    return None


def _counterexample(sys: DepthTwoSystem, path: list) -> Counterexample:
    root_label, root = path[0]
    store, method, args = root_label.detail
    labels = [lab for lab, _ in path]
    complete = True
    last = path[-1][1]
    if last[0] != "end":
        tail = _complete(sys, last)
        if tail is None:
            complete = False
        else:
            labels += [lab for lab, _ in tail]
    calls: list = []
    open_call: Optional[StubCall] = None
    for lab in labels:
        if lab.kind == "callback":
            callee, cm, cargs, depth = lab.detail
            if open_call is None:
                open_call = StubCall(callee, None, (), 0)
                calls.append(open_call)
            open_call.callbacks.append((cm, cargs))
        elif lab.kind == "havoc":
            callee, pm, pargs, v, depth = lab.detail
            if depth == 1:
                if open_call is None:
                    calls.append(StubCall(callee, pm, pargs, v))
                else:
                    open_call.method, open_call.args, open_call.value = pm, pargs, v
                    open_call = None
            else:
                calls.append(StubCall(callee, pm, pargs, v))
    return Counterexample(sys.store_dict(store), method, args, calls, labels, complete)


# --------------------------------------------------------------------------
# Concrete replay through synthesized stubs


def stub_counter(name: str) -> str:
    return f"stub_n_{name}"


def synthesize_stubs(o: Contract, universe: Iterable[str], script: dict,
                     ctx: Optional[CodeContext] = None) -> list:
    """Stub contracts for every name of ``universe`` other than ``o``.

    ``script[name]`` lists, per occurrence, ``(value, callbacks)``: on its
    k-th entry the stub makes the callbacks into ``o`` and returns the value.
    Every stub offers each method name that ``o`` invokes on some object.
    """
    methods: dict = {}
    anonymous = False
    for p in iter_primitives(o.body):
        if isinstance(p, Call):
            if p.method is None:
                anonymous = True
            else:
                methods[p.method] = max(methods.get(p.method, 0), len(p.args))
    if anonymous and methods:
        raise UnsupportedProgram("calls with and without method names cannot share stubs")
    out = []
    for name in sorted(set(universe) - {o.name}):
        counter = stub_counter(name)
        branches = []
        for k, (value, cbs) in enumerate(script.get(name, []), start=1):
            lines = [f"r := call {o.name}{'.' + m if m else ''}({', '.join(map(str, a))});"
                     for m, a in cbs]
            lines.append(f"ret := {value};")
            branches.append((k, lines))
        body = [f"c := {counter}; c := c + 1; {counter} := c;"]
        if branches:
            head = "if"
            for k, lines in branches:
                body.append(f"{head} c = {k} {{ {' '.join(lines)} }}")
                head = "else if"
        code = " ".join(body)
        if methods:
            ms = [f"method {m}({', '.join(f'p{i}' for i in range(n))}) {{ var c, r; {code} }}"
                  for m, n in sorted(methods.items())]
        else:
            ms = [f"enter {{ var c, r; {code} }}"]
        src = f"contract {name} {{ field {counter}; {' '.join(ms)} }}"
        out.extend(parse_contracts(src))
    return out


def replay_counterexample(spec: FiniteObjectSpec, cex: Counterexample, budget: int = 100_000):
    """Run the counterexample concretely; returns ``(trace, monitor report)``."""
    from .monitor import check_ecf_all

    script: dict = {}
    for c in cex.calls:
        script.setdefault(c.callee, []).append((c.value, c.callbacks))
    stubs = synthesize_stubs(spec.contract, spec.universe, script)
    ctx = CodeContext([spec.contract] + stubs)
    store = {spec.name: cex.store}
    _, trace = Interpreter(ctx, budget).run(store, TopCall(spec.name, tuple(cex.args), cex.method))
    return trace, check_ecf_all(trace)


# --------------------------------------------------------------------------
# Experimental: final states with and without callbacks


def quiescent_reachability(spec: FiniteObjectSpec, start: tuple, callbacks: bool,
                           cap: Optional[int] = None) -> set:
    """Object stores reachable from ``start`` by runs of complete executions."""
    cap = cap or spec.cap
    sys = DepthTwoSystem(spec, callbacks=callbacks, monitor=False)
    seen = {start}
    todo = [start]
    while todo:
        s = todo.pop()
        roots = [sys.root(s, m, a) for m, a in sys.entries]
        for _, nxt in _explore(sys, roots, cap):
            if nxt[1] not in seen:
                seen.add(nxt[1])
                todo.append(nxt[1])
    return seen


def fs_reachability_gap(spec: FiniteObjectSpec, start: tuple, cap: Optional[int] = None) -> dict:
    """Stores reachable with depth-two callbacks but not without (A²_o versus A⁰_o)."""
    r0 = quiescent_reachability(spec, start, False, cap)
    r2 = quiescent_reachability(spec, start, True, cap)
    return {"A0": sorted(r0), "A2": sorted(r2), "gap": sorted(r2 - r0)}


def load_spec(data: dict, contract: Contract, universe: Iterable[str] = ()) -> FiniteObjectSpec:
    names = set(universe)
    for dom in data.get("fieldDomains", {}).values():
        vals = (dom.get("keyDomain", []) + dom.get("valueDomain", [])) if isinstance(dom, dict) else dom
        names.update(v.lstrip("@") for v in vals if isinstance(v, str))
    names.update(v.lstrip("@") for v in data.get("argDomain", []) + data.get("havocDomain", [])
                 if isinstance(v, str))
    names.update(data.get("universe", []))
    return FiniteObjectSpec(contract, data["fieldDomains"], data["argDomain"], data["havocDomain"],
                            sorted(names), data.get("cap", DEFAULT_CAP))


def load_spec_file(path, obj: Optional[str] = None) -> FiniteObjectSpec:
    """Load a ``.spec.json`` file; contract paths are relative to it."""
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    rels = data.get("contracts", [])
    if "contract" in data:
        rels = [data["contract"]] + list(rels)
    contracts = []
    for rel in rels:
        contracts.extend(parse_contracts((path.parent / rel).read_text(encoding="utf-8")))
    ctx = CodeContext(contracts)
    name = obj or data.get("object") or (contracts[0].name if len(contracts) == 1 else None)
    if name not in ctx:
        raise KeyError(f"spec names no contract {name!r}")
    return load_spec(data, ctx[name], data.get("universe", []))
