"""Small-step interpreter with trace recording.

Frames hold their remaining code as a cons list ``(cmd, rest)`` so that
compound commands unfold without copying.  Compound commands (blocks,
conditionals, loops) unfold silently; every primitive command produces
exactly one :class:`Event`.

Event attribution: the ``enter`` event of a call and the ``return`` event
belong to the callee, so a segment of an object is a maximal run of adjacent
events carrying that object.  ``peer`` names the other side of the call.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .lang import (
    Assert, AssignLocal, BinOp, Block, Call, CodeContext, Const, Enter, If,
    ObjRef, ReadField, Return, SelfRef, Skip, UnOp, Var, While, WriteField, format_primitive,
)

DEFAULT_BUDGET = 1_000_000

Store = dict  # obj name -> {field: int | {key: int}}


class RuntimeFault(Exception):
    """Evaluation error: unbound name, bad call target, encapsulation breach."""


class AssertAbort(Exception):
    def __init__(self, obj: str, cmd: str):
        super().__init__(f"assertion failed in {obj}: {cmd}")
        self.obj = obj
        self.cmd = cmd


class BudgetExceeded(Exception):
    def __init__(self, budget: int):
        super().__init__(f"step budget of {budget} exceeded")
        self.budget = budget


# --------------------------------------------------------------------------
# Stores


def copy_store(store: Store) -> Store:
    return copy.deepcopy(store)


def normalize_store(store: Store) -> dict:
    """Drop zero entries so that absent and zero-valued locations compare equal."""
    out = {}
    for obj, fields in store.items():
        fo = {}
        for f, v in fields.items():
            if isinstance(v, dict):
                m = {k: x for k, x in v.items() if x != 0}
                if m:
                    fo[f] = m
            elif v != 0:
                fo[f] = v
        if fo:
            out[obj] = fo
    return out


def stores_equal(a: Store, b: Store) -> bool:
    return normalize_store(a) == normalize_store(b)


def object_store(store: Store, obj: str) -> dict:
    return normalize_store({obj: store.get(obj, {})}).get(obj, {})


def read_location(store: Store, obj: str, fname: str, key: Optional[int] = None) -> int:
    v = store.get(obj, {}).get(fname, 0)
    if key is None:
        return v if not isinstance(v, dict) else 0
    return v.get(key, 0) if isinstance(v, dict) else 0


# --------------------------------------------------------------------------
# Runtime structures


@dataclass(slots=True)
class Event:
    i: int
    obj: str
    kind: str  # enter | return | read | write | assign | assert | skip
    cmd: str
    depth: int
    field: Optional[str] = None
    key: Optional[int] = None
    rw: Optional[str] = None
    peer: Optional[str] = None
    value: object = None  # (method, args) on enter; ret on return; the value read or written

    @property
    def location(self):
        return (self.field, self.key)

    def identity(self) -> tuple:
        """What makes two events 'the same' for equivalence checks."""
        return (self.obj, self.kind, self.cmd, self.field, self.key, self.rw)

    def to_json(self) -> dict:
        d = {"i": self.i, "obj": self.obj, "kind": self.kind, "cmd": self.cmd, "depth": self.depth}
        if self.field is not None:
            d["field"] = self.field
            if self.key is not None:
                d["key"] = self.key
            d["rw"] = self.rw
        if self.peer is not None:
            d["peer"] = self.peer
        if self.value is not None:
            v = self.value
            if self.kind == "enter":
                d["method"], d["args"] = v[0], list(v[1])
            else:
                d["value"] = v
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Event":
        value = d.get("value")
        if d["kind"] == "enter" and "args" in d:
            value = (d.get("method"), tuple(d["args"]))
        return cls(d["i"], d["obj"], d["kind"], d["cmd"], d["depth"], d.get("field"),
                   d.get("key"), d.get("rw"), d.get("peer"), value)


@dataclass
class Frame:
    obj: str
    cont: Optional[tuple]
    env: dict


@dataclass
class ExecState:
    stack: list = field(default_factory=list)  # top of stack is the last element
    store: Store = field(default_factory=dict)
    steps: int = 0

    @property
    def depth(self) -> int:
        return len(self.stack)

    @property
    def quiescent(self) -> bool:
        return not self.stack

    @property
    def top(self) -> Frame:
        return self.stack[-1]


@dataclass(frozen=True)
class TopCall:
    target: str
    args: tuple = ()
    method: Optional[str] = None

    @property
    def arg(self) -> int:
        return self.args[0] if self.args else 0

    def describe(self) -> str:
        m = f".{self.method}" if self.method else ""
        return f"{self.target}{m}({', '.join(map(str, self.args))})"


@dataclass
class Trace:
    events: list
    initial_store: Store
    final_store: Store
    call: Optional[TopCall] = None
    aborted: bool = False
    abort_reason: Optional[str] = None

    def __len__(self):
        return len(self.events)

    def objects(self) -> list:
        seen = {}
        for e in self.events:
            seen.setdefault(e.obj, None)
        return list(seen)


Havoc = Callable[[ExecState, Call, str], Optional[int]]


def as_top_call(call) -> TopCall:
    if isinstance(call, TopCall):
        return call
    target, *rest = call
    args = rest[0] if rest else ()
    if isinstance(args, int):
        args = (args,)
    method = rest[1] if len(rest) > 1 else None
    return TopCall(target, tuple(args), method)


# --------------------------------------------------------------------------
# Expressions


def _truth(v: int) -> int:
    return 1 if v else 0


_BINOPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "=": lambda a, b: _truth(a == b),
    "!=": lambda a, b: _truth(a != b),
    "<": lambda a, b: _truth(a < b),
    "<=": lambda a, b: _truth(a <= b),
    ">": lambda a, b: _truth(a > b),
    ">=": lambda a, b: _truth(a >= b),
}


def eval_expr(e, env: dict, ctx: CodeContext, self_obj: str) -> int:
    t = type(e)
    if t is Const:
        return e.value
    if t is Var:
        v = env.get(e.name)
        if v is None:
            if e.name in ctx[self_obj].locals:
                return 0
            raise RuntimeFault(f"unbound local {e.name} in {self_obj}")
        return v
    if t is BinOp:
        if e.op == "and":
            return _truth(eval_expr(e.left, env, ctx, self_obj) and eval_expr(e.right, env, ctx, self_obj))
        if e.op == "or":
            return _truth(eval_expr(e.left, env, ctx, self_obj) or eval_expr(e.right, env, ctx, self_obj))
        return _BINOPS[e.op](eval_expr(e.left, env, ctx, self_obj), eval_expr(e.right, env, ctx, self_obj))
    if t is UnOp:
        v = eval_expr(e.operand, env, ctx, self_obj)
        return _truth(not v) if e.op == "not" else -v
    if t is ObjRef:
        try:
            return ctx.object_id(e.name)
        except KeyError:
            raise RuntimeFault(f"unknown object @{e.name}") from None
    if t is SelfRef:
        return ctx.object_id(self_obj)
    raise TypeError(f"not an expression: {e!r}")


# --------------------------------------------------------------------------
# Stepping

# keyed by id(); the command is kept in the value so its id cannot be recycled
_TEXT: dict = {}
_RES_ASSIGN: dict = {}


def _text(prim) -> str:
    hit = _TEXT.get(id(prim))
    if hit is None:
        hit = _TEXT[id(prim)] = (prim, format_primitive(prim))
    return hit[1]


def _res_assign(call: Call) -> AssignLocal:
    a = _RES_ASSIGN.get(call.target)
    if a is None:
        a = _RES_ASSIGN[call.target] = AssignLocal(call.target, Var("res"))
    return a


def cons(cmds: Sequence, rest: Optional[tuple]) -> Optional[tuple]:
    for c in reversed(cmds):
        rest = (c, rest)
    return rest


def next_primitive(state: ExecState, ctx: CodeContext):
    """Silently unfold compound commands at the top frame; return the next primitive."""
    frame = state.stack[-1]
    while True:
        if frame.cont is None:
            raise RuntimeFault(f"frame of {frame.obj} ran off the end of its body")
        cmd, rest = frame.cont
        t = type(cmd)
        if t is Block:
            frame.cont = cons(cmd.body, rest)
        elif t is If:
            branch = cmd.then if eval_expr(cmd.cond, frame.env, ctx, frame.obj) else cmd.orelse
            frame.cont = cons(branch.body, rest)
        elif t is While:
            if eval_expr(cmd.cond, frame.env, ctx, frame.obj):
                frame.cont = cons(cmd.body.body, (cmd, rest))
            else:
                frame.cont = rest
        else:
            return cmd
        state.steps += 1


def resolve_callee(call: Call, frame: Frame, ctx: CodeContext) -> str:
    if not call.dynamic:
        if call.callee not in ctx:
            raise RuntimeFault(f"unresolved call target {call.callee}")
        return call.callee
    oid = frame.env.get(call.callee, 0)
    name = ctx.object_name(oid)
    if name is None:
        raise RuntimeFault(f"{call.callee}={oid} in {frame.obj} is not an object")
    return name


def new_frame(ctx: CodeContext, target: str, method: Optional[str], args: Sequence[int]) -> Frame:
    k = ctx[target]
    try:
        m = k.method_named(method)
        sel = k.selector(method)
    except (KeyError, IndexError):
        raise RuntimeFault(f"cannot invoke {target}.{method}") from None
    env = {"arg": args[0] if args else 0, "ret": 0, "res": 0}
    if k.is_dispatching:
        env["sel"] = sel
    for p, v in zip(m.params, args):
        env[p] = v
    return Frame(target, (k.body, None), env)


def havoc_step(state: ExecState, value: int, ctx: Optional[CodeContext] = None) -> ExecState:
    """Replace the pending call of the top frame by an immediate return of ``value``."""
    if not state.stack:
        raise RuntimeFault("havoc on a quiescent state")
    frame = state.stack[-1]
    cmd = next_primitive(state, ctx) if ctx is not None else (frame.cont[0] if frame.cont else None)
    if type(cmd) is not Call:
        raise RuntimeFault(f"havoc requires a pending call, found {cmd!r}")
    frame.env["res"] = value
    frame.cont = (_res_assign(cmd), frame.cont[1])
    return state


def step(state: ExecState, ctx: CodeContext, havoc: Optional[Havoc] = None, index: int = 0):
    """Consume one primitive command of the top frame.

    Returns ``(state, event)``; the event is None when a havoc transition was taken.
    """
    frame = state.stack[-1]
    cmd = next_primitive(state, ctx)
    state.steps += 1
    obj, env = frame.obj, frame.env
    _, rest = frame.cont
    t = type(cmd)
    depth = len(state.stack)
    if t is AssignLocal:
        env[cmd.target] = eval_expr(cmd.expr, env, ctx, obj)
        frame.cont = rest
        return state, Event(index, obj, "assign", _text(cmd), depth)
    if t is ReadField or t is WriteField:
        k = ctx[obj]
        decl = k.field_map.get(cmd.field)
        if decl is None:
            raise RuntimeFault(f"{obj} has no field {cmd.field}")
        key = eval_expr(cmd.key, env, ctx, obj) if cmd.key is not None else None
        ostore = state.store.setdefault(obj, {})
        if t is ReadField:
            if key is None:
                v = ostore.get(cmd.field, 0)
            else:
                v = ostore.get(cmd.field, {}).get(key, 0)
            env[cmd.target] = v
            rw = "r"
        else:
            v = env.get(cmd.source, 0)
            if key is None:
                ostore[cmd.field] = v
            else:
                ostore.setdefault(cmd.field, {})[key] = v
            rw = "w"
        frame.cont = rest
        return state, Event(index, obj, "read" if rw == "r" else "write", _text(cmd), depth,
                            cmd.field, key, rw, value=v)
    if t is Call:
        callee = resolve_callee(cmd, frame, ctx)
        if havoc is not None:
            v = havoc(state, cmd, callee)
            if v is not None:
                havoc_step(state, v)
                return state, None
        args = tuple(eval_expr(a, env, ctx, obj) for a in cmd.args)
        frame.cont = (_res_assign(cmd), rest)
        state.stack.append(new_frame(ctx, callee, cmd.method, args))
        return state, Event(index, callee, "enter", "enter", depth + 1, peer=obj,
                            value=(cmd.method, args))
    if t is Return:
        state.stack.pop()
        ret = env.get("ret", 0)
        peer = None
        if state.stack:
            caller = state.stack[-1]
            caller.env["res"] = ret
            peer = caller.obj
        return state, Event(index, obj, "return", "return", depth - 1, peer=peer, value=ret)
    if t is Assert:
        if not eval_expr(cmd.cond, env, ctx, obj):
            raise AssertAbort(obj, _text(cmd))
        frame.cont = rest
        return state, Event(index, obj, "assert", _text(cmd), depth)
    if t is Skip or t is Enter:
        frame.cont = rest
        return state, Event(index, obj, "skip", _text(cmd), depth)
    raise RuntimeFault(f"unknown command {cmd!r}")


# --------------------------------------------------------------------------
# Runs


class Interpreter:
    """Runs complete executions, feeding every event to the observers."""

    def __init__(self, ctx: CodeContext, budget: int = DEFAULT_BUDGET,
                 observers: Iterable[Callable[[Event], None]] = (),
                 havoc: Optional[Havoc] = None):
        self.ctx = ctx
        self.budget = budget
        self.observers = list(observers)
        self.havoc = havoc

    def run(self, store: Store, call) -> tuple:
        """Run one complete execution starting from ``store``.

        The input store is not modified.  On an assertion failure the returned
        store equals the input and the trace is marked aborted.
        """
        call = as_top_call(call)
        ctx = self.ctx
        if call.target not in ctx:
            raise RuntimeFault(f"unknown contract {call.target}")
        initial = copy_store(store)
        state = ExecState([], copy_store(store))
        events = []
        observers = self.observers
        frame = new_frame(ctx, call.target, call.method, call.args)
        state.stack.append(frame)
        ev = Event(1, call.target, "enter", "enter", 1, value=(call.method, call.args))
        events.append(ev)
        for ob in observers:
            ob(ev)
        budget = self.budget
        havoc = self.havoc
        try:
            while state.stack:
                if state.steps > budget:
                    raise BudgetExceeded(budget)
                _, ev = step(state, ctx, havoc, len(events) + 1)
                if ev is not None:
                    events.append(ev)
                    for ob in observers:
                        ob(ev)
        except AssertAbort as exc:
            return initial, Trace(events, initial, copy_store(initial), call, True, str(exc))
        return state.store, Trace(events, initial, copy_store(state.store), call)


def run_complete_execution(ctx: CodeContext, store: Store, call, *, budget: int = DEFAULT_BUDGET,
                           observers=(), havoc: Optional[Havoc] = None) -> tuple:
    return Interpreter(ctx, budget, observers, havoc).run(store, call)


@dataclass
class Scenario:
    context: CodeContext
    initial_store: Store = field(default_factory=dict)
    calls: list = field(default_factory=list)
    mode: str = "concrete"  # or "modular"
    havoc_domain: tuple = ()
    step_budget: int = DEFAULT_BUDGET
    sources: dict = field(default_factory=dict)

    def __post_init__(self):
        self.calls = [as_top_call(c) for c in self.calls]
        if self.mode not in ("concrete", "modular"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "modular" and not self.havoc_domain:
            raise ValueError("modular mode needs a nonempty havoc domain")


def first_value_havoc(domain: Sequence[int]) -> Havoc:
    v = domain[0]
    return lambda state, call, callee: v


def run_scenario(s: Scenario, observers=(), on_trace: Optional[Callable] = None) -> tuple:
    """Run the scenario's calls in order, threading the store through.

    In modular mode every external call is a havoc transition returning the
    first value of the havoc domain; drivers needing other choices use
    :func:`run_mgc` or pass their own ``havoc`` to :class:`Interpreter`.
    """
    havoc = first_value_havoc(s.havoc_domain) if s.mode == "modular" else None
    interp = Interpreter(s.context, s.step_budget, observers, havoc)
    store = copy_store(s.initial_store)
    traces = []
    for call in s.calls:
        store, trace = interp.run(store, call)
        traces.append(trace)
        if on_trace is not None:
            on_trace(trace)
    return store, traces


def project_trace(t: Trace, o: str) -> Trace:
    """Keep the events of ``o``; original indices stay on the events."""
    return Trace([e for e in t.events if e.obj == o], t.initial_store, t.final_store, t.call,
                 t.aborted, t.abort_reason)


# --------------------------------------------------------------------------
# Most general client


@dataclass(frozen=True)
class MgcCall:
    method: Optional[str]
    args: tuple = ()
    havoc: tuple = ()  # values returned by successive external calls; 0 once exhausted


class HavocFeed:
    """Havoc policy for NoCB(o): external calls of ``o`` return the queued values."""

    def __init__(self, o: str, values: Sequence[int] = (), default: Optional[int] = 0):
        self.o = o
        self.values = list(values)
        self.used = 0
        self.default = default

    def __call__(self, state: ExecState, call: Call, callee: str) -> Optional[int]:
        if callee == self.o:
            return None
        if self.used < len(self.values):
            v = self.values[self.used]
        elif self.default is None:
            raise HavocExhausted(self.used)
        else:
            v = self.default
        self.used += 1
        return v


class HavocExhausted(Exception):
    def __init__(self, used: int):
        super().__init__(f"havoc value {used} requested beyond the supplied list")
        self.used = used


def run_nocb(o: str, ctx: CodeContext, store: Store, call: MgcCall, *,
             budget: int = DEFAULT_BUDGET, default: Optional[int] = 0) -> tuple:
    """One complete execution of NoCB(o); returns ``(store, trace, havocs_used)``."""
    feed = HavocFeed(o, call.havoc, default)
    interp = Interpreter(ctx, budget, havoc=feed)
    store, trace = interp.run(store, TopCall(o, tuple(call.args), call.method))
    return store, trace, feed.used


def run_mgc(o: str, ctx: CodeContext, store: Store, schedule: Sequence[MgcCall], *,
            budget: int = DEFAULT_BUDGET) -> tuple:
    """Drive NoCB(o) through ``schedule``; returns the final store and the joined trace."""
    initial = copy_store(store)
    events = []
    for entry in schedule:
        store, trace, _ = run_nocb(o, ctx, store, entry, budget=budget)
        for e in trace.events:
            e.i = len(events) + 1
            events.append(e)
    return store, Trace(events, initial, copy_store(store))
