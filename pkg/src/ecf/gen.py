"""Seeded random scenarios for the property suites.

Every scenario has a checked object ``O`` with up to three scalar fields and
one or two helper objects.  Calls between objects are guarded by a
decrementing argument, so every run terminates.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

from .interp import Interpreter, Scenario, TopCall, Trace
from .lang import CodeContext, parse_contracts
from .oracle import invocations_of

CHECKED = "O"
HELPERS = ("P", "Q")
CONSTANTS = (0, 1, 2)
ARGS = (0, 1, 2)


@dataclass
class Generated:
    seed: int
    scenario: Scenario
    traces: list
    source: str


def _o_stmt(rng: random.Random, fields: list, helpers: list, allow_calls: bool) -> str:
    kinds = ["read", "write", "copy", "guard"] + (["call"] * 2 if allow_calls else [])
    kind = rng.choice(kinds)
    f = rng.choice(fields)
    if kind == "read":
        return f"t := {f}"
    if kind == "write":
        return f"c := {rng.choice(CONSTANTS)}; {f} := c"
    if kind == "copy":
        return f"t := {rng.choice(fields)}; {f} := t"
    if kind == "guard":
        g = rng.choice(fields)
        return f"t := {f}; if t = {rng.choice(CONSTANTS)} {{ c := {rng.choice(CONSTANTS)}; {g} := c }}"
    h = rng.choice(helpers)
    return f"if n > 0 {{ m := n - 1; r := call {h}.go(m) }}"


def _helper_stmt(rng: random.Random, helpers: list, me: str, o_methods: list) -> str:
    kind = rng.choice(["callO", "callO", "other", "skip"])
    if kind == "callO":
        return f"if n > 0 {{ m := n - 1; r := call {CHECKED}.{rng.choice(o_methods)}(m) }}"
    others = [h for h in helpers if h != me]
    if kind == "other" and others:
        return f"if n > 0 {{ m := n - 1; r := call {others[0]}.go(m) }}"
    return "skip"


def _body(stmts: list) -> str:
    return ";\n    ".join(stmts)


def random_sources(rng: random.Random, depth_two: bool = False) -> str:
    """Contract sources for one random scenario.

    With ``depth_two`` the helpers only call back into ``O.cb``, which makes
    no calls itself, so no invocation of ``O`` is nested deeper than one
    callback.
    """
    k = rng.randint(1, 3)
    fields = [f"x{i}" for i in range(k)]
    helpers = list(HELPERS[:rng.randint(1, 2)])
    o_methods = ["cb"] if depth_two else ["run", "cb"]
    run = [_o_stmt(rng, fields, helpers, True) for _ in range(rng.randint(2, 5))]
    if not any("call" in s for s in run):
        run.insert(rng.randrange(len(run) + 1),
                   f"if n > 0 {{ m := n - 1; r := call {helpers[0]}.go(m) }}")
    cb = [_o_stmt(rng, fields, helpers, not depth_two) for _ in range(rng.randint(1, 3))]
    decls = "\n".join(f"  field {f};" for f in fields)
    out = [f"contract {CHECKED} {{\n{decls}\n"
           f"  method run(n) {{\n    var t, c, m, r;\n    {_body(run)}\n  }}\n"
           f"  method cb(n) {{\n    var t, c, m, r;\n    {_body(cb)}\n  }}\n}}\n"]
    for h in helpers:
        stmts = [_helper_stmt(rng, helpers, h, o_methods) for _ in range(rng.randint(1, 3))]
        if not any(f"{CHECKED}." in s for s in stmts):
            stmts.append(f"if n > 0 {{ m := n - 1; r := call {CHECKED}.{o_methods[0]}(m) }}")
        out.append(f"contract {h} {{\n  method go(n) {{\n    var m, r;\n    {_body(stmts)}\n  }}\n}}\n")
    return "\n".join(out)


def _o_invocations(t: Trace) -> int:
    return len(invocations_of(t, CHECKED))


def random_scenario(seed: int, depth_two: bool = False, max_invocations: int = 4,
                    max_calls: int = 2, attempts: int = 50) -> Generated:
    """A scenario whose every execution has at most ``max_invocations`` invocations of ``O``.

    Deterministic in ``seed``: rejected drafts advance the same generator.
    """
    rng = random.Random(seed)
    for _ in range(attempts):
        src = random_sources(rng, depth_two)
        ctx = CodeContext(parse_contracts(src))
        calls = [TopCall(CHECKED, (rng.choice(ARGS),), "run")
                 for _ in range(rng.randint(1, max_calls))]
        init = {CHECKED: {f.name: rng.choice(CONSTANTS) for f in ctx[CHECKED].fields}}
        s = Scenario(ctx, init, calls, havoc_domain=CONSTANTS, step_budget=100_000,
                     sources={"generated.pl": src})
        traces = run_generated(s)
        if traces is not None and all(_o_invocations(t) <= max_invocations for t in traces):
            return Generated(seed, s, traces, src)
    raise RuntimeError(f"no scenario within bounds for seed {seed}")


def run_generated(s: Scenario, observers=()) -> Optional[list]:
    interp = Interpreter(s.context, s.step_budget, list(observers))
    store = s.initial_store
    traces = []
    for call in s.calls:
        store, t = interp.run(store, call)
        traces.append(t)
    return traces


def depth_two_traces(seed: int, count: int) -> list:
    """``count`` traces in which ``O`` is entered at most two deep, with their seeds."""
    out = []
    s = seed
    while len(out) < count:
        g = random_scenario(s, depth_two=True)
        for t in g.traces:
            if len(out) < count:
                out.append((s, t))
        s += 1
    return out
