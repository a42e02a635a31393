"""Brute-force reference checkers.

``decf_c_oracle`` enumerates every callback-free rearrangement of an object's
invocations and tests conflict equivalence directly.  ``decf_fs_oracle``
searches callback-free runs of the object (NoCB executions with havoc
values) for one that connects the trace's initial and final object states.
"""
from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .interp import (
    BudgetExceeded, Event, HavocExhausted, MgcCall, RuntimeFault, Trace,
    normalize_store, object_store, run_nocb,
)
from .lang import CodeContext
from .monitor import ECF, NOT_ECF

UNKNOWN = "Unknown"
DEFAULT_INVOCATION_BOUND = 8


class OracleBound(Exception):
    pass


def _events(t) -> list:
    return t.events if isinstance(t, Trace) else list(t)


def project(t, o: str) -> list:
    return [e for e in _events(t) if e.obj == o]


# --------------------------------------------------------------------------
# Invocations of one object


@dataclass
class OInvocation:
    id: int
    label: str
    parent: Optional[int]
    depth: int
    events: list = field(default_factory=list)


def invocations_of(t, o: str) -> list:
    """Split ``o``'s projected events into invocations; self-calls stay with their caller."""
    invs: list = []
    stack: list = []  # (inv, is_self_call)
    for e in project(t, o):
        if e.kind == "enter":
            if e.peer == o and stack:
                inv = stack[-1][0]
                stack.append((inv, True))
            else:
                parent = stack[-1][0] if stack else None
                depth = sum(1 for _, s in stack if not s)
                inv = OInvocation(len(invs) + 1, f"{o}#{len(invs) + 1}",
                                  parent.id if parent else None, depth)
                invs.append(inv)
                stack.append((inv, False))
            inv.events.append(e)
        elif e.kind == "return":
            if not stack:
                raise ValueError(f"unbalanced return of {o} at event {e.i}")
            inv, _ = stack.pop()
            inv.events.append(e)
        else:
            if not stack:
                raise ValueError(f"event of {o} outside any invocation at {e.i}")
            stack[-1][0].events.append(e)
    return invs


def has_callback(t, o: str) -> bool:
    return any(inv.depth > 0 for inv in invocations_of(t, o))


# --------------------------------------------------------------------------
# Conflict equivalence


def _conflict(a: Event, b: Event) -> bool:
    return (a.field is not None and b.field is not None and a.field == b.field
            and a.key == b.key and (a.rw == "w" or b.rw == "w"))


def _preserves_conflicts(ev1: list, pos2: list) -> bool:
    by_loc: dict = {}
    for j, e in enumerate(ev1):
        if e.field is not None:
            by_loc.setdefault((e.field, e.key), []).append(j)
    for idxs in by_loc.values():
        for x, y in itertools.combinations(idxs, 2):
            if (ev1[x].rw == "w" or ev1[y].rw == "w") and pos2[x] > pos2[y]:
                return False
    return True


def is_conflict_equivalent(t1, t2, o: str, by_position: bool = False) -> bool:
    """Same events of ``o`` up to a permutation that keeps every conflicting pair in order.

    Identical events are matched occurrence by occurrence; identical events
    have identical conflicts, so if any matching works this one does.  With
    ``by_position`` the permutation is fixed instead: ``t2`` must be a
    rearrangement of ``t1``'s events and each is matched to itself through
    its original index.
    """
    ev1, ev2 = project(t1, o), project(t2, o)
    if len(ev1) != len(ev2):
        return False
    if by_position:
        where = {e.i: j for j, e in enumerate(ev2)}
        if len(where) != len(ev2) or any(e.i not in where for e in ev1):
            return False
        return _preserves_conflicts(ev1, [where[e.i] for e in ev1])
    slots: dict = {}
    for j, e in enumerate(ev2):
        slots.setdefault(e.identity(), deque()).append(j)
    pos2 = []
    for e in ev1:
        q = slots.get(e.identity())
        if not q:
            return False
        pos2.append(q.popleft())
    return _preserves_conflicts(ev1, pos2)


def is_conflict_equivalent_bruteforce(t1, t2, o: str) -> bool:
    """Exhaustive search over all identity-preserving matchings (small inputs only)."""
    ev1, ev2 = project(t1, o), project(t2, o)
    if len(ev1) != len(ev2):
        return False
    g1: dict = {}
    g2: dict = {}
    for j, e in enumerate(ev1):
        g1.setdefault(e.identity(), []).append(j)
    for j, e in enumerate(ev2):
        g2.setdefault(e.identity(), []).append(j)
    if {k: len(v) for k, v in g1.items()} != {k: len(v) for k, v in g2.items()}:
        return False
    keys = list(g1)
    for choice in itertools.product(*(itertools.permutations(g2[k]) for k in keys)):
        pos2 = [0] * len(ev1)
        for k, perm in zip(keys, choice):
            for a, b in zip(g1[k], perm):
                pos2[a] = b
        if _preserves_conflicts(ev1, pos2):
            return True
    return False


# --------------------------------------------------------------------------
# Callback-free rearrangements


@dataclass
class ReorderCandidate:
    ordering: list            # invocation labels
    events: list              # o's events, one invocation after another
    elided: list = field(default_factory=list)  # labels whose callbacks were pulled out

    def is_callback_free(self) -> bool:
        return True


def count_candidates(mains: int, callbacks: int) -> int:
    return math.factorial(mains + callbacks) // math.factorial(mains)


def enumerate_callback_free_reorderings(t, o: str, bound: int = DEFAULT_INVOCATION_BOUND):
    """Yield every callback-free ordering of ``o``'s invocations.

    Top-level invocations keep their relative order (the run's executions are
    not reordered among themselves); every callback is placed as a separate
    top-level invocation in every possible position.
    """
    invs = invocations_of(t, o)
    if len(invs) > bound:
        raise OracleBound(f"{len(invs)} invocations of {o} exceed the bound {bound}")
    mains = [inv for inv in invs if inv.parent is None]
    cbs = [inv for inv in invs if inv.parent is not None]
    parents = {inv.parent for inv in cbs}
    elided = [inv.label for inv in invs if inv.id in parents]
    n = len(invs)
    for perm in itertools.permutations(cbs):
        for slots in itertools.combinations(range(n), len(cbs)):
            order = []
            ci, mi = 0, 0
            slotset = set(slots)
            for k in range(n):
                if k in slotset:
                    order.append(perm[ci])
                    ci += 1
                else:
                    order.append(mains[mi])
                    mi += 1
            yield ReorderCandidate([inv.label for inv in order],
                                   [e for inv in order for e in inv.events], elided)


@dataclass
class OracleResult:
    verdict: str
    witness: Optional[object] = None
    checked: int = 0
    complete: bool = True
    note: str = ""

    def to_json(self) -> dict:
        d = {"verdict": self.verdict, "checked": self.checked, "complete": self.complete}
        if isinstance(self.witness, ReorderCandidate):
            d["witnessOrder"] = self.witness.ordering
        elif self.witness is not None:
            d["schedule"] = [{"method": c.method, "args": list(c.args), "havoc": list(c.havoc)}
                             for c in self.witness]
        if self.note:
            d["note"] = self.note
        return d


def decf_c_oracle(t, o: str, bound: int = DEFAULT_INVOCATION_BOUND) -> OracleResult:
    checked = 0
    for cand in enumerate_callback_free_reorderings(t, o, bound):
        checked += 1
        if is_conflict_equivalent(t, cand.events, o, by_position=True):
            return OracleResult(ECF, cand, checked)
    return OracleResult(NOT_ECF, None, checked)


def all_witnesses(t, o: str, bound: int = DEFAULT_INVOCATION_BOUND) -> list:
    return [c for c in enumerate_callback_free_reorderings(t, o, bound)
            if is_conflict_equivalent(t, c.events, o, by_position=True)]


# --------------------------------------------------------------------------
# Final-state search


def _freeze(d: dict):
    return tuple(sorted((f, tuple(sorted(v.items())) if isinstance(v, dict) else v)
                        for f, v in d.items()))


def observed_values(t, o: str) -> tuple:
    """Arguments passed into ``o`` and values returned to ``o`` in the trace."""
    args, rets = set(), set()
    for e in _events(t):
        if e.kind == "enter" and e.obj == o and e.value is not None:
            args.update(e.value[1])
        if e.kind == "return" and e.peer == o and e.obj != o and e.value is not None:
            rets.add(e.value)
    return args, rets


def _executions(o, ctx, store, method, args, havoc_values, max_havocs, budget):
    """All NoCB(o) outcomes of one call, branching on each havoc value."""
    out = []
    incomplete = False
    pending = [()]
    while pending:
        prefix = pending.pop()
        try:
            new, trace, used = run_nocb(o, ctx, store, MgcCall(method, args, prefix),
                                        budget=budget, default=None)
        except HavocExhausted:
            if len(prefix) >= max_havocs:
                incomplete = True
                continue
            pending.extend(prefix + (v,) for v in reversed(havoc_values))
            continue
        except BudgetExceeded:
            incomplete = True
            continue
        except RuntimeFault:
            continue
        if trace.aborted:
            continue
        out.append((new, MgcCall(method, args, prefix)))
    return out, incomplete


def decf_fs_oracle(t: Trace, o: str, ctx: CodeContext, havoc_domain: Iterable[int] = (0,),
                   max_length: int = 4, max_havocs: int = 4, state_cap: int = 100_000,
                   budget: int = 10_000, use_trace_values: bool = True) -> OracleResult:
    """Search callback-free runs of ``o`` from the trace's initial to final object state.

    The verdict is ECF with a schedule as witness, NotECF when no run of at
    most ``max_length`` executions (but at least as many as the trace has
    invocations of ``o``) exists over the candidate values, or Unknown when a
    cap or budget stopped part of the search.
    """
    start, goal = object_store(t.initial_store, o), object_store(t.final_store, o)
    if start == goal:
        return OracleResult(ECF, [], 0)
    args_seen, rets_seen = observed_values(t, o) if use_trace_values else (set(), set())
    arg_values = sorted(set(havoc_domain) | args_seen)
    havoc_values = sorted(set(havoc_domain) | rets_seen)
    length = max(max_length, len(invocations_of(t, o)))
    k = ctx[o]
    entries = []
    for m in k.methods:
        arity = len(m.params) if m.name is not None else 1
        for args in itertools.product(arg_values, repeat=arity):
            entries.append((m.name, tuple(args)))
    others = {name: v for name, v in t.initial_store.items() if name != o}
    goal_key = _freeze(goal)
    seen = {_freeze(start)}
    frontier = [(start, [])]
    checked = 0
    incomplete = False
    for _ in range(length):
        nxt = []
        for ostore, path in frontier:
            full = dict(others)
            full[o] = ostore
            for method, args in entries:
                outs, inc = _executions(o, ctx, full, method, args, havoc_values, max_havocs, budget)
                incomplete |= inc
                for new, mc in outs:
                    checked += 1
                    ns = normalize_store({o: new.get(o, {})}).get(o, {})
                    key = _freeze(ns)
                    if key == goal_key:
                        return OracleResult(ECF, path + [mc], checked)
                    if key not in seen:
                        if len(seen) >= state_cap:
                            return OracleResult(UNKNOWN, None, checked, False, "state cap reached")
                        seen.add(key)
                        nxt.append((ns, path + [mc]))
        frontier = nxt
        if not frontier:
            break
    if incomplete:
        return OracleResult(UNKNOWN, None, checked, False, "havoc or step budget reached")
    exhausted = not frontier
    return OracleResult(NOT_ECF, None, checked, exhausted,
                        "" if exhausted else f"no witness within {length} executions")
