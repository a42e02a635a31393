"""Example programs with expected results.

Each entry is a directory holding contract sources (``*.pl``), a
``scenario.json`` and an ``expected.json`` whose expectations each carry a
``source`` tag saying where the value comes from.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..interp import BudgetExceeded, Interpreter, Scenario, copy_store, read_location
from ..monitor import Monitor, instrument
from ..oracle import all_witnesses, decf_c_oracle, decf_fs_oracle
from ..traceio import load_scenario, parse_value

PACKAGE_DIR = Path(__file__).resolve().parent


def corpus_dir() -> Path:
    return Path(os.environ.get("ECF_CORPUS_DIR") or PACKAGE_DIR)


@dataclass
class CorpusEntry:
    name: str
    path: Path
    scenario: Scenario
    expected: dict

    @property
    def expectations(self) -> list:
        return self.expected.get("expectations", [])


def load_entry(path) -> CorpusEntry:
    path = Path(path)
    expected = json.loads((path / "expected.json").read_text(encoding="utf-8"))
    return CorpusEntry(path.name, path, load_scenario(path / "scenario.json"), expected)


def load_corpus(root=None) -> list:
    root = Path(root) if root is not None else corpus_dir()
    return [load_entry(p) for p in sorted(root.iterdir())
            if p.is_dir() and (p / "scenario.json").exists()]


def find_entry(name: str, root=None) -> CorpusEntry:
    root = Path(root) if root is not None else corpus_dir()
    return load_entry(root / name)


# --------------------------------------------------------------------------
# Running


@dataclass
class CorpusRun:
    """Everything observed while running one entry's scenario."""
    traces: list
    reports: list
    quiescent: list          # store before the first call, then after each execution
    error: Optional[str] = None


def run_entry_scenario(s: Scenario) -> CorpusRun:
    mon = Monitor()
    interp = Interpreter(s.context, s.step_budget, [mon])
    store = copy_store(s.initial_store)
    traces, reports, quiescent = [], [], [copy_store(store)]
    error = None
    for call in s.calls:
        try:
            store, t = interp.run(store, call)
        except BudgetExceeded:
            error = "BudgetExceeded"
            break
        traces.append(t)
        if t.aborted:
            reports.append(mon.abort_execution())
        else:
            reports.append(mon.reports[-1])
        quiescent.append(copy_store(store))
    return CorpusRun(traces, reports, quiescent, error)


def credit_sum_holds(store: dict, obj: str = "DAO") -> bool:
    """Sum of all credit entries equals the balance."""
    o = store.get(obj, {})
    return sum(o.get("credit", {}).values()) == o.get("balance", 0)


INVARIANTS = {"credit-sum": credit_sum_holds}


def action_string(trace, objs: Optional[set] = None) -> list:
    out = []
    for e in trace.events:
        if e.kind in ("enter", "return") and (objs is None or e.obj in objs):
            out.append(e.obj + ("{" if e.kind == "enter" else "}"))
    return out


def store_after_actions(trace, k: int) -> dict:
    """The store right after the k-th call/return action of ``trace``."""
    store = copy_store(trace.initial_store)
    seen = 0
    for e in trace.events:
        if e.kind in ("enter", "return"):
            seen += 1
            if seen > k:
                break
        if e.kind == "write":
            o = store.setdefault(e.obj, {})
            if e.key is None:
                o[e.field] = e.value
            else:
                o.setdefault(e.field, {})[e.key] = e.value
    return store


def _loc_label(loc, ctx) -> str:
    f, k = loc
    if k is None:
        return f
    name = ctx.object_name(k)
    return f"{f}[@{name}]" if name else f"{f}[{k}]"


def _execs(run: CorpusRun, which) -> list:
    if which == "all":
        return list(range(len(run.traces)))
    i = int(which)
    return [i - 1 if i > 0 else len(run.traces) + i]


def check_expectation(entry: CorpusEntry, run: CorpusRun, exp: dict) -> Optional[str]:
    """None when the expectation holds, otherwise a description of the mismatch."""
    ctx = entry.scenario.context
    kind = exp["kind"]
    want = exp.get("value")

    def key():
        return parse_value(exp["key"], ctx) if "key" in exp else None

    if kind == "finalStore":
        got = read_location(run.quiescent[-1], exp["obj"], exp["field"], key())
        return None if got == want else f"{exp['obj']}.{exp['field']}={got}, expected {want}"
    if kind == "executions":
        return None if len(run.traces) == want else f"{len(run.traces)} executions"
    if kind == "error":
        return None if run.error == want else f"error {run.error!r}, expected {want!r}"
    if kind == "invariant":
        fn = INVARIANTS[exp["name"]]
        at = range(len(run.quiescent)) if exp["at"] == "all" else exp["at"]
        for q in at:
            if fn(run.quiescent[q], exp["obj"]) != exp["holds"]:
                return f"{exp['name']} at quiescent state {q} is not {exp['holds']}"
        return None
    problems = []
    for i in _execs(run, exp.get("execution", -1)):
        t, rep = run.traces[i], run.reports[i]
        obj = exp.get("obj")
        if exp.get("execution") == "all" and obj is not None and obj not in t.objects():
            continue
        if kind == "checkpoint":
            got = read_location(store_after_actions(t, exp["after"]), obj, exp["field"], key())
            if got != want:
                problems.append(f"after action {exp['after']}: {obj}.{exp['field']}={got}, expected {want}")
        elif kind == "actions":
            got = action_string(t)
            if got != want:
                problems.append(f"actions {got}")
        elif kind == "segments":
            segs, _ = instrument(t)
            got = [{"R": sorted(_loc_label(l, ctx) for l in s.R),
                    "W": sorted(_loc_label(l, ctx) for l in s.W),
                    "depth": s.pdepth, "index": s.pindex} for s in segs if s.obj == obj]
            if got != want:
                problems.append(f"segments {got}")
        elif kind == "verdict":
            checker = exp["checker"]
            if checker == "monitor":
                got = rep.verdict(obj)
            elif checker == "cecf":
                got = decf_c_oracle(t, obj).verdict
            elif checker == "fsecf":
                got = decf_fs_oracle(t, obj, ctx, exp.get("domain", [0]),
                                     max_length=exp.get("maxLength", 4)).verdict
            else:
                raise ValueError(f"unknown checker {checker}")
            if got != want:
                problems.append(f"{checker} verdict for {obj} in execution {i + 1}: {got}, expected {want}")
        elif kind in ("cycle", "witness", "edges"):
            o = rep.object(obj)
            got = {"cycle": o.cycle, "witness": o.witness, "edges": o.edges}[kind]
            if got != want:
                problems.append(f"{kind} {got}")
        elif kind == "oracleWitness":
            orders = [w.ordering for w in all_witnesses(t, obj)]
            if want not in orders:
                problems.append(f"oracle witnesses {orders}")
        else:
            raise ValueError(f"unknown expectation kind {kind}")
    return "; ".join(problems) or None


@dataclass
class EntryResult:
    name: str
    failures: list = field(default_factory=list)
    checked: int = 0

    @property
    def passed(self) -> bool:
        return not self.failures


def run_entry(entry: CorpusEntry) -> EntryResult:
    run = run_entry_scenario(entry.scenario)
    res = EntryResult(entry.name)
    for exp in entry.expectations:
        res.checked += 1
        msg = check_expectation(entry, run, exp)
        if msg is not None:
            res.failures.append(f"[{exp.get('source', '?')}] {exp['kind']}: {msg}")
    return res


def run_corpus(root=None) -> list:
    return [run_entry(e) for e in load_corpus(root)]
