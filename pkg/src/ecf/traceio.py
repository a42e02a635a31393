"""JSON formats: scenarios, recorded traces and monitor reports."""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Optional

from .interp import DEFAULT_BUDGET, Event, Scenario, TopCall, Trace
from .lang import CodeContext, parse_contracts

FORMAT_VERSION = 1


class FormatError(Exception):
    pass


# --------------------------------------------------------------------------
# Values and stores


def parse_value(v, ctx: CodeContext) -> int:
    """Integers pass through; ``"@Name"`` (or a bare contract name) is interned."""
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, int):
        return v
    if isinstance(v, str):
        name = v[1:] if v.startswith("@") else v
        if name in ctx:
            return ctx.object_id(name)
        try:
            return int(v)
        except ValueError:
            raise FormatError(f"unknown object {v!r}") from None
    raise FormatError(f"bad value {v!r}")


def parse_store(data: dict, ctx: CodeContext) -> dict:
    store: dict = {}
    for obj, fields in (data or {}).items():
        if obj not in ctx:
            raise FormatError(f"store mentions unknown contract {obj}")
        decls = ctx[obj].field_map
        out = {}
        for f, v in fields.items():
            if f not in decls:
                raise FormatError(f"{obj} has no field {f}")
            if decls[f].is_map:
                if not isinstance(v, dict):
                    raise FormatError(f"{obj}.{f} is a map field")
                out[f] = {parse_value(k, ctx): parse_value(x, ctx) for k, x in v.items()}
            else:
                out[f] = parse_value(v, ctx)
        store[obj] = out
    return store


def dump_store(store: dict) -> dict:
    """Canonical JSON form: sorted objects and fields, map keys as decimal strings."""
    out = {}
    for obj in sorted(store):
        fo = {}
        for f in sorted(store[obj]):
            v = store[obj][f]
            fo[f] = {str(k): v[k] for k in sorted(v)} if isinstance(v, dict) else v
        out[obj] = fo
    return out


def load_store(data: dict) -> dict:
    return {obj: {f: ({int(k): x for k, x in v.items()} if isinstance(v, dict) else v)
                  for f, v in fields.items()} for obj, fields in (data or {}).items()}


def format_store(store: dict, ctx: Optional[CodeContext] = None) -> str:
    lines = []
    for obj in sorted(store):
        for f in sorted(store[obj]):
            v = store[obj][f]
            if isinstance(v, dict):
                for k in sorted(v):
                    name = ctx.object_name(k) if ctx is not None else None
                    key = f"@{name}" if name else str(k)
                    lines.append(f"{obj}.{f}[{key}] = {v[k]}")
            else:
                lines.append(f"{obj}.{f} = {v}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# Scenarios


def context_from_sources(sources: dict) -> CodeContext:
    contracts = []
    for name in sorted(sources):
        contracts.extend(parse_contracts(sources[name]))
    return CodeContext(contracts)


def scenario_from_json(data: dict, base: Path, sources: Optional[dict] = None) -> Scenario:
    if sources is None:
        sources = {}
        for rel in data.get("contracts", []):
            p = (base / rel) if not os.path.isabs(rel) else Path(rel)
            sources[p.name] = p.read_text(encoding="utf-8")
    ctx = context_from_sources(sources)
    calls = []
    for c in data.get("calls", []):
        if "args" in c:
            args = tuple(parse_value(a, ctx) for a in c["args"])
        elif "arg" in c:
            args = (parse_value(c["arg"], ctx),)
        else:
            args = ()
        calls.append(TopCall(c["target"], args, c.get("method")))
    return Scenario(ctx, parse_store(data.get("store", {}), ctx), calls,
                    data.get("mode", "concrete"),
                    tuple(parse_value(v, ctx) for v in data.get("havocDomain", [])),
                    int(data.get("stepBudget", DEFAULT_BUDGET)), sources)


def load_scenario(path) -> Scenario:
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    return scenario_from_json(data, path.parent)


# --------------------------------------------------------------------------
# Traces


def call_json(call: TopCall) -> dict:
    return {"target": call.target, "method": call.method, "args": list(call.args)}


def trace_json(t: Trace, exec_id: int) -> dict:
    return {
        "execId": exec_id,
        "call": call_json(t.call) if t.call else None,
        "aborted": t.aborted,
        "initialStore": dump_store(t.initial_store),
        "finalStore": dump_store(t.final_store),
        "events": [e.to_json() for e in t.events],
    }


def trace_from_json(d: dict) -> Trace:
    call = d.get("call")
    return Trace([Event.from_json(e) for e in d["events"]], load_store(d["initialStore"]),
                 load_store(d["finalStore"]),
                 TopCall(call["target"], tuple(call["args"]), call.get("method")) if call else None,
                 d.get("aborted", False))


def run_record(s: Scenario, traces: list, final_store: dict, error: Optional[str] = None) -> dict:
    d = {
        "formatVersion": FORMAT_VERSION,
        "sources": dict(sorted(s.sources.items())),
        "mode": s.mode,
        "havocDomain": list(s.havoc_domain),
        "stepBudget": s.step_budget,
        "initialStore": dump_store(s.initial_store),
        "calls": [call_json(c) for c in s.calls],
        "executions": [trace_json(t, i + 1) for i, t in enumerate(traces)],
        "finalStore": dump_store(final_store),
    }
    if error:
        d["error"] = error
    return d


def check_version(d: dict):
    v = d.get("formatVersion")
    if v != FORMAT_VERSION:
        raise FormatError(f"unsupported formatVersion {v!r}")


def scenario_from_record(d: dict) -> Scenario:
    check_version(d)
    ctx = context_from_sources(d["sources"])
    calls = [TopCall(c["target"], tuple(c["args"]), c.get("method")) for c in d["calls"]]
    return Scenario(ctx, load_store(d["initialStore"]), calls, d.get("mode", "concrete"),
                    tuple(d.get("havocDomain", ())), d.get("stepBudget", DEFAULT_BUDGET),
                    dict(d["sources"]))


def load_record(path) -> dict:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    check_version(d)
    return d


# --------------------------------------------------------------------------
# Reports


def report_json(reports: list, extra: Optional[dict] = None) -> dict:
    d = {
        "formatVersion": FORMAT_VERSION,
        "executions": [r.to_json() for r in reports],
        "summary": {
            "executions": len(reports),
            "aborted": sum(1 for r in reports if r.aborted),
            "notEcf": sum(1 for r in reports if not r.aborted and not r.ecf),
        },
    }
    if extra:
        d.update(extra)
    return d


def format_report(reports: list) -> str:
    rows = [("exec", "object", "verdict", "m", "n", "detail")]
    for r in reports:
        if r.aborted:
            rows.append((str(r.exec_id), "-", "aborted", "-", "-", r.call or ""))
            continue
        for o in r.objects:
            detail = ("order " + " ".join(o.witness)) if o.witness is not None else (
                "cycle " + " -> ".join(o.cycle or []))
            rows.append((str(r.exec_id), o.obj, o.verdict, str(o.m), str(o.n), detail))
    widths = [max(len(row[i]) for row in rows) for i in range(6)]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows)


def dumps(d: dict) -> str:
    return json.dumps(d, indent=2, sort_keys=False) + "\n"
