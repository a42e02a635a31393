"""The ``ecf`` command line.

Exit codes: 0 success (everything ECF), 1 some verdict is NotECF, 2 an
execution failed an assertion, 3 the step budget ran out, 4 a bounded
check gave Unknown, 5 a replay diverged from its record, 64 bad input.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

from . import bench
from .corpus import corpus_dir, load_corpus, load_entry, run_entry
from .decider import (
    NOT_SECF, SECF, decide_secf_c, load_spec_file, replay_counterexample, synthesize_stubs,
)
from .interp import BudgetExceeded, Interpreter, RuntimeFault, Scenario, copy_store
from .lang import CodeContext, ParseError, format_contract
from .monitor import NOT_ECF, Monitor
from .oracle import UNKNOWN, OracleBound, decf_c_oracle, decf_fs_oracle
from .traceio import (
    FormatError, dump_store, dumps, format_report, format_store, load_record, load_scenario,
    report_json, run_record, scenario_from_record, trace_from_json, trace_json,
)

EXIT_OK, EXIT_NOT_ECF, EXIT_ABORT, EXIT_BUDGET, EXIT_UNKNOWN, EXIT_DIVERGED = 0, 1, 2, 3, 4, 5
EXIT_USAGE = 64


class UsageError(Exception):
    pass


def resolve_scenario(arg: str) -> Path:
    """A scenario path, an entry directory, or ``corpus/<name>[.scenario.json]``."""
    p = Path(arg)
    if p.is_dir() and (p / "scenario.json").exists():
        return p / "scenario.json"
    if p.is_file():
        return p
    name = p.name
    for suffix in (".scenario.json", ".json"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
            break
    cand = corpus_dir() / name / "scenario.json"
    if cand.exists():
        return cand
    raise UsageError(f"no scenario at {arg}")


def _write(path: Optional[str], text: str):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _domain(text: Optional[str]) -> tuple:
    if not text:
        return (0,)
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"bad domain {text!r}") from None


# --------------------------------------------------------------------------
# run / monitor / replay


def _execute(s, monitor: Optional[Monitor], prevent: bool = False):
    """Run every call of ``s``; returns (traces, reports, final store, error)."""
    observers = [monitor] if monitor is not None else []
    interp = Interpreter(s.context, s.step_budget, observers)
    store = copy_store(s.initial_store)
    traces, reports = [], []
    error = None
    for call in s.calls:
        before = store
        try:
            store, t = interp.run(store, call)
        except BudgetExceeded:
            error = "BudgetExceeded"
            break
        traces.append(t)
        if monitor is not None:
            rep = monitor.abort_execution() if t.aborted else monitor.reports[-1]
            rep.call = call.describe()
            reports.append(rep)
            if prevent and not t.aborted and not rep.ecf:
                store = before
    return traces, reports, store, error


def _exit_for(traces, reports, error) -> int:
    if error == "BudgetExceeded":
        return EXIT_BUDGET
    if any(not r.aborted and not r.ecf for r in reports):
        return EXIT_NOT_ECF
    if any(t.aborted for t in traces):
        return EXIT_ABORT
    return EXIT_OK


def _scenario(args):
    s = load_scenario(resolve_scenario(args.scenario))
    if args.budget is not None:
        s.step_budget = args.budget
    return s


def cmd_run(args) -> int:
    s = _scenario(args)
    want_report = args.report is not None
    mon = Monitor() if want_report else None
    traces, reports, store, error = _execute(s, mon)
    if args.record:
        _write(args.record, dumps(run_record(s, traces, store, error)))
    if want_report:
        _write(args.report, dumps(report_json(reports)))
    if args.format == "json":
        out = {"finalStore": dump_store(store),
               "executions": len(traces),
               "aborted": [i + 1 for i, t in enumerate(traces) if t.aborted]}
        if error:
            out["error"] = error
        sys.stdout.write(dumps(out))
    else:
        text = format_store(store, s.context)
        sys.stdout.write((text + "\n") if text else "(empty store)\n")
        for i, t in enumerate(traces):
            if t.aborted:
                sys.stdout.write(f"execution {i + 1} aborted: {t.abort_reason}\n")
        if error:
            sys.stdout.write(f"stopped: {error} after {s.step_budget} steps\n")
    if error == "BudgetExceeded":
        return EXIT_BUDGET
    return EXIT_ABORT if any(t.aborted for t in traces) else EXIT_OK


def cmd_monitor(args) -> int:
    s = _scenario(args)
    mon = Monitor(not args.no_sibling_edges)
    prevent = args.mode == "prevent"
    extra = {"mode": args.mode}
    t0 = time.perf_counter()
    traces, reports, store, error = _execute(s, mon, prevent)
    monitored = time.perf_counter() - t0
    if args.overhead:
        t0 = time.perf_counter()
        _execute(s, None)
        bare = time.perf_counter() - t0
        extra["overhead"] = {"bareSeconds": round(bare, 6), "monitoredSeconds": round(monitored, 6),
                             "ratio": round(monitored / bare, 4) if bare > 0 else None}
    extra["finalStore"] = dump_store(store)
    if error:
        extra["error"] = error
    if args.record:
        _write(args.record, dumps(run_record(s, traces, store, error)))
    doc = report_json(reports, extra)
    if args.report:
        _write(args.report, dumps(doc))
    if args.format == "json":
        sys.stdout.write(dumps(doc))
    else:
        sys.stdout.write(format_report(reports) + "\n")
        if "overhead" in extra:
            o = extra["overhead"]
            sys.stdout.write(f"overhead: {o['monitoredSeconds']}s monitored vs "
                             f"{o['bareSeconds']}s bare (x{o['ratio']})\n")
        if error:
            sys.stdout.write(f"stopped: {error}\n")
    if error == "BudgetExceeded":
        return EXIT_BUDGET
    return EXIT_NOT_ECF if any(not r.aborted and not r.ecf for r in reports) else EXIT_OK


def cmd_replay(args) -> int:
    rec = load_record(args.record)
    s = scenario_from_record(rec)
    mon = Monitor(not args.no_sibling_edges)
    traces, reports, store, error = _execute(s, mon)
    recorded = rec.get("executions", [])
    replayed = [trace_json(t, i + 1) for i, t in enumerate(traces)]
    diverged = (recorded != replayed or rec.get("error") != error
                or rec.get("finalStore") != dump_store(store))
    doc = report_json(reports, {"replayMatches": not diverged})
    if args.report:
        _write(args.report, dumps(doc))
    if args.format == "json":
        sys.stdout.write(dumps(doc))
    else:
        sys.stdout.write(format_report(reports) + "\n")
        sys.stdout.write("replay matches record\n" if not diverged else "replay DIVERGED from record\n")
    if diverged:
        return EXIT_DIVERGED
    return _exit_for(traces, reports, error)


# --------------------------------------------------------------------------
# oracle


def cmd_oracle(args) -> int:
    rec = load_record(args.trace)
    s = scenario_from_record(rec)
    execs = rec.get("executions", [])
    if args.execution is not None:
        if not 1 <= args.execution <= len(execs):
            raise UsageError(f"no execution {args.execution} in {args.trace}")
        execs = [execs[args.execution - 1]]
    domain = _domain(args.domain) if args.domain else tuple(s.havoc_domain) or (0,)
    results = []
    witnesses = []
    for d in execs:
        t = trace_from_json(d)
        entry = {"execId": d["execId"], "obj": args.object, "aborted": t.aborted}
        if t.aborted or args.object not in t.objects():
            entry["verdict"] = None
            results.append(entry)
            continue
        try:
            if args.fs:
                r = decf_fs_oracle(t, args.object, s.context, domain, max_length=args.max_length)
            else:
                r = decf_c_oracle(t, args.object, args.bound)
        except OracleBound as exc:
            entry.update(verdict=UNKNOWN, note=str(exc), complete=False)
            results.append(entry)
            continue
        entry.update(r.to_json())
        results.append(entry)
        if r.verdict != NOT_ECF and r.witness is not None and not args.fs:
            witnesses.append({"execId": d["execId"], "order": r.witness.ordering,
                              "events": [e.to_json() for e in r.witness.events]})
    doc = {"formatVersion": rec["formatVersion"], "checker": "fs" if args.fs else "c",
           "object": args.object, "executions": results}
    if args.witness:
        _write(args.witness, dumps({"formatVersion": rec["formatVersion"], "witnesses": witnesses}))
    if args.report:
        _write(args.report, dumps(doc))
    if args.format == "json":
        sys.stdout.write(dumps(doc))
    else:
        for r in results:
            v = r.get("verdict") or ("aborted" if r["aborted"] else "absent")
            tail = " ".join(r.get("witnessOrder", []))
            sys.stdout.write(f"{r['execId']}  {args.object}  {v}  {tail}".rstrip() + "\n")
    verdicts = [r.get("verdict") for r in results]
    if NOT_ECF in verdicts:
        return EXIT_NOT_ECF
    return EXIT_UNKNOWN if UNKNOWN in verdicts else EXIT_OK


# --------------------------------------------------------------------------
# decide


def counterexample_record(spec, cex, trace) -> dict:
    """A replayable trace record of a counterexample, stub contracts included."""
    script: dict = {}
    for c in cex.calls:
        script.setdefault(c.callee, []).append((c.value, c.callbacks))
    stubs = synthesize_stubs(spec.contract, spec.universe, script)
    sources = {"object.pl": format_contract(spec.contract),
               "stubs.pl": "\n".join(format_contract(k) for k in stubs)}
    s = Scenario(CodeContext([spec.contract] + stubs), {spec.name: cex.store}, [trace.call],
                 sources=sources)
    return run_record(s, [trace], trace.final_store)


def cmd_decide(args) -> int:
    path = Path(args.spec)
    if not path.exists():
        cand = corpus_dir() / "specs" / path.name
        if not cand.exists():
            cand = corpus_dir() / "specs" / f"{path.name}.spec.json"
        if not cand.exists():
            raise UsageError(f"no spec at {args.spec}")
        path = cand
    try:
        spec = load_spec_file(path, args.object)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    name = spec.contract.name
    if args.cap is not None:
        spec.cap = args.cap
    d = decide_secf_c(spec, include_call_states=not args.no_call_states)
    doc = {"formatVersion": 1, "object": name, **d.to_json()}
    if d.counterexample is not None and (args.replay or args.counterexample):
        trace, rep = replay_counterexample(spec, d.counterexample)
        doc["replay"] = {"monitor": rep.verdict(name), "report": rep.to_json()}
        if args.counterexample:
            _write(args.counterexample, dumps(counterexample_record(spec, d.counterexample, trace)))
    if args.report:
        _write(args.report, dumps(doc))
    if args.format == "json":
        sys.stdout.write(dumps(doc))
    else:
        sys.stdout.write(f"{name}: {d.verdict} ({d.configurations} configurations, "
                         f"{d.call_states} call states)\n")
        if d.counterexample is not None:
            c = d.counterexample

            def vals(xs):
                # object ids print by name; they share the integer space with plain values
                return ", ".join(f"@{spec.ctx.object_name(v)}" if spec.ctx.object_name(v) else str(v)
                                 for v in xs)

            store = format_store({name: c.store}, spec.ctx).replace("\n", "; ")
            sys.stdout.write(f"counterexample: {c.method}({vals(c.args)}) from {store}\n")
            for sc in c.calls:
                cbs = ", ".join(f"{m}({vals(a)})" for m, a in sc.callbacks)
                sys.stdout.write(f"  stub {sc.callee}.{sc.method} -> {sc.value}"
                                 + (f" after callbacks {cbs}" if cbs else "") + "\n")
            if "replay" in doc:
                sys.stdout.write(f"monitor on replay: {doc['replay']['monitor']}\n")
        if d.note:
            sys.stdout.write(f"note: {d.note}\n")
    if d.verdict == NOT_SECF:
        return EXIT_NOT_ECF
    return EXIT_OK if d.verdict == SECF else EXIT_UNKNOWN


# --------------------------------------------------------------------------
# bench / corpus


def _ints(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad list {text!r}") from None


def cmd_bench(args) -> int:
    rows = bench.bench_grid(_ints(args.n), _ints(args.m), args.k, args.seed, args.repeats)
    _write(args.report, bench.rows_csv(rows))
    if args.overhead:
        o = bench.monitor_overhead(args.overhead, args.repeats)
        sys.stderr.write(json.dumps(o.to_json()) + "\n")
    return EXIT_OK


def cmd_corpus(args) -> int:
    entries = ([load_entry(corpus_dir() / n) for n in args.names] if args.names
               else load_corpus())
    with ThreadPoolExecutor(max_workers=max(1, args.parallel)) as pool:
        results = list(pool.map(run_entry, entries))
    for r in results:
        sys.stdout.write(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  ({r.checked} checks)\n")
        for f in r.failures:
            sys.stdout.write(f"    {f}\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NOT_ECF


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ecf", description="Run, monitor and check contract executions.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("scenario", help="scenario file, entry directory or corpus/<name>")
            sp.add_argument("--budget", type=int, help="step budget per execution")
        sp.add_argument("--format", choices=("json", "text"), default="text")
        sp.add_argument("--report", help="write the JSON report here ('-' for stdout)")

    sp = sub.add_parser("run", help="execute a scenario and print the final store")
    common(sp)
    sp.add_argument("--record", help="write a replayable trace record")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("monitor", help="execute a scenario under the ECF monitor")
    common(sp)
    sp.add_argument("--mode", choices=("detect", "prevent"), default="detect")
    sp.add_argument("--record", help="write a replayable trace record")
    sp.add_argument("--overhead", action="store_true", help="also time an unmonitored run")
    sp.add_argument("--no-sibling-edges", action="store_true",
                    help="omit order edges between non-nested invocations")
    sp.set_defaults(func=cmd_monitor)

    sp = sub.add_parser("replay", help="re-run a trace record and compare")
    sp.add_argument("record")
    common(sp, scenario=False)
    sp.add_argument("--no-sibling-edges", action="store_true")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("oracle", help="brute-force ECF check of recorded executions")
    sp.add_argument("--trace", required=True, help="trace record from run --record")
    sp.add_argument("--object", required=True)
    sp.add_argument("--execution", type=int, help="check only this execution (1-based)")
    sp.add_argument("--fs", action="store_true", help="final-state check instead of conflicts")
    sp.add_argument("--domain", help="comma-separated havoc/argument values for --fs")
    sp.add_argument("--max-length", type=int, default=4)
    sp.add_argument("--bound", type=int, default=8, help="invocation bound for the conflict check")
    sp.add_argument("--witness", help="write witness orderings here")
    common(sp, scenario=False)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("decide", help="static conflict-ECF decision for a finite-state object")
    sp.add_argument("spec", help="spec file or the name of a bundled spec")
    sp.add_argument("--object")
    sp.add_argument("--cap", type=int, help="configuration cap")
    sp.add_argument("--no-call-states", action="store_true",
                    help="start only from quiescent states")
    sp.add_argument("--replay", action="store_true", help="replay a counterexample concretely")
    sp.add_argument("--counterexample", help="write the replayed counterexample as a trace record")
    common(sp, scenario=False)
    sp.set_defaults(func=cmd_decide)

    sp = sub.add_parser("bench", help="time the analysis on synthetic nested executions")
    sp.add_argument("--n", default="1,10", help="invocation counts")
    sp.add_argument("--m", default="100,1000,10000", help="segment counts")
    sp.add_argument("--k", type=int, default=3, help="locations")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--repeats", type=int, default=3)
    sp.add_argument("--overhead", type=int, default=0, metavar="N",
                    help="also measure monitoring overhead over N executions")
    sp.add_argument("--report", help="CSV output path (default stdout)")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("corpus", help="run corpus entries against their expectations")
    sp.add_argument("names", nargs="*")
    sp.add_argument("--parallel", type=int, default=1)
    sp.set_defaults(func=cmd_corpus)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, FormatError, ParseError, RuntimeFault, OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"ecf: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
