"""Synthetic workloads for timing the monitor.

``chain_workload`` drives the monitor hooks directly: ``n`` nested
invocations of one object, each split into segments by calls to a helper
that never calls back, for about ``m`` segments in total over ``k``
locations.  ``monitor_overhead`` compares interpreter runs with and without
the monitor attached.
"""
from __future__ import annotations

import csv
import io
import random
import time
from dataclasses import dataclass

from .interp import Interpreter, TopCall
from .lang import CodeContext, parse_contracts
from .monitor import Monitor, analyse

OBJ, HELPER = "O", "H"


@dataclass
class BenchRow:
    n: int
    m: int
    k: int
    seconds: float
    memory: int
    verdict: str

    def as_list(self) -> list:
        return [self.n, self.m, self.k, f"{self.seconds:.6f}", self.memory, self.verdict]


BENCH_HEADER = ["n", "m", "k", "seconds", "memory", "verdict"]


def chain_workload(n: int, m: int, k: int, seed: int = 0) -> Monitor:
    """A monitor holding one finished-but-unanalysed nested execution."""
    mon = Monitor()
    if n == 0:
        return mon
    rng = random.Random(seed)
    per = max(1, m // n)
    locs = [(f"f{i}", None) for i in range(k)] or [("f0", None)]

    def touch():
        f, key = rng.choice(locs)
        (mon.upon_write if rng.random() < 0.3 else mon.upon_read)(OBJ, f, key)

    def level(d: int):
        mon.upon_invocation(OBJ)
        touch()
        for j in range(per - 1):
            mon.upon_invocation(HELPER)
            if j == (per - 1) // 2 and d + 1 < n:
                level(d + 1)
            mon.upon_return(HELPER)
            touch()
        if per == 1 and d + 1 < n:
            mon.upon_invocation(HELPER)
            level(d + 1)
            mon.upon_return(HELPER)
            touch()
        if d > 0:
            mon.upon_return(OBJ)

    # the outermost return would trigger analysis; the caller times it instead
    level(0)
    return mon


def run_chain(n: int, m: int, k: int = 3, seed: int = 0, repeats: int = 3) -> BenchRow:
    mon = chain_workload(n, m, k, seed)
    segs = [s for s in mon.segments if s.obj == OBJ]
    invs = [inv for inv in mon.invocations if inv.obj == OBJ]
    best = float("inf")
    rep = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        rep = analyse(segs, invs)
        best = min(best, time.perf_counter() - t0)
    if not segs:
        best = 0.0
    verdict = rep.verdict(OBJ) if rep is not None and rep.objects else "ECF"
    return BenchRow(n, len(segs), k, best, rep.memory_items if rep else 0, verdict or "ECF")


def bench_grid(ns, ms, k: int = 3, seed: int = 0, repeats: int = 3) -> list:
    return [run_chain(n, m, k, seed, repeats) for n in ns for m in ms]


def rows_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_HEADER)
    for r in rows:
        w.writerow(r.as_list())
    return buf.getvalue()


# --------------------------------------------------------------------------
# Monitoring overhead

COUNTER = """
contract Counter {
  field count;
  field last;
  method bump(v) {
    var c;
    c := count; c := c + 1; count := c;
    last := v
  }
}
"""


@dataclass
class Overhead:
    executions: int
    bare: float
    monitored: float
    not_ecf: int

    @property
    def ratio(self) -> float:
        return self.monitored / self.bare if self.bare > 0 else float("inf")

    def to_json(self) -> dict:
        return {"executions": self.executions, "bareSeconds": round(self.bare, 6),
                "monitoredSeconds": round(self.monitored, 6), "ratio": round(self.ratio, 4),
                "notEcf": self.not_ecf}


def _time_runs(ctx: CodeContext, executions: int, observers) -> float:
    interp = Interpreter(ctx, observers=observers)
    store: dict = {}
    t0 = time.perf_counter()
    for i in range(executions):
        store, _ = interp.run(store, TopCall("Counter", (i,), "bump"))
    return time.perf_counter() - t0


def monitor_overhead(executions: int = 10_000, repeats: int = 3) -> Overhead:
    """Best-of-``repeats`` wall time of a callback-free workload, bare and monitored."""
    ctx = CodeContext(parse_contracts(COUNTER))
    bare = min(_time_runs(ctx, executions, []) for _ in range(repeats))
    monitored, not_ecf = float("inf"), 0
    for _ in range(repeats):
        mon = Monitor()
        monitored = min(monitored, _time_runs(ctx, executions, [mon]))
        not_ecf = sum(1 for r in mon.reports if not r.ecf)
    return Overhead(executions, bare, monitored, not_ecf)
