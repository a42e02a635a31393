import json

from ecf.bench import BENCH_HEADER, bench_grid, chain_workload, monitor_overhead, rows_csv, run_chain


def test_empty_workload():
    row = run_chain(0, 1000, repeats=1)
    assert (row.m, row.seconds, row.verdict) == (0, 0.0, "ECF")


def test_workload_shape():
    mon = chain_workload(4, 40, 3)
    invs = [i for i in mon.invocations if i.obj == "O"]
    assert len(invs) == 4
    row = run_chain(4, 40, repeats=1)
    assert 36 <= row.m <= 44 and row.memory >= row.m


def test_single_invocation_is_ecf():
    row = run_chain(1, 500, repeats=1)
    assert row.verdict == "ECF" and row.m == 500


def test_time_roughly_linear_in_segments():
    small = run_chain(10, 2000, repeats=3)
    large = run_chain(10, 4000, repeats=3)
    assert large.seconds / small.seconds <= 4.5


def test_csv_and_overhead():
    text = rows_csv(bench_grid([1, 2], [10], repeats=1))
    lines = text.splitlines()
    assert lines[0].split(",") == BENCH_HEADER and len(lines) == 3
    ov = monitor_overhead(200, repeats=1)
    assert ov.not_ecf == 0 and ov.ratio > 0
    assert json.loads(json.dumps(ov.to_json()))["executions"] == 200
