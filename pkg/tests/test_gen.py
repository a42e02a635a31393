from ecf.gen import CHECKED, depth_two_traces, random_scenario
from ecf.interp import project_trace
from ecf.oracle import invocations_of


def test_seed_determinism():
    a, b = random_scenario(17), random_scenario(17)
    assert a.source == b.source
    assert [e.to_json() for t in a.traces for e in t.events] == \
        [e.to_json() for t in b.traces for e in t.events]


def test_bounds_hold_over_many_seeds():
    for seed in range(60):
        g = random_scenario(seed)
        assert 1 <= len(g.traces) <= 2
        assert all(len(invocations_of(t, CHECKED)) <= 4 for t in g.traces)


def test_depth_two_traces_are_shallow():
    traces = depth_two_traces(0, 40)
    assert len(traces) == 40
    for _, t in traces:
        open_, deepest = 0, 0
        for e in project_trace(t, CHECKED).events:
            open_ += {"enter": 1, "return": -1}.get(e.kind, 0)
            deepest = max(deepest, open_)
        assert deepest <= 2


def test_generated_scenarios_exercise_callbacks():
    nested = sum(1 for s in range(40) for t in random_scenario(s).traces
                 if len(invocations_of(t, CHECKED)) > 1)
    assert nested > 5
