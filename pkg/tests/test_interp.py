import pytest
from hypothesis import given, settings, strategies as st

from ecf.corpus import load_corpus, run_entry_scenario
from ecf.decider import synthesize_stubs
from ecf.gen import random_scenario
from ecf.interp import (
    BudgetExceeded, ExecState, Interpreter, MgcCall, RuntimeFault, Scenario,
    TopCall, havoc_step, new_frame, object_store, project_trace, read_location,
    run_complete_execution, run_mgc, run_nocb, run_scenario, step,
)
from ecf.lang import CodeContext, parse_contracts


def ctx_of(src):
    return CodeContext(parse_contracts(src))


def start(ctx, target, args=(), method=None, store=None):
    st_ = ExecState([], store or {})
    st_.stack.append(new_frame(ctx, target, method, args))
    return st_


# ---------------------------------------------------------------- single steps

def test_assign_step():
    ctx = ctx_of("contract C { enter { var x; x := 5; return } }")
    s = start(ctx, "C")
    s, ev = step(s, ctx)
    assert s.top.env["x"] == 5
    assert ev.kind == "assign" and ev.cmd == "x := 5" and ev.obj == "C"


def test_call_step_pushes_frame_with_argument():
    ctx = ctx_of("contract A { enter { var x; x := call B(7) } } contract B { enter { skip } }")
    s = start(ctx, "A")
    s, ev = step(s, ctx)
    assert s.depth == 2 and s.top.obj == "B" and s.top.env["arg"] == 7
    assert ev.kind == "enter" and ev.obj == "B" and ev.peer == "A"


def test_return_transfers_ret_to_caller():
    ctx = ctx_of("contract A { enter { var x; x := call B(7) } } "
                 "contract B { enter { ret := 3; return } }")
    s = start(ctx, "A")
    for _ in range(3):  # call, ret := 3, return
        s, ev = step(s, ctx)
    assert ev.kind == "return" and s.depth == 1 and s.top.env["res"] == 3
    s, ev = step(s, ctx)
    assert s.top.env["x"] == 3 and ev.cmd == "x := res"


def test_unset_local_reads_zero_and_undeclared_faults():
    ctx = ctx_of("contract C { enter { var x, y; x := y + 1 } }")
    _, t = run_complete_execution(ctx, {}, TopCall("C"))
    assert not t.aborted
    s = start(ctx, "C")
    s.top.env.clear()
    s, _ = step(s, ctx)
    assert s.top.env["x"] == 1


def test_dynamic_call_needs_object_value():
    ctx = ctx_of("contract C { method m(o) { var r; r := call o.f() } }")
    with pytest.raises(RuntimeFault):
        run_complete_execution(ctx, {}, TopCall("C", (99,), "m"))


# ---------------------------------------------------------------- havoc

def test_havoc_step_sets_result_without_frame():
    ctx = ctx_of("contract A { field f; enter { var x; x := call B(7) } } contract B { enter { skip } }")
    s = start(ctx, "A", store={"A": {"f": 4}})
    s = havoc_step(s, 0, ctx)
    assert s.depth == 1 and s.store == {"A": {"f": 4}}
    s, _ = step(s, ctx)
    assert s.top.env["x"] == 0


def test_havoc_with_different_values_differs_only_in_target():
    ctx = ctx_of("contract A { enter { var x; x := call B(7) } } contract B { enter { skip } }")
    envs = []
    for v in (1, 2):
        s = havoc_step(start(ctx, "A"), v, ctx)
        s, _ = step(s, ctx)
        envs.append(dict(s.top.env))
    diff = {k for k in envs[0] if envs[0][k] != envs[1].get(k)}
    assert diff == {"x", "res"}


def test_havoc_requires_pending_call():
    ctx = ctx_of("contract A { enter { skip } }")
    with pytest.raises(RuntimeFault):
        havoc_step(start(ctx, "A"), 0, ctx)


def test_nocb_payment_leaves_dao_state(fixed_ctx):
    store = {"DAO": {"credit": {fixed_ctx.object_id("Attacker"): 100}, "balance": 100}}
    for v in (0, 1, 100):
        new, t, used = run_nocb("DAO", fixed_ctx, store,
                                MgcCall("withdrawAll", (fixed_ctx.object_id("Attacker"),), (v,)))
        assert used == 1
        assert {e.obj for e in t.events} == {"DAO"}
        assert new["DAO"]["balance"] == 0


# ---------------------------------------------------------------- complete executions

def dao_store(ctx, g, a, b):
    return {"DAO": {"credit": {ctx.object_id("GoodClient"): g, ctx.object_id("Attacker"): a},
                    "balance": b},
            "Attacker": {"dao": ctx.object_id("DAO")}}


def test_attack_from_explicit_state(attack_ctx):
    store, t = run_complete_execution(attack_ctx, dao_store(attack_ctx, 100, 100, 200),
                                      TopCall("DAO", (attack_ctx.object_id("Attacker"),), "withdrawAll"))
    a = attack_ctx.object_id("Attacker")
    assert read_location(store, "DAO", "credit", a) == 0
    assert read_location(store, "DAO", "balance") == 0
    assert read_location(store, "Attacker", "attackerBalance") == 200


def test_fixed_attack_from_explicit_state(fixed_ctx):
    store, _ = run_complete_execution(fixed_ctx, dao_store(fixed_ctx, 100, 100, 200),
                                      TopCall("DAO", (fixed_ctx.object_id("Attacker"),), "withdrawAll"))
    assert read_location(store, "DAO", "balance") == 100
    assert read_location(store, "Attacker", "attackerBalance") == 100
    assert read_location(store, "DAO", "credit", fixed_ctx.object_id("Attacker")) == 0


def test_identity_body():
    ctx = ctx_of("contract C { field f; enter { skip; return } }")
    store, t = run_complete_execution(ctx, {"C": {"f": 3}}, TopCall("C"))
    assert store == {"C": {"f": 3}} == t.final_store == t.initial_store


def test_assert_failure_reverts():
    ctx = ctx_of("contract C { field f; enter { var v; v := 1; f := v; assert v = 2 } }")
    store, t = Interpreter(ctx).run({"C": {"f": 7}}, TopCall("C"))
    assert t.aborted and store == {"C": {"f": 7}} and t.final_store == t.initial_store
    assert "assert" in t.abort_reason


def test_step_budget():
    ctx = ctx_of("contract C { enter { while 1 { skip } } }")
    with pytest.raises(BudgetExceeded):
        run_complete_execution(ctx, {}, TopCall("C"), budget=1000)


def test_run_scenario_sets_up_attack_state(attack_entry):
    s = attack_entry.scenario
    pre = Scenario(s.context, s.initial_store, s.calls[:-1])
    store, traces = run_scenario(pre)
    ctx = s.context
    assert store["DAO"] == {"credit": {ctx.object_id("GoodClient"): 100,
                                       ctx.object_id("Attacker"): 100}, "balance": 200}
    assert len(traces) == 4


def test_empty_call_list():
    ctx = ctx_of("contract C { field f; enter { skip } }")
    store, traces = run_scenario(Scenario(ctx, {"C": {"f": 1}}, []))
    assert store == {"C": {"f": 1}} and traces == []


def test_independent_contracts_commute():
    ctx = ctx_of("contract A { field a; enter { var v; v := arg; a := v } } "
                 "contract B { field b; enter { var v; v := arg * 2; b := v } }")
    calls = [TopCall("A", (3,)), TopCall("B", (5,))]
    s1, _ = run_scenario(Scenario(ctx, {}, calls))
    s2, _ = run_scenario(Scenario(ctx, {}, calls[::-1]))
    assert s1 == s2


def test_modular_mode_uses_havoc(attack_ctx):
    s = Scenario(attack_ctx, dao_store(attack_ctx, 0, 100, 100),
                 [TopCall("DAO", (attack_ctx.object_id("Attacker"),), "withdrawAll")],
                 mode="modular", havoc_domain=(0,))
    store, (t,) = run_scenario(s)
    assert {e.obj for e in t.events} == {"DAO"}
    assert store["DAO"]["balance"] == 0


def test_modular_mode_needs_domain(attack_ctx):
    with pytest.raises(ValueError):
        Scenario(attack_ctx, {}, [], mode="modular")


# ---------------------------------------------------------------- trace properties

def all_corpus_traces():
    for e in load_corpus():
        yield from run_entry_scenario(e.scenario).traces


def test_determinism(attack_entry):
    a = run_entry_scenario(attack_entry.scenario).traces
    b = run_entry_scenario(attack_entry.scenario).traces
    assert [[x.to_json() for x in t.events] for t in a] == [[x.to_json() for x in t.events] for t in b]


def test_field_events_belong_to_owner():
    for e in load_corpus():
        ctx = e.scenario.context
        for t in run_entry_scenario(e.scenario).traces:
            for ev in t.events:
                if ev.field is not None:
                    assert ev.field in ctx[ev.obj].field_map


def test_depth_discipline():
    for t in all_corpus_traces():
        depth = 0
        for j, ev in enumerate(t.events, 1):
            assert ev.i == j
            delta = {"enter": 1, "return": -1}.get(ev.kind, 0)
            assert ev.depth == depth + delta >= 0
            depth = ev.depth
        if not t.aborted:
            assert depth == 0


def test_projection_is_filtering(attack_trace):
    p = project_trace(attack_trace, "DAO")
    assert p.events == [e for e in attack_trace.events if e.obj == "DAO"]
    assert project_trace(p, "DAO").events == p.events
    assert project_trace(attack_trace, "Nobody").events == []


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_projection_on_random_scenarios(seed):
    g = random_scenario(seed)
    for t in g.traces:
        for o in t.objects():
            assert project_trace(t, o).events == [e for e in t.events if e.obj == o]


# ---------------------------------------------------------------- most general client

def test_mgc_deposit_then_withdraw(fixed_ctx):
    a = fixed_ctx.object_id("Attacker")
    init = {"DAO": {"balance": 50}}
    store, t = run_mgc("DAO", fixed_ctx, init,
                       [MgcCall("deposit", (a, 100)), MgcCall("withdrawAll", (a,), (0,))])
    assert store["DAO"]["balance"] == 50 and store["DAO"]["credit"][a] == 0
    assert {e.obj for e in t.events} == {"DAO"}
    assert max(e.depth for e in t.events) == 1


def test_mgc_empty_schedule(fixed_ctx):
    store, t = run_mgc("DAO", fixed_ctx, {"DAO": {"balance": 5}}, [])
    assert store == {"DAO": {"balance": 5}} and t.events == []


def test_mgc_covers_fixed_attack_states(fixed_entry, fixed_run):
    ctx = fixed_entry.scenario.context
    values = [0, 100, 200]
    objs = [ctx.object_id(n) for n in ("Attacker", "GoodClient")]
    calls = [MgcCall("deposit", (o, v)) for o in objs for v in values]
    calls += [MgcCall("withdrawAll", (o,), (0,)) for o in objs]

    def freeze(s):
        d = object_store(s, "DAO")
        return (d.get("balance", 0), tuple(sorted(d.get("credit", {}).items())))

    targets = {freeze(q) for q in fixed_run.quiescent}
    frontier = {freeze({}): {}}
    seen = set(frontier)
    for _ in range(4):
        nxt = {}
        for store in frontier.values():
            for c in calls:
                new, _ = run_mgc("DAO", ctx, store, [c])
                key = freeze(new)
                if key not in seen:
                    seen.add(key)
                    nxt[key] = new
        frontier = nxt
    assert targets <= seen


def test_mgc_trace_has_a_concrete_context(fixed_ctx):
    a = fixed_ctx.object_id("Attacker")
    schedule = [MgcCall("deposit", (a, 100)), MgcCall("withdrawAll", (a,), (7,))]
    _, mtrace = run_mgc("DAO", fixed_ctx, {}, schedule)
    script = {"Attacker": [(7, [])]}
    stubs = synthesize_stubs(fixed_ctx["DAO"], ["Attacker"], script)
    ctx = CodeContext([fixed_ctx["DAO"]] + stubs)
    interp = Interpreter(ctx)
    store, events = {}, []
    for c in schedule:
        store, t = interp.run(store, TopCall("DAO", c.args, c.method))
        events.extend(t.events)

    def shape(evs):
        return [(e.kind, e.cmd, e.field, e.key, e.value) for e in evs if e.obj == "DAO"]

    assert shape(events) == shape(mtrace.events)
