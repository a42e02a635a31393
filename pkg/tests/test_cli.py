import json

from ecf.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_run_attack(capsys):
    code, out, _ = run(capsys, "run", "corpus/dao_attack.scenario.json")
    assert code == 0
    assert "DAO.balance = 0" in out and "Attacker.attackerBalance = 200" in out


def test_run_empty_echoes_store(capsys):
    code, out, _ = run(capsys, "run", "corpus/empty.scenario.json", "--format", "json")
    assert code == 0
    assert json.loads(out)["finalStore"] == {"DAO": {"balance": 5, "credit": {"2": 5}}} or \
        json.loads(out)["finalStore"]["DAO"]["balance"] == 5


def test_record_then_replay(capsys, tmp_path):
    rec, r1, r2 = tmp_path / "t.json", tmp_path / "a.json", tmp_path / "b.json"
    assert run(capsys, "run", "corpus/dao_attack", "--record", str(rec), "--report", str(r1))[0] == 0
    code, out, _ = run(capsys, "replay", str(rec), "--report", str(r2))
    assert code == 1 and "replay matches record" in out
    a, b = json.loads(r1.read_text()), json.loads(r2.read_text())
    assert b.pop("replayMatches") is True
    assert a == b


def test_replay_detects_divergence(capsys, tmp_path):
    rec = tmp_path / "t.json"
    run(capsys, "run", "corpus/dao_fixed_attack", "--record", str(rec))
    d = json.loads(rec.read_text())
    d["executions"][0]["events"][0]["cmd"] = "tampered"
    rec.write_text(json.dumps(d))
    assert run(capsys, "replay", str(rec))[0] == 5


def test_monitor_exit_codes(capsys):
    assert run(capsys, "monitor", "corpus/dao_attack")[0] == 1
    code, out, _ = run(capsys, "monitor", "corpus/dao_fixed_attack", "--format", "json")
    assert code == 0 and json.loads(out)["summary"]["notEcf"] == 0


def test_monitor_prevent_mode(capsys, attack_run):
    code, out, _ = run(capsys, "monitor", "corpus/dao_attack", "--mode", "prevent", "--format", "json")
    assert code == 1
    before = attack_run.quiescent[-2]["DAO"]
    dao = json.loads(out)["finalStore"]["DAO"]
    assert dao["balance"] == before["balance"] == 200
    assert {int(k): v for k, v in dao["credit"].items()} == before["credit"]


def test_monitor_callback_free_workload_with_overhead(capsys, tmp_path):
    calls = [{"target": "Counter", "method": "bump", "args": [i]} for i in range(1000)]
    (tmp_path / "c.pl").write_text(
        "contract Counter { field count; method bump(v) { var c; c := count; c := c + 1; count := c } }")
    (tmp_path / "s.json").write_text(json.dumps({"contracts": ["c.pl"], "calls": calls}))
    code, out, _ = run(capsys, "monitor", str(tmp_path / "s.json"), "--overhead", "--format", "json")
    doc = json.loads(out)
    assert code == 0 and doc["summary"]["executions"] == 1000
    assert doc["overhead"]["ratio"] > 0


def test_assert_abort_exit_code(capsys, tmp_path):
    (tmp_path / "c.pl").write_text("contract C { field x; method f(v) { assert v = 1; x := v } }")
    (tmp_path / "s.json").write_text(json.dumps(
        {"contracts": ["c.pl"], "calls": [{"target": "C", "method": "f", "args": [0]}]}))
    assert run(capsys, "run", str(tmp_path / "s.json"))[0] == 2


def test_budget_exit_code(capsys):
    assert run(capsys, "run", "corpus/tm_reduction_looping")[0] == 3
    assert run(capsys, "run", "corpus/dao_attack", "--budget", "5")[0] == 3


def test_oracle_command(capsys, tmp_path):
    rec, wit = tmp_path / "t.json", tmp_path / "w.json"
    run(capsys, "run", "corpus/dao_fixed_attack", "--record", str(rec))
    code, out, _ = run(capsys, "oracle", "--trace", str(rec), "--object", "DAO", "--format", "json",
                       "--witness", str(wit))
    assert code == 0
    last = json.loads(out)["executions"][-1]
    assert last["verdict"] == "ECF" and last["witnessOrder"] == ["DAO#1", "DAO#2"]
    assert json.loads(wit.read_text())["witnesses"][-1]["order"] == ["DAO#1", "DAO#2"]
    code, out, _ = run(capsys, "oracle", "--trace", str(rec), "--object", "DAO", "--fs",
                       "--domain", "0,100,200", "--execution", "5")
    assert code == 0 and "ECF" in out


def test_oracle_attack(capsys, tmp_path):
    rec = tmp_path / "t.json"
    run(capsys, "run", "corpus/dao_attack", "--record", str(rec))
    assert run(capsys, "oracle", "--trace", str(rec), "--object", "DAO")[0] == 1


def test_decide_commands(capsys, tmp_path):
    cex = tmp_path / "cex.json"
    code, out, _ = run(capsys, "decide", "dao_buggy", "--replay", "--counterexample", str(cex))
    assert code == 1 and "NotSECF_C" in out and "monitor on replay: NotECF" in out
    assert run(capsys, "replay", str(cex))[0] == 1
    code, out, _ = run(capsys, "decide", "dao_fixed", "--format", "json")
    assert code == 0 and json.loads(out)["verdict"] == "SECF_C"


def test_bench_csv(capsys):
    code, out, err = run(capsys, "bench", "--n", "0,2", "--m", "10,20", "--overhead", "50", "--repeats", "1")
    lines = out.strip().splitlines()
    assert code == 0 and lines[0] == "n,m,k,seconds,memory,verdict" and len(lines) == 5
    assert lines[1].startswith("0,0,")
    assert json.loads(err)["executions"] == 50


def test_corpus_command(capsys):
    code, out, _ = run(capsys, "corpus", "--parallel", "3")
    assert code == 0 and out.count("PASS") == out.count("\n")


def test_bad_input(capsys, tmp_path):
    assert run(capsys, "run", "no/such/thing")[0] == 64
    bad = tmp_path / "b.json"
    bad.write_text("{not json")
    assert run(capsys, "replay", str(bad))[0] == 64


def test_reports_are_deterministic(capsys):
    outs = {run(capsys, "monitor", "corpus/dao_attack", "--format", "json")[1] for _ in range(3)}
    assert len(outs) == 1


def test_corpus_dir_override(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("ECF_CORPUS_DIR", str(tmp_path))
    assert run(capsys, "run", "corpus/dao_attack")[0] == 64
