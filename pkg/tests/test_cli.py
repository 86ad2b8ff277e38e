import pytest

from travalloc import cli, oracle


def test_memory_command(capsys, tmp_path):
    out = tmp_path / "m.csv"
    assert cli.main(["memory", "--objects", "3000", "--bin-size", "1000", "--csv", str(out)]) == 0
    text = capsys.readouterr().out
    assert "overhead vs payload-only" in text
    assert out.read_text().startswith("benchmark,variant,")


@pytest.mark.parametrize("cmd", [
    ["alloc", "--objects", "500", "--bin-size", "100", "--reps", "1"],
    ["iter", "--objects", "500", "--bin-size", "100", "--reps", "1", "--gap-percent", "10"],
    ["mt-alloc", "--objects", "500", "--bin-size", "100", "--reps", "1", "--threads", "2"],
    ["par-iter", "--objects", "500", "--bin-size", "100", "--reps", "1", "--threads", "2"],
])
def test_bench_commands(cmd, capsys):
    assert cli.main(cmd) == 0
    assert cmd[0] in capsys.readouterr().out


def test_fuzz_pass_and_bad_args(capsys):
    assert cli.main(["fuzz", "--objects", "300", "--bin-size", "4"]) == 0
    assert "pass" in capsys.readouterr().out
    assert cli.main(["memory", "--objects", "0"]) == 2


def test_unwritable_csv_exits_nonzero(tmp_path):
    target = tmp_path / "missing" / "x.csv"
    assert cli.main(["memory", "--objects", "100", "--bin-size", "100", "--csv", str(target)]) == 2


def test_replay_trace_file(tmp_path, capsys):
    path = tmp_path / "t.txt"
    path.write_text(oracle.format_trace([("A",), ("A",), ("F", 0), ("A",)]))
    assert cli.main(["fuzz", "--replay", str(path), "--bin-size", "2"]) == 0
    # a trace freeing more objects than exist is bad input, not a divergence
    path.write_text("F 3\n")
    assert cli.main(["fuzz", "--replay", str(path), "--bin-size", "2"]) == 2
    path.write_text("A\nQ\n")
    assert cli.main(["fuzz", "--replay", str(path), "--bin-size", "2"]) == 2


def test_replay_divergence_exit_code(tmp_path, monkeypatch):
    path = tmp_path / "t.txt"
    path.write_text("A\n")
    monkeypatch.setattr(oracle, "replay", lambda ops, cap: ("diverged", ops))
    assert cli.main(["fuzz", "--replay", str(path), "--bin-size", "2"]) == 1


def test_divergence_exit_code(monkeypatch, tmp_path):
    # a failing verdict must map to exit status 1 and emit the trace
    bad = oracle.FuzzVerdict(False, "sequential", 0, 1, 4, failure="boom", trace=[("A",)])
    monkeypatch.setattr(oracle, "fuzz_sequential", lambda *a, **k: bad)
    out = tmp_path / "trace.txt"
    assert cli.main(["fuzz", "--trace-out", str(out)]) == 1
    assert out.read_text() == "A\n"
