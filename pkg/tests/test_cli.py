import csv
import json
import subprocess
import sys

import pytest

from mechsim.cli import main
from mechsim.scenario_io import golden_path


@pytest.fixture
def golden_file(tmp_path):
    p = tmp_path / "golden.json"
    p.write_text(golden_path().read_text())
    return p


def edited(tmp_path, fn, name="edited.json"):
    doc = json.loads(golden_path().read_text())
    fn(doc)
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_validate_golden(golden_file, capsys):
    assert main(["validate", str(golden_file)]) == 0
    assert "OK" in capsys.readouterr().out


def test_validate_bad_row(tmp_path, capsys):
    def bend(doc):
        doc["transitions"][1]["3,0"] = [0.5, 0.4, 0.0]
    assert main(["validate", str(edited(tmp_path, bend))]) == 1
    out = capsys.readouterr().out
    lines = [l for l in out.splitlines() if l.startswith("VIOLATION:")]
    assert len(lines) == 1
    assert "agent 1" in lines[0] and "allocation 3" in lines[0] and "type 0" in lines[0]


def test_validate_truncated(tmp_path, capsys):
    p = tmp_path / "cut.json"
    p.write_text(golden_path().read_text()[:200])
    assert main(["validate", str(p)]) == 2
    assert "line" in capsys.readouterr().err


def test_missing_file_is_usage_error(tmp_path):
    assert main(["validate", str(tmp_path / "nope.json")]) == 2


def test_unknown_command_exits_two():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate", "x"])
    assert exc.value.code == 2


def test_audit_golden(golden_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["audit", str(golden_file), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    lines = text.splitlines()
    assert lines[1].split() == ["GDPM", "✓", "✓", "✓", "×", "×"]
    assert lines[2].split() == ["CONST", "×", "×", "×", "✓", "✓"]
    assert "162 EPIC comparisons" in text
    assert len(list(out.iterdir())) == 6


def test_audit_single_mechanism(golden_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["audit", str(golden_file), "--mechanism", "gdpm", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "GDPM" in text and "CONST" not in text
    assert sorted(p.name for p in out.iterdir()) == [
        "gdpm_payments.csv", "gdpm_utilities.csv", "gdpm_verdicts.csv"]


def test_audit_zero_scenario_all_pass(tmp_path, capsys):
    def zero(doc):
        doc["values"] = {"tables": {}}
    assert main(["audit", str(edited(tmp_path, zero)), "--out", str(tmp_path / "o")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert "×" not in "\n".join(lines[:3])


def test_const_p_override(golden_file, tmp_path):
    out = tmp_path / "o"
    assert main(["audit", str(golden_file), "--mechanism", "const", "--const-p", "0.3",
                 "--out", str(out)]) == 0
    pays = rows(out / "const_payments.csv")
    assert any(r["p_1"] == "0.29999999999999999" for r in pays)


def test_const_without_payment_is_usage_error(tmp_path):
    p = edited(tmp_path, lambda d: d.pop("const_payment"))
    assert main(["audit", str(p), "--mechanism", "const", "--out", str(tmp_path / "o")]) == 2


def test_solver_cap_exits_three(golden_file, tmp_path, capsys, monkeypatch):
    import mechsim.cli as cli
    from mechsim.welfare import solve_all

    monkeypatch.setattr(cli, "solve_all", lambda s, tol: solve_all(s, tol=tol, max_iter=2))
    assert main(["solve", str(golden_file), "--out", str(tmp_path / "o")]) == 3
    assert "solver failure in W" in capsys.readouterr().err


def test_solve_writes_welfare(golden_file, tmp_path):
    out = tmp_path / "o"
    assert main(["solve", str(golden_file), "--out", str(out)]) == 0
    assert len(rows(out / "welfare.csv")) == 27


def test_simulate_one_round(golden_file, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["simulate", str(golden_file), "--seed", "7", "--horizon", "1", "--out", str(out)]) == 0
    assert len(rows(out / "trace.csv")) == 1
    text = capsys.readouterr().out
    assert "truncation bound" in text and "agent 2" in text


def test_simulate_same_seed_same_file(golden_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["simulate", str(golden_file), "--seed", "3", "--horizon", "30", "--out", str(d)]) == 0
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()


def test_simulate_deviation_flag(golden_file, tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", str(golden_file), "--horizon", "4", "--deviate",
                 "agent=1,round=0,type=H", "--out", str(out)]) == 0
    trace = rows(out / "trace.csv")
    true, rep = trace[0]["true_profile"].split("|"), trace[0]["reported_profile"].split("|")
    assert [i for i in range(3) if true[i] != rep[i]] == [1]
    assert rep[1] == "H"
    assert all(r["true_profile"] == r["reported_profile"] for r in trace[1:])


def test_simulate_episodes_summary(golden_file, tmp_path, capsys):
    assert main(["simulate", str(golden_file), "--episodes", "200", "--horizon", "20",
                 "--initial", "H,M,L", "--out", str(tmp_path / "o")]) == 0
    assert "mean over 200 episodes" in capsys.readouterr().out


@pytest.mark.parametrize("flags", [
    ["--mechanism", "all"],
    ["--horizon", "0"],
    ["--deviate", "agent=7,type=H"],
    ["--deviate", "agent=1,type=Q"],
    ["--deviate", "agent=1"],
    ["--deviate", "agent=1,round=99,type=H"],
    ["--initial", "H,M"],
])
def test_simulate_bad_flags_exit_two(golden_file, tmp_path, flags):
    assert main(["simulate", str(golden_file), "--out", str(tmp_path / "o")] + flags) == 2


def test_report_writes_everything(golden_file, tmp_path):
    out = tmp_path / "r"
    assert main(["report", str(golden_file), "--out", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"welfare.csv", "summary.txt", "gdpm_verdicts.csv", "const_payments.csv"} <= names


def test_invalid_scenario_refused_by_audit(tmp_path, capsys):
    p = edited(tmp_path, lambda d: d.__setitem__("discount", 1.2))
    assert main(["audit", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "VIOLATION: discount" in capsys.readouterr().err


def test_module_entry_point(golden_file):
    done = subprocess.run([sys.executable, "-m", "mechsim", "validate", str(golden_file)],
                          capture_output=True, text=True)
    assert done.returncode == 0, done.stderr
