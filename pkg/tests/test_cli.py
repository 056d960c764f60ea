import json
import subprocess
import sys

import pytest

from slicesim.builtins import exp1_slicing_control
from slicesim.cli import main
from slicesim.scenario import dump_scenario


@pytest.fixture
def short_exp1(tmp_path):
    p = tmp_path / "exp1.json"
    p.write_bytes(dump_scenario(exp1_slicing_control(duration_s=2.0)))
    return p


def test_validate_prints_normalized(short_exp1, capsys):
    assert main(["validate", "--scenario", str(short_exp1)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["name"] == "exp1_slicing_control" and out["numerology"]["total_prbs"] == 106


def test_validate_rejects(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("")
    assert main(["validate", "--scenario", str(p)]) == 2
    assert "empty document" in capsys.readouterr().err


def test_missing_file(tmp_path, capsys):
    assert main(["validate", "--scenario", str(tmp_path / "nope.json")]) == 3


def test_run_verify_report(short_exp1, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--scenario", str(short_exp1), "--out", str(out), "--seed", "3"]) == 0
    assert json.loads((out / "summary.json").read_text())["seed"] == 3
    assert main(["verify", "--out", str(out)]) == 0
    assert main(["report", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "control periods" in text and "invariant violations: 0" in text
    assert json.loads((out / "report.json").read_text())["invariant_violations"] == 0


def test_builtin_print_scenario(capsys):
    assert main(["builtin", "exp2", "--print-scenario", "--prbs", "273"]) == 0
    assert json.loads(capsys.readouterr().out)["numerology"]["total_prbs"] == 273


def test_builtin_needs_out(capsys):
    assert main(["builtin", "exp1"]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "slicesim", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "builtin" in res.stdout
