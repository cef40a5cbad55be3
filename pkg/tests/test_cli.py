import json
import os
import subprocess
import sys

import pytest

from catgrad import cli
from catgrad.harness import read_metrics
from catgrad.harness.config import PRESETS, dump_config, preset
from catgrad.selftest import CORRUPT_ENV


@pytest.mark.parametrize("argv", [
    [],
    ["bench-exact", "--format", "xml"],
    ["opt-synth", "--bogus"],
    ["opt-synth", "--seed", "-3"],
    ["opt-synth", "--iters", "many"],
    ["opt-synth", "--config", "x.ini", "--preset", "opt-synth"],
    ["opt-synth", "-v", "-q"],
    ["opt-synth", "--preset", "nesy"],
    ["opt-synth", "--estimators", "indecater,nope"],
    ["opt-synth", "--config", "/nonexistent/x.ini"],
    ["selftest", "--suite", "nope"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert cli.main(argv) == 2
    assert capsys.readouterr().err


def test_help_exits_0(capsys):
    assert cli.main(["--help"]) == 0
    assert "bench-exact" in capsys.readouterr().out


def test_overrides_are_applied():
    args = cli.build_parser().parse_args(["opt-synth", "--seed", "7", "--iters", "100",
                                          "--estimators", "gs,indecater", "--format", "json"])
    cfg = cli.resolve_config(args)
    assert (cfg.seed, cfg.iterations, cfg.format) == (7, 100, "json")
    assert list(cfg.arms) == ["gs", "indecater"]


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_runs(name, tmp_path, capsys):
    command = preset(name).experiment
    out = tmp_path / "m.csv"
    argv = [command, "--preset", name, "--iters", "1", "--out", str(out)]
    if command == "bench-exact":
        argv[-3:-2] = ["2"]
    assert cli.main(argv) == 0
    text = capsys.readouterr().out
    assert "arm" in text and str(out) in text
    assert read_metrics(out).steps


def test_config_file(tmp_path, capsys):
    cfg = preset("opt-synth").select_arms(["indecater"])
    cfg.task["D"] = 10
    path = tmp_path / "run.ini"
    path.write_text(dump_config(cfg))
    out = tmp_path / "r.json"
    assert cli.main(["opt-synth", "--config", str(path), "--iters", "20", "--out", str(out),
                     "--format", "json", "-q"]) == 0
    assert capsys.readouterr().out == ""
    data = json.loads(out.read_text())
    assert data["config"]["task"]["D"] == 10 and data["steps"][-1]["step"] == 20


def test_config_for_wrong_experiment(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(dump_config(preset("nesy")))
    assert cli.main(["opt-synth", "--config", str(path)]) == 2


def test_unwritable_output_fails(tmp_path):
    (tmp_path / "f").write_text("")
    assert cli.main(["opt-synth", "--iters", "1", "--out", str(tmp_path / "f" / "m.csv")]) == 1


def test_nesy_reports_rejected_arm(tmp_path, capsys):
    cfg = preset("nesy")
    cfg.arms["gs"] = {"variant": "gumbel_softmax"}
    path = tmp_path / "n.ini"
    path.write_text(dump_config(cfg))
    assert cli.main(["nesy", "--config", str(path), "--iters", "1"]) == 0
    assert "zero derivative" in capsys.readouterr().out


def test_selftest_single_suite(capsys):
    assert cli.main(["selftest", "--suite", "autodiff"]) == 0
    assert "PASS  autodiff" in capsys.readouterr().out


@pytest.mark.slow
def test_selftest_pristine_and_corrupted(monkeypatch):
    monkeypatch.delenv(CORRUPT_ENV, raising=False)
    ok = subprocess.run([sys.executable, "-m", "catgrad.cli", "selftest"],
                        capture_output=True, text=True)
    assert ok.returncode == 0, ok.stdout + ok.stderr
    bad = subprocess.run([sys.executable, "-m", "catgrad.cli", "selftest"],
                         capture_output=True, text=True, env={**os.environ, CORRUPT_ENV: "1"})
    assert bad.returncode == 1
    assert "FAIL  additive-exactness" in bad.stdout


def test_selftest_corrupt_flag(capsys):
    code = cli.main(["selftest", "--corrupt", "--suite", "additive-exactness",
                     "--suite", "autodiff"])
    out = capsys.readouterr().out
    assert code == 1
    assert "FAIL  additive-exactness" in out and "PASS  autodiff" in out
