import json
import subprocess
import sys

import pytest

from chronocl.cli import main
from chronocl.config import save_config

from test_runner import tiny


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    save_config(tiny("Replay"), p)
    return p


def last_json(capsys):
    return json.loads(capsys.readouterr().out)


def test_simulate_then_analyze_and_report(tmp_path, cfg_file, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(cfg_file), "--seed", "4", "--out", str(out)]) == 0
    info = last_json(capsys)
    assert info["run_id"].startswith("Replay-mb2-s4-")
    assert main(["analyze", "--results", str(out), "--min-eval-auc", "0"]) == 0
    doc = last_json(capsys)
    assert {"t_max", "t_decay", "t_comp", "fwt_mean", "fwt_std", "eligible_pairs", "excluded_pairs"} <= set(doc)
    before = (out / "summary.csv").read_bytes()
    assert main(["report", "--results", str(out), "--format", "csv"]) == 0
    assert (out / "summary.csv").read_bytes() == before


def test_baseline(tmp_path, cfg_file, capsys):
    assert main(["baseline", "--config", str(cfg_file), "--out", str(tmp_path / "b")]) == 0
    assert last_json(capsys)["samples_processed"] == 30 * 16 * 6


def test_sweep_grid(tmp_path, capsys):
    base = tiny().to_dict()
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"master_seed": 3, "base": base, "strategies": ["Naive", "EWC"], "n_seeds": 2}))
    assert main(["sweep", "--grid", str(grid), "--out", str(tmp_path / "s"), "--baseline"]) == 0
    assert last_json(capsys) == {"runs": 6, "failures": 0, "out": str(tmp_path / "s")}
    assert (tmp_path / "s" / "c_auc_FullRetraining.csv").exists()


def test_init_config_is_loadable(tmp_path, capsys):
    assert main(["init-config", "--strategy", "ESMER", "--monthly-batches", "20"]) == 0
    doc = last_json(capsys)
    assert doc["strategy"]["kind"] == "ESMER" and doc["execution"]["monthly_batches"] == 20


@pytest.mark.parametrize("argv", [
    ["simulate", "--config", "/nonexistent.json", "--out", "x"],
    ["analyze", "--results", "/nonexistent"],
    ["report", "--results", "/nonexistent", "--format", "csv"],
])
def test_errors_are_json_on_stderr(argv, capsys):
    assert main(argv) == 1
    err = json.loads(capsys.readouterr().err)
    assert set(err) == {"error", "message"}


def test_bad_config_content(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"strategy": {"kind": "Bogus"}}))
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path)]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "ConfigError"


def test_unsupported_format(tmp_path, cfg_file, capsys):
    main(["simulate", "--config", str(cfg_file), "--out", str(tmp_path)])
    capsys.readouterr()
    assert main(["report", "--results", str(tmp_path), "--format", "xlsx"]) == 1


def test_module_entry_point(cfg_file, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "chronocl", "simulate", "--config", str(cfg_file), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    bad = subprocess.run([sys.executable, "-m", "chronocl", "analyze", "--results", str(tmp_path / "none")],
                         capture_output=True, text=True)
    assert bad.returncode != 0 and json.loads(bad.stderr)["error"] == "FileNotFoundError"
