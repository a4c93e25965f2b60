import hashlib
import json
import os
import subprocess
import sys

import jsonschema
import pytest

from heatlab.cli import config_hash, load_schema, main


def _write(tmp_path, name, cfg):
    p = tmp_path / name
    p.write_text(cfg if isinstance(cfg, str) else json.dumps(cfg))
    return p


def _run(tmp_path, cfg, *extra, name="cfg.json"):
    path = _write(tmp_path, name, cfg)
    out = tmp_path / "out"
    return main(["run", "--config", str(path), "--out", str(out), *extra]), out


SMALL = {"grid": {"n": 2, "N": 8}, "factor": {"kind": "sinusoidal", "amplitude": 0.1}}


def test_doob_flat(tmp_path):
    cfg = {"grid": {"n": 3, "N": 12}, "factor": {"kind": "constant", "amplitude": 0.0}, "experiment": "doob"}
    code, out = _run(tmp_path, cfg)
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    jsonschema.validate(report, load_schema("report"))
    assert report["experiments"][0]["metrics"]["doob_residual"] <= 1e-11
    assert report["config_hash"] == config_hash(report["config"])
    canon = json.dumps(report["config"], sort_keys=True, separators=(",", ":"))
    assert report["config_hash"] == hashlib.sha256(canon.encode()).hexdigest()


def test_dyson_config(tmp_path):
    cfg = {
        "grid": {"n": 3, "N": 12},
        "factor": {"kind": "sinusoidal", "amplitude": 0.1},
        "experiment": "dyson",
        "numeric": {"K": 12, "M": 64, "Q": 16, "t": 0.05},
    }
    code, out = _run(tmp_path, cfg)
    assert code == 0
    exp = json.loads((out / "report.json").read_text())["experiments"][0]
    assert exp["metrics"]["error_vs_oracle"] <= 1e-6
    assert exp["reports"][0]["details"]["error_vs_oracle"] <= 1e-6
    # threshold sits past the admissible range |phi| < 1 for this smooth factor
    assert exp["metrics"]["divergence_threshold"] > 1.0


@pytest.mark.parametrize(
    "cfg",
    [
        '{"grid": {"n": 2, "N": 8}, "experiment": ',
        {**SMALL, "experiment": "doob", "colour": "blue"},
        {**SMALL, "experiment": "doob", "numeric": {"Kay": 3}},
        {"grid": {"n": 3, "N": 13}, "experiment": "doob"},
        {**SMALL, "experiment": "teleport"},
        {"grid": {"n": 2, "N": 8}, "factor": {"amplitude": 1.5}, "experiment": "doob"},
        {"grid": {"n": 2, "N": 8}, "experiment": "envelope", "numeric": {"window": "continuum"}},
    ],
    ids=["malformed", "unknown-top", "unknown-numeric", "too-many-nodes", "bad-experiment", "bad-amplitude", "empty-window"],
)
def test_config_errors(tmp_path, capsys, cfg):
    code, out = _run(tmp_path, cfg)
    assert code == 3
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("heatlab: error=config reason=")
    # nothing written, not even a temporary file
    assert not out.exists() or list(out.iterdir()) == []


def test_missing_config_file(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 3
    assert "error=config" in capsys.readouterr().err


def test_violation_exit_code(tmp_path, capsys):
    cfg = {**SMALL, "experiment": "dyson", "numeric": {"t": 0.02, "dyson_tolerance": 1e-14, "K": 1}}
    code, out = _run(tmp_path, cfg)
    assert code == 2
    line = capsys.readouterr().err.strip()
    assert line.startswith("heatlab: error=violation reason=dyson.error_vs_oracle=")
    assert json.loads((out / "report.json").read_text())["status"] == "violation"


def test_determinism_and_seed_override(tmp_path):
    cfg = {**SMALL, "experiment": "all", "numeric": {"seed": 3, "t": 0.02}, "output": {"csv_path": "rows.csv"}}
    code, out = _run(tmp_path, cfg)
    assert code == 0
    first = (out / "report.json").read_bytes()
    rows = (out / "rows.csv").read_bytes()
    code, out = _run(tmp_path, cfg)
    assert (out / "report.json").read_bytes() == first
    assert (out / "rows.csv").read_bytes() == rows
    code, out = _run(tmp_path, cfg, "--seed", "11")
    second = json.loads((out / "report.json").read_text())
    assert second["seed"] == 11
    assert second["config_hash"] != json.loads(first)["config_hash"]
    assert b"elapsed" not in first and b"seconds" not in first


def test_output_path_and_threads(tmp_path, monkeypatch):
    monkeypatch.setenv("HEATLAB_THREADS", "1")
    cfg = {**SMALL, "experiment": "doob", "output": {"json_path": "nested/doob.json"}}
    code, out = _run(tmp_path, cfg)
    assert code == 0
    assert (out / "nested" / "doob.json").exists()


def test_bad_command_line(capsys):
    assert main(["run"]) == 3
    assert main(["run", "--config", "x.json", "--seed", "-4"]) == 3
    assert "error=config" in capsys.readouterr().err


def test_console_script(tmp_path):
    path = _write(tmp_path, "c.json", {**SMALL, "experiment": "doob"})
    env = {**os.environ, "HEATLAB_THREADS": "1"}
    proc = subprocess.run(
        [sys.executable, "-m", "heatlab.cli", "run", "--config", str(path), "--out", str(tmp_path)],
        capture_output=True,
        text=True,
        env=env,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "report.json").exists()


def test_schema_rejects_and_documents_defaults():
    schema = load_schema("config")
    numeric = schema["properties"]["numeric"]["properties"]
    assert all("default" in v for v in numeric.values())
    assert schema["additionalProperties"] is False
