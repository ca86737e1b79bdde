import hashlib
import json
import subprocess
import sys

import pytest

from cdrtarget.cli import main

SMALL = {
    "seed": 3,
    "generator": {"n_villages": 8, "households_per_village": 90, "n_survey_up": 120,
                  "n_survey_nup": 200, "n_incomplete": 4, "n_no_phone": None, "n_matched": None,
                  "n_matched_up": None, "base_calls": 120, "base_texts": 100, "base_recharges": 8,
                  "network_intercept": 3.0},
    "models": {"outer_k": 5, "inner_k": 3, "families": ["logistic", "gradient_boosting"]},
    "bootstrap_b": 20,
    "order_draws": 5,
}


def _config(tmp, out="out", **extra):
    cfg = json.loads(json.dumps(SMALL))
    cfg["paths"] = {"output_dir": str(tmp / out)}
    cfg.update(extra)
    p = tmp / f"{out}.json"
    p.write_text(json.dumps(cfg))
    return p


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = _config(tmp)
    assert main(["reproduce", f"--config={cfg}"]) == 0
    return tmp, cfg


def test_reproduce_manifest(run, capsys):
    tmp, _ = run
    man = json.loads((tmp / "out" / "manifest.json").read_text())
    assert set(man["panels"]) == {"matched", "balanced", "full"}
    for panel in man["panels"].values():
        assert len(panel["methods"]) >= 4 and panel["reports"] >= 4
    assert set(man["stages"]) == {"simulate", "ingest", "extract", "wealth", "train",
                                  "evaluate", "cost"}
    stage = json.loads((tmp / "out" / "evaluate" / "manifest.json").read_text())
    assert stage["config_hash"] == man["config_hash"]
    assert all(len(h) == 64 for h in stage["outputs"].values())
    reports = json.loads((tmp / "out" / "evaluate" / "reports.json").read_text())
    matched = [r for r in reports if r["sample"] == "matched"]
    q = matched[0]["quota_count"]
    assert all(r["quota_count"] == q for r in matched)


def test_evaluate_rerun_is_byte_identical(run, capsys):
    tmp, cfg = run
    files = ["reports.json", "reports.csv", "overlap.json"]
    before = {f: _digest(tmp / "out" / "evaluate" / f) for f in files}
    assert main(["evaluate", f"--config={cfg}"]) == 0
    assert {f: _digest(tmp / "out" / "evaluate" / f) for f in files} == before
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out["status"] == "ok" and out["command"] == "evaluate"


def test_full_rerun_is_byte_identical(run):
    tmp, _ = run
    cfg2 = _config(tmp, "again")
    assert main(["reproduce", f"--config={cfg2}"]) == 0
    for rel in ("train/metrics.json", "train/predictions_gradient_boosting.csv",
                "evaluate/reports.json", "extract/indicators.csv", "cost/cost_table.json"):
        assert _digest(tmp / "out" / rel) == _digest(tmp / "again" / rel), rel


def test_missing_survey_names_path(tmp_path):
    cfg = json.loads(json.dumps(SMALL))
    missing = tmp_path / "nowhere" / "survey.csv"
    cfg["paths"] = {"output_dir": str(tmp_path / "o"), "survey": str(missing)}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    res = subprocess.run([sys.executable, "-m", "cdrtarget.cli", "ingest", f"--config={p}"],
                         capture_output=True, text=True)
    assert res.returncode != 0
    rec = json.loads(res.stderr.strip().splitlines()[-1])
    assert rec["status"] == "error" and rec["path"] == str(missing)
    assert str(missing) in rec["message"]


def test_seed_is_mandatory(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"paths": {"output_dir": str(tmp_path / "o")}}))
    assert main(["cost", f"--config={p}"]) == 2
    assert json.loads(capsys.readouterr().err)["status"] == "error"


def test_overwrite_guard_and_force(tmp_path, capsys):
    p = _config(tmp_path)
    assert main(["cost", f"--config={p}"]) == 0
    assert main(["cost", f"--config={p}"]) == 0  # same config: reuse is fine
    assert main(["cost", f"--config={p}", "--cost.beneficiaries=100"]) == 1
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["error"] == "OverwriteError"
    assert main(["cost", f"--config={p}", "--cost.beneficiaries=100", "--force"]) == 0
    table = json.loads((tmp_path / "out" / "cost" / "cost_table.json").read_text())
    assert table["total_benefits_usd"] == "168800"


def test_inputs_not_mutated(run):
    tmp, cfg = run
    bundle = tmp / "out" / "bundle"
    before = {p.name: _digest(p) for p in bundle.iterdir()}
    assert main(["ingest", f"--config={cfg}"]) == 0
    assert main(["extract", f"--config={cfg}"]) == 0
    assert {p.name: _digest(p) for p in bundle.iterdir()} == before


def test_usage_errors(tmp_path, capsys):
    p = _config(tmp_path)
    assert main(["cost", f"--config={p}", "--model=logistic"]) == 2
    assert main(["cost", f"--config={p}", "stray"]) == 2
    assert main(["bogus"]) == 2


def test_default_config_from_environment(tmp_path, monkeypatch, capsys):
    p = _config(tmp_path)
    monkeypatch.setenv("CDRTARGET_CONFIG", str(p))
    assert main(["cost"]) == 0
    assert (tmp_path / "out" / "cost" / "cost_table.csv").exists()
