import csv
import hashlib
import json
import os

import numpy as np
import pytest

from apmlab import engine as en
from apmlab import experiment as ex
from apmlab import geometry as g
from apmlab.scenarios import get_scenario


def read(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def test_empty_pipeline_is_noop(tmp_path):
    code, manifest = ex.run_experiment({"scenario": "strip-gap", "pipelines": []}, str(tmp_path))
    assert code == 0
    assert manifest["stages"] == [] and manifest["scenario"] is None
    assert sorted(os.listdir(tmp_path)) == ["manifest.json"]
    assert json.loads(read(tmp_path / "manifest.json")) == manifest


def test_manifest_fields(tmp_path):
    cfg = {"scenario": "strip-gap", "pipelines": ["metrics"], "seed": 7}
    code, manifest = ex.run_experiment(cfg, str(tmp_path))
    assert code == 0
    assert manifest["config_sha256"] == hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    assert manifest["seed"] == 7
    assert set(manifest["versions"]) == {"apmlab", "numpy", "scipy", "python"}
    out = manifest["stages"][0]["outputs"][0]
    assert out["file"] == "metrics_report.json"
    assert out["sha256"] == hashlib.sha256(read(tmp_path / "metrics_report.json").encode()).hexdigest()


def test_ball_tangent_sublinear_decay(tmp_path):
    cfg = {"scenario": "ball-tangent", "pipelines": ["apm"], "apm": {"x0": [0.0, 3.0], "budget": 1000}}
    code, _ = ex.run_experiment(cfg, str(tmp_path))
    assert code == 0
    report = json.loads(read(tmp_path / "apm_report.json"))
    profile = report["decay_profile"]
    assert len(profile) == 1000
    assert all(p["dist_to_E"] >= 1e-2 for p in profile)
    dists = [p["dist_to_E"] for p in profile]
    assert all(b <= a for a, b in zip(dists, dists[1:]))
    # Within 10^6 steps the distance does fall below 1e-2.
    sc = get_scenario("ball-tangent")
    n, y = en.smallest_index(sc.A, sc.B, [0.0, 3.0], lambda y: g.dist_point(sc.E, y) < 1e-2, 10**6)
    assert 1000 < n <= 10**6


def test_adversary_pipeline_outputs(tmp_path):
    cfg = {
        "scenario": {"name": "vanishing-angle", "params": {"K": 12}},
        "pipelines": ["adversary"],
        "adversary": {"eps": 0.1, "epochs": 1},
    }
    code, manifest = ex.run_experiment(cfg, str(tmp_path))
    assert code == 0, manifest
    run = json.loads(read(tmp_path / "adversary_run.json"))
    assert run["ok"] and run["scenario"] == "vanishing-angle"
    with open(tmp_path / "adversary_trace.csv", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["step", "phase"] and rows[0][-3:] == ["dist_to_E", "dist_to_F", "block_id"]
    files = {o["file"] for o in manifest["stages"][0]["outputs"]}
    assert "adversary_run.json" in files and any(f.startswith("sets/") for f in files)


def test_same_seed_same_bytes(tmp_path):
    cfg = {
        "scenario": "halfspace-angle",
        "pipelines": ["apm", "perturbed", "probe", "metrics"],
        "seed": 3,
        "perturbed": {"trials": 2, "horizon": 100},
        "probe": {"budget": 200, "windows": [1, 2]},
        "metrics": {"radii": [1, 2]},
    }
    ex.run_experiment(cfg, str(tmp_path / "a"))
    ex.run_experiment(cfg, str(tmp_path / "b"))
    names = sorted(os.listdir(tmp_path / "a"))
    assert names == sorted(os.listdir(tmp_path / "b"))
    for nm in names:
        assert read(tmp_path / "a" / nm) == read(tmp_path / "b" / nm), nm


def test_failed_stage_is_recorded(tmp_path):
    cfg = {"scenario": "halfspace-angle", "pipelines": ["adversary", "metrics"]}
    code, manifest = ex.run_experiment(cfg, str(tmp_path))
    assert code == ex.EXIT_CONFIG
    first, second = manifest["stages"]
    assert first["name"] == "adversary" and first["status"] == "failed" and "regular" in first["error"]
    assert second["status"] == "ok"


@pytest.mark.parametrize("cfg", [
    {"pipelines": ["apm"]},
    {"scenario": "strip-gap", "pipelines": ["nope"]},
    {"scenario": "nope", "pipelines": ["apm"]},
])
def test_config_errors(tmp_path, cfg):
    code, manifest = ex.run_experiment(cfg, str(tmp_path))
    assert code == ex.EXIT_CONFIG
    assert manifest["stages"][0]["name"] == "config"


def test_exit_code_mapping():
    assert ex.exit_code_for(en.BudgetExhausted("x")) == 4
    assert ex.exit_code_for(ex.CertificateFailure("x")) == 3
    assert ex.exit_code_for(ex.ConfigError("x")) == 2
    assert ex.exit_code_for(RuntimeError("x")) == 1


def test_jsonable_handles_numpy():
    doc = ex._jsonable({"a": np.float64(1.5), "b": np.arange(2), "c": np.bool_(True), "d": float("inf")})
    assert doc == {"a": 1.5, "b": [0, 1], "c": True, "d": "inf"}
