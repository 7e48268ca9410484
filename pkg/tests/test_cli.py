import json
import subprocess
import sys

import numpy as np
import pytest

from apmlab import cli
from apmlab.scenarios import get_scenario, save_scenario


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_project_halfspace(tmp_path, capsys):
    path = tmp_path / "h.json"
    path.write_text(json.dumps({"type": "halfspace", "normal": [1, 0], "offset": 0}))
    code, out, _ = run(["project", "--set", str(path), "--point", "2,3"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["projection"] == [0.0, 3.0] and doc["distance"] == 2.0 and doc["member"] is False


def test_project_scenario_writes_output(tmp_path, capsys):
    code, _, _ = run(["project", "--scenario", "ball-tangent", "--point", "3,0", "--out", str(tmp_path)], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "projection.json").read_text())
    assert doc["projection"] == [2.0, 0.0]


def test_apm_trace(tmp_path, capsys):
    code, out, _ = run(
        ["apm", "--scenario", "strip-gap", "--x0", "5,0.5", "--budget", "50", "--out", str(tmp_path)], capsys
    )
    assert code == 0
    summary = json.loads(out)
    assert summary["final_a"] == [1.0, 0.5]
    header = (tmp_path / "trace.csv").read_text().splitlines()[0]
    assert header == "step,phase,x0,x1,dist_to_E,dist_to_F,block_id"


def test_metrics_with_files(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    a.write_text(json.dumps({"type": "polytope", "vertices": [[0, 0], [1, 0]]}))
    b.write_text(json.dumps({"type": "polytope", "vertices": [[0, 0], [1, 0], [0, 1]]}))
    code, out, _ = run(["metrics", "--a", str(a), "--b", str(b), "--radius", "5"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["hausdorff"]["hausdorff"] == pytest.approx(1.0)
    assert doc["hausdorff"]["method"] == "vertex-exact"
    assert doc["localized"]["radius"] == 5.0


def test_probe(capsys):
    code, out, _ = run(["probe", "--scenario", "halfspace-angle", "--eps-grid", "0.5,0.1", "--samples", "300"], capsys)
    assert code == 0
    assert json.loads(out)["eps_grid"] == [0.1, 0.5]


def test_perturbed(capsys):
    code, out, _ = run(["perturbed", "--scenario", "halfspace-angle", "--trials", "2", "--horizon", "200"], capsys)
    assert code == 0
    assert json.loads(out)["trials"] == 2


def test_scenario_list_and_show(capsys):
    code, out, _ = run(["scenario", "list"], capsys)
    assert code == 0 and "vanishing-angle" in out
    code, out, _ = run(["scenario", "show", "strip-gap", "--param", "g=2"], capsys)
    assert code == 0 and json.loads(out)["analytic"]["v"] == [-2.0, 0.0]


def test_scenario_file_input(tmp_path, capsys):
    path = tmp_path / "s.json"
    save_scenario(get_scenario("strip-gap"), str(path))
    code, out, _ = run(["apm", "--scenario", str(path), "--x0", "3,0", "--budget", "5"], capsys)
    assert code == 0 and json.loads(out)["final_a"] == [1.0, 0.0]


def test_adversary_separated(tmp_path, capsys):
    code, out, _ = run(["adversary", "--scenario", "sep-fan", "--eps", "0.2", "--out", str(tmp_path)], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "adversary_run.json").read_text())
    assert doc["ok"] and doc["min_separation"] >= 0.2
    assert (tmp_path / "adversary_trace.csv").exists()
    for blk in doc["schedule"]:
        assert (tmp_path / blk["A"]).exists() and (tmp_path / blk["B"]).exists()


@pytest.mark.parametrize("argv", [
    ["adversary", "--scenario", "halfspace-angle"],
    ["apm", "--scenario", "no-such-scenario"],
    ["apm"],
    ["project", "--point", "1,2"],
    ["apm", "--scenario", "strip-gap", "--param", "colour=1"],
    ["bogus"],
    ["project", "--scenario", "strip-gap", "--point", "1,x"],
])
def test_config_errors_exit_2(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 2
    assert err


def test_budget_exit_code(capsys):
    # A search that cannot finish within the budget maps to exit code 4.
    code, _, err = run(["adversary", "--scenario", "sep-fan", "--eps", "0.2", "--budget", "3"], capsys)
    assert code == 4, err


def test_run_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scenario": "strip-gap", "pipelines": ["apm", "metrics"], "apm": {"x0": [4, 0.2]}}))
    code, out, _ = run(["run", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == 0
    assert "apm: ok" in out and "metrics: ok" in out
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert [s["name"] for s in manifest["stages"]] == ["apm", "metrics"]


def test_run_missing_config(tmp_path, capsys):
    code, _, _ = run(["run", str(tmp_path / "missing.json")], capsys)
    assert code == 2


def test_console_script_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "apmlab.cli", "project", "--scenario", "strip-gap", "--point", "5,0"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    np.testing.assert_allclose(json.loads(proc.stdout)["projection"], [2.0, 0.0])
