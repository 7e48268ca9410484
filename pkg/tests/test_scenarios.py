import json
import math

import numpy as np
import pytest

from apmlab import engine as en
from apmlab import geometry as g
from apmlab.scenarios import (
    BUILTINS, Scenario, ScenarioError, builtin_scenarios, get_scenario, load_scenario, resolve, save_scenario,
)


def test_builtins_construct():
    names = [s.name for s in builtin_scenarios()]
    assert names == list(BUILTINS)


def test_strip_gap_displacement():
    sc = get_scenario("strip-gap")
    np.testing.assert_array_equal(sc.v, [-1.0, 0.0])
    est = en.displacement_vector(sc.A, sc.B)
    np.testing.assert_allclose(est.v, sc.v, atol=1e-9)


def test_strip_gap_param_alias():
    assert get_scenario("strip-gap", g=2.0).v.tolist() == [-2.0, 0.0]


def test_zero_normal_rejected(tmp_path):
    doc = get_scenario("strip-gap").to_dict()
    doc["analytic"]["separator"]["normal"] = [0.0, 0.0]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ScenarioError):
        load_scenario(str(path))
    doc = get_scenario("halfspace-angle").to_dict()
    doc["A"]["members"][0]["normal"] = [0.0, 0.0]
    path.write_text(json.dumps(doc))
    with pytest.raises(ScenarioError, match=r"\$\.A\.members\[0\]"):
        load_scenario(str(path))


@pytest.mark.parametrize("name", list(BUILTINS))
def test_save_then_load(tmp_path, name):
    sc = get_scenario(name, K=3) if name == "vanishing-angle" else get_scenario(name)
    path = tmp_path / f"{name}.json"
    save_scenario(sc, str(path))
    back = load_scenario(str(path))
    assert back.to_dict() == sc.to_dict()
    rng = np.random.default_rng(0)
    for x in rng.normal(size=(5, sc.dimension)):
        np.testing.assert_allclose(back.A.project(x), sc.A.project(x), atol=1e-15)
        np.testing.assert_allclose(back.B.project(x), sc.B.project(x), atol=1e-15)


def test_schema_errors(tmp_path):
    path = tmp_path / "s.json"
    doc = get_scenario("ball-tangent").to_dict()
    del doc["analytic"]["regularity"]
    path.write_text(json.dumps(doc))
    with pytest.raises(ScenarioError, match="regularity"):
        load_scenario(str(path))
    path.write_text("{not json")
    with pytest.raises(ScenarioError, match="invalid JSON"):
        load_scenario(str(path))


def test_unknown_scenario_and_params():
    with pytest.raises(ScenarioError):
        get_scenario("nope")
    with pytest.raises(ScenarioError):
        get_scenario("strip-gap", colour=3)
    with pytest.raises(ScenarioError):
        get_scenario("strip-gap", gap=-1)
    with pytest.raises(ScenarioError):
        resolve("no-such-file.json")


def test_resolve_forms():
    assert resolve("ball-tangent").name == "ball-tangent"
    assert resolve({"name": "vanishing-angle", "params": {"K": 2}}).dimension == 4


def test_vanishing_angle_single_plane_rate():
    sc = get_scenario("vanishing-angle", K=1, thetas=[math.pi / 4])
    tr = en.run_apm(sc.pair(), [1.0, 0.0], budget=10)
    norms = np.linalg.norm(np.array(tr.a), axis=1)
    np.testing.assert_allclose(norms[1:] / norms[:-1], 0.5, atol=1e-12)


def test_halfspace_angle_right_angle():
    sc = get_scenario("halfspace-angle", theta=math.pi / 2)
    assert np.all(sc.v == 0)
    # A = {x1 >= 0}, B = {x1 <= 0}: E is the x2 axis inside the ball.
    for y in np.linspace(-4, 4, 9):
        assert g.membership(sc.E, [0.0, y], 1e-12)
    assert not g.membership(sc.E, [0.1, 0.0], 1e-9)
    rep = en.fact_bb93_check(sc.pair(), samples=20)
    assert rep.passed


def test_bb93_strip_residual():
    rep = en.fact_bb93_check(get_scenario("strip-gap", gap=1.0).pair(), samples=100)
    assert max(rep.residuals[k] for k in ("E_plus_v_eq_F", "P_B_e", "P_A_f")) <= 1e-9


def test_witnesses_of_vanishing_angle():
    sc = get_scenario("vanishing-angle", K=8)
    th = [2.0 ** -(k + 1) for k in range(8)]
    for k, w in enumerate(sc.witnesses):
        assert g.dist_point(sc.A, w) == pytest.approx(0.0, abs=1e-15)
        assert g.dist_point(sc.B, w) == pytest.approx(0.9 * math.sin(th[k]), rel=1e-9)
        assert g.dist_point(sc.E, w) == pytest.approx(0.9)


def test_sep_fan_separator():
    sc = get_scenario("sep-fan")
    n, beta = sc.separator
    assert beta == 0.0
    assert -sc.A.support(-n) >= 0.0 and sc.B.support(n) <= 0.0


def test_scenario_dimension_checked():
    with pytest.raises(ScenarioError):
        Scenario("x", 3, g.Ball([0, 0], 1), g.Ball([0, 0], 1))
