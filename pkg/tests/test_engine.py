import math

import numpy as np
import pytest

from apmlab import engine as en
from apmlab import geometry as g
from apmlab.scenarios import get_scenario


def line_pair(theta: float) -> en.PairProblem:
    A = g.AffineSpan([0, 0], [[1, 0]])
    B = g.AffineSpan([0, 0], [[math.cos(theta), math.sin(theta)]])
    E = g.Ball([0, 0], 0)
    return en.PairProblem(A, B, v=np.zeros(2), E=E, F=E)


# ------------------------------------------------------------------ run_apm

def test_run_apm_separated_halfspaces():
    A = g.Halfspace([-1, 0], -1)  # x1 >= 1
    B = g.Halfspace([1, 0], 0)  # x1 <= 0
    tr = en.run_apm(en.PairProblem(A, B), [5, 5], budget=5)
    np.testing.assert_array_equal(tr.b[0], [0, 5])
    np.testing.assert_array_equal(tr.a[0], [1, 5])
    for a in tr.a[1:]:
        np.testing.assert_array_equal(a, [1, 5])


def test_run_apm_identical_sets():
    C = g.Ball([0, 0], 1)
    tr = en.run_apm(en.PairProblem(C, C), [3, 4], budget=4)
    for a in tr.a:
        np.testing.assert_allclose(a, [0.6, 0.8], atol=1e-15)


@pytest.mark.parametrize("ff", [True, False])
def test_run_apm_lines_halving(ff):
    tr = en.run_apm(line_pair(math.pi / 4), [1, 0], budget=20, fast_forward=ff)
    for n, a in zip(tr.steps, tr.a):
        np.testing.assert_allclose(a, [0.5**n, 0], atol=1e-15)


def test_run_apm_stops_on_tolerance():
    tr = en.run_apm(line_pair(math.pi / 4), [1, 0], budget=1000, stop_tol=1e-6)
    assert tr.stop_reason == "converged"
    assert tr.step_size[-1] <= 1e-6 < tr.step_size[-2]


def test_run_apm_budget_must_be_positive():
    with pytest.raises(ValueError):
        en.run_apm(line_pair(0.3), [1, 0], budget=0)


def test_fast_forward_matches_plain_iteration():
    sc = get_scenario("vanishing-angle", K=4, thetas=[0.3, 0.2, 0.1, 0.05])
    x0 = np.linspace(0.1, 0.8, 8)
    fast = en.run_apm(sc.pair(), x0, budget=3000, fast_forward=True)
    slow = en.run_apm(sc.pair(), x0, budget=3000, fast_forward=False)
    assert fast.steps == slow.steps
    np.testing.assert_allclose(np.array(fast.a), np.array(slow.a), atol=1e-12)


def test_trace_thinning_keeps_at_most_max_points():
    tr = en.run_apm(line_pair(0.1), [1, 0], budget=50_000, max_points=200)
    assert len(tr.steps) <= 200
    assert tr.steps[0] == 1 and tr.steps[-1] == 50_000
    assert len(tr.a) == len(tr.b)


def test_trace_csv_columns():
    tr = en.run_apm(line_pair(0.5), [1, 0], budget=3)
    lines = tr.to_csv().splitlines()
    assert lines[0] == "step,phase,x0,x1,dist_to_E,dist_to_F,block_id"
    assert len(lines) == 2 + 2 * 3
    assert lines[1].startswith("0,A,")


# ------------------------------------------------------------------ pi operator

def test_pi_operator_examples():
    x = np.array([0.3, -2.0])
    C = g.Ball([0, 0], 1)
    np.testing.assert_array_equal(en.pi_operator(C, C, x, 0), x)
    np.testing.assert_allclose(en.pi_operator(C, C, [2, 0], 1), [1, 0])
    P = line_pair(math.pi / 4)
    np.testing.assert_allclose(en.pi_operator(P.A, P.B, [1, 0], 3), [1 / 8, 0], atol=1e-15)


def test_pi_operator_matches_run_apm():
    sc = get_scenario("halfspace-angle")
    tr = en.run_apm(sc.pair(), [3, -1], budget=7)
    np.testing.assert_allclose(en.pi_operator(sc.A, sc.B, [3, -1], 7), tr.a[-1], atol=1e-14)


def test_pi_operator_rejects_negative_n():
    with pytest.raises(ValueError):
        en.pi_operator(g.Ball([0], 1), g.Ball([0], 1), [0.0], -1)


@pytest.mark.parametrize("n", [1, 2, 5, 1000, 123_457])
def test_affine_power_equals_iteration(n):
    P = line_pair(0.01)
    np.testing.assert_allclose(
        en.pi_operator(P.A, P.B, [1, 0], n, fast_forward=True),
        en.pi_operator(P.A, P.B, [1, 0], n, fast_forward=False),
        rtol=1e-9, atol=1e-300,
    )


def test_smallest_index_affine_search_equals_linear_scan():
    P = line_pair(0.05)
    pred = lambda y: np.linalg.norm(y) < 1e-3  # noqa: E731
    n_fast, y_fast = en.smallest_index(P.A, P.B, [1, 0], pred, 10**6, monotone=True)
    n_slow, y_slow = en.smallest_index(P.A, P.B, [1, 0], pred, 10**6, monotone=False)
    assert n_fast == n_slow
    np.testing.assert_allclose(y_fast, y_slow, rtol=1e-9)
    # Closed form: ||a_n|| = cos(theta)^(2n).
    assert n_slow == math.ceil(math.log(1e-3) / (2 * math.log(math.cos(0.05))))


def test_smallest_index_budget():
    P = line_pair(0.05)
    with pytest.raises(en.BudgetExhausted):
        en.smallest_index(P.A, P.B, [1, 0], lambda y: False, 100)


# ------------------------------------------------------------------ rate law

@pytest.mark.parametrize("theta", [math.pi / 6, math.pi / 4, math.pi / 3])
def test_rate_cos_squared(theta):
    tr = en.run_apm(line_pair(theta), [1, 0], budget=12, fast_forward=False)
    norms = np.linalg.norm(np.array(tr.a), axis=1)
    ratios = norms[5:] / norms[4:-1]
    assert np.max(np.abs(ratios - math.cos(theta) ** 2)) <= 1e-6


# ------------------------------------------------------------------ perturbed

def test_constant_schedule_equals_run_apm():
    sc = get_scenario("halfspace-angle")
    x0 = np.array([2.0, -3.0])
    sched = en.PerturbationSchedule([en.Block(sc.A, sc.B, 40), en.Block(sc.A, sc.B, 60)])
    pert = en.run_perturbed(sched, x0, fast_forward=False)
    classic = en.run_apm(sc.pair(), x0, budget=100, fast_forward=False)
    assert np.max(np.abs(np.array(pert.a) - np.array(classic.a))) <= 1e-12
    assert np.max(np.abs(np.array(pert.b) - np.array(classic.b))) <= 1e-12


def test_perturbed_shrinking_balls_converge():
    A_lim = g.Ball([0, 0], 1)
    B = g.Halfspace([1, 0], 0)
    E = g.Intersection((A_lim, B))
    blocks = [en.Block(g.Ball([0, 0], 1 + 1 / n), B, 1, en.HATTED) for n in range(1, 2001)]
    tr = en.run_perturbed(en.PerturbationSchedule(blocks), [2, 2], E=E, F=E)
    assert tr.dist_a_E[-1] <= 1e-3


def test_schedule_validation():
    C = g.Ball([0, 0], 1)
    with pytest.raises(ValueError):
        en.Block(C, C, 0)
    with pytest.raises(ValueError):
        en.Block(C, C, 1, tag="weird")
    with pytest.raises(ValueError):
        en.PerturbationSchedule([])
    s = en.PerturbationSchedule([en.Block(C, C, 2), en.Block(C, C, 3)])
    assert s.total == 5 and s.boundaries() == [2, 5]
    assert [i for _, _, i in s.expand()] == [0, 0, 1, 1, 1]


def test_block_boundaries_kept_in_trace():
    C = g.Ball([0, 0], 1)
    s = en.PerturbationSchedule([en.Block(C, C, 7000), en.Block(C, C, 13), en.Block(C, C, 9000)])
    tr = en.run_perturbed(s, [3, 0], max_points=100)
    assert {7000, 7013, 16013} <= set(tr.steps)


# ------------------------------------------------------------------ displacement

def test_displacement_intersecting_is_zero():
    est = en.displacement_vector(g.Ball([0, 0], 1), g.Halfspace([1, 0], 0))
    assert np.linalg.norm(est.v) <= 1e-9 and est.trusted


def test_displacement_halfspaces():
    est = en.displacement_vector(g.Halfspace([-1, 0], -1), g.Halfspace([1, 0], 0))
    np.testing.assert_allclose(est.v, [-1, 0], atol=1e-9)
    assert est.quality <= 1e-9


@pytest.mark.parametrize("gap", [0.5, 1.0, 2.5])
def test_displacement_strip_matches_distance(gap):
    sc = get_scenario("strip-gap", gap=gap)
    est = en.displacement_vector(sc.A, sc.B)
    a, b = g.min_distance_pair(sc.A, sc.B)
    assert np.linalg.norm(est.v) == pytest.approx(np.linalg.norm(a - b), abs=1e-8)
    assert np.linalg.norm(est.v) == pytest.approx(gap, abs=1e-8)


def test_displacement_analytic_passthrough():
    est = en.displacement_vector(g.Ball([0], 1), g.Ball([3], 1), analytic=[1.0])
    assert est.quality == 0.0 and est.v.tolist() == [1.0]


# ------------------------------------------------------------------ best approximation

def test_best_approx_intersecting_halfspaces():
    sc = get_scenario("halfspace-angle")
    rng = np.random.default_rng(0)
    res = en.best_approx_sets(sc.pair(), 3 * rng.normal(size=(10, 2)))
    assert not res.dropped
    for e in res.E:
        assert g.membership(sc.E, e, 1e-8)


def test_best_approx_strip():
    sc = get_scenario("strip-gap")
    rng = np.random.default_rng(1)
    res = en.best_approx_sets(sc.pair(), rng.uniform(-3, 3, size=(10, 2)))
    assert len(res.E) == 10
    for e, f in zip(res.E, res.F):
        assert e[0] == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(f, e + sc.v, atol=1e-12)
        assert np.linalg.norm(en.pi_operator(sc.A, sc.B, e, 1) - e) <= 1e-8


def test_best_approx_lines_go_to_origin():
    res = en.best_approx_sets(line_pair(0.7), [[1, 0], [-3, 2], [0.5, 0.5]])
    for e in res.E:
        assert np.linalg.norm(e) <= 1e-9


def test_fejer_monotone_on_intersecting_scenarios():
    rng = np.random.default_rng(2)
    for name in ["halfspace-angle", "ball-tangent", "sandwich-toy"]:
        sc = get_scenario(name)
        x0 = 3 * rng.normal(size=sc.dimension)
        tr = en.run_apm(sc.pair(), x0, budget=300, fast_forward=False)
        d = np.array(tr.dist_a_E)
        assert np.all(np.diff(d) <= 1e-9)


# ------------------------------------------------------------------ BB93

def test_bb93_strip_closed_form():
    rep = en.fact_bb93_check(get_scenario("strip-gap", gap=1.0).pair(), samples=50)
    assert rep.passed
    for key in ("P_B_e", "P_A_f", "P_F_e", "P_E_f"):
        assert rep.residuals[key] <= 1e-9


def test_bb93_intersecting_collapses():
    sc = get_scenario("halfspace-angle")
    rep = en.fact_bb93_check(sc.pair(), samples=50)
    assert rep.norm_v == 0.0 and rep.passed


def test_bb93_ball_tangent_single_point():
    rep = en.fact_bb93_check(get_scenario("ball-tangent").pair(), samples=10)
    assert rep.passed
    assert rep.residuals["P_B_e"] == 0.0


def test_bb93_needs_analytic_sets():
    with pytest.raises(ValueError):
        en.fact_bb93_check(en.PairProblem(g.Ball([0], 1), g.Ball([0], 1)))
