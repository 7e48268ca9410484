import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apmlab import geometry as g
from _setgen import KINDS, points_in, polygon_grid, rand_set


# ------------------------------------------------------------------ inner / norm

def test_inner_examples():
    assert g.inner([1, 0], [0, 1]) == 0.0
    assert g.inner([2, 3], [2, 3]) == 13.0
    # Independent accumulation oracle.
    acc = sum(a * b for a, b in zip([1, 2, 3], [4, 5, 6]))
    assert acc == 32
    assert g.inner([1, 2, 3], [4, 5, 6]) == 32.0


def test_inner_dimension_mismatch():
    with pytest.raises(g.GeometryError):
        g.inner([1, 2], [1, 2, 3])


@pytest.mark.parametrize("bad", [[np.nan, 0.0], [np.inf, 1.0]])
def test_vectors_must_be_finite(bad):
    with pytest.raises(g.GeometryError):
        g.as_vector(bad)


def test_norm_zero_iff_zero_vector():
    assert g.norm([0.0, 0.0]) == 0.0
    assert g.norm([3.0, 4.0]) == 5.0
    assert g.norm([1e-300, 0.0]) > 0.0


# ------------------------------------------------------------------ constructors

def test_halfspace_normal_renormalized():
    H = g.Halfspace([3.0, 4.0], 10.0)
    assert abs(np.linalg.norm(H.normal) - 1.0) <= 1e-12
    assert H.offset == pytest.approx(2.0)


@pytest.mark.parametrize("make", [
    lambda: g.Halfspace([0.0, 0.0], 1.0),
    lambda: g.Hyperplane([0.0, 0.0, 0.0], 0.0),
    lambda: g.Ball([0.0, 0.0], -1.0),
    lambda: g.Polytope(np.zeros((0, 2))),
    lambda: g.Dilation(g.Ball([0, 0], 1), 0.0),
    lambda: g.Intersection(()),
])
def test_invalid_sets_rejected(make):
    with pytest.raises(g.GeometryError):
        make()


def test_degenerate_segment_and_ball_are_singletons():
    S = g.Segment([1.0, 2.0], [1.0, 2.0])
    Bz = g.Ball([1.0, 2.0], 0.0)
    x = np.array([5.0, -3.0])
    np.testing.assert_array_equal(S.project(x), [1.0, 2.0])
    np.testing.assert_array_equal(Bz.project(x), [1.0, 2.0])


# ------------------------------------------------------------------ projection examples

def test_project_halfspace():
    np.testing.assert_allclose(g.project(g.Halfspace([1, 0], 0), [2, 3]), [0, 3], atol=1e-15)


def test_project_segment_endpoint_clamp():
    np.testing.assert_allclose(g.project(g.Segment([0, 0], [1, 0]), [2, 2]), [1, 0], atol=1e-15)


def test_project_triangle_matches_grid_oracle():
    V = np.array([[0, 0], [2, 0], [0, 2]], dtype=float)
    x = np.array([2.0, 2.0])
    pitch = 1e-3
    G = polygon_grid(V, pitch)
    oracle = G[np.argmin(np.sum((G - x) ** 2, axis=1))]
    np.testing.assert_allclose(oracle, [1, 1], atol=2 * pitch)
    p = g.project(g.Polytope(V), x)
    np.testing.assert_allclose(p, [1.0, 1.0], atol=1e-12)


def test_project_dilation_examples():
    np.testing.assert_allclose(g.project_dilation(g.Ball([0, 0], 0), 1.0, [3, 0]), [1, 0], atol=1e-15)
    np.testing.assert_array_equal(g.project_dilation(g.Halfspace([1, 0], 0), 2.0, [1, 5]), [1, 5])


def test_project_dilation_stadium_grid_oracle():
    seg = g.Segment([0, 0], [0, 1])
    x = np.array([2.0, 0.5])
    pitch = 1e-3
    xs = np.arange(-0.5, 0.5 + pitch / 2, pitch)
    ys = np.arange(-0.5, 1.5 + pitch / 2, pitch)
    P = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)
    # Stadium membership: distance to the segment <= 0.5, computed by clamping.
    t = np.clip(P[:, 1], 0.0, 1.0)
    inside = np.hypot(P[:, 0], P[:, 1] - t) <= 0.5
    P = P[inside]
    oracle = P[np.argmin(np.sum((P - x) ** 2, axis=1))]
    np.testing.assert_allclose(oracle, [0.5, 0.5], atol=2 * pitch)
    np.testing.assert_allclose(g.project_dilation(seg, 0.5, x), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(g.Dilation(seg, 0.5).project(x), [0.5, 0.5], atol=1e-15)


def test_project_dilation_rejects_nonpositive_radius():
    with pytest.raises(g.GeometryError):
        g.project_dilation(g.Ball([0, 0], 1), 0.0, [1, 1])


# ------------------------------------------------------------------ membership / distance

def test_membership_examples():
    assert g.membership(g.Ball([0, 0], 1), [0.5, 0], 0.0)
    assert not g.membership(g.Ball([0, 0], 1), [1 + 1e-6, 0], 1e-9)
    C = g.Intersection((g.Halfspace([1, 0], 0), g.Ball([0, 0], 1)))
    assert g.membership(C, [-0.5, 0.5], 1e-9)


def test_membership_halfspace_boundary_rule():
    H = g.Halfspace([1, 0], 0)
    assert g.membership(H, [1e-10, 7.0], 1e-9)
    assert not g.membership(H, [2e-9, 7.0], 1e-9)


def test_dist_point_examples():
    assert g.dist_point(g.Halfspace([1, 0], 0), [3, 4]) == 3.0
    assert g.dist_point(g.Ball([0, 0], 1), [0.3, 0.4]) == 0.0
    # Nearest vertex oracle for a segment on the x1 axis.
    V = np.array([[1.0, 0.0], [2.0, 0.0]])
    assert min(np.linalg.norm(V, axis=1)) == 1.0
    assert g.dist_point(g.Polytope(V), [0, 0]) == pytest.approx(1.0, abs=1e-12)


def test_membership_consistent_with_projection():
    rng = np.random.default_rng(5)
    for kind in KINDS:
        C = rand_set(rng, 3, kind)
        for c in points_in(C, 5, rng):
            assert g.membership(C, c, 1e-7)
            np.testing.assert_allclose(C.project(c), c, atol=1e-7)


# ------------------------------------------------------------------ nested projections

def test_nested_projection_segment_on_boundary():
    D = g.Halfspace([1, 0], 0)
    C = g.Segment([0, -1], [0, 1])
    assert g.nested_projection_check(C, D, [3.0, 0.25])


def test_nested_projection_same_set():
    C = g.Ball([0, 0], 1)
    assert g.nested_projection_check(C, C, [4.0, -2.0])


def test_nested_projection_sandwich_claim():
    # [0,w] inside [f <= 0], b a point of [z,w]: P_{[0,w]} b = P_{[f<=0]} b.
    z, w = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    C = g.Segment(np.zeros(2), w)
    D = g.Halfspace(z, 0.0)
    for lam in np.linspace(0, 1, 11):
        b = z + lam * (w - z)
        assert g.nested_projection_check(C, D, b)
        np.testing.assert_allclose(C.project(b), D.project(b), atol=1e-15)


# ------------------------------------------------------------------ properties

@pytest.mark.parametrize("kind", KINDS)
def test_variational_inequality(kind):
    rng = np.random.default_rng(abs(hash(kind)) % 2**32)
    for _ in range(10):
        C = rand_set(rng, 3, kind)
        cs = points_in(C, 20, rng)
        for x in 4 * rng.normal(size=(5, 3)):
            p = C.project(x)
            slack = 1e-8 * (1 + np.linalg.norm(x)) * (1 + np.linalg.norm(cs, axis=1))
            assert np.all((cs - p) @ (x - p) <= slack)


@pytest.mark.parametrize("kind", KINDS)
def test_nonexpansive_and_idempotent(kind):
    rng = np.random.default_rng(1 + abs(hash(kind)) % 2**32)
    for _ in range(10):
        C = rand_set(rng, 3, kind)
        x, y = 4 * rng.normal(size=(2, 3))
        px, py = C.project(x), C.project(y)
        assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-9
        np.testing.assert_allclose(C.project(px), px, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(
    lam=st.floats(-5, 5),
    seed=st.integers(0, 2**31),
)
def test_affine_projection_is_affine(lam, seed):
    rng = np.random.default_rng(seed)
    C = g.AffineSpan(rng.normal(size=4), rng.normal(size=(2, 4)))
    x, y = 3 * rng.normal(size=(2, 4))
    lhs = C.project(lam * x + (1 - lam) * y)
    rhs = lam * C.project(x) + (1 - lam) * C.project(y)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9 * (1 + abs(lam)))


def test_dilation_matches_grid_oracle_on_polygons():
    rng = np.random.default_rng(11)
    pitch = 2e-3
    for _ in range(3):
        V = rng.uniform(-1, 1, size=(4, 2))
        r = rng.uniform(0.2, 0.6)
        x = rng.uniform(-3, 3, size=2)
        G = polygon_grid(V, pitch)
        # Dilation = union of r-discs around the polygon; the nearest point to
        # x is at distance max(0, dist(x, P) - r) and lies toward the polygon.
        dP = np.min(np.linalg.norm(G - x, axis=1))
        p = g.project_dilation(g.Polytope(V), r, x)
        assert abs(np.linalg.norm(p - x) - max(0.0, dP - r)) <= 2 * pitch


# ------------------------------------------------------------------ intersections

def test_intersection_plans_agree_with_dykstra():
    rng = np.random.default_rng(2)
    for _ in range(20):
        c = rng.normal(size=3)
        n = rng.normal(size=3)
        H = g.Halfspace(n, n @ c + 0.2)
        Bl = g.Ball(c, 1.5)
        fast = g.Intersection((H, Bl))
        # Slow route: Dykstra over the two members, run to a tight tolerance.
        x = 4 * rng.normal(size=3)
        y, p, q = x.copy(), np.zeros(3), np.zeros(3)
        for _ in range(20000):
            y1 = H.project(y + p)
            p = y + p - y1
            y2 = Bl.project(y1 + q)
            q = y1 + q - y2
            if np.linalg.norm(y2 - y) < 1e-14:
                y = y2
                break
            y = y2
        np.testing.assert_allclose(fast.project(x), y, atol=1e-8)


def test_support_values():
    assert g.support(g.Ball([1, 0], 2), [1, 0]) == pytest.approx(3.0)
    assert g.support(g.Polytope([[0, 0], [2, 1]]), [0, 1]) == 1.0
    assert g.support(g.Halfspace([1, 0], 0.5), [1, 0]) == 0.5
    assert math.isinf(g.support(g.Halfspace([1, 0], 0.5), [0, 1]))


# ------------------------------------------------------------------ serialization

@pytest.mark.parametrize("kind", KINDS)
def test_to_dict_round_trip(kind):
    rng = np.random.default_rng(3)
    C = rand_set(rng, 3, kind)
    doc = json.loads(json.dumps(g.to_dict(C)))
    D = g.from_dict(doc)
    for x in 3 * rng.normal(size=(5, 3)):
        np.testing.assert_allclose(D.project(x), C.project(x), atol=1e-12)


def test_from_dict_errors_carry_location():
    with pytest.raises(g.GeometryError, match=r"\$.members\[1\]"):
        g.from_dict({"type": "intersection", "members": [
            {"type": "ball", "center": [0, 0], "radius": 1},
            {"type": "halfspace", "normal": [0, 0], "offset": 1},
        ]})
    with pytest.raises(g.GeometryError, match="unknown set type"):
        g.from_dict({"type": "blob"})


def test_min_distance_pair_strip():
    A = g.Polytope([[1, -1], [2, -1], [2, 1], [1, 1]])
    B = g.Polytope([[-1, -1], [0, -1], [0, 1], [-1, 1]])
    a, b = g.min_distance_pair(A, B)
    assert np.linalg.norm(a - b) == pytest.approx(1.0, abs=1e-9)
    assert a[0] == pytest.approx(1.0, abs=1e-9) and b[0] == pytest.approx(0.0, abs=1e-9)
