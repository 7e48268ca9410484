"""Excess, Hausdorff and localized distances between convex sets.

The excess ``e(A, B) = sup_{a in A} dist(a, B)`` is the supremum of a convex
function, so over a polytope it is attained at a vertex.  For polytopes and
segments the vertex sampler therefore gives the exact value; for every other
set the value is a supremum over a deterministic sample, i.e. a lower bound.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import geometry as g
from .config import CERT_SLACK

VERTEX_EXACT = "vertex-exact"
SAMPLED = "sampled"


@dataclass(frozen=True)
class Sample:
    """Points of a set; ``exact`` means their hull is the whole set."""

    points: np.ndarray
    exact: bool


Sampler = Callable[[g.ConvexSet], Sample]


@dataclass
class SetDistanceReport:
    excess_ab: float
    excess_ba: float
    hausdorff: float
    method: str
    sample_count: int
    radius: float | None = None

    def to_dict(self) -> dict:
        return {
            "excess_ab": self.excess_ab,
            "excess_ba": self.excess_ba,
            "hausdorff": self.hausdorff,
            "method": self.method,
            "sample_count": self.sample_count,
            "radius": self.radius,
        }


def _circle_dirs(n: int) -> np.ndarray:
    t = 2.0 * np.pi * np.arange(n) / n
    return np.column_stack([np.cos(t), np.sin(t)])


def _plane_directions(dim: int, per_plane: int, max_points: int) -> np.ndarray:
    """Unit vectors: +-axes, then ``per_plane`` directions in each consecutive
    coordinate plane (x_i, x_{i+1}) until ``max_points`` is reached."""
    eye = np.eye(dim)
    dirs = [eye, -eye]
    count = 2 * dim
    circ = _circle_dirs(per_plane)
    for i in range(dim - 1):
        if count + per_plane > max_points:
            break
        block = np.zeros((per_plane, dim))
        block[:, i] = circ[:, 0]
        block[:, i + 1] = circ[:, 1]
        dirs.append(block)
        count += per_plane
    return np.vstack(dirs)


@dataclass
class DefaultSampler:
    """Deterministic sampler.

    polytope/segment -> vertices (exact); ball -> center plus ``per_plane``
    boundary directions per coordinate-plane slice; halfspace/hyperplane/
    affine span -> boundary points in a cube of half-width ``window``;
    dilation -> inner samples pushed outward by the radius; intersection ->
    projections of a cloud of near and far points.
    """

    per_plane: int = 64
    window: float = 10.0
    max_points: int = 1024
    cache_size: int = 64
    _cache: OrderedDict = field(default_factory=OrderedDict, init=False, repr=False, compare=False)

    def __call__(self, C: g.ConvexSet) -> Sample:
        # Sets are immutable, so samples are cached per object.
        hit = self._cache.get(id(C))
        if hit is not None and hit[0] is C:
            self._cache.move_to_end(id(C))
            return hit[1]
        s = self.sample(C)
        self._cache[id(C)] = (C, s)
        if len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return s

    def sample(self, C: g.ConvexSet) -> Sample:
        if isinstance(C, g.Polytope):
            return Sample(np.array(C.vertices), True)
        if isinstance(C, g.Segment):
            return Sample(C.vertices, True)
        if isinstance(C, g.Ball):
            if C.radius == 0.0:
                return Sample(C.center.reshape(1, -1).copy(), True)
            dirs = _plane_directions(C.dim, self.per_plane, self.max_points)
            return Sample(np.vstack([C.center, C.center + C.radius * dirs]), False)
        if isinstance(C, g.Translate):
            s = self.sample(C.inner)
            return Sample(s.points + C.shift, s.exact)
        if isinstance(C, (g.Halfspace, g.Hyperplane)):
            return Sample(self._flat_points(C), False)
        if isinstance(C, g.AffineSpan):
            if C.directions.shape[0] == 0:
                return Sample(C.base.reshape(1, -1).copy(), True)
            return Sample(self._span_points(C), False)
        if isinstance(C, g.Dilation):
            return Sample(self._dilation_points(C), False)
        if isinstance(C, g.Intersection):
            return Sample(self._intersection_points(C), False)
        raise g.GeometryError(f"no sampler for {type(C).__name__}")

    def _flat_points(self, C) -> np.ndarray:
        n = C.normal
        base = C.offset * n
        # Orthonormal basis of the tangent hyperplane.
        _, _, Vt = np.linalg.svd(n.reshape(1, -1))
        T = Vt[1:]
        pts = [base]
        for t in T[: self.max_points // 4]:
            for s in (-self.window, -0.5 * self.window, 0.5 * self.window, self.window):
                pts.append(base + s * t)
        pts = np.array(pts)
        if isinstance(C, g.Halfspace):
            pts = np.vstack([pts, pts - self.window * n])
        return pts

    def _span_points(self, C: g.AffineSpan) -> np.ndarray:
        Q = C.directions
        k = Q.shape[0]
        coeffs = _plane_directions(k, self.per_plane, self.max_points) if k > 1 else np.array([[1.0], [-1.0]])
        pts = [C.base.reshape(1, -1)]
        for s in (0.5 * self.window, self.window):
            pts.append(C.base + s * coeffs @ Q)
        return np.vstack(pts)

    def _dilation_points(self, C: g.Dilation) -> np.ndarray:
        inner = self.sample(C.inner).points
        if inner.shape[0] > self.max_points:
            inner = inner[:: math.ceil(inner.shape[0] / self.max_points)]
        centroid = inner.mean(axis=0)
        out = [inner]
        d_all = inner - centroid
        norms = np.linalg.norm(d_all, axis=1, keepdims=True)
        ok = norms[:, 0] > 0
        out.append(inner[ok] + C.radius * d_all[ok] / norms[ok])
        # Axis pushes from a few inner points keep the count linear in dim.
        eye = np.eye(C.dim)
        heads = inner[: max(1, self.max_points // (2 * C.dim))]
        for e in (eye, -eye):
            out.append((heads[:, None, :] + C.radius * e[None, :, :]).reshape(-1, C.dim))
        pts = np.vstack(out)
        if pts.shape[0] > 4 * self.max_points:
            step = math.ceil(pts.shape[0] / (4 * self.max_points))
            pts = pts[::step]
        return pts

    def _intersection_points(self, C: g.Intersection) -> np.ndarray:
        dim = C.dim
        anchor = C.project(np.zeros(dim))
        bound = C.norm_bound(anchor)
        far = 10.0 * (1.0 + (bound if math.isfinite(bound) else self.window))
        dirs = _plane_directions(dim, self.per_plane, self.max_points)
        cloud = [anchor + far * dirs]
        near = self.window if not math.isfinite(bound) else bound
        cloud.append(anchor + 0.5 * near * dirs[: 2 * dim])
        for m in C.members:
            pts = self.sample(m).points
            if pts.shape[0] > self.max_points:
                pts = pts[:: math.ceil(pts.shape[0] / self.max_points)]
            cloud.append(pts)
        cloud = np.vstack(cloud)
        proj = np.array([C.project(x) for x in cloud])
        return np.vstack([anchor, proj])


default_sampler = DefaultSampler()


def _dist_many(B: g.ConvexSet, pts: np.ndarray) -> np.ndarray:
    return np.array([np.linalg.norm(p - B.project(p)) for p in pts])


def excess_sample(A: g.ConvexSet, B: g.ConvexSet, sampler: Sampler | None = None) -> tuple[float, Sample]:
    s = (sampler or default_sampler)(A)
    d = _dist_many(B, s.points)
    return float(d.max()) if d.size else 0.0, s


def excess(A: g.ConvexSet, B: g.ConvexSet, sampler: Sampler | None = None) -> float:
    """Excess of A over B: exact for polytope A, a sampled lower bound otherwise."""
    return excess_sample(A, B, sampler)[0]


def hausdorff(A: g.ConvexSet, B: g.ConvexSet, sampler: Sampler | None = None) -> SetDistanceReport:
    if A.dim != B.dim:
        raise g.GeometryError("dimension mismatch")
    eab, sa = excess_sample(A, B, sampler)
    eba, sb = excess_sample(B, A, sampler)
    method = VERTEX_EXACT if (sa.exact and sb.exact) else SAMPLED
    return SetDistanceReport(eab, eba, max(eab, eba), method, len(sa.points) + len(sb.points))


def truncate(A: g.ConvexSet, r: float) -> g.ConvexSet | None:
    """``A ∩ rB`` or None when the truncation is empty."""
    if not r > 0:
        raise g.GeometryError(f"truncation radius must be > 0, got {r}")
    zero = np.zeros(A.dim)
    if g.dist_point(A, zero) > r:
        return None
    if A.norm_bound(zero) <= r:
        return A
    return g.Intersection((A, g.Ball(zero, r)))


def sample_truncation(A: g.ConvexSet, r: float, sampler: Sampler | None = None) -> Sample | None:
    """Points of ``A ∩ rB`` without projecting onto the truncation.

    Samples of A outside rB are pulled toward the anchor P_A(0) until they
    reach the sphere of radius r; by convexity they stay in A.  None when
    the truncation is empty.
    """
    T = truncate(A, r)
    if T is None:
        return None
    if T is A:
        return (sampler or default_sampler)(A)
    s = (sampler or default_sampler)(A)
    anchor = A.project(np.zeros(A.dim))
    pts = [anchor]
    a2 = float(anchor @ anchor)
    for x in s.points:
        nx = float(np.linalg.norm(x))
        if nx <= r:
            pts.append(x)
            continue
        # Largest t in [0, 1] with ||anchor + t (x - anchor)|| <= r.
        d = x - anchor
        qa, qb, qc = float(d @ d), 2.0 * float(anchor @ d), a2 - r * r
        t = (-qb + math.sqrt(max(qb * qb - 4 * qa * qc, 0.0))) / (2 * qa)
        pts.append(anchor + min(1.0, max(0.0, t)) * d)
    return Sample(np.array(pts), False)


def _localized_excess_sample(A, B, r, sampler) -> tuple[float, Sample | None]:
    s = sample_truncation(A, r, sampler)
    if s is None:
        return 0.0, None
    d = _dist_many(B, s.points)
    return float(d.max()), s


def localized_excess(A: g.ConvexSet, B: g.ConvexSet, r: float, sampler: Sampler | None = None) -> float:
    """``e(A ∩ rB, B)``; zero when the truncation is empty."""
    return _localized_excess_sample(A, B, r, sampler)[0]


def localized_hausdorff_report(A, B, r: float, sampler: Sampler | None = None) -> SetDistanceReport:
    eab, eba, exact, n = 0.0, 0.0, True, 0
    for src, dst, slot in ((A, B, 0), (B, A, 1)):
        val, s = _localized_excess_sample(src, dst, r, sampler)
        if s is None:
            continue
        exact &= s.exact
        n += len(s.points)
        if slot == 0:
            eab = val
        else:
            eba = val
    return SetDistanceReport(eab, eba, max(eab, eba), VERTEX_EXACT if exact else SAMPLED, n, r)


def localized_hausdorff(A, B, r: float, sampler: Sampler | None = None) -> float:
    return localized_hausdorff_report(A, B, r, sampler).hausdorff


@dataclass
class AWCertificate:
    ok: bool
    hypothesis: list[float]
    conclusion: dict
    first_failure: tuple | None = None

    def __bool__(self) -> bool:
        return self.ok

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "hypothesis": self.hypothesis,
            "conclusion": {str(k): v for k, v in self.conclusion.items()},
            "first_failure": None if self.first_failure is None else list(self.first_failure),
        }


def aw_certify(
    sequence: Sequence[g.ConvexSet],
    limit: g.ConvexSet,
    radii: Sequence[float | None],
    delta_bounds: Sequence[float],
    r_grid: Sequence[float] | None = None,
    sampler: Sampler | None = None,
    tol: float = CERT_SLACK,
    hypothesis_values: Sequence[float] | None = None,
) -> AWCertificate:
    """Check the ball-truncation criterion for Attouch-Wets convergence.

    Hypothesis per index n: ``D_H(limit ∩ r_n B, A_n) <= delta_n`` (radius
    None means no truncation).  Conclusion on each r of ``r_grid``:
    ``D_{H,r}(limit, A_n) <= delta_n`` for every n with ``r_n > r``.
    ``hypothesis_values`` supplies already measured hypothesis distances.
    """
    if not (len(sequence) == len(radii) == len(delta_bounds)):
        raise ValueError("sequence, radii and delta_bounds must have equal length")
    if any(d < 0 for d in delta_bounds):
        raise ValueError("delta bounds must be >= 0")
    hyp: list[float] = []
    first = None
    for n, (An, rn, dn) in enumerate(zip(sequence, radii, delta_bounds)):
        if An is limit:
            h = 0.0
        elif hypothesis_values is not None:
            h = float(hypothesis_values[n])
        else:
            L = limit if rn is None else truncate(limit, rn)
            if L is None:
                raise ValueError(f"limit ∩ r_{n}B is empty")
            h = hausdorff(L, An, sampler).hausdorff
        hyp.append(h)
        if h > dn + tol and first is None:
            first = ("hypothesis", n, h, dn)
    if r_grid is None:
        finite = [r for r in radii if r is not None]
        top = max(finite) if finite else 1.0
        r_grid = [top / 4.0, top / 2.0]
    concl: dict = {}
    for r in r_grid:
        vals = []
        for n, (An, rn, dn) in enumerate(zip(sequence, radii, delta_bounds)):
            if rn is not None and rn <= r:
                continue
            if An is limit:
                vals.append(0.0)
                continue
            v = localized_hausdorff(limit, An, r, sampler)
            vals.append(v)
            if v > dn + tol and first is None:
                first = ("conclusion", n, v, dn, r)
        concl[float(r)] = vals
    return AWCertificate(first is None, hyp, concl, first)
