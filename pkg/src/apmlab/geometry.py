"""Convex sets in R^d and their metric projections.

Every set variant is nonempty, closed and convex by construction and exposes
``project(x)``, the nearest-point map.  Closed forms are used wherever they
exist; polytopes use Wolfe's minimum-norm-point active-set method, and
general intersections fall back to Dykstra's cyclic scheme.

Sets are immutable: arrays are copied and frozen on construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar, Sequence

import numpy as np
from scipy.optimize import brentq

from .config import DEFAULT_TOL, DYKSTRA_CHANGE_TOL, DYKSTRA_MAX_SWEEPS


class GeometryError(ValueError):
    """Malformed set description, bad vector or dimension mismatch."""


class ProjectionError(RuntimeError):
    """An iterative projection failed to converge within its budget."""

    def __init__(self, message: str, residual: float = math.nan):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


def as_vector(x, dim: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1 or v.shape[0] == 0:
        raise GeometryError(f"expected a nonempty 1-D vector, got shape {v.shape}")
    # The sum is finite iff every coordinate is (barring overflow).
    if not math.isfinite(float(v.sum())) and not np.isfinite(v).all():
        raise GeometryError("vector has non-finite coordinates")
    if dim is not None and v.shape[0] != dim:
        raise GeometryError(f"dimension mismatch: expected {dim}, got {v.shape[0]}")
    return v


def _frozen(x, dim: int | None = None) -> np.ndarray:
    v = np.array(as_vector(x, dim), dtype=float)
    v.setflags(write=False)
    return v


def inner(x, y) -> float:
    """Euclidean inner product; raises GeometryError on dimension mismatch."""
    x = as_vector(x)
    y = as_vector(y, x.shape[0])
    return float(np.dot(x, y))


def norm(x) -> float:
    x = np.asarray(x, dtype=float)
    s = float(x @ x)
    if 1e-290 < s < 1e290:
        return math.sqrt(s)
    # Under- or overflow of the squares: fall back to a scaled computation.
    return math.hypot(*x.ravel())


@dataclass(frozen=True)
class AffineRegime:
    """Affine description ``x -> proj @ x + offset`` of a projection.

    Valid everywhere when ``radius`` is infinite, otherwise on the ball
    ``center + radius*B``; ``center`` is a fixed point of the map.
    """

    proj: np.ndarray
    offset: np.ndarray
    center: np.ndarray | None = None
    radius: float = math.inf

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.proj @ x + self.offset

    def homogeneous(self) -> np.ndarray:
        d = self.offset.shape[0]
        H = np.zeros((d + 1, d + 1))
        H[:d, :d] = self.proj
        H[:d, d] = self.offset
        H[d, d] = 1.0
        return H


class ConvexSet:
    """Base class for the set algebra."""

    kind: ClassVar[str] = ""

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def project(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def support(self, u: np.ndarray) -> float:
        """``sup <u, c>`` over the set (``inf`` when unbounded)."""
        return _cvx_support(self, u)

    def norm_bound(self, center: np.ndarray) -> float:
        """An upper bound on ``sup ||c - center||`` over the set."""
        return math.inf

    def affine_regime(self) -> AffineRegime | None:
        return None

    def to_dict(self) -> dict:
        raise NotImplementedError

    def _cvx(self, var) -> list:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim={self.dim})"


def _unit_normal(normal, offset: float) -> tuple[np.ndarray, float]:
    n = as_vector(normal)
    s = norm(n)
    if s == 0.0:
        raise GeometryError("zero normal")
    if not math.isfinite(float(offset)):
        raise GeometryError("non-finite offset")
    return _frozen(n / s), float(offset) / s


def _parallel_coef(u: np.ndarray, n: np.ndarray) -> float | None:
    """Return lambda with u = lambda*n (n unit), or None when not parallel."""
    lam = float(np.dot(u, n))
    if norm(u - lam * n) <= 1e-12 * (1.0 + norm(u)):
        return lam
    return None


@dataclass(frozen=True, eq=False, repr=False)
class Halfspace(ConvexSet):
    """``{x : <normal, x> <= offset}``; normal and offset are rescaled together."""

    normal: np.ndarray
    offset: float
    kind: ClassVar[str] = "halfspace"

    def __post_init__(self):
        n, b = _unit_normal(self.normal, self.offset)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", b)

    @property
    def dim(self) -> int:
        return self.normal.shape[0]

    def value(self, x: np.ndarray) -> float:
        return float(self.normal @ x)

    def project(self, x):
        excess = self.normal @ x - self.offset
        if excess <= 0.0:
            return x
        return x - excess * self.normal

    def support(self, u):
        lam = _parallel_coef(u, self.normal)
        if lam is None or lam < 0:
            return math.inf
        return lam * self.offset

    def to_dict(self):
        return {"type": self.kind, "normal": self.normal.tolist(), "offset": self.offset}

    def _cvx(self, var):
        return [self.normal @ var <= self.offset]


@dataclass(frozen=True, eq=False, repr=False)
class Hyperplane(ConvexSet):
    """``{x : <normal, x> = offset}``."""

    normal: np.ndarray
    offset: float
    kind: ClassVar[str] = "hyperplane"

    def __post_init__(self):
        n, b = _unit_normal(self.normal, self.offset)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", b)

    @property
    def dim(self) -> int:
        return self.normal.shape[0]

    def project(self, x):
        return x - (self.normal @ x - self.offset) * self.normal

    def support(self, u):
        lam = _parallel_coef(u, self.normal)
        return math.inf if lam is None else lam * self.offset

    def affine_regime(self):
        n = self.normal
        return AffineRegime(np.eye(self.dim) - np.outer(n, n), self.offset * n)

    def to_dict(self):
        return {"type": self.kind, "normal": self.normal.tolist(), "offset": self.offset}

    def _cvx(self, var):
        return [self.normal @ var == self.offset]


@dataclass(frozen=True, eq=False, repr=False)
class Ball(ConvexSet):
    """Closed ball; radius 0 is a singleton."""

    center: np.ndarray
    radius: float
    kind: ClassVar[str] = "ball"

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen(self.center))
        r = float(self.radius)
        if not (r >= 0.0 and math.isfinite(r)):
            raise GeometryError(f"ball radius must be finite and >= 0, got {self.radius}")
        object.__setattr__(self, "radius", r)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def project(self, x):
        d = x - self.center
        s = math.sqrt(float(d @ d))
        if s <= self.radius:
            return x
        return self.center + (self.radius / s) * d

    def support(self, u):
        return float(u @ self.center) + self.radius * norm(u)

    def norm_bound(self, center):
        return norm(self.center - center) + self.radius

    def affine_regime(self):
        if self.radius == 0.0:
            return AffineRegime(np.zeros((self.dim, self.dim)), self.center.copy())
        return None

    def to_dict(self):
        return {"type": self.kind, "center": self.center.tolist(), "radius": self.radius}

    def _cvx(self, var):
        import cvxpy as cp

        if self.radius == 0.0:
            return [var == self.center]
        return [cp.norm(var - self.center) <= self.radius]


@dataclass(frozen=True, eq=False, repr=False)
class Segment(ConvexSet):
    """Closed segment ``[a, b]``; ``a == b`` is a singleton."""

    a: np.ndarray
    b: np.ndarray
    kind: ClassVar[str] = "segment"

    def __post_init__(self):
        a = _frozen(self.a)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", _frozen(self.b, a.shape[0]))

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    @property
    def vertices(self) -> np.ndarray:
        return np.vstack([self.a, self.b])

    def project(self, x):
        d = self.b - self.a
        dd = float(d @ d)
        if dd == 0.0:
            return self.a.copy()
        t = float((x - self.a) @ d) / dd
        t = min(1.0, max(0.0, t))
        return self.a + t * d

    def support(self, u):
        return max(float(u @ self.a), float(u @ self.b))

    def norm_bound(self, center):
        return max(norm(self.a - center), norm(self.b - center))

    def affine_regime(self):
        if np.array_equal(self.a, self.b):
            return AffineRegime(np.zeros((self.dim, self.dim)), self.a.copy())
        return None

    def to_dict(self):
        return {"type": self.kind, "a": self.a.tolist(), "b": self.b.tolist()}

    def _cvx(self, var):
        import cvxpy as cp

        t = cp.Variable()
        return [var == self.a + t * (self.b - self.a), t >= 0, t <= 1]


def _orthonormal_rows(directions, dim: int) -> np.ndarray:
    D = np.asarray(directions, dtype=float)
    if D.size == 0:
        return np.zeros((0, dim))
    D = np.atleast_2d(D)
    if D.shape[1] != dim or not np.all(np.isfinite(D)):
        raise GeometryError(f"directions must be finite rows of length {dim}")
    G = D @ D.T
    if np.allclose(G, np.eye(D.shape[0]), rtol=0, atol=1e-12):
        return D.copy()
    # Orthonormal basis of the row space; rank-deficient directions are dropped.
    U, s, Vt = np.linalg.svd(D, full_matrices=False)
    rank = int(np.sum(s > 1e-12 * max(1.0, s.max())))
    return Vt[:rank].copy()


@dataclass(frozen=True, eq=False, repr=False)
class AffineSpan(ConvexSet):
    """``base + span(directions)``; directions are orthonormalized."""

    base: np.ndarray
    directions: np.ndarray
    kind: ClassVar[str] = "affine_span"

    def __post_init__(self):
        base = _frozen(self.base)
        Q = _orthonormal_rows(self.directions, base.shape[0])
        Q.setflags(write=False)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "directions", Q)

    @property
    def dim(self) -> int:
        return self.base.shape[0]

    @property
    def projector(self) -> np.ndarray:
        Q = self.directions
        return Q.T @ Q

    def project(self, x):
        Q = self.directions
        if Q.shape[0] == 0:
            return self.base.copy()
        return self.base + Q.T @ (Q @ (x - self.base))

    def support(self, u):
        Q = self.directions
        if Q.shape[0] and norm(Q @ u) > 1e-12 * (1.0 + norm(u)):
            return math.inf
        return float(u @ self.base)

    def norm_bound(self, center):
        if self.directions.shape[0]:
            return math.inf
        return norm(self.base - center)

    def affine_regime(self):
        M = self.projector
        return AffineRegime(M, self.base - M @ self.base)

    def to_dict(self):
        return {"type": self.kind, "base": self.base.tolist(), "directions": self.directions.tolist()}

    def _cvx(self, var):
        import cvxpy as cp

        k = self.directions.shape[0]
        if k == 0:
            return [var == self.base]
        y = cp.Variable(k)
        return [var == self.base + self.directions.T @ y]


def _affine_min_norm(P: np.ndarray) -> np.ndarray:
    """Weights mu (summing to 1) of the min-norm point of aff(rows of P)."""
    if P.shape[0] == 1:
        return np.ones(1)
    D = (P[1:] - P[0]).T
    c, *_ = np.linalg.lstsq(D, -P[0], rcond=None)
    return np.concatenate([[1.0 - c.sum()], c])


def min_norm_in_hull(P: np.ndarray, tol: float = 1e-12, max_iter: int = 10_000) -> np.ndarray:
    """Minimum-norm point of conv(rows of P) by Wolfe's active-set method."""
    norms = np.einsum("ij,ij->i", P, P)
    scale = max(float(norms.max()), 1e-300)
    S = [int(np.argmin(norms))]
    lam = np.ones(1)
    x = P[S[0]].copy()
    for _ in range(max_iter):
        dots = P @ x
        j = int(np.argmin(dots))
        if dots[j] >= float(x @ x) - tol * scale or j in S:
            break
        S.append(j)
        lam = np.append(lam, 0.0)
        for _ in range(len(P) + 2):
            mu = _affine_min_norm(P[S])
            if np.all(mu > tol):
                lam = mu
                break
            neg = mu <= tol
            denom = lam[neg] - mu[neg]
            ratios = np.where(denom > 0, lam[neg] / np.where(denom > 0, denom, 1.0), 0.0)
            theta = min(1.0, float(ratios.min()))
            lam = lam + theta * (mu - lam)
            keep = lam > tol
            if keep.all():
                keep[int(np.argmin(lam))] = False
            S = [s for s, k in zip(S, keep) if k]
            lam = lam[keep]
            lam = lam / lam.sum()
        else:
            raise ProjectionError("Wolfe minor cycle did not terminate")
        if j not in S:
            # The entering vertex was dropped at once: no further progress.
            x = lam @ P[S]
            break
        x = lam @ P[S]
    return x


@dataclass(frozen=True, eq=False, repr=False)
class Polytope(ConvexSet):
    """Convex hull of a nonempty vertex list."""

    vertices: np.ndarray
    kind: ClassVar[str] = "polytope"

    def __post_init__(self):
        V = np.array(self.vertices, dtype=float)
        if V.ndim == 1:
            V = V.reshape(1, -1)
        if V.ndim != 2 or V.shape[0] == 0 or V.shape[1] == 0:
            raise GeometryError("polytope needs a nonempty list of vertices")
        if not np.all(np.isfinite(V)):
            raise GeometryError("polytope vertices must be finite")
        V.setflags(write=False)
        object.__setattr__(self, "vertices", V)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def project(self, x):
        if self.vertices.shape[0] == 1:
            return self.vertices[0].copy()
        return x + min_norm_in_hull(self.vertices - x)

    def support(self, u):
        return float(np.max(self.vertices @ u))

    def norm_bound(self, center):
        return float(np.max(np.linalg.norm(self.vertices - center, axis=1)))

    def affine_regime(self):
        if self.vertices.shape[0] == 1:
            return AffineRegime(np.zeros((self.dim, self.dim)), self.vertices[0].copy())
        return None

    def to_dict(self):
        return {"type": self.kind, "vertices": self.vertices.tolist()}

    def _cvx(self, var):
        import cvxpy as cp

        lam = cp.Variable(self.vertices.shape[0])
        return [var == self.vertices.T @ lam, lam >= 0, cp.sum(lam) == 1]


def project_dilation(C: ConvexSet, r: float, x) -> np.ndarray:
    """Projection onto ``C + r*B``: move x to within distance r of C."""
    if not r > 0:
        raise GeometryError(f"dilation radius must be > 0, got {r}")
    x = as_vector(x, C.dim)
    return _project_dilation(C, float(r), x)


def _project_dilation(C: ConvexSet, r: float, x: np.ndarray) -> np.ndarray:
    p = C.project(x)
    d = x - p
    s = math.sqrt(float(d @ d))
    if s <= r:
        return x
    return p + (r / s) * d


@dataclass(frozen=True, eq=False, repr=False)
class Dilation(ConvexSet):
    """``inner + radius*B`` with radius > 0."""

    inner: ConvexSet
    radius: float
    kind: ClassVar[str] = "dilation"

    def __post_init__(self):
        r = float(self.radius)
        if not (r > 0.0 and math.isfinite(r)):
            raise GeometryError(f"dilation radius must be finite and > 0, got {self.radius}")
        object.__setattr__(self, "radius", r)

    @property
    def dim(self) -> int:
        return self.inner.dim

    def project(self, x):
        return _project_dilation(self.inner, self.radius, x)

    def contains_fast(self, x: np.ndarray, slack: float) -> bool:
        p = self.inner.project(x)
        return norm(x - p) <= self.radius + slack

    def support(self, u):
        return self.inner.support(u) + self.radius * norm(u)

    def norm_bound(self, center):
        return self.inner.norm_bound(center) + self.radius

    def to_dict(self):
        return {"type": self.kind, "inner": self.inner.to_dict(), "radius": self.radius}

    def _cvx(self, var):
        import cvxpy as cp

        y = cp.Variable(self.dim)
        d = cp.Variable(self.dim)
        return [var == y + d, cp.norm(d) <= self.radius] + self.inner._cvx(y)


@dataclass(frozen=True, eq=False, repr=False)
class Translate(ConvexSet):
    """``inner + shift``."""

    inner: ConvexSet
    shift: np.ndarray
    kind: ClassVar[str] = "translate"

    def __post_init__(self):
        object.__setattr__(self, "shift", _frozen(self.shift, self.inner.dim))

    @property
    def dim(self) -> int:
        return self.inner.dim

    def project(self, x):
        return self.shift + self.inner.project(x - self.shift)

    def support(self, u):
        return self.inner.support(u) + float(u @ self.shift)

    def norm_bound(self, center):
        return self.inner.norm_bound(center - self.shift)

    def affine_regime(self):
        reg = self.inner.affine_regime()
        if reg is None:
            return None
        s = self.shift
        center = None if reg.center is None else reg.center + s
        return AffineRegime(reg.proj, reg.offset + s - reg.proj @ s, center, reg.radius)

    def to_dict(self):
        return {"type": self.kind, "inner": self.inner.to_dict(), "shift": self.shift.tolist()}

    def _cvx(self, var):
        import cvxpy as cp

        y = cp.Variable(self.dim)
        return [var == y + self.shift] + self.inner._cvx(y)


_AFFINE_KINDS = (AffineSpan, Hyperplane)


def _flatten(members: Sequence[ConvexSet]) -> list[ConvexSet]:
    out: list[ConvexSet] = []
    for m in members:
        if isinstance(m, Intersection):
            out.extend(m.members)
        else:
            out.append(m)
    return out


@dataclass(frozen=True, eq=False, repr=False)
class Intersection(ConvexSet):
    """Intersection of a nonempty list of sets (assumed to meet).

    Projection strategy, chosen once on construction:
      * affine set and/or concentric balls centered on it: closed form;
      * one halfspace and one ball: closed form;
      * one halfspace or hyperplane plus anything: 1-D dual root finding
        over the multiplier of the linear constraint;
      * otherwise: Dykstra's cyclic projections.
    """

    members: tuple
    kind: ClassVar[str] = "intersection"

    def __post_init__(self):
        members = tuple(_flatten(list(self.members)))
        if not members:
            raise GeometryError("intersection needs at least one member")
        d = members[0].dim
        if any(m.dim != d for m in members):
            raise GeometryError("intersection members have different dimensions")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "_plan", self._make_plan())

    @property
    def dim(self) -> int:
        return self.members[0].dim

    def _make_plan(self):
        ms = list(self.members)
        balls = [m for m in ms if isinstance(m, Ball)]
        # A ball containing another ball is redundant.
        redundant = {
            id(b1)
            for i, b1 in enumerate(balls)
            for j, b2 in enumerate(balls)
            if i != j
            and norm(b1.center - b2.center) + b2.radius <= b1.radius
            and (b1.radius > b2.radius or i > j)
        }
        ms = [m for m in ms if id(m) not in redundant]
        balls = [m for m in ms if isinstance(m, Ball)]
        if len(ms) == 1:
            return ("single", ms[0])
        affine = [m for m in ms if isinstance(m, _AFFINE_KINDS)]
        if len(balls) == 1 and len(affine) == 1 and len(ms) == 2:
            ball, aff = balls[0], affine[0]
            pc = aff.project(ball.center)
            dc = norm(pc - ball.center)
            if dc > ball.radius * (1.0 + 1e-12):
                raise GeometryError("empty intersection of affine set and ball")
            if dc <= 1e-13 * (1.0 + norm(ball.center)):
                return ("span_ball", aff, ball.center, ball.radius)
            return ("span_ball", aff, pc, math.sqrt(max(ball.radius**2 - dc**2, 0.0)))
        halfs = [m for m in ms if isinstance(m, (Halfspace, Hyperplane))]
        if len(ms) == 2 and halfs:
            lin = halfs[0]
            rest = ms[1] if ms[0] is lin else ms[0]
            if isinstance(lin, Halfspace) and isinstance(rest, Ball):
                return ("halfspace_ball", lin, rest)
            return ("dual", lin, rest)
        if halfs:
            lin = halfs[0]
            rest = Intersection(tuple(m for m in ms if m is not lin))
            if rest._plan[0] != "dykstra":
                return ("dual", lin, rest)
        return ("dykstra", tuple(ms))

    def project(self, x):
        plan = self._plan
        tag = plan[0]
        if tag == "single":
            return plan[1].project(x)
        if tag == "span_ball":
            _, aff, c, radius = plan
            y = aff.project(x)
            d = y - c
            s = math.sqrt(float(d @ d))
            if s <= radius:
                return y
            return c + (radius / s) * d
        if tag == "halfspace_ball":
            return _project_halfspace_ball(plan[1], plan[2], x)
        if tag == "dual":
            return _project_dual(plan[1], plan[2], x)
        return _dykstra(plan[1], x)

    def support(self, u):
        plan = self._plan
        if plan[0] == "single":
            return plan[1].support(u)
        if plan[0] == "halfspace_ball":
            return _cvx_support(self, u)
        if plan[0] == "span_ball":
            _, aff, c, radius = plan
            if isinstance(aff, AffineSpan):
                Mu = aff.directions.T @ (aff.directions @ u)
            else:
                n = aff.normal
                Mu = u - (n @ u) * n
            return float(u @ c) + radius * norm(Mu)
        return _cvx_support(self, u)

    def norm_bound(self, center):
        plan = self._plan
        if plan[0] == "span_ball":
            return norm(plan[2] - center) + plan[3]
        if plan[0] == "single":
            return plan[1].norm_bound(center)
        return min(m.norm_bound(center) for m in self.members)

    def affine_regime(self):
        plan = self._plan
        if plan[0] == "single":
            return plan[1].affine_regime()
        if plan[0] != "span_ball":
            return None
        _, aff, c, radius = plan
        reg = aff.affine_regime()
        if radius == 0.0:
            return AffineRegime(np.zeros_like(reg.proj), c.copy())
        return AffineRegime(reg.proj, reg.offset, c.copy(), radius)

    def to_dict(self):
        return {"type": self.kind, "members": [m.to_dict() for m in self.members]}

    def _cvx(self, var):
        out = []
        for m in self.members:
            out.extend(m._cvx(var))
        return out


def _project_halfspace_ball(h: Halfspace, ball: Ball, x: np.ndarray) -> np.ndarray:
    y = ball.project(x)
    if h.normal @ y <= h.offset:
        return y
    # Optimum sits on the hyperplane: project onto the lower-dimensional ball.
    n = h.normal
    dc = float(n @ ball.center - h.offset)
    c2 = ball.center - dc * n
    r2 = ball.radius**2 - dc**2
    if r2 < -1e-12 * (1.0 + ball.radius**2):
        raise GeometryError("empty intersection of halfspace and ball")
    r2 = math.sqrt(max(r2, 0.0))
    z = x - (n @ x - h.offset) * n
    d = z - c2
    s = math.sqrt(float(d @ d))
    if s <= r2:
        return z
    return c2 + (r2 / s) * d


def _project_dual(lin: ConvexSet, rest: ConvexSet, x: np.ndarray) -> np.ndarray:
    """Project onto ``rest ∩ {<n,y> (<=|=) beta}`` via the scalar dual.

    The minimizer is ``P_rest(x - lam*n)`` where the multiplier lam solves
    ``<n, P_rest(x - lam*n)> = beta`` (lam >= 0 for a halfspace).  The map
    lam -> <n, P_rest(x - lam*n)> is nonincreasing, so bracketing works.
    """
    n, beta = lin.normal, lin.offset
    equality = isinstance(lin, Hyperplane)
    scale = 1.0 + norm(x)
    slack = 1e-13 * scale
    # Cheap paths first: the linear projection already lands in rest.
    y = lin.project(x)
    if _near_member(rest, y, slack):
        return y
    z = rest.project(x)
    g0 = float(n @ z) - beta
    if abs(g0) <= slack or (not equality and g0 <= 0.0):
        return z

    def g(lam: float) -> float:
        return float(n @ rest.project(x - lam * n)) - beta

    sign = 1.0 if g0 > 0 else -1.0
    step = max(abs(g0), 1e-12 * scale)
    lo, hi = 0.0, sign * step
    g_hi = g(hi)
    for _ in range(200):
        if sign * g_hi <= 0.0:
            break
        lo, hi = hi, 2.0 * hi
        g_hi = g(hi)
    else:
        raise ProjectionError("dual bracket search failed: intersection may be empty", abs(g_hi))
    if g_hi == 0.0:
        lam = hi
    else:
        a, b = (lo, hi) if lo < hi else (hi, lo)
        lam = brentq(g, a, b, xtol=1e-16 * scale, rtol=4 * np.finfo(float).eps, maxiter=500)
    out = rest.project(x - lam * n)
    if not equality:
        return out
    # Land exactly on the hyperplane when rest permits it.
    snapped = out - (n @ out - beta) * n
    return snapped if _near_member(rest, snapped, slack) else out


def _near_member(C: ConvexSet, y: np.ndarray, slack: float) -> bool:
    if isinstance(C, Dilation):
        return C.contains_fast(y, slack)
    p = C.project(y)
    return norm(p - y) <= slack


def _dykstra(members: Sequence[ConvexSet], x: np.ndarray) -> np.ndarray:
    y = x.copy()
    incs = [np.zeros_like(x) for _ in members]
    scale = 1.0 + norm(x)
    change = math.inf
    for _ in range(DYKSTRA_MAX_SWEEPS):
        y_start = y
        # Corrections are tracked too: the iterate alone can sit still for a
        # sweep while the corrections are still moving.
        inc_change = 0.0
        for i, C in enumerate(members):
            z = y + incs[i]
            y = C.project(z)
            inc = z - y
            inc_change += norm(inc - incs[i])
            incs[i] = inc
        change = norm(y - y_start) + inc_change
        if change <= DYKSTRA_CHANGE_TOL * scale:
            return y
    raise ProjectionError("Dykstra did not converge", change)


def _cvx_support(C: ConvexSet, u) -> float:
    import cvxpy as cp

    u = as_vector(u, C.dim)
    x = cp.Variable(C.dim)
    prob = cp.Problem(cp.Maximize(u @ x), C._cvx(x))
    prob.solve()
    if prob.status in ("unbounded", "unbounded_inaccurate"):
        return math.inf
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise ProjectionError(f"support computation failed with status {prob.status}")
    return float(prob.value)


def translate(C: ConvexSet, shift) -> ConvexSet:
    """``C + shift``, pushed into the set description where possible."""
    s = as_vector(shift, C.dim)
    if not np.any(s):
        return C
    if isinstance(C, Halfspace):
        return Halfspace(C.normal, C.offset + float(C.normal @ s))
    if isinstance(C, Hyperplane):
        return Hyperplane(C.normal, C.offset + float(C.normal @ s))
    if isinstance(C, Ball):
        return Ball(C.center + s, C.radius)
    if isinstance(C, Segment):
        return Segment(C.a + s, C.b + s)
    if isinstance(C, AffineSpan):
        return AffineSpan(C.base + s, C.directions)
    if isinstance(C, Polytope):
        return Polytope(C.vertices + s)
    if isinstance(C, Dilation):
        return Dilation(translate(C.inner, s), C.radius)
    if isinstance(C, Intersection):
        return Intersection(tuple(translate(m, s) for m in C.members))
    if isinstance(C, Translate):
        return translate(C.inner, C.shift + s)
    return Translate(C, s)


def dilate(C: ConvexSet, r: float) -> ConvexSet:
    """``C + r*B``, simplified for balls and halfspaces."""
    r = float(r)
    if r == 0.0:
        return C
    if isinstance(C, Ball):
        return Ball(C.center, C.radius + r)
    if isinstance(C, Halfspace):
        return Halfspace(C.normal, C.offset + r)
    if isinstance(C, Dilation):
        return Dilation(C.inner, C.radius + r)
    return Dilation(C, r)


def project(C: ConvexSet, x) -> np.ndarray:
    """Metric projection of x onto C."""
    x = as_vector(x, C.dim)
    return np.array(C.project(x), dtype=float)


def dist_point(C: ConvexSet, x) -> float:
    x = as_vector(x, C.dim)
    return norm(x - C.project(x))


def membership(C: ConvexSet, x, tol: float | None = None) -> bool:
    """True iff dist(x, C) <= tol (default: DEFAULT_TOL*(1+||x||))."""
    x = as_vector(x, C.dim)
    if tol is None:
        tol = DEFAULT_TOL * (1.0 + norm(x))
    if tol < 0:
        raise GeometryError("tol must be >= 0")
    if isinstance(C, Intersection):
        exact = [norm(x - m.project(x)) for m in C.members]
        if max(exact) == 0.0:
            return True
        if max(exact) > tol:
            return False
    return dist_point(C, x) <= tol


def support(C: ConvexSet, u) -> float:
    return C.support(as_vector(u, C.dim))


def nested_projection_check(C: ConvexSet, D: ConvexSet, b, tol: float | None = None) -> bool:
    """Check: if p = P_D(b) lies in C (C inside D), then P_C(b) = p."""
    b = as_vector(b, D.dim)
    p = D.project(b)
    if tol is None:
        tol = DEFAULT_TOL * (1.0 + norm(b))
    if not membership(C, p, tol):
        return True
    return norm(C.project(b) - p) <= tol


def min_distance_pair(A: ConvexSet, B: ConvexSet, polish: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """A pair (a, b) in A x B approximately realizing dist(A, B).

    Solved as a conic program, then polished by alternating projections
    (at most ``polish`` cycles, stopping once the iterate no longer moves)
    so that both points are exact members.
    """
    import cvxpy as cp

    if A.dim != B.dim:
        raise GeometryError("dimension mismatch")
    a = cp.Variable(A.dim)
    b = cp.Variable(B.dim)
    prob = cp.Problem(cp.Minimize(cp.norm(a - b)), A._cvx(a) + B._cvx(b))
    prob.solve()
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise ProjectionError(f"min-distance program failed with status {prob.status}")
    av = A.project(np.asarray(a.value, dtype=float))
    bv = B.project(av)
    scale = 1.0 + norm(av)
    for _ in range(polish):
        a_next = A.project(bv)
        b_next = B.project(a_next)
        moved = norm(a_next - av)
        av, bv = a_next, b_next
        if moved <= 1e-15 * scale:
            break
    return av, bv


# ---------------------------------------------------------------- serialization

def to_dict(C: ConvexSet) -> dict:
    return C.to_dict()


def _need(doc: dict, key: str, path: str):
    if key not in doc:
        raise GeometryError(f"{path}: missing field '{key}'")
    return doc[key]


def from_dict(doc: dict, path: str = "$") -> ConvexSet:
    """Inverse of ``to_dict``; errors carry a JSON-path style location."""
    if not isinstance(doc, dict):
        raise GeometryError(f"{path}: expected an object")
    kind = _need(doc, "type", path)
    try:
        if kind == "halfspace":
            return Halfspace(_need(doc, "normal", path), _need(doc, "offset", path))
        if kind == "hyperplane":
            return Hyperplane(_need(doc, "normal", path), _need(doc, "offset", path))
        if kind == "ball":
            return Ball(_need(doc, "center", path), _need(doc, "radius", path))
        if kind == "segment":
            return Segment(_need(doc, "a", path), _need(doc, "b", path))
        if kind == "affine_span":
            base = _need(doc, "base", path)
            return AffineSpan(base, _need(doc, "directions", path) or np.zeros((0, len(base))))
        if kind == "polytope":
            return Polytope(_need(doc, "vertices", path))
        if kind == "dilation":
            return Dilation(from_dict(_need(doc, "inner", path), path + ".inner"), _need(doc, "radius", path))
        if kind == "translate":
            return Translate(from_dict(_need(doc, "inner", path), path + ".inner"), _need(doc, "shift", path))
        if kind == "intersection":
            members = _need(doc, "members", path)
            if not isinstance(members, list) or not members:
                raise GeometryError(f"{path}.members: expected a nonempty list")
            return Intersection(tuple(from_dict(m, f"{path}.members[{i}]") for i, m in enumerate(members)))
    except GeometryError as exc:
        msg = str(exc)
        raise GeometryError(msg if msg.startswith("$") else f"{path}: {msg}") from None
    raise GeometryError(f"{path}.type: unknown set type {kind!r}")
