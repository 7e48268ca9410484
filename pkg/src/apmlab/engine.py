"""Classical and perturbed alternating projections.

The perturbed sequence for set sequences {A_n}, {B_n} is

    b_n = P_{B_n}(a_{n-1}),    a_n = P_{A_n}(b_n),    a_0 = x0,

and the classical one is the constant case.  Schedules are lists of blocks
(A_set, B_set, count); long blocks whose projections are affine on a ball
around a common fixed point are advanced with matrix powers.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import geometry as g
from .config import (
    DEFAULT_TOL,
    DISPLACEMENT_BUDGET,
    DISPLACEMENT_SPREAD,
    DISPLACEMENT_STARTS,
    FIXED_POINT_STEP_TOL,
    TRACE_MAX_POINTS,
)

# Blocks shorter than this are always iterated step by step, so short runs
# reproduce the plain recursion bit for bit.
FAST_FORWARD_MIN = 4096

ORIGINAL, HATTED, TRUNCATED = "original", "hatted", "truncated"
TAGS = (ORIGINAL, HATTED, TRUNCATED)


class BudgetExhausted(RuntimeError):
    """A search hit its iteration cap before its stopping rule fired."""

    def __init__(self, message: str, achieved: float = math.nan):
        super().__init__(f"{message} (achieved={achieved:.6g})")
        self.achieved = achieved


@dataclass
class PairProblem:
    """A pair (A, B) with its displacement vector and best approximation sets."""

    A: g.ConvexSet
    B: g.ConvexSet
    v: np.ndarray | None = None
    E: g.ConvexSet | None = None
    F: g.ConvexSet | None = None
    v_is_analytic: bool = False

    def __post_init__(self):
        if self.A.dim != self.B.dim:
            raise g.GeometryError("A and B have different dimensions")
        if self.v is not None:
            self.v = g.as_vector(self.v, self.A.dim)

    @property
    def dim(self) -> int:
        return self.A.dim

    def displacement(self) -> np.ndarray:
        if self.v is None:
            self.v = displacement_vector(self.A, self.B).v
        return self.v


# ------------------------------------------------------------------ schedule

@dataclass
class Block:
    A: g.ConvexSet
    B: g.ConvexSet
    count: int
    tag: str = ORIGINAL
    delta_A: float = 0.0
    delta_B: float = 0.0
    radius: float | None = None

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 1:
            raise ValueError(f"block count must be a positive integer, got {self.count}")
        self.count = int(self.count)
        if self.tag not in TAGS:
            raise ValueError(f"unknown block tag {self.tag!r}")
        if self.A.dim != self.B.dim:
            raise g.GeometryError("block sets have different dimensions")


@dataclass
class PerturbationSchedule:
    blocks: list[Block]

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("schedule needs at least one block")

    @property
    def total(self) -> int:
        return sum(b.count for b in self.blocks)

    @property
    def dim(self) -> int:
        return self.blocks[0].A.dim

    def boundaries(self) -> list[int]:
        """Global step index of the last step of each block."""
        return list(np.cumsum([b.count for b in self.blocks]).tolist())

    def expand(self) -> Iterable[tuple[g.ConvexSet, g.ConvexSet, int]]:
        """Per-step (A_n, B_n, block index), n = 1, 2, ..."""
        for i, blk in enumerate(self.blocks):
            for _ in range(blk.count):
                yield blk.A, blk.B, i

    def __len__(self) -> int:
        return self.total


# ------------------------------------------------------------------ trace

@dataclass
class Trace:
    """Stored iterates of a run.

    ``steps[i]`` is the global index n of ``a[i] = a_n`` and ``b[i] = b_n``;
    the starting point a_0 is kept in ``x0``.  At most about
    TRACE_MAX_POINTS steps are stored (geometrically thinned), always
    including the last step of every block.
    """

    x0: np.ndarray
    steps: list[int] = field(default_factory=list)
    a: list[np.ndarray] = field(default_factory=list)
    b: list[np.ndarray] = field(default_factory=list)
    step_size: list[float] = field(default_factory=list)
    block_id: list[int] = field(default_factory=list)
    dist_a_E: list[float] = field(default_factory=list)
    dist_b_F: list[float] = field(default_factory=list)
    stop_reason: str = "budget"
    n_steps: int = 0
    fast_forwarded: int = 0

    @property
    def a_final(self) -> np.ndarray:
        return self.a[-1] if self.a else self.x0

    @property
    def b_final(self) -> np.ndarray | None:
        return self.b[-1] if self.b else None

    def as_array(self, which: str = "a") -> np.ndarray:
        return np.array(self.a if which == "a" else self.b)

    def record(self, n, a, b, step, block, E, F):
        self.steps.append(n)
        self.a.append(a)
        self.b.append(b)
        self.step_size.append(step)
        self.block_id.append(block)
        self.dist_a_E.append(math.nan if E is None else g.dist_point(E, a))
        self.dist_b_F.append(math.nan if F is None else g.dist_point(F, b))

    def summary(self) -> dict:
        def last(xs):
            return None if not xs or math.isnan(xs[-1]) else float(xs[-1])

        return {
            "stop_reason": self.stop_reason,
            "steps": self.n_steps,
            "stored_steps": len(self.steps),
            "fast_forwarded_steps": self.fast_forwarded,
            "final_a": None if not self.a else [float(t) for t in self.a[-1]],
            "final_b": None if not self.b else [float(t) for t in self.b[-1]],
            "final_step_size": None if not self.step_size else float(self.step_size[-1]),
            "final_dist_a_E": last(self.dist_a_E),
            "final_dist_b_F": last(self.dist_b_F),
        }

    def to_csv(self) -> str:
        """CSV: step, phase, x0..x{d-1}, dist_to_E, dist_to_F, block_id."""
        d = self.x0.shape[0]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "phase"] + [f"x{i}" for i in range(d)] + ["dist_to_E", "dist_to_F", "block_id"])
        w.writerow([0, "A"] + [repr(float(t)) for t in self.x0] + ["", "", ""])

        def num(x):
            return "" if math.isnan(x) else repr(float(x))

        for n, a, b, blk, dE, dF in zip(self.steps, self.a, self.b, self.block_id, self.dist_a_E, self.dist_b_F):
            w.writerow([n, "B"] + [repr(float(t)) for t in b] + ["", num(dF), blk])
            w.writerow([n, "A"] + [repr(float(t)) for t in a] + [num(dE), "", blk])
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def _keep_steps(total: int, max_points: int) -> np.ndarray:
    """Geometrically spaced step indices in [1, total], at most ~max_points."""
    head = min(total, max_points // 2)
    if total <= max_points:
        return np.arange(1, total + 1)
    tail = np.unique(np.round(np.geomspace(head + 1, total, max_points - head)).astype(np.int64))
    return np.concatenate([np.arange(1, head + 1), tail])


# ------------------------------------------------------------------ affine fast path

def _affine_pair(A: g.ConvexSet, B: g.ConvexSet):
    """(regime_A, regime_B, center, radius) when P_A P_B is affine on a ball."""
    ra, rb = A.affine_regime(), B.affine_regime()
    if ra is None or rb is None:
        return None
    centers = [r.center for r in (ra, rb) if r.center is not None]
    if not centers:
        return ra, rb, None, math.inf
    c = centers[0]
    if any(not np.allclose(c2, c, rtol=0, atol=1e-12) for c2 in centers[1:]):
        return None
    # c must be a fixed point of both maps for the ball to be invariant.
    if not (np.allclose(ra.apply(c), c, atol=1e-12) and np.allclose(rb.apply(c), c, atol=1e-12)):
        return None
    return ra, rb, c, min(ra.radius, rb.radius)


class _AffineCycle:
    """Powers of the homogeneous matrix of x -> P_A(P_B(x)).

    The squarings H^(2^k) are cached, so applying H^n costs O(log n)
    matrix-vector products.
    """

    def __init__(self, ra: g.AffineRegime, rb: g.AffineRegime):
        self.ra, self.rb = ra, rb
        self.H = ra.homogeneous() @ rb.homogeneous()
        self.d = ra.offset.shape[0]
        self._p2 = [self.H]

    def pow2(self, k: int) -> np.ndarray:
        while len(self._p2) <= k:
            self._p2.append(self._p2[-1] @ self._p2[-1])
        return self._p2[k]

    def apply_pow2(self, x: np.ndarray, k: int) -> np.ndarray:
        M = self.pow2(k)
        return M[: self.d, : self.d] @ x + M[: self.d, self.d]

    def power_apply(self, x: np.ndarray, n: int) -> np.ndarray:
        y = np.append(x, 1.0)
        k = 0
        while n:
            if n & 1:
                y = self.pow2(k) @ y
            n >>= 1
            k += 1
        return y[: self.d]


def _fast_forwardable(A, B, x, count):
    if count < FAST_FORWARD_MIN:
        return None
    info = _affine_pair(A, B)
    if info is None:
        return None
    ra, rb, c, radius = info
    if c is not None and np.linalg.norm(x - c) > radius:
        return None
    return _AffineCycle(ra, rb)


# ------------------------------------------------------------------ runners

def _run_blocks(
    blocks: Sequence[Block],
    x0: np.ndarray,
    E: g.ConvexSet | None,
    F: g.ConvexSet | None,
    stop_tol: float,
    fast_forward: bool,
    max_points: int,
) -> Trace:
    total = sum(b.count for b in blocks)
    keep = set(_keep_steps(total, max_points).tolist())
    trace = Trace(x0=x0.copy())
    a = x0
    n = 0
    for bi, blk in enumerate(blocks):
        end = n + blk.count
        cyc = _fast_forwardable(blk.A, blk.B, a, blk.count) if fast_forward else None
        if cyc is not None:
            # Stored steps inside the block, plus its last step.
            inner = sorted(k for k in keep if n < k < end) + [end]
            prev = n
            for k in inner:
                a_prev = cyc.power_apply(a, k - 1 - prev)
                b_k = cyc.rb.apply(a_prev)
                a = cyc.ra.apply(b_k)
                trace.record(k, a, b_k, float(np.linalg.norm(a - a_prev)), bi, E, F)
                prev = k
            trace.fast_forwarded += blk.count
            n = end
            continue
        PA, PB = blk.A.project, blk.B.project
        while n < end:
            n += 1
            b = PB(a)
            a_new = PA(b)
            step = float(np.linalg.norm(a_new - a))
            a = a_new
            if n in keep or n == end:
                trace.record(n, a, b, step, bi, E, F)
            if stop_tol > 0 and step <= stop_tol:
                if not trace.steps or trace.steps[-1] != n:
                    trace.record(n, a, b, step, bi, E, F)
                trace.stop_reason = "converged"
                trace.n_steps = n
                return trace
    trace.n_steps = n
    trace.stop_reason = "budget"
    return trace


def run_apm(
    pair: PairProblem,
    x0,
    budget: int,
    stop_tol: float = 0.0,
    fast_forward: bool = True,
    max_points: int = TRACE_MAX_POINTS,
) -> Trace:
    """Classical alternating projections from a_0 = x0.

    Stops when ||a_n - a_{n-1}|| <= stop_tol (``converged``) or after
    ``budget`` cycles (``budget``).
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    x0 = g.as_vector(x0, pair.dim)
    # Early stopping is incompatible with skipping steps.
    ff = fast_forward and stop_tol <= 0
    blk = Block(pair.A, pair.B, budget)
    return _run_blocks([blk], x0, pair.E, pair.F, stop_tol, ff, max_points)


def run_perturbed(
    schedule: PerturbationSchedule,
    x0,
    E: g.ConvexSet | None = None,
    F: g.ConvexSet | None = None,
    fast_forward: bool = True,
    max_points: int = TRACE_MAX_POINTS,
) -> Trace:
    """Perturbed alternating projections following the schedule's blocks."""
    x0 = g.as_vector(x0, schedule.dim)
    return _run_blocks(schedule.blocks, x0, E, F, 0.0, fast_forward, max_points)


def pi_operator(A: g.ConvexSet, B: g.ConvexSet, x, n: int, fast_forward: bool = True) -> np.ndarray:
    """``(P_A P_B)^n x``; n = 0 returns x."""
    if n < 0 or int(n) != n:
        raise ValueError("n must be a nonnegative integer")
    x = g.as_vector(x, A.dim)
    n = int(n)
    if n == 0:
        return x.copy()
    cyc = _fast_forwardable(A, B, x, n) if fast_forward else None
    if cyc is not None:
        return cyc.power_apply(x, n)
    PA, PB = A.project, B.project
    for _ in range(n):
        x = PA(PB(x))
    return x


def smallest_index(
    A: g.ConvexSet,
    B: g.ConvexSet,
    x,
    predicate: Callable[[np.ndarray], bool],
    cap: int,
    monotone: bool = False,
) -> tuple[int, np.ndarray]:
    """Smallest n >= 1 with predicate((P_A P_B)^n x), and that iterate.

    With ``monotone=True`` (predicate false then true forever, e.g. a
    Fejér-monotone distance falling below a threshold) and an affine cycle,
    the index is found by exponential and binary search over matrix powers.
    Raises BudgetExhausted when no index <= cap qualifies.
    """
    x = g.as_vector(x, A.dim)
    cyc = _fast_forwardable(A, B, x, cap) if monotone else None
    if cyc is not None:
        # Exponential search over H^(2^k), then binary lifting below it.
        top = 0
        while not predicate(cyc.apply_pow2(x, top)):
            if 2**top >= cap:
                raise BudgetExhausted(f"no index <= {cap} satisfies the stopping rule")
            top += 1
        cur, n = x, 0
        for k in range(top - 1, -1, -1):
            y = cyc.apply_pow2(cur, k)
            if not predicate(y):
                cur, n = y, n + 2**k
        if n + 1 > cap:
            raise BudgetExhausted(f"no index <= {cap} satisfies the stopping rule")
        return n + 1, cyc.apply_pow2(cur, 0)
    PA, PB = A.project, B.project
    y = x
    for n in range(1, cap + 1):
        y = PA(PB(y))
        if predicate(y):
            return n, y
    raise BudgetExhausted(f"no index <= {cap} satisfies the stopping rule")


# ------------------------------------------------------------------ displacement / E, F

@dataclass
class DisplacementEstimate:
    v: np.ndarray
    quality: float
    trusted: bool
    converged: bool


def displacement_vector(
    A: g.ConvexSet,
    B: g.ConvexSet,
    analytic=None,
    starts: int = DISPLACEMENT_STARTS,
    budget: int = DISPLACEMENT_BUDGET,
    seed: int = 0,
    spread_tol: float = DISPLACEMENT_SPREAD,
) -> DisplacementEstimate:
    """Displacement vector ``v = P_{cl(B-A)}(0)``.

    A registered closed form is returned with quality 0.  Otherwise v is
    the mean of ``b_n - a_n`` over several APM runs from random starts and
    quality is the largest deviation from that mean.
    """
    if analytic is not None:
        return DisplacementEstimate(g.as_vector(analytic, A.dim), 0.0, True, True)
    rng = np.random.default_rng(seed)
    pair = PairProblem(A, B)
    diffs = []
    converged = True
    for _ in range(starts):
        x0 = rng.normal(size=A.dim) * 5.0
        tr = run_apm(pair, x0, budget, stop_tol=1e-13, fast_forward=False, max_points=4)
        converged &= tr.stop_reason == "converged"
        diffs.append(tr.b_final - tr.a_final)
    diffs = np.array(diffs)
    v = diffs.mean(axis=0)
    spread = float(np.max(np.linalg.norm(diffs - v, axis=1)))
    return DisplacementEstimate(v, spread, spread <= spread_tol, converged)


@dataclass
class BestApproxResult:
    E: list[np.ndarray]
    F: list[np.ndarray]
    dropped: list[int]
    max_residual: float


def best_approx_sets(
    pair: PairProblem,
    starts: Sequence,
    step_tol: float = FIXED_POINT_STEP_TOL,
    budget: int = 100_000,
    check_tol: float | None = None,
) -> BestApproxResult:
    """Fixed points of P_A P_B reached from each start.

    Each point e is kept only if dist(e, A) and dist(e, B - v) are within
    ``check_tol`` and f = e + v is a fixed point of P_B P_A.
    """
    v = pair.displacement()
    B_minus_v = g.translate(pair.B, -v)
    E_pts, F_pts, dropped = [], [], []
    worst = 0.0
    for i, s in enumerate(starts):
        x = g.as_vector(s, pair.dim)
        ok = False
        for _ in range(budget):
            y = pair.A.project(pair.B.project(x))
            step = float(np.linalg.norm(y - x))
            x = y
            if step <= step_tol:
                ok = True
                break
        tol = check_tol if check_tol is not None else 1e3 * DEFAULT_TOL * (1.0 + float(np.linalg.norm(x)))
        if ok:
            f = x + v
            res = max(
                g.dist_point(pair.A, x),
                g.dist_point(B_minus_v, x),
                float(np.linalg.norm(pair.B.project(pair.A.project(f)) - f)),
            )
            ok = res <= tol
            worst = max(worst, res)
        if ok:
            E_pts.append(x)
            F_pts.append(x + v)
        else:
            dropped.append(i)
    return BestApproxResult(E_pts, F_pts, dropped, worst)


@dataclass
class BB93Report:
    norm_v: float
    dist_AB: float
    residuals: dict
    ok: dict
    samples: int

    @property
    def passed(self) -> bool:
        return all(self.ok.values())

    def to_dict(self) -> dict:
        return {
            "norm_v": self.norm_v,
            "dist_AB": self.dist_AB,
            "residuals": self.residuals,
            "ok": self.ok,
            "samples": self.samples,
        }


def sample_points(C: g.ConvexSet, n: int, rng: np.random.Generator, scale: float = 5.0) -> np.ndarray:
    """n points of C: projections of Gaussian points around C."""
    anchor = C.project(np.zeros(C.dim))
    pts = anchor + scale * rng.normal(size=(n, C.dim))
    return np.array([C.project(p) for p in pts])


def fact_bb93_check(
    pair: PairProblem,
    samples: int = 100,
    seed: int = 0,
    dist_AB: float | None = None,
    tol_norm: float = 1e-8,
    tol_translate: float = 1e-6,
    tol_proj: float = 1e-8,
) -> BB93Report:
    """Check ||v|| = dist(A,B), E + v = F, P_B e = P_F e = e + v and
    P_A f = P_E f = f - v on sampled points of E and F."""
    if pair.E is None or pair.F is None or pair.v is None:
        raise ValueError("fact_bb93_check needs analytic v, E and F")
    v = pair.v
    if dist_AB is None:
        a, b = g.min_distance_pair(pair.A, pair.B)
        dist_AB = float(np.linalg.norm(a - b))
    rng = np.random.default_rng(seed)
    Es = sample_points(pair.E, samples, rng)
    Fs = sample_points(pair.F, samples, rng)
    r_translate = max(
        max(g.dist_point(pair.F, e + v) for e in Es),
        max(g.dist_point(pair.E, f - v) for f in Fs),
    )
    r_pb = max(float(np.linalg.norm(pair.B.project(e) - (e + v))) for e in Es)
    r_pf = max(float(np.linalg.norm(pair.F.project(e) - (e + v))) for e in Es)
    r_pa = max(float(np.linalg.norm(pair.A.project(f) - (f - v))) for f in Fs)
    r_pe = max(float(np.linalg.norm(pair.E.project(f) - (f - v))) for f in Fs)
    norm_v = float(np.linalg.norm(v))
    residuals = {
        "norm_v_minus_dist": abs(norm_v - dist_AB),
        "E_plus_v_eq_F": r_translate,
        "P_B_e": r_pb,
        "P_F_e": r_pf,
        "P_A_f": r_pa,
        "P_E_f": r_pe,
    }
    ok = {
        "norm_v_minus_dist": residuals["norm_v_minus_dist"] <= tol_norm,
        "E_plus_v_eq_F": r_translate <= tol_translate,
        "P_B_e": r_pb <= tol_proj,
        "P_F_e": r_pf <= tol_proj,
        "P_A_f": r_pa <= tol_proj,
        "P_E_f": r_pe <= tol_proj,
    }
    return BB93Report(norm_v, dist_AB, residuals, ok, samples)
