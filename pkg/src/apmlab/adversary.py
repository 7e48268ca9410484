"""Adversarial perturbation schedules for non-regular pairs.

Three layers:

* ``sandwich_verify``: when ``[z,w] ⊆ A ⊆ [f_hat >= f_hat(w)]`` and
  ``[0,w] ⊆ B ⊆ [f <= 0]`` (f = <z,.>, f_hat = <z + alpha w,.>,
  alpha = ||z||^2/||w||^2), APM from P_A(0) stays on the two segments and
  converges to w.
* ``black_box``: for sets separated by f at level beta, two points p, w on
  [f = beta] close to both sets, builds sets A_hat, B_hat within Hausdorff
  distance 3*delta of A, B whose APM from p runs along [f = beta] to w.
* ``build_separated_schedule`` / ``build_general_schedule``: chain
  classical blocks (A, B) and black-box blocks (A_hat, B_hat) so that the
  perturbed sequence keeps returning far from A ∩ B.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import geometry as g
from . import metrics as mt
from .config import AFFINE_PHASE_CAP, CERT_SLACK, DEFAULT_TOL, PHASE_CAP, SEPARATION_SLACK, TRACE_MAX_POINTS
from .engine import (
    HATTED,
    ORIGINAL,
    Block,
    BudgetExhausted,
    PairProblem,
    PerturbationSchedule,
    Trace,
    _affine_pair,
    _keep_steps,
    run_perturbed,
    smallest_index,
)


class HypothesisError(ValueError):
    """Inputs violate the hypotheses of a construction."""


class ConfinementError(RuntimeError):
    """An iterate left the segment it should stay on."""


class NoWitnessError(RuntimeError):
    """No point qualifies as a non-regularity witness."""


class SeparatorError(RuntimeError):
    """Sets expected to be disjoint are not (bad direction u_h)."""


class NoDirectionError(RuntimeError):
    """The scenario provides no admissible perturbation direction."""


def _tol(x) -> float:
    return DEFAULT_TOL * (1.0 + float(np.linalg.norm(x)))


def _on_segment(a, b, x) -> float:
    return g.dist_point(g.Segment(a, b), x)


# ------------------------------------------------------------------ sandwich lemma

@dataclass
class SandwichParams:
    z: np.ndarray
    w: np.ndarray
    alpha: float = field(init=False)
    f_normal: np.ndarray = field(init=False)
    f_hat_normal: np.ndarray = field(init=False)

    def __post_init__(self):
        self.z = g.as_vector(self.z)
        self.w = g.as_vector(self.w, self.z.shape[0])
        nz, nw = float(np.linalg.norm(self.z)), float(np.linalg.norm(self.w))
        if nz == 0 or nw == 0:
            raise HypothesisError("z and w must be nonzero")
        if abs(float(self.z @ self.w)) > 1e-12 * nz * nw:
            raise HypothesisError(f"<w, z> = {float(self.z @ self.w):.3e} is not zero")
        self.alpha = nz**2 / nw**2
        self.f_normal = self.z / nz
        self.f_hat_normal = self.z + self.alpha * self.w

    def f(self, x) -> float:
        return float(self.z @ x)

    def f_hat(self, x) -> float:
        return float(self.f_hat_normal @ x)


@dataclass
class SandwichResult:
    trace: Trace
    converged_at: int
    limit_error: float
    max_plane_dist: float
    max_segment_dist: float


def _segment_points(a, b, n: int = 11):
    return [a + t * (b - a) for t in np.linspace(0.0, 1.0, n)]


def check_sandwich(params: SandwichParams, A: g.ConvexSet, B: g.ConvexSet, tol: float = 1e-9) -> None:
    """Raise HypothesisError unless the four inclusions hold.

    Segment inclusions are tested on sampled points; the halfspace
    inclusions through support values (exact for polytopes).
    """
    z, w = params.z, params.w
    zero = np.zeros_like(z)
    for x in _segment_points(z, w):
        if not g.membership(A, x, tol):
            raise HypothesisError(f"[z,w] ⊄ A: {x} is at distance {g.dist_point(A, x):.3e}")
    for x in _segment_points(zero, w):
        if not g.membership(B, x, tol):
            raise HypothesisError(f"[0,w] ⊄ B: {x} is at distance {g.dist_point(B, x):.3e}")
    inf_fhat = -A.support(-params.f_hat_normal)
    if inf_fhat < params.f_hat(w) - tol * (1.0 + abs(params.f_hat(w))):
        raise HypothesisError(f"A ⊄ [f_hat >= f_hat(w)]: inf f_hat(A) = {inf_fhat:.6g}")
    sup_f = B.support(params.z)
    if sup_f > tol:
        raise HypothesisError(f"B ⊄ [f <= 0]: sup f(B) = {sup_f:.6g}")


def sandwich_verify(
    params: SandwichParams,
    A: g.ConvexSet,
    B: g.ConvexSet,
    budget: int = 10_000,
    tol: float = 1e-8,
    conv_tol: float = 1e-6,
) -> SandwichResult:
    """Run APM from a_0 = P_A(0) and check confinement and convergence to w.

    Every A-side iterate must lie on [z, w] and every B-side iterate on
    [0, w], both within ``tol`` of the plane span{z, w}.  Raises
    ConfinementError on the first violation and BudgetExhausted when
    ||a_N - w|| > conv_tol for all N <= budget.
    """
    check_sandwich(params, A, B)
    z, w = params.z, params.w
    zero = np.zeros_like(z)
    Q, _ = np.linalg.qr(np.column_stack([z, w]))

    def plane_dist(x):
        return float(np.linalg.norm(x - Q @ (Q.T @ x)))

    a = A.project(zero)
    trace = Trace(x0=a.copy())
    keep = set(_keep_steps(budget, TRACE_MAX_POINTS).tolist())
    worst_plane = plane_dist(a)
    worst_seg = _on_segment(z, w, a)
    if max(worst_plane, worst_seg) > tol:
        raise ConfinementError(f"a_0 = P_A(0) is off [z,w] by {max(worst_plane, worst_seg):.3e}")
    for n in range(1, budget + 1):
        b = B.project(a)
        a_new = A.project(b)
        dp = max(plane_dist(b), plane_dist(a_new))
        ds_b, ds_a = _on_segment(zero, w, b), _on_segment(z, w, a_new)
        worst_plane, worst_seg = max(worst_plane, dp), max(worst_seg, ds_a, ds_b)
        if dp > tol or ds_a > tol or ds_b > tol:
            raise ConfinementError(
                f"step {n}: plane distance {dp:.3e}, off [z,w] by {ds_a:.3e}, off [0,w] by {ds_b:.3e}"
            )
        step = float(np.linalg.norm(a_new - a))
        a = a_new
        err = float(np.linalg.norm(a - w))
        done = err <= conv_tol
        if n in keep or done:
            trace.record(n, a, b, step, 0, None, None)
        if done:
            trace.stop_reason = "converged"
            trace.n_steps = n
            return SandwichResult(trace, n, err, worst_plane, worst_seg)
    raise BudgetExhausted(f"||a_N - w|| > {conv_tol} for all N <= {budget}", float(np.linalg.norm(a - w)))


# ------------------------------------------------------------------ black box

@dataclass
class BlackBoxParams:
    """Parameters of the black-box construction (original coordinates).

    ``r``, ``eps0`` and ``theta`` are computed after translating p to the
    origin: r = max(1, sup ||a - p||) over A, eps0 = min(1, ||w - p||),
    theta = delta * eps0 / (r * ||w - p||^2).
    """

    f_normal: np.ndarray
    beta: float
    p: np.ndarray
    w: np.ndarray
    delta: float
    r: float
    eps0: float = field(init=False)
    theta: float = field(init=False)

    def __post_init__(self):
        n = g.as_vector(self.f_normal)
        s = float(np.linalg.norm(n))
        if s == 0.0:
            raise HypothesisError("zero separator normal")
        self.f_normal = n / s
        self.beta = float(self.beta) / s
        self.p = g.as_vector(self.p, n.shape[0])
        self.w = g.as_vector(self.w, n.shape[0])
        if not self.delta > 0:
            raise HypothesisError(f"delta must be > 0, got {self.delta}")
        if not self.r >= 1:
            raise HypothesisError(f"r must be >= 1, got {self.r}")
        w0 = self.w - self.p
        nw = float(np.linalg.norm(w0))
        if nw == 0.0:
            raise HypothesisError("p and w must differ")
        self.eps0 = min(1.0, nw)
        self.theta = self.delta * self.eps0 / (self.r * nw**2)

    @classmethod
    def for_sets(cls, A: g.ConvexSet, f_normal, beta, p, w, delta) -> "BlackBoxParams":
        """Take r = max(1, bound of ||a - p|| over A)."""
        bound = A.norm_bound(g.as_vector(p, A.dim))
        if not math.isfinite(bound):
            raise HypothesisError("A must be bounded")
        return cls(f_normal, beta, p, w, delta, max(1.0, bound))

    def f(self, x) -> float:
        return float(self.f_normal @ x)

    def check(self, A: g.ConvexSet, B: g.ConvexSet, tol: float = 1e-9) -> dict:
        """Verify the hypotheses; return the measured quantities."""
        u, beta = self.f_normal, self.beta
        scale = 1.0 + abs(beta)
        if abs(self.f(self.p) - beta) > tol * (1 + np.linalg.norm(self.p)):
            raise HypothesisError(f"f(p) = {self.f(self.p):.12g} != beta = {beta:.12g}")
        if abs(self.f(self.w) - beta) > tol * (1 + np.linalg.norm(self.w)):
            raise HypothesisError(f"f(w) = {self.f(self.w):.12g} != beta = {beta:.12g}")
        sup_B = B.support(u)
        inf_A = -A.support(-u)
        if sup_B > beta + tol * scale or inf_A < beta - tol * scale:
            raise HypothesisError(f"not separated: sup f(B) = {sup_B:.6g}, beta = {beta:.6g}, inf f(A) = {inf_A:.6g}")
        bound = A.norm_bound(self.p)
        if bound > self.r * (1 + 1e-12):
            raise HypothesisError(f"A ⊄ p + rB: bound {bound:.6g} > r = {self.r:.6g}")
        dists = {
            "p_A": g.dist_point(A, self.p),
            "p_B": g.dist_point(B, self.p),
            "w_A": g.dist_point(A, self.w),
            "w_B": g.dist_point(B, self.w),
        }
        for k, d in dists.items():
            if d > self.delta + tol:
                raise HypothesisError(f"dist({k[0]}, {k[2]}) = {d:.6g} exceeds delta = {self.delta:.6g}")
        return {"sup_f_B": sup_B, "inf_f_A": inf_A, **dists}

    def to_dict(self) -> dict:
        return {
            "f_normal": self.f_normal.tolist(),
            "beta": self.beta,
            "p": self.p.tolist(),
            "w": self.w.tolist(),
            "delta": self.delta,
            "r": self.r,
            "eps0": self.eps0,
            "theta": self.theta,
        }


@dataclass
class HausdorffCertificate:
    """Two-sided Hausdorff evidence against a bound.

    ``forward`` is e(original, perturbed) and ``backward`` e(perturbed,
    original) as measured (exact when ``*_method`` is vertex-exact, a
    sampled lower bound otherwise); ``structural`` is an upper bound that
    holds by construction.
    """

    forward: float
    backward: float
    forward_method: str
    backward_method: str
    structural: float
    bound: float
    slack: float = CERT_SLACK

    @property
    def measured(self) -> float:
        return max(self.forward, self.backward)

    @property
    def ok(self) -> bool:
        return self.measured <= self.bound + self.slack and self.structural <= self.bound + self.slack

    def to_dict(self) -> dict:
        return {
            "forward": self.forward,
            "backward": self.backward,
            "forward_method": self.forward_method,
            "backward_method": self.backward_method,
            "measured": self.measured,
            "structural": self.structural,
            "bound": self.bound,
            "ok": self.ok,
        }


def hausdorff_certificate(orig, pert, bound, structural, sampler=None) -> HausdorffCertificate:
    fwd, s1 = mt.excess_sample(orig, pert, sampler)
    bwd, s2 = mt.excess_sample(pert, orig, sampler)
    meth = lambda s: mt.VERTEX_EXACT if s.exact else mt.SAMPLED  # noqa: E731
    return HausdorffCertificate(fwd, bwd, meth(s1), meth(s2), structural, bound)


@dataclass
class BlackBoxResult:
    A_hat: g.ConvexSet
    B_hat: g.ConvexSet
    params: BlackBoxParams
    z: np.ndarray
    cert_A: HausdorffCertificate | None = None
    cert_B: HausdorffCertificate | None = None
    pinning: float = math.nan
    limit_error: float = math.nan
    steps: int = 0
    hypotheses: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        certs = [c for c in (self.cert_A, self.cert_B) if c is not None]
        return all(c.ok for c in certs)

    def certificate(self) -> dict:
        return {
            "hausdorff_A": None if self.cert_A is None else self.cert_A.to_dict(),
            "hausdorff_B": None if self.cert_B is None else self.cert_B.to_dict(),
            "pinning": self.pinning,
            "limit_error": self.limit_error,
            "steps": self.steps,
            "hypotheses": self.hypotheses,
            "ok": self.ok,
        }


def black_box(
    A: g.ConvexSet,
    B: g.ConvexSet,
    params: BlackBoxParams,
    verify: bool = True,
    budget: int = PHASE_CAP,
    conv_tol: float = 1e-6,
    pin_tol: float = 1e-9,
    sampler=None,
    check: bool = True,
) -> BlackBoxResult:
    """Build A_hat = (A + 3δB) ∩ [f_hat >= f_hat(w)] and B_hat = (B + 3δB) ∩ [f <= β].

    The formulas are applied with p translated to the origin, where
    f_hat = <u + θ w, .> and z = (δ ε0 / r) u; the sets are then moved back.
    With ``verify`` the Hausdorff bounds are measured and Π^{B_hat, A_hat}
    is run from p, checking |f(b) - β| <= pin_tol on every B_hat-side
    iterate and convergence to w.
    """
    hyp = params.check(A, B) if check else {}
    u, p, d = params.f_normal, params.p, params.delta
    w0 = params.w - p
    # Translated frame: p -> 0, beta -> 0.
    fhat = u + params.theta * w0
    H_B0 = g.Halfspace(u, 0.0)
    H_A0 = g.Halfspace(-fhat, -float(fhat @ w0))
    z0 = (d * params.eps0 / params.r) * u
    B_hat = g.Intersection((g.dilate(B, 3 * d), g.translate(H_B0, p)))
    A_hat = g.Intersection((g.dilate(A, 3 * d), g.translate(H_A0, p)))
    res = BlackBoxResult(A_hat, B_hat, params, p + z0, hypotheses=hyp)
    if not verify:
        return res
    # B ⊂ B_hat; A_hat ⊂ A + 3δB; e(A, A_hat) <= 2δ by the level-set argument.
    res.cert_A = hausdorff_certificate(A, A_hat, 3 * d, 3 * d, sampler)
    res.cert_B = hausdorff_certificate(B, B_hat, 3 * d, 3 * d, sampler)
    x = p
    worst = 0.0
    PA, PB = A_hat.project, B_hat.project
    for n in range(1, budget + 1):
        x = PB(PA(x))
        worst = max(worst, abs(float(u @ x) - params.beta))
        if worst > pin_tol:
            raise ConfinementError(f"step {n}: B_hat iterate off [f = beta] by {worst:.3e}")
        err = float(np.linalg.norm(x - params.w))
        if err <= conv_tol:
            res.pinning, res.limit_error, res.steps = worst, err, n
            return res
    raise BudgetExhausted(f"black-box run did not reach w within {budget} cycles", float(np.linalg.norm(x - params.w)))


# ------------------------------------------------------------------ witnesses

@dataclass
class Witness:
    """``delta`` is the schedule bound δ_n, ``defect`` the achieved
    max{dist(w, A), dist(w, B - v)} <= δ_n."""

    point: np.ndarray
    delta: float
    defect: float
    dist_E: float
    source: int


def _check_delta_schedule(deltas: Sequence[float]) -> list[float]:
    ds = [float(d) for d in deltas]
    if not ds:
        raise ValueError("delta schedule is empty")
    if any(not d > 0 for d in ds):
        raise ValueError("delta schedule must be positive")
    if any(b >= a for a, b in zip(ds, ds[1:])):
        raise ValueError("delta schedule must be strictly decreasing (it has to tend to 0)")
    return ds


def _near_both_samples(pair: PairProblem, n: int, box: float, rng) -> np.ndarray:
    v = pair.displacement()
    Bv = g.translate(pair.B, -v)
    out = []
    for _ in range(n):
        y = rng.uniform(-box, box, size=pair.dim)
        lam = rng.uniform()
        out.append(lam * pair.A.project(y) + (1 - lam) * Bv.project(y))
    return np.array(out)


def witness_sequence(
    pair: PairProblem,
    eps0: float,
    delta_schedule: Sequence[float],
    raw: np.ndarray | None = None,
    separator: tuple[np.ndarray, float] | None = None,
    band: tuple[float, float] | None = None,
    sample_budget: int = 2000,
    box: float = 2.0,
    seed: int = 0,
) -> list[Witness]:
    """Points w_n with lo < dist(w_n, E) < hi and max{dist(w_n, A), dist(w_n, B - v)} <= δ_n.

    Raw candidates are projected onto [f = β] when a separator is given and
    slid along [w'', P_E(w'')] into the band (default (eps0, eps0 + 1)).
    For each n the admissible candidate with the largest defect is taken.
    Without raw candidates a sampling search near A and B - v is tried.
    """
    ds = _check_delta_schedule(delta_schedule)
    if pair.E is None:
        raise ValueError("witness search needs the best approximation set E")
    lo, hi = band if band is not None else (eps0, eps0 + 1.0)
    if not 0 <= lo < hi:
        raise ValueError("band must satisfy 0 <= lo < hi")
    v = pair.displacement()
    Bv = g.translate(pair.B, -v)
    sampled = raw is None
    if sampled:
        rng = np.random.default_rng(seed)
        raw = _near_both_samples(pair, sample_budget, box, rng)
    ker = None if separator is None else g.Hyperplane(separator[0], separator[1])
    cands = []
    for i, w1 in enumerate(np.atleast_2d(raw)):
        w2 = w1 if ker is None else ker.project(w1)
        e = pair.E.project(w2)
        dE = float(np.linalg.norm(w2 - e))
        if dE <= lo:
            continue
        if dE >= hi:
            w2 = e + (0.5 * (lo + hi) / dE) * (w2 - e)
            dE = 0.5 * (lo + hi)
        defect = max(g.dist_point(pair.A, w2), g.dist_point(Bv, w2))
        cands.append(Witness(w2, math.nan, defect, dE, i))
    out: list[Witness] = []
    used: set[int] = set()
    for n, dn in enumerate(ds):
        ok = [c for c in cands if c.defect <= dn]
        fresh = [c for c in ok if c.source not in used] or ok
        if not fresh:
            hint = (
                "no witness found within the sampling budget; use the scenario's witness generator"
                if sampled
                else "no raw witness is close enough to both sets"
            )
            raise NoWitnessError(f"delta_{n + 1} = {dn:.3g}: {hint}")
        best = max(fresh, key=lambda c: (c.defect, -c.source))
        used.add(best.source)
        out.append(Witness(best.point.copy(), dn, best.defect, best.dist_E, best.source))
    return out


# ------------------------------------------------------------------ runs

@dataclass
class Checkpoint:
    index: int
    point: np.ndarray
    dist_E: float

    def to_dict(self) -> dict:
        return {"index": self.index, "point": self.point.tolist(), "dist_E": self.dist_E}


@dataclass
class AdversaryRun:
    schedule: PerturbationSchedule
    checkpoints: list[Checkpoint]
    delta_sequence: list[float]
    aw_certificate: bool
    target: float
    epochs: list[dict] = field(default_factory=list)
    trace: Trace | None = None
    aw_details: dict = field(default_factory=dict)
    recenter_shift: np.ndarray | None = None
    x0: np.ndarray | None = None

    @property
    def min_separation(self) -> float:
        return min(c.dist_E for c in self.checkpoints)

    @property
    def separation_ok(self) -> bool:
        return self.min_separation >= self.target - SEPARATION_SLACK

    @property
    def certificates_ok(self) -> bool:
        return all(e.get("certificates_ok", True) for e in self.epochs)

    @property
    def ok(self) -> bool:
        return self.separation_ok and self.certificates_ok and bool(self.aw_certificate)

    def to_dict(self, set_ref: Callable[[g.ConvexSet], object] | None = None) -> dict:
        ref = set_ref or (lambda C: C.to_dict())
        return {
            "target": self.target,
            "ok": self.ok,
            "separation_ok": self.separation_ok,
            "certificates_ok": self.certificates_ok,
            "aw_certificate": bool(self.aw_certificate),
            "aw_details": self.aw_details,
            "min_separation": self.min_separation,
            "delta_sequence": self.delta_sequence,
            "x0": None if self.x0 is None else self.x0.tolist(),
            "recenter_shift": None if self.recenter_shift is None else self.recenter_shift.tolist(),
            "checkpoints": [c.to_dict() for c in self.checkpoints],
            "schedule": [
                {
                    "A": ref(b.A),
                    "B": ref(b.B),
                    "count": b.count,
                    "tag": b.tag,
                    "delta_A": b.delta_A,
                    "delta_B": b.delta_B,
                    "radius": b.radius,
                }
                for b in self.schedule.blocks
            ],
            "epochs": self.epochs,
        }


def _merge_traces(parts: list[tuple[Trace, int, int]], x0: np.ndarray) -> Trace:
    """Concatenate traces; each part carries (trace, step offset, block offset)."""
    out = Trace(x0=x0.copy())
    for tr, off, boff in parts:
        out.steps += [s + off for s in tr.steps]
        out.a += tr.a
        out.b += tr.b
        out.step_size += tr.step_size
        out.block_id += [b + boff for b in tr.block_id]
        out.dist_a_E += tr.dist_a_E
        out.dist_b_F += tr.dist_b_F
        out.fast_forwarded += tr.fast_forwarded
        out.n_steps = off + tr.n_steps
    out.stop_reason = "budget"
    return out


def _lockstep(
    A: g.ConvexSet,
    B: g.ConvexSet,
    lead,
    follow,
    stop: Callable[[np.ndarray], bool],
    cap: int,
    E: g.ConvexSet | None,
    max_points: int,
    block_id: int,
):
    """Iterate P_A P_B from two points until ``stop(lead iterate)``.

    Returns (m, lead_m, follow_m, trace of the follower, worst
    nonexpansiveness excess).  The follower trace uses block id
    ``block_id``.
    """
    PA, PB = A.project, B.project
    keep = set(_keep_steps(cap, max_points).tolist())
    tr = Trace(x0=follow.copy())
    gap0 = float(np.linalg.norm(lead - follow))
    worst = -math.inf
    x, y = lead, follow
    for m in range(1, cap + 1):
        x = PA(PB(x))
        by = PB(y)
        y_new = PA(by)
        step = float(np.linalg.norm(y_new - y))
        y = y_new
        worst = max(worst, float(np.linalg.norm(x - y)) - gap0)
        done = stop(x)
        if m in keep or done:
            tr.record(m, y, by, step, block_id, E, None)
        if done:
            tr.n_steps = m
            return m, x, y, tr, worst
    raise BudgetExhausted(f"hatted phase: stopping rule not met within {cap} cycles")


def build_separated_schedule(
    pair: PairProblem,
    witnesses: Sequence[Witness],
    eps0: float,
    separator: tuple[np.ndarray, float],
    budget_per_phase: int = PHASE_CAP,
    sampler=None,
    verify_replay: bool = True,
) -> AdversaryRun:
    """Concatenate classical and black-box blocks for a separated pair.

    Epoch h: p_h = lim Π_n^{A,B}(q_h); n_h is the smallest n with
    Π_n^{A,B}(q_h) within eps0 of p_h (that point is p~_h); the black box
    toward w_{h+1} with δ = δ_{h+1} gives (A_hat_h, B_hat_h); m_h is the
    smallest m with Π_m^{A_hat,B_hat}(p_h) within eps0 of w_{h+1}; and
    q_{h+1} = Π_{m_h}^{A_hat,B_hat}(p~_h).  Starts at q_1 = w_1.
    """
    if len(witnesses) < 2:
        raise ValueError("need at least two witnesses")
    if pair.E is None:
        raise ValueError("pair needs E")
    A, B, E = pair.A, pair.B, pair.E
    if not math.isfinite(A.norm_bound(np.zeros(A.dim))):
        raise HypothesisError("A must be bounded")
    u = g.as_vector(separator[0], A.dim)
    beta = float(separator[1]) / float(np.linalg.norm(u))
    u = u / np.linalg.norm(u)
    ker = g.Hyperplane(u, beta)
    q = witnesses[0].point.copy()
    x0 = q.copy()
    blocks: list[Block] = []
    checkpoints: list[Checkpoint] = []
    epochs: list[dict] = []
    parts = []
    offset = 0
    per_epoch_points = max(16, TRACE_MAX_POINTS // (2 * (len(witnesses) - 1)))
    for h in range(len(witnesses) - 1):
        wit = witnesses[h + 1]
        delta = wit.delta
        # Limit of the classical run, pinned to [f = beta] where A ∩ B lives.
        p = q
        for _ in range(budget_per_phase):
            p_next = A.project(B.project(p))
            if float(np.linalg.norm(p_next - p)) <= 1e-14 * (1 + np.linalg.norm(p)):
                p = p_next
                break
            p = p_next
        else:
            raise BudgetExhausted(f"epoch {h + 1}: classical run did not settle")
        p = ker.project(p)
        n_h, p_tilde = smallest_index(A, B, q, lambda y: float(np.linalg.norm(y - p)) <= eps0, budget_per_phase)
        if not delta > 0:
            raise HypothesisError(f"witness {h + 2} lies in both sets")
        params = BlackBoxParams.for_sets(A, u, beta, p, wit.point, delta)
        bb = black_box(A, B, params, verify=False)
        cert_A = hausdorff_certificate(A, bb.A_hat, 3 * params.delta, 3 * params.delta, sampler)
        cert_B = hausdorff_certificate(B, bb.B_hat, 3 * params.delta, 3 * params.delta, sampler)
        tr_c = run_perturbed(PerturbationSchedule([Block(A, B, n_h)]), q, E=E, max_points=per_epoch_points)
        m_h, lead, q_next, tr_h, nonexp = _lockstep(
            bb.A_hat, bb.B_hat, p, p_tilde,
            lambda y: float(np.linalg.norm(y - wit.point)) <= eps0,
            budget_per_phase, E, per_epoch_points, 1,
        )
        bi = len(blocks)
        blocks.append(Block(A, B, n_h, ORIGINAL))
        blocks.append(Block(bb.A_hat, bb.B_hat, m_h, HATTED, 3 * params.delta, 3 * params.delta))
        parts.append((tr_c, offset, bi))
        parts.append((tr_h, offset + n_h, bi))
        offset += n_h + m_h
        dE = g.dist_point(E, q_next)
        checkpoints.append(Checkpoint(offset, q_next, dE))
        epochs.append({
            "epoch": h + 1,
            "n": n_h,
            "m": m_h,
            "delta": params.delta,
            "p": p.tolist(),
            "p_tilde": p_tilde.tolist(),
            "w": wit.point.tolist(),
            "black_box": params.to_dict(),
            "hausdorff_A": cert_A.to_dict(),
            "hausdorff_B": cert_B.to_dict(),
            "nonexpansive_excess": nonexp,
            "certificates_ok": cert_A.ok and cert_B.ok and nonexp <= _tol(q_next) * 10,
            "dist_checkpoint_E": dE,
        })
        q = q_next
    sched = PerturbationSchedule(blocks)
    hatted = [b for b in blocks if b.tag == HATTED]
    aw_A = mt.aw_certify([b.A for b in hatted], A, [None] * len(hatted), [b.delta_A for b in hatted], r_grid=[], sampler=sampler)
    aw_B = mt.aw_certify([b.B for b in hatted], B, [None] * len(hatted), [b.delta_B for b in hatted], r_grid=[], sampler=sampler)
    run = AdversaryRun(
        sched, checkpoints, [w.delta for w in witnesses], bool(aw_A) and bool(aw_B), eps0, epochs,
        _merge_traces(parts, x0), {"A": aw_A.to_dict(), "B": aw_B.to_dict()}, None, x0,
    )
    if verify_replay:
        _verify_replay(run, E)
    return run


def _verify_replay(run: AdversaryRun, E) -> None:
    """Re-run the whole schedule and compare checkpoints."""
    tr = run_perturbed(run.schedule, run.x0, E=E)
    at = dict(zip(tr.steps, tr.a))
    worst = 0.0
    for c in run.checkpoints:
        worst = max(worst, float(np.linalg.norm(at[c.index] - c.point)))
    run.aw_details["replay_max_deviation"] = worst


# ------------------------------------------------------------------ general case

DirectionFn = Callable[[int, float, float], tuple[np.ndarray, np.ndarray]]


def plane_opening_directions(scenario) -> DirectionFn:
    """Directions for the vanishing-angle family.

    Epoch h gets the first unused plane k (0-based) whose lines are so
    close that R sin(theta_k) <= margin * delta_h; then u_h = e_{2k+1} (the
    plane's opening) and the witness is t_h = rho e_{2k}.
    """
    spec = scenario.adversary_directions or {}
    if spec.get("kind") != "plane-opening":
        raise NoDirectionError(f"scenario {scenario.name!r} provides no admissible directions")
    K = int(scenario.params["K"])
    R = float(scenario.params["R"])
    rho = float(spec.get("rho", scenario.params.get("rho", 0.9)))
    margin = float(spec.get("margin", 0.5))
    thetas = scenario.params.get("thetas") or [2.0 ** -(k + 1) for k in range(K)]
    used = {"k": -1}

    def gen(h: int, delta: float, r_h: float):
        for k in range(used["k"] + 1, K):
            if R * math.sin(thetas[k]) <= margin * delta:
                used["k"] = k
                d = 2 * K
                u = np.zeros(d)
                u[2 * k + 1] = 1.0
                t = np.zeros(d)
                t[2 * k] = rho
                return u, t
        raise NoDirectionError(f"epoch {h}: no plane with R sin(theta) <= {margin} * {delta:.3g} left (K = {K})")

    return gen


def default_deltas(eps: float, epochs: int) -> list[float]:
    """δ_h = min(eps/3, 2^-h)."""
    return [min(eps / 3.0, 2.0**-h) for h in range(1, epochs + 1)]


def build_general_schedule(
    pair: PairProblem,
    directions: DirectionFn | Sequence[tuple],
    eps: float,
    deltas: Sequence[float],
    r: float = 2.0,
    radii: Sequence[float] | None = None,
    x0=None,
    regularity: str = "unknown",
    sampler=None,
    aw_r_grid: Sequence[float] | None = None,
    phase_cap: int = PHASE_CAP,
    verify_replay: bool = False,
) -> AdversaryRun:
    """Adversarial schedule for an intersecting pair with bounded A ∩ B.

    Per epoch h (sets recentered so that 0 ∈ A ∩ B):

    1. n_h = smallest n with dist(Π_n^{A,B}(q_{h-1}), A∩B) < eps; s_h is
       that iterate and s'_h = P_{A∩B}(s_h);
    2. A_h = A ∩ r_h B, B' = B + δ_h u_h; a unit f_h and α_h with
       sup f_h(B') <= α_h <= inf f_h(A_h) from a nearest pair;
    3. p_h ∈ [s'_h, s'_h + δ_h u_h] and w_h ∈ [a_h, b_h + δ_h u_h] on
       [f_h = α_h], with a_h = P_{A_h}(t_h), b_h = P_B(t_h);
    4. black box on (A_h, B') with δ = 3δ_h;
    5. m_h = smallest m with dist(Π_m^{A_hat,B_hat}(p_h), A∩B) > 2 eps + δ_h
       and q_h = Π_{m_h}^{A_hat,B_hat}(s_h).

    ``directions`` maps (h, δ_h, r_h) to (u_h, t_h) or lists those pairs.
    """
    if regularity == "regular":
        raise NoDirectionError("the pair is marked regular: no admissible directions exist")
    if pair.E is None:
        raise ValueError("pair needs E = A ∩ B")
    ds = [float(d) for d in deltas]
    if any(not (0 < d < eps / 3.0 + 1e-15) for d in ds):
        raise ValueError("each delta_h must lie in (0, eps/3]")
    H = len(ds)
    radii = list(radii) if radii is not None else [h + r for h in range(1, H + 1)]
    if len(radii) != H:
        raise ValueError("radii and deltas differ in length")
    if not callable(directions):
        dir_list = list(directions)
        if len(dir_list) < H:
            raise NoDirectionError("fewer directions than epochs")
        directions = lambda h, d, rh: tuple(np.asarray(t, dtype=float) for t in dir_list[h - 1])  # noqa: E731

    # Recenter so that 0 ∈ A ∩ B.
    c = pair.E.project(np.zeros(pair.dim))
    shift = c if np.linalg.norm(c) > 0 else None
    A0, B0, E0 = pair.A, pair.B, pair.E
    if shift is not None:
        A0, B0, E0 = (g.translate(S, -c) for S in (pair.A, pair.B, pair.E))
    if E0.norm_bound(np.zeros(pair.dim)) > r - 1 + 1e-12:
        raise HypothesisError(f"A ∩ B must lie in (r - 1)B with r = {r}")

    def distE(y):
        d = y - E0.project(y)
        return math.sqrt(float(d @ d))

    q = np.zeros(pair.dim) if x0 is None else g.as_vector(x0, pair.dim) - (0 if shift is None else c)
    start = q.copy()
    affine = _affine_pair(A0, B0) is not None
    cap_n = AFFINE_PHASE_CAP if affine else phase_cap
    blocks: list[Block] = []
    checkpoints: list[Checkpoint] = []
    epochs: list[dict] = []
    parts = []
    offset = 0
    per_epoch_points = max(16, TRACE_MAX_POINTS // (2 * H))
    for h in range(1, H + 1):
        d, r_h = ds[h - 1], radii[h - 1]
        u, t = directions(h, d, r_h)
        u = g.as_vector(u, pair.dim)
        u = u / np.linalg.norm(u)
        t = g.as_vector(t, pair.dim) - (0 if shift is None else c)
        if float(np.linalg.norm(t)) > r - 1 + 1e-12:
            raise HypothesisError(f"witness t_{h} is outside (r - 1)B")
        t_defect = max(g.dist_point(A0, t), g.dist_point(B0, t))
        if t_defect > d + 1e-12 or distE(t) < 3 * eps:
            raise HypothesisError(
                f"t_{h}: max dist to A, B = {t_defect:.3g} (need <= {d:.3g}), dist to A∩B = {distE(t):.3g} (need >= {3 * eps:.3g})"
            )
        # 1. classical phase
        n_h, s = smallest_index(A0, B0, q, lambda y: distE(y) < eps, cap_n, monotone=True)
        s_prime = E0.project(s)
        # 2. truncation, shift, separator
        A_h = mt.truncate(A0, r_h)
        B_sh = g.translate(B0, d * u)
        a_star, b_star = g.min_distance_pair(A_h, B_sh)
        gap = float(np.linalg.norm(a_star - b_star))
        if gap <= 1e-12:
            raise SeparatorError(f"epoch {h}: A_h and B + δ_h u_h intersect; u_h is not admissible")
        f = (a_star - b_star) / gap
        sup_B = B_sh.support(f)
        inf_A = -A_h.support(-f)
        if not sup_B < inf_A:
            raise SeparatorError(f"epoch {h}: separator failed (sup f(B') = {sup_B:.3g} >= inf f(A_h) = {inf_A:.3g})")
        alpha = 0.5 * (sup_B + inf_A)
        # 3. p_h and w_h on [f = alpha]
        p = _level_point(f, alpha, s_prime, s_prime + d * u)
        a_t, b_t = A_h.project(t), B0.project(t)
        w = _level_point(f, alpha, a_t, b_t + d * u)
        # 4. black box with effective radius 3 δ_h
        params = BlackBoxParams.for_sets(A_h, f, alpha, p, w, 3 * d)
        bb = black_box(A_h, B_sh, params, verify=False)
        cert_A = hausdorff_certificate(A_h, bb.A_hat, 9 * d, 9 * d, sampler)
        # B_hat ⊂ B' + 9δB ⊂ B + 10δB and B' ⊂ B_hat, e(B, B') <= δ.
        cert_B = hausdorff_certificate(B0, bb.B_hat, 10 * d, 10 * d, sampler)
        # 5. hatted phase from p_h (to find m_h) and from s_h (the run itself)
        tr_c = run_perturbed(PerturbationSchedule([Block(A0, B0, n_h)]), q, E=E0, max_points=per_epoch_points)
        target = 2 * eps + d
        m_h, lead, q_next, tr_h, nonexp = _lockstep(
            bb.A_hat, bb.B_hat, p, s, lambda y: distE(y) > target, phase_cap, E0, per_epoch_points, 1
        )
        bi = len(blocks)
        blocks.append(Block(A0, B0, n_h, ORIGINAL))
        blocks.append(Block(bb.A_hat, bb.B_hat, m_h, HATTED, 9 * d, 10 * d, r_h))
        parts.append((tr_c, offset, bi))
        parts.append((tr_h, offset + n_h, bi))
        offset += n_h + m_h
        dq = distE(q_next)
        checkpoints.append(Checkpoint(offset, q_next, dq))
        epochs.append({
            "epoch": h,
            "n": n_h,
            "m": m_h,
            "delta": d,
            "r_h": r_h,
            "u": u.tolist(),
            "t": t.tolist(),
            "separator": {"normal": f.tolist(), "alpha": alpha, "gap": inf_A - sup_B},
            "dist_s_E": distE(s),
            "p": p.tolist(),
            "w": w.tolist(),
            "dist_w_E": distE(w),
            "lead_dist_E": distE(lead),
            "black_box": params.to_dict(),
            "hausdorff_A": cert_A.to_dict(),
            "hausdorff_B": cert_B.to_dict(),
            "nonexpansive_excess": nonexp,
            "certificates_ok": cert_A.ok and cert_B.ok and nonexp <= 1e-8,
            "dist_checkpoint_E": dq,
        })
        q = q_next

    hatted = [b for b in blocks if b.tag == HATTED]
    if aw_r_grid is None:
        aw_r_grid = [r]
    hyp_A = [e["hausdorff_A"]["measured"] for e in epochs]
    hyp_B = [e["hausdorff_B"]["measured"] for e in epochs]
    aw_A = mt.aw_certify(
        [b.A for b in hatted], A0, [b.radius for b in hatted], [b.delta_A for b in hatted], aw_r_grid, sampler,
        hypothesis_values=hyp_A,
    )
    aw_B = mt.aw_certify(
        [b.B for b in hatted], B0, [None] * len(hatted), [b.delta_B for b in hatted], aw_r_grid, sampler,
        hypothesis_values=hyp_B,
    )
    if shift is not None:
        blocks = [
            Block(g.translate(b.A, c), g.translate(b.B, c), b.count, b.tag, b.delta_A, b.delta_B, b.radius)
            for b in blocks
        ]
        checkpoints = [Checkpoint(cp.index, cp.point + c, cp.dist_E) for cp in checkpoints]
        start = start + c
    trace = _merge_traces(parts, start)
    if shift is not None:
        trace.x0 = start
        trace.a = [x + c for x in trace.a]
        trace.b = [x + c for x in trace.b]
    run = AdversaryRun(
        PerturbationSchedule(blocks), checkpoints, ds, bool(aw_A) and bool(aw_B), eps, epochs, trace,
        {"A": aw_A.to_dict(), "B": aw_B.to_dict(), "original_blocks": "identical to the limit sets"},
        shift, start,
    )
    if verify_replay:
        _verify_replay(run, pair.E)
    return run


def _level_point(f: np.ndarray, level: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """The point of [x, y] where <f, .> = level (f(x) >= level >= f(y))."""
    fx, fy = float(f @ x), float(f @ y)
    if fx == fy:
        return x.copy()
    lam = (fx - level) / (fx - fy)
    if lam < -1e-9 or lam > 1 + 1e-9:
        raise SeparatorError(f"level {level:.6g} not between f(x) = {fx:.6g} and f(y) = {fy:.6g}")
    lam = min(1.0, max(0.0, lam))
    pt = x + lam * (y - x)
    # Land exactly on the level set.
    return pt + (level - float(f @ pt)) * f
