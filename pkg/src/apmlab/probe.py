"""Empirical regularity probes.

A pair is regular when, for every ε > 0, some δ > 0 makes
``max{dist(x, A), dist(x, B - v)} <= δ`` force ``dist(x, E) <= ε``.  The
probes below search sampled points for violations of that implication,
compare windowed (bounded) and global searches, and run randomized
perturbed APM trials.  Absence of violations is evidence, never proof.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import geometry as g
from .engine import PairProblem, PerturbationSchedule, run_perturbed

PointSampler = Callable[[PairProblem, np.random.Generator, int], np.ndarray]


def near_both_sampler(box: float = 4.0) -> PointSampler:
    """x = λ P_A(y) + (1 - λ) P_{B-v}(y) for y uniform in [-box, box]^d."""

    def sample(pair: PairProblem, rng: np.random.Generator, n: int) -> np.ndarray:
        v = pair.displacement()
        Bv = g.translate(pair.B, -v)
        ys = rng.uniform(-box, box, size=(n, pair.dim))
        lam = rng.uniform(size=n)
        return np.array([l * pair.A.project(y) + (1 - l) * Bv.project(y) for y, l in zip(ys, lam)])

    return sample


@dataclass
class ModulusEstimate:
    """Violation frontier of the regularity implication.

    ``delta_hat[i]`` is the largest tested δ without a violation at
    ``eps_grid[i]`` (0.0 when every tested δ is violated), regularized to
    be nondecreasing in ε.  ``violations`` holds (x, eps, delta) triples;
    ``inconclusive`` lists the (eps, delta) pairs where the sample budget
    found nothing.
    """

    eps_grid: list[float]
    delta_grid: list[float]
    delta_hat: list[float]
    violations: list[tuple[np.ndarray, float, float]]
    inconclusive: list[tuple[float, float]]
    window_radius: float | None
    sample_count: int
    raw_delta_hat: list[float] = field(default_factory=list)

    def violated(self, eps: float, delta: float) -> bool:
        return any(e == eps and d == delta for _, e, d in self.violations)

    def to_dict(self) -> dict:
        return {
            "eps_grid": self.eps_grid,
            "delta_grid": self.delta_grid,
            "delta_hat": self.delta_hat,
            "raw_delta_hat": self.raw_delta_hat,
            "violations": [{"x": x.tolist(), "eps": e, "delta": d} for x, e, d in self.violations],
            "inconclusive": [list(t) for t in self.inconclusive],
            "window_radius": self.window_radius,
            "sample_count": self.sample_count,
        }


def _distances(pair: PairProblem, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v = pair.displacement()
    Bv = g.translate(pair.B, -v)
    defect = np.array([max(g.dist_point(pair.A, x), g.dist_point(Bv, x)) for x in pts])
    dE = np.array([g.dist_point(pair.E, x) for x in pts])
    return defect, dE


def _frontier(
    pts: np.ndarray,
    defect: np.ndarray,
    dE: np.ndarray,
    eps_grid: Sequence[float],
    delta_grid: Sequence[float],
    window: float | None,
) -> ModulusEstimate:
    if window is not None:
        keep = np.linalg.norm(pts, axis=1) <= window if len(pts) else np.zeros(0, bool)
        pts, defect, dE = pts[keep], defect[keep], dE[keep]
    eps_sorted = sorted(float(e) for e in eps_grid)
    deltas = sorted(float(d) for d in delta_grid)
    violations, inconclusive, raw = [], [], []
    for eps in eps_sorted:
        far = dE > eps
        for delta in deltas:
            hit = np.flatnonzero(far & (defect <= delta))
            if hit.size:
                # The most convincing witness: smallest defect.
                i = hit[np.argmin(defect[hit])]
                violations.append((pts[i].copy(), eps, delta))
            else:
                inconclusive.append((eps, delta))
        # Largest δ such that it and every smaller tested δ are clean.
        clean = 0.0
        for delta in deltas:
            if (eps, delta) in inconclusive:
                clean = delta
            else:
                break
        raw.append(clean)
    # Nondecreasing in ε: a violation at (ε, δ) is one at every smaller ε.
    hat = list(np.minimum.accumulate(np.array(raw)[::-1])[::-1]) if raw else []
    return ModulusEstimate(
        eps_sorted, deltas, [float(h) for h in hat], violations, inconclusive, window, int(len(pts)), raw
    )


def estimate_modulus(
    pair: PairProblem,
    eps_grid: Sequence[float],
    delta_grid: Sequence[float],
    sampler: PointSampler | None = None,
    window: float | None = None,
    budget: int = 4000,
    seed: int = 0,
    extra_points: np.ndarray | None = None,
) -> ModulusEstimate:
    """Search sampled points for violations at each (ε, δ) of the grids.

    ``extra_points`` (e.g. scenario witnesses) are tested alongside the
    ``budget`` sampled points.  With ``window`` = r only points of rB
    count (bounded regularity).
    """
    if pair.E is None:
        raise ValueError("estimate_modulus needs E")
    if any(e <= 0 for e in eps_grid) or any(d < 0 for d in delta_grid):
        raise ValueError("eps must be > 0 and delta >= 0")
    rng = np.random.default_rng(seed)
    box = window if window is not None else 4.0
    pts = (sampler or near_both_sampler(box))(pair, rng, budget) if budget > 0 else np.zeros((0, pair.dim))
    if extra_points is not None:
        pts = np.vstack([pts, np.atleast_2d(np.asarray(extra_points, dtype=float))])
    defect, dE = _distances(pair, pts)
    return _frontier(pts, defect, dE, eps_grid, delta_grid, window)


def verify_violation(pair: PairProblem, x, eps: float, delta: float, tol: float = 5e-10) -> bool:
    """Independent recomputation: max{d_A, d_{B-v}} <= δ + tol and d_E > ε - tol."""
    v = pair.displacement()
    x = g.as_vector(x, pair.dim)
    dA = float(np.linalg.norm(x - pair.A.project(x)))
    dB = float(np.linalg.norm(x + v - pair.B.project(x + v)))
    dE = float(np.linalg.norm(x - pair.E.project(x)))
    return max(dA, dB) <= delta + tol and dE > eps - tol


def bounded_vs_global_check(
    pair: PairProblem,
    windows: Sequence[float],
    eps: float,
    delta_grid: Sequence[float],
    sampler: PointSampler | None = None,
    budget: int = 4000,
    seed: int = 0,
    extra_points: np.ndarray | None = None,
) -> dict:
    """Compare windowed frontiers with the global one on a shared sample.

    ``consistent``: every violation inside a window is a global violation.
    ``stabilized``: the frontier is nonincreasing in the window radius and
    the largest window reproduces the global value.
    """
    rs = sorted(float(r) for r in windows)
    rng = np.random.default_rng(seed)
    box = max(rs) if rs else 4.0
    pts = (sampler or near_both_sampler(box))(pair, rng, budget)
    if extra_points is not None:
        pts = np.vstack([pts, np.atleast_2d(np.asarray(extra_points, dtype=float))])
    defect, dE = _distances(pair, pts)
    glob = _frontier(pts, defect, dE, [eps], delta_grid, None)
    glob_pairs = {(e, d) for _, e, d in glob.violations}
    per_window = []
    consistent = True
    for r in rs:
        est = _frontier(pts, defect, dE, [eps], delta_grid, r)
        for _, e, d in est.violations:
            if (e, d) not in glob_pairs:
                consistent = False
        per_window.append({"radius": r, "delta_hat": est.delta_hat[0], "violations": len(est.violations)})
    hats = [w["delta_hat"] for w in per_window]
    monotone = all(b <= a for a, b in zip(hats, hats[1:]))
    stabilized = bool(hats) and monotone and hats[-1] == glob.delta_hat[0]
    return {
        "eps": eps,
        "windows": per_window,
        "global_delta_hat": glob.delta_hat[0],
        "global_violations": len(glob.violations),
        "consistent": consistent,
        "stabilized": stabilized,
        "sample_count": int(len(pts)),
    }


# ------------------------------------------------------------------ d-stability trials

@dataclass
class PerturbationModel:
    """Random AW-convergent perturbations of A and B.

    At step n (from 1), with δ_n = c / n^p, each set is translated by a
    uniformly random vector of norm <= δ_n, dilated by a radius uniform in
    [0, δ_n], then intersected with r_n B where r_n = radius0 + radius_rate*n.
    """

    c: float = 1.0
    p: float = 1.0
    translate: bool = True
    dilate: bool = True
    truncate: bool = True
    radius0: float = 10.0
    radius_rate: float = 1.0

    def delta(self, n: int) -> float:
        return self.c / n**self.p

    def perturb(self, C: g.ConvexSet, n: int, rng: np.random.Generator) -> g.ConvexSet:
        d = self.delta(n)
        out = C
        if self.translate and d > 0:
            u = rng.normal(size=C.dim)
            u *= d * rng.uniform() / np.linalg.norm(u)
            out = g.translate(out, u)
        if self.dilate and d > 0:
            s = d * rng.uniform()
            if s > 0:
                out = g.dilate(out, s)
        if self.truncate:
            r = self.radius0 + self.radius_rate * n
            zero = np.zeros(C.dim)
            if out.norm_bound(zero) > r:
                out = g.Intersection((out, g.Ball(zero, r)))
        return out

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "p": self.p,
            "translate": self.translate,
            "dilate": self.dilate,
            "truncate": self.truncate,
            "radius0": self.radius0,
            "radius_rate": self.radius_rate,
        }


@dataclass
class TrialReport:
    seed: int | None
    horizon: int
    trials: int
    model: dict
    profile_steps: list[int]
    profiles: list[list[float]]
    terminal: list[float]

    @property
    def max_terminal(self) -> float:
        return max(self.terminal)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "horizon": self.horizon,
            "trials": self.trials,
            "model": self.model,
            "profile_steps": self.profile_steps,
            "profiles": self.profiles,
            "terminal": self.terminal,
            "max_terminal": self.max_terminal,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _profile_steps(horizon: int, points: int = 60) -> list[int]:
    return sorted({int(round(s)) for s in np.geomspace(1, horizon, points)} | {horizon})


def d_stability_trial(
    pair: PairProblem,
    model: PerturbationModel | PerturbationSchedule,
    trials: int = 20,
    horizon: int = 10_000,
    seed: int = 0,
    start_scale: float = 5.0,
    x0=None,
) -> TrialReport:
    """Randomized perturbed APM runs; dist(a_n, E) profiles and terminal values.

    Each trial draws its own generator from ``SeedSequence(seed).spawn``
    and a start point ~ N(0, start_scale^2 I) unless ``x0`` is given.  A
    PerturbationSchedule as model is run once, deterministically, to its
    full length.
    """
    if pair.E is None:
        raise ValueError("d_stability_trial needs E")
    if isinstance(model, PerturbationSchedule):
        start = g.as_vector(x0 if x0 is not None else np.zeros(pair.dim), pair.dim)
        total = model.total
        steps = _profile_steps(total)
        tr = run_perturbed(model, start, E=pair.E, max_points=10_000)
        at = dict(zip(tr.steps, tr.dist_a_E))
        prof = [float(at[s]) for s in steps if s in at]
        kept = [s for s in steps if s in at]
        return TrialReport(None, total, 1, {"kind": "schedule", "blocks": len(model.blocks)}, kept, [prof], [prof[-1]])
    if trials < 1 or horizon < 1:
        raise ValueError("trials and horizon must be >= 1")
    steps = _profile_steps(horizon)
    wanted = set(steps)
    children = np.random.SeedSequence(seed).spawn(trials)
    profiles, terminal = [], []
    E = pair.E
    for child in children:
        rng = np.random.default_rng(child)
        a = g.as_vector(x0, pair.dim) if x0 is not None else start_scale * rng.normal(size=pair.dim)
        prof = []
        for n in range(1, horizon + 1):
            An = model.perturb(pair.A, n, rng)
            Bn = model.perturb(pair.B, n, rng)
            a = An.project(Bn.project(a))
            if n in wanted:
                prof.append(g.dist_point(E, a))
        profiles.append([float(t) for t in prof])
        terminal.append(float(prof[-1]))
    return TrialReport(seed, horizon, trials, {"kind": "random", **model.to_dict()}, steps, profiles, terminal)
