"""Scenario library: canonical set pairs with analytic metadata.

A scenario bundles a pair (A, B) with whatever is known in closed form:
displacement vector, best approximation sets, a separating functional,
a regularity label and generators for adversarial directions/witnesses.
Scenarios round-trip through a JSON document validated by SCENARIO_SCHEMA.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Any

import jsonschema
import numpy as np

from . import geometry as g
from .engine import PairProblem

REGULARITY = ("regular", "non-regular-limit", "unknown")


class ScenarioError(ValueError):
    """Invalid scenario document or parameters."""


_VEC = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_MAT = {"type": "array", "items": _VEC}

SET_SCHEMA: dict = {
    "$id": "apmlab:set",
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {
            "enum": [
                "halfspace", "hyperplane", "ball", "segment", "affine_span",
                "polytope", "dilation", "intersection", "translate",
            ]
        }
    },
    "allOf": [
        {"if": {"properties": {"type": {"enum": ["halfspace", "hyperplane"]}}},
         "then": {"required": ["normal", "offset"],
                  "properties": {"normal": _VEC, "offset": {"type": "number"}}}},
        {"if": {"properties": {"type": {"const": "ball"}}},
         "then": {"required": ["center", "radius"],
                  "properties": {"center": _VEC, "radius": {"type": "number", "minimum": 0}}}},
        {"if": {"properties": {"type": {"const": "segment"}}},
         "then": {"required": ["a", "b"], "properties": {"a": _VEC, "b": _VEC}}},
        {"if": {"properties": {"type": {"const": "affine_span"}}},
         "then": {"required": ["base", "directions"],
                  "properties": {"base": _VEC, "directions": _MAT}}},
        {"if": {"properties": {"type": {"const": "polytope"}}},
         "then": {"required": ["vertices"],
                  "properties": {"vertices": {**_MAT, "minItems": 1}}}},
        {"if": {"properties": {"type": {"const": "dilation"}}},
         "then": {"required": ["inner", "radius"],
                  "properties": {"inner": {"$ref": "#"},
                                 "radius": {"type": "number", "exclusiveMinimum": 0}}}},
        {"if": {"properties": {"type": {"const": "intersection"}}},
         "then": {"required": ["members"],
                  "properties": {"members": {"type": "array", "items": {"$ref": "#"}, "minItems": 1}}}},
        {"if": {"properties": {"type": {"const": "translate"}}},
         "then": {"required": ["inner", "shift"],
                  "properties": {"inner": {"$ref": "#"}, "shift": _VEC}}},
    ],
}

_SET_REF = {"$ref": "apmlab:set"}
_NULLABLE_SET = {"anyOf": [{"type": "null"}, _SET_REF]}

SCENARIO_SCHEMA: dict = {
    "type": "object",
    "required": ["name", "dimension", "A", "B", "analytic"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "dimension": {"type": "integer", "minimum": 1},
        "A": _SET_REF,
        "B": _SET_REF,
        "params": {"type": "object"},
        "notes": {"type": "string"},
        "analytic": {
            "type": "object",
            "additionalProperties": False,
            "required": ["regularity"],
            "properties": {
                "v": {"anyOf": [{"type": "null"}, _VEC]},
                "E": _NULLABLE_SET,
                "F": _NULLABLE_SET,
                "separator": {
                    "anyOf": [
                        {"type": "null"},
                        {"type": "object", "required": ["normal", "beta"],
                         "additionalProperties": False,
                         "properties": {"normal": _VEC, "beta": {"type": "number"}}},
                    ]
                },
                "regularity": {"enum": list(REGULARITY)},
                "adversary_directions": {"anyOf": [{"type": "null"}, {"type": "object"}]},
                "witnesses": {"anyOf": [{"type": "null"}, _MAT]},
            },
        },
    },
}


def _validator() -> jsonschema.Draft202012Validator:
    from referencing import Registry, Resource
    from referencing.jsonschema import DRAFT202012

    res = Resource.from_contents(SET_SCHEMA, default_specification=DRAFT202012)
    return jsonschema.Draft202012Validator(SCENARIO_SCHEMA, registry=Registry().with_resource("apmlab:set", res))


def _validate(doc: Any) -> None:
    errors = sorted(_validator().iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ScenarioError(f"{e.json_path}: {e.message}")


@dataclass
class Scenario:
    name: str
    dimension: int
    A: g.ConvexSet
    B: g.ConvexSet
    v: np.ndarray | None = None
    E: g.ConvexSet | None = None
    F: g.ConvexSet | None = None
    separator: tuple[np.ndarray, float] | None = None
    regularity: str = "unknown"
    adversary_directions: dict | None = None
    witnesses: np.ndarray | None = None
    params: dict = field(default_factory=dict)
    notes: str = ""

    def __post_init__(self):
        if self.regularity not in REGULARITY:
            raise ScenarioError(f"unknown regularity label {self.regularity!r}")
        for nm in ("A", "B", "E", "F"):
            s = getattr(self, nm)
            if s is not None and s.dim != self.dimension:
                raise ScenarioError(f"{nm} has dimension {s.dim}, expected {self.dimension}")
        if self.separator is not None:
            n, beta = self.separator
            n = g.as_vector(n, self.dimension)
            s = float(np.linalg.norm(n))
            if s == 0.0:
                raise ScenarioError("separator normal has zero length")
            self.separator = (n / s, float(beta) / s)

    def pair(self) -> PairProblem:
        return PairProblem(self.A, self.B, v=self.v, E=self.E, F=self.F, v_is_analytic=self.v is not None)

    def to_dict(self) -> dict:
        sep = None
        if self.separator is not None:
            sep = {"normal": self.separator[0].tolist(), "beta": self.separator[1]}
        return {
            "name": self.name,
            "dimension": self.dimension,
            "A": self.A.to_dict(),
            "B": self.B.to_dict(),
            "params": self.params,
            "notes": self.notes,
            "analytic": {
                "v": None if self.v is None else [float(t) for t in self.v],
                "E": None if self.E is None else self.E.to_dict(),
                "F": None if self.F is None else self.F.to_dict(),
                "separator": sep,
                "regularity": self.regularity,
                "adversary_directions": self.adversary_directions,
                "witnesses": None if self.witnesses is None else np.asarray(self.witnesses).tolist(),
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        _validate(doc)
        an = doc["analytic"]

        def opt_set(key):
            return None if an.get(key) is None else g.from_dict(an[key], f"$.analytic.{key}")

        try:
            sep = an.get("separator")
            return cls(
                name=doc["name"],
                dimension=doc["dimension"],
                A=g.from_dict(doc["A"], "$.A"),
                B=g.from_dict(doc["B"], "$.B"),
                v=None if an.get("v") is None else np.array(an["v"], dtype=float),
                E=opt_set("E"),
                F=opt_set("F"),
                separator=None if sep is None else (np.array(sep["normal"], dtype=float), sep["beta"]),
                regularity=an["regularity"],
                adversary_directions=an.get("adversary_directions"),
                witnesses=None if an.get("witnesses") is None else np.array(an["witnesses"], dtype=float),
                params=doc.get("params", {}),
                notes=doc.get("notes", ""),
            )
        except g.GeometryError as exc:
            raise ScenarioError(str(exc)) from None


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    d = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def save_scenario(s: Scenario, path: str) -> None:
    atomic_write_text(path, dumps(s.to_dict()))


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from None
    return Scenario.from_dict(doc)


# ------------------------------------------------------------------ built-ins

def halfspace_angle(theta: float = math.pi / 4, R: float = 4.0) -> Scenario:
    """Two halfspaces through the origin, truncated by R*B.

    A = {<u, x> >= 0} with u = (sin theta, cos theta), B = {x_1 <= 0}.
    A ∩ B is a circular sector of opening pi/2 - theta; the pair is regular.
    """
    if not 0 < theta <= math.pi / 2:
        raise ScenarioError("theta must lie in (0, pi/2]")
    u = np.array([math.sin(theta), math.cos(theta)])
    ball = g.Ball([0.0, 0.0], R)
    hA = g.Halfspace(-u, 0.0)
    hB = g.Halfspace([1.0, 0.0], 0.0)
    A = g.Intersection((hA, ball))
    B = g.Intersection((hB, ball))
    E = g.Intersection((hA, hB, ball))
    return Scenario(
        name="halfspace-angle", dimension=2, A=A, B=B, v=np.zeros(2), E=E, F=E,
        regularity="regular", params={"theta": theta, "R": R},
        notes="Intersecting truncated halfspaces; E = F = A ∩ B, a sector.",
    )


def strip_gap(gap: float = 1.0, W: float = 1.0, H: float = 1.0) -> Scenario:
    """Two boxes facing each other across a gap: v = (-gap, 0)."""
    if not gap > 0:
        raise ScenarioError("gap must be > 0")
    A = g.Polytope([[gap, -H], [gap + W, -H], [gap + W, H], [gap, H]])
    B = g.Polytope([[-W, -H], [0.0, -H], [0.0, H], [-W, H]])
    E = g.Segment([gap, -H], [gap, H])
    F = g.Segment([0.0, -H], [0.0, H])
    return Scenario(
        name="strip-gap", dimension=2, A=A, B=B, v=np.array([-gap, 0.0]), E=E, F=F,
        separator=(np.array([1.0, 0.0]), 0.0), regularity="regular",
        params={"g": gap, "W": W, "H": H},
        notes="Disjoint boxes; E, F are the facing facets.",
    )


def ball_tangent() -> Scenario:
    """Unit ball tangent to a halfspace at the origin: slow, sublinear APM."""
    A = g.Ball([1.0, 0.0], 1.0)
    B = g.Halfspace([1.0, 0.0], 0.0)
    E = g.Ball([0.0, 0.0], 0.0)
    return Scenario(
        name="ball-tangent", dimension=2, A=A, B=B, v=np.zeros(2), E=E, F=E,
        separator=(np.array([1.0, 0.0]), 0.0), regularity="regular", params={},
        notes="E = F = {0}; regular in finite dimension, slow APM.",
    )


def vanishing_angle(K: int = 64, R: float = 8.0, thetas=None, rho: float = 0.9) -> Scenario:
    """K coordinate planes, in plane k a pair of lines at angle theta_k.

    A = span{e_{2k-1}} ∩ R*B and B = span{cos(theta_k) e_{2k-1} +
    sin(theta_k) e_{2k}} ∩ R*B in R^{2K} (1-based indices), theta_k = 2^{-k}
    unless given.  E = F = {0}.  Each fixed K is regular; the modulus
    degrades without bound as K grows.
    """
    K = int(K)
    if K < 1:
        raise ScenarioError("K must be >= 1")
    th = np.array([2.0 ** -(k + 1) for k in range(K)] if thetas is None else thetas, dtype=float)
    if th.shape != (K,) or np.any(th <= 0) or np.any(th > math.pi / 2):
        raise ScenarioError("thetas must be K angles in (0, pi/2]")
    d = 2 * K
    DA = np.zeros((K, d))
    DB = np.zeros((K, d))
    for k in range(K):
        DA[k, 2 * k] = 1.0
        DB[k, 2 * k] = math.cos(th[k])
        DB[k, 2 * k + 1] = math.sin(th[k])
    zero = np.zeros(d)
    A = g.Intersection((g.AffineSpan(zero, DA), g.Ball(zero, R)))
    B = g.Intersection((g.AffineSpan(zero, DB), g.Ball(zero, R)))
    E = g.Ball(zero, 0.0)
    wit = rho * DA
    params = {"K": K, "R": R, "rho": rho}
    if thetas is not None:
        params["thetas"] = [float(t) for t in th]
    return Scenario(
        name="vanishing-angle", dimension=d, A=A, B=B, v=zero, E=E, F=E,
        regularity="non-regular-limit",
        adversary_directions={"kind": "plane-opening", "rho": rho, "margin": 0.5},
        witnesses=wit, params=params,
        notes="Plane k holds two lines at angle theta_k; witnesses rho*e_{2k-1}.",
    )


def sandwich_toy() -> Scenario:
    """Polytopes squeezed between the segments [z,w], [0,w] and two halfspaces.

    z = e1, w = e2 in R^3; A ⊂ {x1 + x2 >= 1} contains [z, w], B ⊂ {x1 <= 0}
    contains [0, w]; one vertex of each leaves the plane span{z, w}.
    """
    A = g.Polytope([[1, 0, 0], [0, 1, 0], [1, 1, 0], [1, 1, 1]])
    B = g.Polytope([[0, 0, 0], [0, 1, 0], [-1, 0, 0], [-1, 0, 1]])
    w = np.array([0.0, 1.0, 0.0])
    E = g.Ball(w, 0.0)
    return Scenario(
        name="sandwich-toy", dimension=3, A=A, B=B, v=np.zeros(3), E=E, F=E,
        separator=(np.array([1.0, 0.0, 0.0]), 0.0), regularity="regular",
        params={"z": [1.0, 0.0, 0.0], "w": [0.0, 1.0, 0.0]},
        notes="A ∩ B = {w}; APM from P_A(0) stays on [z,w] and [0,w].",
    )


def sep_fan(rho: float = 0.9, gammas=(2.0**-2, 2.0**-3, 2.0**-4, 2.0**-5)) -> Scenario:
    """Separated fans in R^3 meeting only at the origin.

    A = conv{0, rho*(gamma_k, cos phi_k, sin phi_k)}, B its mirror image in
    x1 = 0, f = x1 separates them.  The points rho*(0, cos phi_k, sin phi_k)
    are within rho*gamma_k of both sets but at distance rho from A ∩ B.
    """
    gammas = np.asarray(gammas, dtype=float)
    n = len(gammas)
    phis = math.pi * np.arange(n) / n
    tips = rho * np.column_stack([gammas, np.cos(phis), np.sin(phis)])
    A = g.Polytope(np.vstack([np.zeros(3), tips]))
    B = g.Polytope(np.vstack([np.zeros(3), tips * np.array([-1.0, 1.0, 1.0])]))
    E = g.Ball(np.zeros(3), 0.0)
    wit = tips * np.array([0.0, 1.0, 1.0])
    return Scenario(
        name="sep-fan", dimension=3, A=A, B=B, v=np.zeros(3), E=E, F=E,
        separator=(np.array([1.0, 0.0, 0.0]), 0.0), regularity="non-regular-limit",
        witnesses=wit, params={"rho": rho, "gammas": gammas.tolist()},
        notes="Spokes approach ker f at angles gamma_k; witnesses on ker f.",
    )


BUILTINS = {
    "halfspace-angle": halfspace_angle,
    "strip-gap": strip_gap,
    "ball-tangent": ball_tangent,
    "vanishing-angle": vanishing_angle,
    "sandwich-toy": sandwich_toy,
    "sep-fan": sep_fan,
}

_PARAM_ALIASES = {"strip-gap": {"g": "gap"}}


def get_scenario(name: str, **params) -> Scenario:
    """Built-in scenario by name with optional parameters."""
    if name not in BUILTINS:
        raise ScenarioError(f"unknown scenario {name!r}; known: {', '.join(BUILTINS)}")
    alias = _PARAM_ALIASES.get(name, {})
    params = {alias.get(k, k): v for k, v in params.items()}
    try:
        return BUILTINS[name](**params)
    except TypeError as exc:
        raise ScenarioError(f"bad parameters for {name}: {exc}") from None


def builtin_scenarios() -> list[Scenario]:
    return [f() for f in BUILTINS.values()]


def resolve(spec: str | dict) -> Scenario:
    """A scenario from a built-in name, a JSON path, or {"name":..., "params":...}."""
    if isinstance(spec, dict):
        return get_scenario(spec["name"], **spec.get("params", {}))
    if spec in BUILTINS:
        return get_scenario(spec)
    if os.path.exists(spec):
        return load_scenario(spec)
    raise ScenarioError(f"{spec!r} is neither a built-in scenario nor a file")
