"""Config-driven experiment runner.

A config names a scenario and a list of pipelines (apm, perturbed,
adversary, probe, metrics).  Each pipeline writes its outputs under the
output directory; ``manifest.json`` records the config hash, seed, package
versions and per-stage status.  Outputs contain no timestamps, so the same
config and seed give byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import platform
from typing import Any, Callable

import numpy as np

from . import __version__
from . import adversary as ad
from . import geometry as g
from . import metrics as mt
from . import probe as pr
from .engine import BudgetExhausted, run_apm
from .scenarios import Scenario, ScenarioError, atomic_write_text, dumps, resolve

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_CERTIFICATE, EXIT_BUDGET = 0, 1, 2, 3, 4
PIPELINES = ("apm", "perturbed", "adversary", "probe", "metrics")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class CertificateFailure(RuntimeError):
    """A run finished but one of its certificates failed."""


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, BudgetExhausted):
        return EXIT_BUDGET
    if isinstance(exc, CertificateFailure):
        return EXIT_CERTIFICATE
    if isinstance(exc, (ConfigError, ScenarioError, g.GeometryError, ad.NoDirectionError, ad.NoWitnessError)):
        return EXIT_CONFIG
    if isinstance(exc, (ValueError, KeyError, TypeError)):
        return EXIT_CONFIG
    return EXIT_FAILURE


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def versions() -> dict:
    import scipy

    return {
        "apmlab": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def _write(out_dir: str, name: str, text: str, produced: list) -> None:
    path = os.path.join(out_dir, name)
    atomic_write_text(path, text)
    produced.append({"file": name, "sha256": hashlib.sha256(text.encode("utf-8")).hexdigest()})


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        f = float(x)
        return f if math.isfinite(f) else str(f)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def _point(cfg: dict, key: str, dim: int, default=None):
    val = cfg.get(key, default)
    if val is None:
        return None
    return g.as_vector(val, dim)


# ------------------------------------------------------------------ stages

def stage_apm(sc: Scenario, cfg: dict, ctx: dict, out: str, produced: list) -> dict:
    pair = sc.pair()
    budget = int(cfg.get("budget", ctx["budget"]))
    x0 = _point(cfg, "x0", sc.dimension)
    if x0 is None:
        x0 = np.random.default_rng(ctx["seed"]).normal(size=sc.dimension) * 5.0
    tr = run_apm(pair, x0, budget, stop_tol=float(cfg.get("stop_tol", 0.0)))
    _write(out, "apm_trace.csv", tr.to_csv(), produced)
    profile = [
        {"step": n, "dist_to_E": d}
        for n, d in zip(tr.steps, tr.dist_a_E)
    ]
    report = {"summary": tr.summary(), "x0": x0, "decay_profile": profile}
    _write(out, "apm_report.json", dumps(_jsonable(report)), produced)
    return {"steps": tr.n_steps, "final_dist_a_E": tr.summary()["final_dist_a_E"]}


def stage_perturbed(sc: Scenario, cfg: dict, ctx: dict, out: str, produced: list) -> dict:
    model = pr.PerturbationModel(**cfg.get("model", {}))
    rep = pr.d_stability_trial(
        sc.pair(), model, trials=int(cfg.get("trials", 20)), horizon=int(cfg.get("horizon", ctx["budget"])),
        seed=ctx["seed"],
    )
    _write(out, "perturbed_report.json", rep.to_json() + "\n", produced)
    return {"max_terminal": rep.max_terminal}


def _set_writer(out: str, produced: list):
    os.makedirs(os.path.join(out, "sets"), exist_ok=True)
    names: dict[int, str] = {}

    def ref(C: g.ConvexSet) -> str:
        if id(C) not in names:
            name = f"sets/set_{len(names):03d}.json"
            names[id(C)] = name
            _write(out, name, dumps(C.to_dict()), produced)
        return names[id(C)]

    return ref


def build_adversary(sc: Scenario, cfg: dict, ctx: dict) -> ad.AdversaryRun:
    """General schedule for scenarios with directions, separated otherwise."""
    pair = sc.pair()
    eps = float(cfg.get("eps", 0.1))
    epochs = int(cfg.get("epochs", 8))
    deltas = cfg.get("delta_schedule")
    if sc.regularity == "regular":
        raise ad.NoDirectionError(f"scenario {sc.name!r} is regular: no adversary exists")
    if sc.adversary_directions:
        ds = [float(d) for d in deltas] if deltas else ad.default_deltas(eps, epochs)
        x0 = cfg.get("x0")
        if x0 is None and sc.witnesses is not None:
            x0 = np.asarray(sc.witnesses)[0]
        return ad.build_general_schedule(
            pair, ad.plane_opening_directions(sc), eps, ds, r=float(cfg.get("r", 2.0)), x0=x0,
            regularity=sc.regularity, phase_cap=int(cfg.get("phase_cap", ctx["phase_cap"])),
        )
    if sc.separator is not None:
        raw = None if sc.witnesses is None else np.asarray(sc.witnesses)
        if deltas:
            ds = [float(d) for d in deltas]
        else:
            if raw is None:
                raise ad.NoWitnessError("scenario has no witnesses; pass --delta-schedule and use a witness generator")
            Bv = g.translate(pair.B, -pair.displacement())
            defects = sorted({max(g.dist_point(pair.A, w), g.dist_point(Bv, w)) for w in raw}, reverse=True)
            ds = [d * (1 + 1e-9) + 1e-15 for d in defects]
        lo = float(cfg.get("band_lo", 2 * eps))
        band = (lo, float(cfg.get("band_hi", lo + 1.0)))
        wit = ad.witness_sequence(pair, eps, ds, raw=raw, separator=sc.separator, band=band, seed=ctx["seed"])
        return ad.build_separated_schedule(
            pair, wit, eps, sc.separator, budget_per_phase=int(cfg.get("phase_cap", ctx["phase_cap"]))
        )
    raise ad.NoDirectionError(f"scenario {sc.name!r} supplies neither directions nor a separator")


def stage_adversary(sc: Scenario, cfg: dict, ctx: dict, out: str, produced: list) -> dict:
    run = build_adversary(sc, cfg, ctx)
    ref = _set_writer(out, produced)
    doc = run.to_dict(ref)
    doc["scenario"] = sc.name
    _write(out, "adversary_run.json", dumps(_jsonable(doc)), produced)
    if run.trace is not None:
        _write(out, "adversary_trace.csv", run.trace.to_csv(), produced)
    if not run.ok:
        raise CertificateFailure(
            f"adversary certificates failed: separation_ok={run.separation_ok}, "
            f"certificates_ok={run.certificates_ok}, aw={bool(run.aw_certificate)}"
        )
    return {"min_separation": run.min_separation, "epochs": len(run.epochs)}


def stage_probe(sc: Scenario, cfg: dict, ctx: dict, out: str, produced: list) -> dict:
    pair = sc.pair()
    eps_grid = cfg.get("eps_grid", [0.5, 0.1, 0.01])
    delta_grid = cfg.get("delta_grid", [e / 2 for e in eps_grid])
    extra = sc.witnesses if cfg.get("use_witnesses", True) else None
    est = pr.estimate_modulus(
        pair, eps_grid, delta_grid, window=cfg.get("window"), budget=int(cfg.get("budget", 4000)),
        seed=ctx["seed"], extra_points=extra,
    )
    report = {"modulus": est.to_dict()}
    windows = cfg.get("windows")
    if windows:
        report["bounded_vs_global"] = pr.bounded_vs_global_check(
            pair, windows, float(cfg.get("window_eps", eps_grid[0])), delta_grid,
            budget=int(cfg.get("budget", 4000)), seed=ctx["seed"], extra_points=extra,
        )
    _write(out, "probe_report.json", dumps(_jsonable(report)), produced)
    return {"violations": len(est.violations), "delta_hat": est.delta_hat}


def stage_metrics(sc: Scenario, cfg: dict, ctx: dict, out: str, produced: list) -> dict:
    rep = mt.hausdorff(sc.A, sc.B)
    report = {"hausdorff": rep.to_dict(), "localized": []}
    for r in cfg.get("radii", []):
        report["localized"].append(mt.localized_hausdorff_report(sc.A, sc.B, float(r)).to_dict())
    _write(out, "metrics_report.json", dumps(_jsonable(report)), produced)
    return {"hausdorff": rep.hausdorff, "method": rep.method}


STAGES: dict[str, Callable] = {
    "apm": stage_apm,
    "perturbed": stage_perturbed,
    "adversary": stage_adversary,
    "probe": stage_probe,
    "metrics": stage_metrics,
}


def _pipelines(config: dict) -> list[str]:
    p = config.get("pipelines", config.get("pipeline", []))
    if isinstance(p, str):
        p = [p]
    if not isinstance(p, list):
        raise ConfigError("pipelines must be a list of names")
    bad = [x for x in p if x not in STAGES]
    if bad:
        raise ConfigError(f"unknown pipeline(s) {bad}; known: {', '.join(PIPELINES)}")
    return p


def run_experiment(config: dict, out_dir: str | None = None) -> tuple[int, dict]:
    """Run every pipeline of ``config``; return (exit code, manifest).

    Stage failures are recorded in the manifest with the stage name and do
    not stop later stages; the exit code is that of the first failure.
    """
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    out = out_dir or config.get("out") or "out"
    os.makedirs(out, exist_ok=True)
    seed = int(config.get("seed", 0))
    manifest: dict = {
        "config_sha256": config_hash(config),
        "seed": seed,
        "versions": versions(),
        "scenario": None,
        "stages": [],
        "exit_code": EXIT_OK,
    }
    code = EXIT_OK
    try:
        pipes = _pipelines(config)
        sc = resolve(config["scenario"]) if pipes else None
        if sc is not None:
            manifest["scenario"] = sc.name
    except KeyError as exc:
        pipes, sc = [], None
        code = EXIT_CONFIG
        manifest["stages"].append({"name": "config", "status": "failed", "error": f"missing key {exc}", "exit_code": code})
    except Exception as exc:  # noqa: BLE001 - recorded, not swallowed
        pipes, sc = [], None
        code = exit_code_for(exc)
        manifest["stages"].append({"name": "config", "status": "failed", "error": str(exc), "exit_code": code})
    ctx = {
        "seed": seed,
        "budget": int(config.get("budget", 10_000)),
        "phase_cap": int(config.get("phase_cap", 1_000_000)),
    }
    for name in pipes:
        produced: list = []
        entry: dict = {"name": name}
        try:
            entry["result"] = _jsonable(STAGES[name](sc, config.get(name, {}), ctx, out, produced))
            entry["status"] = "ok"
            entry["exit_code"] = EXIT_OK
        except Exception as exc:  # noqa: BLE001 - recorded in the manifest
            c = exit_code_for(exc)
            entry.update(status="failed", error=f"{type(exc).__name__}: {exc}", exit_code=c)
            if code == EXIT_OK:
                code = c
        entry["outputs"] = produced
        manifest["stages"].append(entry)
    manifest["exit_code"] = code
    atomic_write_text(os.path.join(out, "manifest.json"), dumps(manifest))
    return code, manifest
