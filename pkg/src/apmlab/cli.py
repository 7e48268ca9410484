"""Command line interface: ``apmlab <subcommand> ...``.

Exit codes: 0 ok, 2 configuration error, 3 certificate failure, 4 budget
exhaustion (1 for anything unexpected).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from . import experiment as ex
from . import geometry as g
from . import metrics as mt
from . import probe as pr
from .engine import run_apm
from .scenarios import BUILTINS, ScenarioError, atomic_write_text, dumps, get_scenario, load_scenario


def _vector(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _param(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    try:
        val = json.loads(v)
    except json.JSONDecodeError:
        val = v
    return k, val


def _scenario(args):
    if not args.scenario:
        raise ex.ConfigError("--scenario is required here")
    params = dict(args.param or [])
    if args.scenario.endswith(".json") or os.path.exists(args.scenario):
        if params:
            raise ScenarioError("--param applies to built-in scenarios only")
        return load_scenario(args.scenario)
    return get_scenario(args.scenario, **params)


def _emit(args, name: str, doc: dict) -> None:
    text = dumps(ex._jsonable(doc))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        atomic_write_text(os.path.join(args.out, name), text)
    sys.stdout.write(text)


def cmd_project(args) -> int:
    if args.set:
        with open(args.set, encoding="utf-8") as fh:
            C = g.from_dict(json.load(fh))
    else:
        sc = _scenario(args)
        C = getattr(sc, args.which)
    x = g.as_vector(args.point, C.dim)
    p = C.project(x)
    doc = {
        "point": x,
        "projection": p,
        "distance": float(np.linalg.norm(x - p)),
        "member": g.membership(C, x, args.tol),
    }
    _emit(args, "projection.json", doc)
    return 0


def cmd_apm(args) -> int:
    sc = _scenario(args)
    x0 = args.x0 if args.x0 is not None else np.random.default_rng(args.seed).normal(size=sc.dimension) * 5.0
    tr = run_apm(sc.pair(), x0, args.budget, stop_tol=args.stop_tol)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        atomic_write_text(os.path.join(args.out, "trace.csv"), tr.to_csv())
    _emit(args, "summary.json", tr.summary())
    return 0


def cmd_perturbed(args) -> int:
    sc = _scenario(args)
    model = pr.PerturbationModel(c=args.c, p=args.p)
    rep = pr.d_stability_trial(sc.pair(), model, trials=args.trials, horizon=args.horizon or args.budget, seed=args.seed)
    _emit(args, "perturbed_report.json", rep.to_dict())
    return 0


def cmd_metrics(args) -> int:
    if args.a and args.b:
        with open(args.a, encoding="utf-8") as fh:
            A = g.from_dict(json.load(fh))
        with open(args.b, encoding="utf-8") as fh:
            B = g.from_dict(json.load(fh))
    else:
        sc = _scenario(args)
        A, B = sc.A, sc.B
    doc = {"hausdorff": mt.hausdorff(A, B).to_dict()}
    if args.radius is not None:
        doc["localized"] = mt.localized_hausdorff_report(A, B, args.radius).to_dict()
    _emit(args, "metrics_report.json", doc)
    return 0


def cmd_adversary(args) -> int:
    sc = _scenario(args)
    cfg = {"eps": args.eps, "epochs": args.epochs, "delta_schedule": args.delta_schedule}
    ctx = {"seed": args.seed, "budget": args.budget, "phase_cap": args.budget}
    out = args.out or "out"
    os.makedirs(out, exist_ok=True)
    produced: list = []
    try:
        summary = ex.stage_adversary(sc, cfg, ctx, out, produced)
    except ex.CertificateFailure as exc:
        print(f"certificate failure: {exc}", file=sys.stderr)
        return ex.EXIT_CERTIFICATE
    sys.stdout.write(dumps(ex._jsonable({"summary": summary, "outputs": produced})))
    return 0


def cmd_probe(args) -> int:
    sc = _scenario(args)
    est = pr.estimate_modulus(
        sc.pair(), args.eps_grid, args.delta_grid or [e / 2 for e in args.eps_grid], window=args.window,
        budget=args.samples, seed=args.seed, extra_points=sc.witnesses,
    )
    _emit(args, "probe_report.json", est.to_dict())
    return 0


def cmd_scenario(args) -> int:
    if args.action == "list":
        for name in BUILTINS:
            sc = get_scenario(name)
            print(f"{name}\tdim={sc.dimension}\t{sc.regularity}")
        return 0
    if not args.name:
        raise ScenarioError("scenario show needs a name")
    args.scenario = args.name
    sc = _scenario(args)
    _emit(args, f"{sc.name}.json", sc.to_dict())
    return 0


def cmd_run(args) -> int:
    try:
        with open(args.config, encoding="utf-8") as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ex.ConfigError(f"cannot read config {args.config}: {exc}") from None
    if args.seed_given:
        config["seed"] = args.seed
    code, manifest = ex.run_experiment(config, args.out)
    for st in manifest["stages"]:
        line = f"{st['name']}: {st['status']}"
        if st["status"] != "ok":
            line += f" ({st.get('error')})"
        print(line)
    return code


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol", type=float, default=1e-9, help="membership tolerance (default 1e-9)")
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--budget", type=int, default=10_000, help="iteration budget (default 10000)")

    def scen(p, required=True):
        p.add_argument("--scenario", required=required, help="built-in name or scenario JSON file")
        p.add_argument("--param", type=_param, action="append", help="built-in parameter key=value (repeatable)")

    parser = argparse.ArgumentParser(prog="apmlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"apmlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", parents=[common], help="project a point onto a set")
    scen(p, required=False)
    p.add_argument("--set", help="set JSON file (instead of --scenario)")
    p.add_argument("--which", choices=["A", "B", "E", "F"], default="A")
    p.add_argument("--point", type=_vector, required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("apm", parents=[common], help="classical alternating projections")
    scen(p)
    p.add_argument("--x0", type=_vector)
    p.add_argument("--stop-tol", type=float, default=0.0)
    p.set_defaults(func=cmd_apm)

    p = sub.add_parser("perturbed", parents=[common], help="randomized perturbed APM trials")
    scen(p)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--horizon", type=int, default=None, help="steps per trial (default: --budget)")
    p.add_argument("--c", type=float, default=1.0, help="delta_n = c / n^p")
    p.add_argument("--p", type=float, default=1.0)
    p.set_defaults(func=cmd_perturbed)

    p = sub.add_parser("metrics", parents=[common], help="Hausdorff and localized distances")
    scen(p, required=False)
    p.add_argument("--a", help="set JSON file")
    p.add_argument("--b", help="set JSON file")
    p.add_argument("--radius", type=float)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("adversary", parents=[common], help="build an adversarial perturbation schedule")
    scen(p)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--delta-schedule", type=_vector, default=None)
    p.set_defaults(func=cmd_adversary)

    p = sub.add_parser("probe", parents=[common], help="estimate the regularity modulus")
    scen(p)
    p.add_argument("--eps-grid", type=_vector, default=[0.5, 0.1, 0.01])
    p.add_argument("--delta-grid", type=_vector, default=None)
    p.add_argument("--window", type=float)
    p.add_argument("--samples", type=int, default=4000)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("scenario", parents=[common], help="list or show scenarios")
    p.add_argument("action", choices=["list", "show"])
    p.add_argument("name", nargs="?")
    p.add_argument("--param", type=_param, action="append")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("run", parents=[common], help="run an experiment config")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return ex.EXIT_CONFIG if exc.code not in (0, None) else 0
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return ex.exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
