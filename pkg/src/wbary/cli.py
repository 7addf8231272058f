"""Command-line entry point: ``wbary <subcommand> ...``.

Exit codes: 0 success or pass, 1 inequality fail or inconclusive, 2 usage
error (bad flags, unreadable or invalid input, hypotheses not met), 3 solver
error. Structured output is JSON with sorted keys and no timestamps, so equal
inputs give byte-identical files at any ``--threads``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import barycenter, distortion, functionals, harness, instances, karcher, measures, ot
from . import geometry as geo
from .errors import CDViolated, EmptySet, InvalidPoint, NotApplicable, Unsupported, WBaryError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# I/O helpers


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _plain(obj):
    """JSON-safe copy: numpy scalars and arrays become Python values, non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def load_json(source):
    """A path to a JSON file, or an inline JSON document."""
    if isinstance(source, (dict, list)):
        return source
    text = str(source)
    if text.lstrip().startswith(("{", "[")):
        return json.loads(text)
    p = Path(text)
    if not p.is_file():
        raise UsageError(f"file not found: {text}")
    with open(p) as fh:
        return json.load(fh)


def _relative(config_path, target):
    """Resolve ``target`` against the directory of ``config_path`` when it exists there."""
    candidate = Path(config_path).parent / target
    return candidate if not Path(target).is_absolute() and candidate.is_file() else Path(target)


def _coords(text):
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise UsageError(f"cannot parse coordinates {text!r}") from exc


def _float_or_inf(v):
    if v is None or (isinstance(v, str) and v.lower() in ("inf", "infinity")):
        return math.inf
    return float(v)


def _emit(args, payload, csv_payload=None):
    text = dumps(payload)
    if args.out:
        atomic_write(args.out, text)
        if csv_payload is not None:
            atomic_write(args.csv or Path(args.out).with_suffix(".csv"), csv_text(*csv_payload))
    else:
        sys.stdout.write(text)
        if csv_payload is not None and args.csv:
            atomic_write(args.csv, csv_text(*csv_payload))


def _status_code(status):
    return EXIT_OK if status == harness.PASS else EXIT_FAIL


# ---------------------------------------------------------------------------
# model construction from JSON


def _manifold(source) -> geo.ManifoldSpec:
    return geo.ManifoldSpec.from_json(load_json(source))


def _measure(source, spec):
    m = measures.measure_from_json(load_json(source), spec)
    return measures.to_discrete(m) if isinstance(m, measures.MeshDensity) else m


_GENERATORS = {
    "bumps": instances.smooth_omega,
    "wave": instances.wave_omega,
    "quantized": instances.quantized_discrete_omega,
}


def build_omega(obj) -> barycenter.OmegaSpec:
    """Omega from an explicit ``{manifold, entries}`` document or a seeded ``instance`` recipe."""
    obj = load_json(obj)
    if "instance" in obj:
        recipe = dict(obj["instance"])
        kind = recipe.pop("kind")
        if kind not in _GENERATORS:
            raise UsageError(f"unknown instance kind {kind!r}")
        spec = geo.ManifoldSpec.from_json(recipe.pop("manifold"))
        if "reference" in recipe:
            recipe["reference"] = measures.ReferenceMeasure.from_json(recipe["reference"])
        return _GENERATORS[kind](spec, **recipe)
    return barycenter.OmegaSpec.from_json(obj)


def _entropy(obj) -> functionals.EntropySpec:
    return functionals.EntropySpec.from_json(obj or {})


def _set_indicator(mesh, obj):
    if "indicator" in obj:
        return np.asarray(obj["indicator"], dtype=bool)
    if "cells" in obj:
        ind = np.zeros(len(mesh), dtype=bool)
        ind[np.asarray(obj["cells"], dtype=int)] = True
        return ind
    if "ball" in obj:
        c = geo.validate_point(mesh.spec, obj["ball"]["center"])
        return geo._dist(mesh.spec, mesh.centers, c[None]) < float(obj["ball"]["radius"])
    raise UsageError("a set needs 'indicator', 'cells' or 'ball'")


# ---------------------------------------------------------------------------
# subcommands


def cmd_ot(args):
    spec = _manifold(args.manifold)
    mu, nu = _measure(args.mu, spec), _measure(args.nu, spec)
    if args.method == "exact":
        plan, duals = ot.solve_exact(mu, nu, spec)
    else:
        plan, duals = ot.solve_entropic(mu, nu, spec, epsilon=args.epsilon)
    config = {"manifold": spec.to_json(), "mu": mu.to_json(), "nu": nu.to_json(), "method": args.method}
    if args.method == "entropic":
        config["epsilon"] = args.epsilon
    out = {"command": "ot", "config": config, "plan": plan.to_json(duals),
           "w2": math.sqrt(max(2 * plan.transport_cost, 0.0))}
    _emit(args, out)
    return EXIT_OK


def cmd_w2(args):
    spec = _manifold(args.manifold)
    mu, nu = _measure(args.mu, spec), _measure(args.nu, spec)
    value = ot.w2(mu, nu, spec, method=args.method, epsilon=args.epsilon)
    if args.out:
        atomic_write(args.out, dumps({"command": "w2", "config": {"manifold": spec.to_json(), "mu": mu.to_json(),
                                                                  "nu": nu.to_json(), "method": args.method},
                                      "w2": value}))
    print(value)
    return EXIT_OK


def _points_weights(points_src, weights_src):
    pts = load_json(points_src)
    pts = pts["points"] if isinstance(pts, dict) else pts
    if weights_src is None:
        w = np.full(len(pts), 1.0 / len(pts))
    else:
        w = load_json(weights_src)
        w = w["weights"] if isinstance(w, dict) else w
    return np.asarray(pts, dtype=float), np.asarray(w, dtype=float)


def cmd_karcher(args):
    spec = _manifold(args.manifold)
    pts, w = _points_weights(args.points, args.weights)
    z = karcher.bc_map(spec, w, pts, tol=args.tol)
    value = karcher.functional(spec, karcher.WeightedConfig(pts, w), z)
    _emit(args, {"command": "karcher", "config": {"manifold": spec.to_json(), "points": pts, "weights": w,
                                                  "tol": args.tol}, "point": z, "functional": value})
    return EXIT_OK


def cmd_barycenter(args):
    omega = build_omega(args.omega)
    if args.method == "multimarginal":
        res = barycenter.solve_multimarginal(omega, tol=args.tol)
        config = {"method": "multimarginal"}
    else:
        res = barycenter.solve_fixed_point(omega, args.support_size, seed=args.seed, tol=args.tol,
                                           max_iter=args.max_iter, threads=args.threads, restarts=args.restarts)
        config = {"method": "fixed-point", "support_size": args.support_size, "seed": args.seed,
                  "max_iter": args.max_iter, "restarts": args.restarts}
    config.update({"omega": omega.to_json(), "tol": args.tol})
    D = omega.manifold.ambient_dim
    rows = [[k, *p, m, r] for k, (p, m, r) in
            enumerate(zip(res.measure.points, res.measure.masses, res.first_order_residuals))]
    header = ["atom"] + [f"x{j}" for j in range(D)] + ["mass", "first_order_residual"]
    _emit(args, {"command": "barycenter", "config": config, "result": res.to_json()}, (header, rows))
    return EXIT_OK


def cmd_alpha(args):
    spec = _manifold(args.manifold)
    lam = load_json(args.lam)
    if "atoms" in lam:
        pts = [a["coords"] for a in lam["atoms"]]
        w = [a["mass"] for a in lam["atoms"]]
    else:
        pts, w = lam["points"], lam["weights"]
    xbar = None if args.xbar is None else _coords(args.xbar)
    rep = distortion.alpha(spec, (np.asarray(pts, float), np.asarray(w, float)), _coords(args.y), xbar=xbar,
                           method=args.method)
    _emit(args, {"command": "alpha",
                 "config": {"manifold": spec.to_json(), "points": pts, "weights": w, "y": _coords(args.y),
                            "xbar": xbar, "method": args.method},
                 "alpha": rep.alpha, "xbar": rep.xbar, "numerator": rep.numerator, "denominator": rep.denominator})
    return EXIT_OK


def cmd_jacobian(args):
    omega = build_omega(args.omega)
    res = barycenter.result_from_json(_unwrap_result(load_json(args.result)), omega)
    mesh = None if args.mesh_res is None else measures.build_mesh(omega.manifold, args.mesh_res)
    rep = distortion.jacobian_inequality_check(res, omega, mesh=mesh, slack=args.slack)
    D = omega.manifold.ambient_dim
    rows = [[k, *p, l, r] for k, (p, l, r) in enumerate(zip(res.measure.points, rep.lhs, rep.density_ratio))]
    header = ["atom"] + [f"x{j}" for j in range(D)] + ["lhs", "density_ratio"]
    status = harness.PASS if rep.fraction_ok >= args.min_fraction else harness.FAIL
    config = {"omega": omega.to_json(), "result": res.to_json(), "mesh_res": args.mesh_res, "slack": args.slack,
              "min_fraction": args.min_fraction}
    _emit(args, {"command": "jacobian-check", "config": config, "status": status, "report": rep.to_json()},
          (header, rows))
    return _status_code(status)


def _unwrap_result(obj):
    return obj["result"] if "result" in obj and "atoms" not in obj else obj


def _experiment(args):
    """Merge an experiment file with command-line overrides."""
    exp = dict(load_json(args.config)) if args.config else {}
    if args.config and isinstance(exp.get("omega"), str) and not exp["omega"].lstrip().startswith("{"):
        exp["omega"] = str(_relative(args.config, exp["omega"]))
    for key in ("omega", "mesh_res", "slack", "support_size", "seed", "restarts", "tol"):
        val = getattr(args, key, None)
        if val is not None:
            exp[key] = val
    return exp


def _jensen_family(args, distorted):
    exp = _experiment(args)
    if "omega" not in exp:
        raise UsageError("an Omega is required (--omega or 'omega' in the experiment file)")
    omega = build_omega(exp["omega"])
    fspec = _entropy(exp.get("entropy"))
    seed = int(exp.get("seed", 0))
    slack = float(exp.get("slack", 0.05))
    mesh_res = exp.get("mesh_res")
    support = exp.get("support_size") or harness.default_support_size(omega)
    res = barycenter.solve_fixed_point(omega, int(support), seed=seed, tol=exp.get("tol"),
                                       threads=args.threads, restarts=int(exp.get("restarts", 1)))
    check = harness.distorted_jensen_check if distorted else harness.jensen_check
    rep = check(omega, fspec, mesh_res=mesh_res, slack=slack, seed=seed, result=res)
    mesh = harness._check_mesh(omega, mesh_res, fspec.reference)
    bary = measures.bin_to_mesh(res.measure, mesh)
    cols = [bary.values] + [measures.resample(m, mesh).values for m in omega.measures]
    header = ["cell"] + [f"x{j}" for j in range(omega.manifold.ambient_dim)] + ["barycenter"] + \
        [f"entry{i}" for i in range(len(omega.measures))]
    if distorted:
        alphas, _ = harness.target_cell_alphas(omega.manifold, res, omega.weights)
        cols += harness.check_mesh_alphas(omega, res, alphas, mesh)
        header += [f"alpha{i}" for i in range(len(omega.measures))]
    rows = [[k, *c, *(col[k] for col in cols)] for k, c in enumerate(mesh.centers)]
    config = {"omega": omega.to_json(), "entropy": fspec.to_json(), "seed": seed, "slack": slack,
              "mesh_res": mesh_res, "support_size": int(support), "restarts": int(exp.get("restarts", 1)),
              "tol": exp.get("tol")}
    _emit(args, {"command": "jensen-distorted" if distorted else "jensen", "config": config, "report": rep.to_json()},
          (header, rows))
    return _status_code(rep.status)


def cmd_jensen(args):
    return _jensen_family(args, distorted=False)


def cmd_jensen_distorted(args):
    return _jensen_family(args, distorted=True)


def cmd_density_bound(args):
    exp = _experiment(args)
    if "omega" not in exp:
        raise UsageError("an Omega is required (--omega or 'omega' in the experiment file)")
    omega = build_omega(exp["omega"])
    seed = int(exp.get("seed", 0))
    mesh_res = exp.get("mesh_res")
    factor = float(exp.get("factor", 1.1))
    L = exp.get("L")
    support = exp.get("support_size") or harness.default_support_size(omega)
    res = barycenter.solve_fixed_point(omega, int(support), seed=seed, tol=exp.get("tol"),
                                       threads=args.threads, restarts=int(exp.get("restarts", 1)))
    rep = harness.density_bound_check(omega, result=res, mesh_res=mesh_res, L=L, factor=factor, seed=seed)
    mesh = harness._check_mesh(omega, mesh_res, None)
    fbar = measures.bin_to_mesh(res.measure, mesh).values
    rows = [[k, *c, f] for k, (c, f) in enumerate(zip(mesh.centers, fbar))]
    header = ["cell"] + [f"x{j}" for j in range(omega.manifold.ambient_dim)] + ["barycenter_density"]
    config = {"omega": omega.to_json(), "seed": seed, "mesh_res": mesh_res, "factor": factor, "L": L,
              "support_size": int(support), "restarts": int(exp.get("restarts", 1)), "tol": exp.get("tol")}
    _emit(args, {"command": "density-bound", "config": config, "report": rep.to_json()}, (header, rows))
    return _status_code(rep.status)


def _bm_setup(args):
    exp = dict(load_json(args.config))
    if args.seed is not None:
        exp["seed"] = args.seed
    if args.mesh_res is not None:
        exp["mesh_res"] = args.mesh_res
    spec = geo.ManifoldSpec.from_json(exp["manifold"])
    reference = measures.ReferenceMeasure.from_json(exp.get("reference"))
    mesh = measures.build_mesh(spec, exp["mesh_res"], reference)
    sets = [_set_indicator(mesh, s) for s in exp["sets"]]
    return exp, spec, reference, mesh, sets


def _bm_output(args, command, exp, spec, reference, mesh, sets, rep):
    cover = np.asarray(rep.diagnostics, dtype=bool)
    rows = [[k, *c, v, *(int(a[k]) for a in sets), int(cover[k])]
            for k, (c, v) in enumerate(zip(mesh.centers, mesh.volumes))]
    header = ["cell"] + [f"x{j}" for j in range(spec.ambient_dim)] + ["volume"] + \
        [f"set{i}" for i in range(len(sets))] + ["cover"]
    config = {k: v for k, v in exp.items() if k != "sets"}
    config.update({"manifold": spec.to_json(), "reference": reference.to_json(),
                   "sets": [np.flatnonzero(a).tolist() for a in sets]})
    _emit(args, {"command": command, "config": config, "report": rep.to_json()}, (header, rows))
    return _status_code(rep.status)


def cmd_bm(args):
    exp, spec, reference, mesh, sets = _bm_setup(args)
    w = exp.get("weights") or [1.0 / len(sets)] * len(sets)
    exp.setdefault("budget", 10**6)
    exp.setdefault("seed", 0)
    exp["weights"] = w
    rep = harness.multiset_bm(sets, w, mesh, _float_or_inf(exp.get("N")), int(exp["budget"]), int(exp["seed"]),
                              args.threads)
    return _bm_output(args, "bm", exp, spec, reference, mesh, sets, rep)


def cmd_bm_random(args):
    exp, spec, reference, mesh, sets = _bm_setup(args)
    p = exp.get("probabilities") or [1.0 / len(sets)] * len(sets)
    exp.setdefault("budget", 10**6)
    exp.setdefault("seed", 0)
    exp.setdefault("selections", 256)
    exp["probabilities"] = p
    rset = harness.RandomSetSpec(mesh, list(zip(p, sets)))
    rep = harness.random_bm(rset, _float_or_inf(exp.get("N")), int(exp["budget"]), int(exp["seed"]), args.threads,
                            int(exp["selections"]))
    return _bm_output(args, "bm-random", exp, spec, reference, mesh, sets, rep)


def cmd_selftest(args):
    from . import selftest

    if args.inject_fault:
        with selftest.fault(args.inject_fault):
            report = selftest.run()
    else:
        report = selftest.run()
    _emit(args, report)
    for item in report["checks"]:
        if not item["passed"]:
            print(f"FAILED {item['name']}: {item['detail']}", file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser


def _common(p, seed=True):
    p.add_argument("--out", help="write JSON here (atomically); default stdout")
    p.add_argument("--csv", help="per-cell/per-atom CSV path; default: --out with .csv suffix")
    p.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")
    if seed:
        p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wbary", description="Wasserstein barycenters on compact manifolds")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("ot", "w2"):
        p = sub.add_parser(name, help="exact or entropic transport" if name == "ot" else "W2 distance")
        p.add_argument("--manifold", required=True)
        p.add_argument("--mu", required=True)
        p.add_argument("--nu", required=True)
        p.add_argument("--method", choices=("exact", "entropic"), default="exact")
        p.add_argument("--epsilon", type=float, default=1e-2)
        _common(p, seed=False)

    p = sub.add_parser("karcher", help="Karcher mean of weighted points")
    p.add_argument("--manifold", required=True)
    p.add_argument("--points", required=True)
    p.add_argument("--weights")
    p.add_argument("--tol", type=float)
    _common(p, seed=False)

    p = sub.add_parser("barycenter", help="Wasserstein barycenter of an Omega")
    p.add_argument("--omega", required=True)
    p.add_argument("--method", choices=("fixed-point", "multimarginal"), default="fixed-point")
    p.add_argument("--support-size", type=int, default=64)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--tol", type=float)
    _common(p)

    p = sub.add_parser("alpha", help="barycentric distortion coefficient")
    p.add_argument("--manifold", required=True)
    p.add_argument("--lam", required=True)
    p.add_argument("--y", required=True, help='coordinates, e.g. "0,0,1"')
    p.add_argument("--xbar")
    p.add_argument("--method", choices=("closed", "fd"), default="closed")
    _common(p, seed=False)

    p = sub.add_parser("jacobian-check", help="pointwise Jacobian inequality at barycenter atoms")
    p.add_argument("--result", required=True)
    p.add_argument("--omega", required=True)
    p.add_argument("--mesh-res", type=int)
    p.add_argument("--slack", type=float, default=0.05)
    p.add_argument("--min-fraction", type=float, default=0.95)
    _common(p, seed=False)

    for name in ("jensen", "jensen-distorted", "density-bound"):
        p = sub.add_parser(name)
        p.add_argument("config", nargs="?", help="experiment JSON file")
        p.add_argument("--omega")
        p.add_argument("--mesh-res", type=int)
        p.add_argument("--slack", type=float)
        p.add_argument("--support-size", type=int)
        p.add_argument("--restarts", type=int)
        p.add_argument("--tol", type=float)
        _common(p)

    for name in ("bm", "bm-random"):
        p = sub.add_parser(name)
        p.add_argument("config", help="experiment JSON file")
        p.add_argument("--mesh-res", type=int)
        _common(p)

    p = sub.add_parser("selftest", help="run the built-in sanity suite")
    p.add_argument("--inject-fault", choices=("geometry",), help=argparse.SUPPRESS)
    _common(p, seed=False)
    return parser


COMMANDS = {
    "ot": cmd_ot,
    "w2": cmd_w2,
    "karcher": cmd_karcher,
    "barycenter": cmd_barycenter,
    "alpha": cmd_alpha,
    "jacobian-check": cmd_jacobian,
    "jensen": cmd_jensen,
    "jensen-distorted": cmd_jensen_distorted,
    "density-bound": cmd_density_bound,
    "bm": cmd_bm,
    "bm-random": cmd_bm_random,
    "selftest": cmd_selftest,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (UsageError, InvalidPoint, EmptySet, NotApplicable, CDViolated, Unsupported) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WBaryError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
