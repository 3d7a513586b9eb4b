"""Command-line front end.

    polystab analyze   <spec> [--resolution N] [--seed S] [--problem P] [--out DIR]
    polystab decompose <spec> [--resolution N] [--seed S] [--jobs J] [--out DIR]
    polystab flow      <spec> [--t-end T] [--perturb EXPR] [--method M] [--plot] [--out DIR]
    polystab sweep     <family> [--values V1,V2,...] [--jobs J] [--out DIR]

``analyze`` exits 0 (stable), 10 (semistable), 20 (unstable) or 1 (error).
Errors are printed to stderr as a JSON object.  ``<spec>`` is a path or the
name of a shipped example (``p1``, ``trapezium_l2``, ...).  The log level is
read from ``POLYSTAB_LOG``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .calabiflow import FlowConfig, init_potential, run_flow
from .decomposition import DecompositionConfig, decompose
from .destabilizer import SolverOptions, solve_optimal_destabilizer
from .errors import MalformedDocument, PolystabError
from .functionals import extremal_affine
from .geometry import build_quadrature, interval, parse_polytope, scalar_summary, trapezium

log = logging.getLogger("polystab")

EXIT = {"stable": 0, "semistable_strict": 10, "semistable": 10, "unstable": 20}
DEFAULT_SEED = 42
FAMILIES = ("trapezium", "interval", "octagon")


# ---------------------------------------------------------------------------
# plumbing


def _setup_logging():
    level = os.environ.get("POLYSTAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(obj):
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serialisable: {type(obj)}")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def resolve_spec(name: str) -> Path:
    """A filesystem path, or a shipped example by name (with or without ``.json``)."""
    p = Path(name)
    if p.exists():
        return p
    stem = p.name if p.suffix == ".json" else p.name + ".json"
    shipped = resources.files("polystab") / "specs" / stem
    if shipped.is_file():
        return Path(str(shipped))
    raise MalformedDocument(f"spec {name!r} not found")


def load_spec(name: str):
    path = resolve_spec(name)
    raw = path.read_bytes()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"invalid JSON in {path}: {exc}") from exc
    mp = parse_polytope(doc)
    return mp, doc, hashlib.sha256(raw).hexdigest(), str(path)


def _resolution(args, doc, mp) -> int:
    if args.resolution is not None:
        return args.resolution
    mesh = doc.get("mesh", {}) if isinstance(doc, dict) else {}
    return int(mesh.get("resolution", 64 if mp.dim == 1 else 8))


def _problem(args, doc) -> str:
    p = getattr(args, "problem", None) or doc.get("problem", "absolute")
    if p not in ("absolute", "relative"):
        raise MalformedDocument(f"problem must be 'absolute' or 'relative', got {p!r}")
    return p


def _error(exc: Exception) -> int:
    if isinstance(exc, PolystabError):
        payload = exc.to_dict()
    else:
        payload = {"error": "internal_error", "type": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(json.dumps(payload) + "\n")
    return 1


# ---------------------------------------------------------------------------
# analyze


def analyze_polytope(mp, doc, spec_hash, *, resolution, seed, problem, grading=1.0) -> tuple[dict, object]:
    t0 = time.perf_counter()
    opts = SolverOptions(seed=seed, battery_seed=seed)
    quad = build_quadrature(mp, resolution, grading)
    res = solve_optimal_destabilizer(mp, quad, opts, problem=problem)
    summary = scalar_summary(mp)
    report = {
        "tool": {"name": "polystab", "version": __version__},
        "input": {"spec_sha256": spec_hash, "name": mp.name, "polytope": mp.to_dict()},
        "seeds": {"seed": seed, "battery_seed": opts.battery_seed},
        "resolution": resolution,
        "scalar_summary": summary.to_dict(),
        "extremal_affine": extremal_affine(mp).to_dict(),
        "problem": problem,
        "density": res.density.to_dict(),
        "verdict": res.verdict,
        "destabilizer": res.summary(),
        "decomposition": None,
        "flow": None,
        "timing": {"wall_seconds": round(time.perf_counter() - t0, 3)},
    }
    return report, res


def _phi_csv(res) -> str:
    nodes = res.quad.mesh_nodes
    n = nodes.shape[1]
    head = ",".join([f"x{i}" for i in range(n)] + ["phi", "B"])
    lines = [head]
    for x, f, b in zip(nodes, res.phi.values, res.b_density):
        lines.append(",".join(repr(float(v)) for v in (*x, f, b)))
    return "\n".join(lines) + "\n"


def cmd_analyze(args) -> int:
    mp, doc, h, _ = load_spec(args.spec)
    report, res = analyze_polytope(mp, doc, h, resolution=_resolution(args, doc, mp),
                                   seed=args.seed, problem=_problem(args, doc))
    out = Path(args.out)
    _write_atomic(out / "report.json", _dumps(report))
    _write_atomic(out / "phi.csv", _phi_csv(res))
    print(f"{mp.name or args.spec}: {res.verdict} (|Phi| = {res.norm:.3e})")
    return EXIT.get(res.verdict, 1)


# ---------------------------------------------------------------------------
# decompose


def cmd_decompose(args) -> int:
    mp, doc, h, _ = load_spec(args.spec)
    report, res = analyze_polytope(mp, doc, h, resolution=_resolution(args, doc, mp),
                                   seed=args.seed, problem=_problem(args, doc))
    cfg = DecompositionConfig(jobs=args.jobs)
    rep = decompose(res, mp, cfg, opts=SolverOptions(seed=args.seed, battery_seed=args.seed))
    out = Path(args.out)
    report["decomposition"] = rep.to_dict()
    _write_atomic(out / "decomposition.json", _dumps(report["decomposition"]))
    _write_atomic(out / "report.json", _dumps(report))
    if not rep.pl_detected:
        sys.stderr.write(json.dumps({
            "error": "not_piecewise_linear",
            "message": "Phi is not piecewise linear at this resolution; no pieces extracted",
        }) + "\n")
        return 1
    nodes = res.quad.mesh_nodes
    owner = np.full(len(nodes), -1)
    for k, p in enumerate(rep.pieces):
        owner[p.node_set] = np.where(owner[p.node_set] < 0, k, owner[p.node_set])
    lines = [",".join([f"x{i}" for i in range(nodes.shape[1])] + ["piece"])]
    lines += [",".join([repr(float(v)) for v in x] + [str(int(k))]) for x, k in zip(nodes, owner)]
    _write_atomic(out / "nodes.csv", "\n".join(lines) + "\n")
    print(f"{len(rep.pieces)} piece(s); verdicts {rep.verdicts}; concave glue: {rep.concavity_ok}")
    return 0


# ---------------------------------------------------------------------------
# flow


_SAFE = {k: getattr(np, k) for k in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "pi",
                                     "sinh", "cosh", "tanh")}


def parse_perturbation(expr: str | None):
    """Compile an expression in ``x`` (numpy functions allowed) into a callable."""
    if not expr:
        return None
    code = compile(expr, "<perturb>", "eval")
    allowed = set(_SAFE) | {"x"}
    bad = [n for n in code.co_names if n not in allowed]
    if bad:
        raise MalformedDocument(f"perturbation uses unknown names {bad}")

    def f(x):
        return eval(code, {"__builtins__": {}}, dict(_SAFE, x=x))  # noqa: S307

    return f


def _svg_plot(diag, path: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = diag.column("t")
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for col in ("calabi_energy", "target_residual"):
        axes[0].semilogy(t, np.maximum(diag.column(col), 1e-16), label=col)
    axes[0].set_xlabel("t")
    axes[0].legend()
    for col in ("F_Shat", "F_B"):
        axes[1].plot(t, diag.column(col), label=col)
    axes[1].set_xlabel("t")
    axes[1].legend()
    fig.tight_layout()
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".svg")
    os.close(fd)
    fig.savefig(tmp, format="svg")
    plt.close(fig)
    os.replace(tmp, path)


def cmd_flow(args) -> int:
    mp, doc, h, _ = load_spec(args.spec)
    resolution = args.resolution or int(doc.get("mesh", {}).get("resolution", 64))
    state = init_potential(mp, parse_perturbation(args.perturb), resolution=resolution)
    cfg = FlowConfig(method=args.method, target_tol=args.target_tol)
    t0 = time.perf_counter()
    diag, final = run_flow(state, args.t_end, config=cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_atomic(out / "flow.csv", diag.to_csv())
    summary = {
        "tool": {"name": "polystab", "version": __version__},
        "input": {"spec_sha256": h, "name": mp.name},
        "perturbation": args.perturb,
        "resolution": resolution,
        "method": args.method,
        "flow": diag.summary(),
        "timing": {"wall_seconds": round(time.perf_counter() - t0, 3)},
    }
    _write_atomic(out / "flow.json", _dumps(summary))
    if args.plot:
        _svg_plot(diag, out / "flow.svg")
    last = diag.rows[-1]
    print(f"t={last['t']:.4g} |S-S_hat|={last['calabi_energy']:.3e} |S-B|={last['target_residual']:.3e}")
    return 0


# ---------------------------------------------------------------------------
# sweep


def _octagon(a):
    doc = json.loads(resolve_spec("octagon_two_plane").read_text())
    for f in doc["facets"]:
        if abs(f["normal"][0]) == 1 and abs(f["normal"][1]) == 1:
            f["sigma_weight"] = str(Fraction(a))
    return parse_polytope(doc)


def _sweep_item(family: str, value: str, resolution, seed: int) -> dict:
    item = {"family": family, "value": value}
    try:
        if family == "trapezium":
            mp = trapezium(Fraction(value))
            problems = ["relative"]
        elif family == "interval":
            mp = interval(0, 1, (Fraction(value), 1))
            problems = ["relative", "absolute"]
        elif family == "octagon":
            mp = _octagon(Fraction(value))
            problems = ["relative"]
        else:
            raise MalformedDocument(f"unknown family {family!r}; choose from {FAMILIES}")
        res_n = resolution or (64 if mp.dim == 1 else 8)
        h = hashlib.sha256(_dumps(mp.to_dict()).encode()).hexdigest()
        item["reports"] = {}
        for prob in problems:
            report, _ = analyze_polytope(mp, {}, h, resolution=res_n, seed=seed, problem=prob)
            item["reports"][prob] = report
        item["verdicts"] = {p: r["verdict"] for p, r in item["reports"].items()}
    except Exception as exc:  # recorded per item; the sweep continues
        item["error"] = exc.to_dict() if isinstance(exc, PolystabError) else {
            "error": "internal_error", "message": str(exc)}
    return item


def _default_values(family):
    return {
        "trapezium": ["1/2", "1", "2", "4"],
        "interval": ["1/4", "1/2", "3/4", "1"],
        "octagon": ["1/10", "1/4", "1/2"],
    }.get(family, [])


def cmd_sweep(args) -> int:
    family = args.spec
    if family not in FAMILIES:
        raise MalformedDocument(f"unknown family {family!r}; choose from {FAMILIES}")
    values = args.values.split(",") if args.values else _default_values(family)
    out = Path(args.out)
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            items = list(ex.map(_sweep_item, [family] * len(values), values,
                                [args.resolution] * len(values), [args.seed] * len(values)))
    else:
        items = [_sweep_item(family, v, args.resolution, args.seed) for v in values]
    index = {"family": family, "seed": args.seed, "items": []}
    for k, item in enumerate(items):
        entry = {"value": item["value"]}
        if "error" in item:
            entry["error"] = item["error"]
        else:
            name = f"item_{k:03d}.json"
            _write_atomic(out / name, _dumps(item["reports"]))
            entry.update(report=name, verdicts=item["verdicts"])
        index["items"].append(entry)
        print(f"{family} {item['value']}: {entry.get('verdicts', entry.get('error'))}")
    _write_atomic(out / "index.json", _dumps(index))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polystab", description="Toric stability analysis of polytopes")
    p.add_argument("--version", action="version", version=f"polystab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("spec")
        sp.add_argument("--resolution", type=int, default=None)
        sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--out", default=".")
        sp.add_argument("--plot", action="store_true")

    a = sub.add_parser("analyze", help="stability verdict, extremal function and destabiliser")
    common(a)
    a.add_argument("--problem", choices=("absolute", "relative"), default=None)
    a.set_defaults(func=cmd_analyze)

    d = sub.add_parser("decompose", help="linearity regions of an unstable destabiliser")
    common(d)
    d.add_argument("--problem", choices=("absolute", "relative"), default=None)
    d.set_defaults(func=cmd_decompose)

    f = sub.add_parser("flow", help="Calabi flow on a weighted interval")
    common(f)
    f.add_argument("--t-end", type=float, default=5.0)
    f.add_argument("--perturb", default=None, help="smooth perturbation in x, e.g. '0.5*x*(1-x)'")
    f.add_argument("--method", choices=("implicit", "explicit"), default="implicit")
    f.add_argument("--target-tol", type=float, default=None)
    f.set_defaults(func=cmd_flow)

    s = sub.add_parser("sweep", help="run a parameter family")
    common(s)
    s.add_argument("--values", default=None, help="comma-separated parameter values")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        log.debug("command failed", exc_info=True)
        return _error(exc)


if __name__ == "__main__":
    sys.exit(main())
