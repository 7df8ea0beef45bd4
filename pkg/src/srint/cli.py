"""Batch command-line front end: ``srint <command> [--config job.json] [flags]``.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path
from xml.sax.saxutils import escape

import jsonschema
import numpy as np

from . import __version__
from .asymptotics import (
    AsymptoticsError,
    MinimizerParams,
    estimate_constant,
    fit_rate,
    minimize_configuration,
    shortrange_split_probe,
    energy_series,
    theory_exponent,
)
from .config import ConfigError, PointConfig, covering_radius, read_csv, separation, write_csv
from .density import DensityError, DensityModel, compare_density, solve_l1
from .expr import ExprError, parse
from .meshing import MeshError, relax, write_off
from .optimize import OptimizeError, write_trace
from .quantize import Quadrature, QuantError, quantizer_constant_1d
from .regions import Region, RegionError, from_json, unit_box
from .riesz import RieszError, circle_constant

COMMANDS = ("riesz-min", "quantize", "mesh-relax", "estimate-constant", "verify-density", "split-probe")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}

REGION_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["box", "ball", "box-union", "circle-periodic", "sphere-surface"]},
        "dim": {"type": "integer", "minimum": 1},
        "corner": _VEC,
        "side": {"oneOf": [_POS, {"type": "array", "items": _POS, "minItems": 1}]},
        "center": _VEC,
        "radius": _POS,
        "boxes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["corner", "side"],
                "properties": {"corner": _VEC, "side": {"oneOf": [_POS, {"type": "array", "items": _POS}]}},
            },
        },
    },
}

JOB_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["command"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "region": REGION_SCHEMA,
        "regions": {"type": "array", "items": REGION_SCHEMA, "minItems": 2, "maxItems": 2},
        "family": {"enum": ["riesz", "quantizer"]},
        "n": {"type": "integer", "minimum": 2},
        "n_grid": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
        "s": _POS,
        "k": {"type": "integer", "minimum": 1},
        "p": _POS,
        "P": {"type": "number", "minimum": 0},
        "dt": _POS,
        "iters": {"type": "integer", "minimum": 0},
        "kappa": {"type": "string"},
        "eta": {"type": "string"},
        "xi": {"type": "string"},
        "f1": _POS,
        "seed": {"type": "integer", "minimum": 0},
        "restarts": {"type": "integer", "minimum": 1},
        "max_iters": {"type": "integer", "minimum": 1},
        "lloyd_steps": {"type": "integer", "minimum": 1},
        "quadrature": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["monte-carlo", "grid", "exact-1d"]},
                "samples": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "points": {"type": "string"},
        "out": {"type": "string"},
        "emit_svg": {"type": "boolean"},
        "threads": {"type": "integer", "minimum": 1},
    },
}

DEFAULTS = {
    "region": {"kind": "box", "dim": 2},
    "family": "riesz",
    "n": 100,
    "n_grid": [64, 96, 128, 192, 256, 384, 512],
    "s": 2.0,
    "k": 1,
    "p": 2.0,
    "P": 0.2,
    "dt": 0.1,
    "iters": 500,
    "seed": 0,
    "restarts": 1,
    "max_iters": 2000,
    "lloyd_steps": 200,
    "quadrature": {"mode": "monte-carlo", "samples": 100_000, "seed": 0},
    "out": ".",
    "emit_svg": False,
}


class JobError(Exception):
    """Configuration problem; ``pointer`` is a JSON pointer into the job config."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def validate_job(job: dict) -> None:
    errors = sorted(jsonschema.Draft202012Validator(JOB_SCHEMA).iter_errors(job), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        pointer = _pointer(err.absolute_path)
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            pointer = f"{pointer}/{extra[0]}"
            raise JobError(pointer, f"unknown key {extra[0]!r}")
        raise JobError(pointer, err.message)


# -- argument handling --------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srint", description="Short-range interaction point configurations.")
    parser.add_argument("--version", action="version", version=f"srint {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON job file; flags override its keys")
        p.add_argument("--out", help="output directory")
        p.add_argument("--region", type=json.loads, help="region as inline JSON")
        p.add_argument("--family", choices=["riesz", "quantizer"])
        p.add_argument("--n", type=int)
        p.add_argument("--n-grid", dest="n_grid", type=_int_list, help="comma-separated N values")
        for key in ("s", "p", "P", "dt", "f1"):
            p.add_argument(f"--{key}", type=float)
        p.add_argument("--k", type=int)
        p.add_argument("--iters", type=int)
        for key in ("kappa", "eta", "xi", "points"):
            p.add_argument(f"--{key}")
        p.add_argument("--seed", type=int)
        p.add_argument("--restarts", type=int)
        p.add_argument("--max-iters", dest="max_iters", type=int)
        p.add_argument("--lloyd-steps", dest="lloyd_steps", type=int)
        p.add_argument("--quad-mode", dest="quad_mode", choices=["monte-carlo", "grid", "exact-1d"])
        p.add_argument("--quad-samples", dest="quad_samples", type=int)
        p.add_argument("--emit-svg", dest="emit_svg", action="store_const", const=True)
        p.add_argument("--threads", type=int)
    return parser


def load_job(args: argparse.Namespace) -> dict:
    """Merge the JSON file (if any) with flag overrides and validate the result."""
    job: dict = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise JobError("", f"cannot read {args.config}: {exc.strerror}") from exc
        try:
            job = json.loads(text)
        except json.JSONDecodeError as exc:
            raise JobError("", f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        if not isinstance(job, dict):
            raise JobError("", "the job file must hold a JSON object")
    if "command" in job and job["command"] != args.command:
        raise JobError("/command", f"file says {job['command']!r} but {args.command!r} was invoked")
    job["command"] = args.command
    flags = vars(args)
    for key in JOB_SCHEMA["properties"]:
        if key not in ("command", "quadrature") and flags.get(key) is not None:
            job[key] = flags[key]
    quad = dict(job.get("quadrature", {}))
    if args.quad_mode is not None:
        quad["mode"] = args.quad_mode
    if args.quad_samples is not None:
        quad["samples"] = args.quad_samples
    if quad:
        job["quadrature"] = quad
    validate_job(job)
    return job


def _threads(job: dict) -> int:
    if "threads" in job:
        return int(job["threads"])
    env = os.environ.get("SRINT_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise JobError("/threads", f"SRINT_THREADS={env!r} is not an integer") from None
        if value < 1:
            raise JobError("/threads", "SRINT_THREADS must be at least 1")
        return value
    return os.cpu_count() or 1


def _get(job: dict, key: str):
    return job.get(key, DEFAULTS.get(key))


def _region(job: dict, key: str = "region", value=None) -> Region:
    spec = value if value is not None else _get(job, key)
    try:
        return from_json(spec)
    except (RegionError, KeyError, TypeError, ValueError) as exc:
        raise JobError(f"/{key}", str(exc)) from exc


def _expr(job: dict, key: str):
    if key not in job:
        return None
    try:
        return parse(job[key])
    except ExprError as exc:
        raise JobError(f"/{key}", str(exc)) from exc


def _quadrature(job: dict) -> Quadrature:
    spec = {**DEFAULTS["quadrature"], **job.get("quadrature", {})}
    try:
        return Quadrature(spec["mode"], int(spec["samples"]), int(spec["seed"]))
    except QuantError as exc:
        raise JobError("/quadrature", str(exc)) from exc


def _params(job: dict, threads: int) -> MinimizerParams:
    try:
        return MinimizerParams(
            family=_get(job, "family"),
            s=float(_get(job, "s")),
            k=int(_get(job, "k")),
            p=float(_get(job, "p")),
            kappa=_expr(job, "kappa"),
            xi=_expr(job, "xi"),
            eta=_expr(job, "eta"),
            restarts=int(_get(job, "restarts")),
            seed=int(_get(job, "seed")),
            max_iters=int(_get(job, "max_iters")),
            lloyd_steps=int(_get(job, "lloyd_steps")),
            quad=_quadrature(job),
            threads=threads,
        )
    except AsymptoticsError as exc:
        raise JobError("/family", str(exc)) from exc


# -- output helpers ---------------------------------------------------------------------------


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _write_rows(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def scatter_svg(points: np.ndarray, region: Region, size: int = 400) -> str:
    """Hand-written SVG scatter; spheres are drawn in orthographic projection."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    lo, hi = region.bounding_box
    if pts.shape[1] == 1:
        # Points on a horizontal line through the middle of the canvas.
        xy = np.column_stack([pts[:, 0], np.zeros(len(pts))])
        lo, hi = np.array([lo[0], -1.0]), np.array([hi[0], 1.0])
        depth = np.ones(len(pts))
    else:
        xy = pts[:, :2]
        lo, hi = lo[:2], hi[:2]
        if pts.shape[1] >= 3:
            z = pts[:, 2]
            span = float(np.ptp(z)) or 1.0
            depth = 0.25 + 0.75 * (z - z.min()) / span
        else:
            depth = np.ones(len(pts))
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    uv = (xy - lo) / span
    r = max(1.0, 0.25 * size / math.sqrt(max(len(pts), 1)))
    r = min(r, 6.0)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {size} {size}" width="{size}" height="{size}">',
        f'<title>{escape(region.kind)}, N={len(pts)}</title>',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white" stroke="black"/>',
    ]
    pad = 10.0
    scale = size - 2 * pad
    for (u, v), a in sorted(zip(uv.tolist(), depth.tolist()), key=lambda t: t[1]):
        cx = pad + u * scale
        cy = pad + (1.0 - v) * scale
        out.append(f'<circle cx="{cx:.3f}" cy="{cy:.3f}" r="{r:.2f}" fill="black" fill-opacity="{a:.3f}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _svg(job: dict, config: PointConfig, region: Region, out: Path) -> None:
    if _get(job, "emit_svg"):
        (out / "scatter.svg").write_text(scatter_svg(config.points, region))


# -- commands --------------------------------------------------------------------------------


def _cmd_riesz_min(job, out, threads):
    region = _region(job)
    params = _params({**job, "family": "riesz"}, threads)
    run = minimize_configuration(region, int(_get(job, "n")), params)
    if not math.isfinite(run.energy):
        raise OptimizeError("the optimizer ended on a non-finite energy")
    write_csv(run.config, out / "points.csv")
    write_trace(run.trace, out / "trace.csv")
    report = {
        "energy": run.energy,
        "reason": run.reason,
        "restart_energies": run.restart_energies,
        "separation": separation(run.config),
        "covering_radius": covering_radius(run.config, region, seed=params.seed),
    }
    _dump_json(report, out / "report.json")
    _svg(job, run.config, region, out)
    return {"seed": params.seed, "restart_seeds": [params.seed + r for r in range(params.restarts)]}


def _cmd_quantize(job, out, threads):
    region = _region(job)
    params = _params({**job, "family": "quantizer"}, threads)
    try:
        params.quant_spec().validate(region)
    except QuantError as exc:
        raise JobError("/quadrature", str(exc)) from exc
    run = minimize_configuration(region, int(_get(job, "n")), params)
    write_csv(run.config, out / "points.csv")
    _write_rows(out / "trace.csv", ["step", "energy"], [(i, float(e)) for i, e in enumerate(run.trace)])
    report = {"energy": run.energy, "reason": run.reason, "restart_energies": run.restart_energies}
    _dump_json(report, out / "report.json")
    _svg(job, run.config, region, out)
    return {"seed": params.seed, "quadrature_seed": params.quad.seed}


def _cmd_mesh_relax(job, out, threads):
    region = _region(job)
    if region.dim != 2:
        raise JobError("/region", "mesh-relax needs a planar region")
    n, seed = int(_get(job, "n")), int(_get(job, "seed"))
    start = PointConfig(region.sample_uniform(n, seed))
    res = relax(start, region, float(_get(job, "P")), float(_get(job, "dt")), int(_get(job, "iters")), seed)
    write_csv(res.config, out / "points.csv")
    _write_rows(out / "trace.csv", ["iter", "energy", "max_move"], [(r.iter, r.energy, r.max_move) for r in res.trace])
    write_off(res.mesh, out / "mesh.off")
    e_hat = res.trace[-1].energy
    report = {
        "e_hat": e_hat,
        "e_hat_normalized": e_hat * n ** (2.0 / region.intrinsic_dim - 1.0),
        "edges": int(len(res.mesh.edges)),
        "triangles": int(len(res.mesh.triangles)),
    }
    _dump_json(report, out / "report.json")
    _svg(job, res.config, region, out)
    return {"seed": seed}


def _cmd_estimate_constant(job, out, threads):
    region = _region(job)
    params = _params(job, threads)
    grid = [int(v) for v in _get(job, "n_grid")]
    if len(grid) < 4:
        raise JobError("/n_grid", "the N-grid needs at least four values")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise JobError("/n_grid", "the N-grid must be strictly increasing")
    series = energy_series(region, params, grid)
    fit = fit_rate(series, theory_exponent(params, region))
    _write_rows(out / "trace.csv", ["n", "energy"], [(n, float(e)) for n, e in series])
    report = fit.to_json()
    report["series"] = [[n, e] for n, e in series]
    if params.family == "riesz" and region.kind in ("circle-periodic", "box", "box-union") and region.dim == 1:
        report["circle_constant"] = circle_constant(params.s, params.k)
    _dump_json(report, out / "report.json")
    return {"seed": params.seed, "n_grid": grid}


def _default_f1(job: dict, params: MinimizerParams, region: Region, threads: int) -> float:
    """F(1) when an external field needs it: exact in 1D, estimated on the unit cube otherwise."""
    d = region.intrinsic_dim
    if d == 1:
        return circle_constant(params.s, params.k) if params.family == "riesz" else quantizer_constant_1d(params.p)
    if region.kind == "sphere-surface":
        raise JobError("/f1", "give f1 explicitly for embedded sets")
    plain = MinimizerParams(params.family, params.s, params.k, params.p, restarts=1, seed=params.seed, quad=params.quad, threads=threads)
    return estimate_constant(unit_box(d), plain, _get(job, "n_grid")).f1_estimate


def _cmd_verify_density(job, out, threads):
    region = _region(job)
    params = _params(job, threads)
    if "points" in job:
        try:
            config = read_csv(job["points"], region.metric)
        except (OSError, ConfigError) as exc:
            raise JobError("/points", str(exc)) from exc
    else:
        config = minimize_configuration(region, int(_get(job, "n")), params).config
    f1 = job.get("f1")
    if f1 is None and params.xi is not None:
        f1 = _default_f1(job, params, region, threads)
    if params.family == "riesz":
        model = DensityModel.riesz(params.s, region, params.kappa, params.xi, f1)
    else:
        model = DensityModel.quantizer(params.p, region, params.eta, params.xi, f1)
    model = solve_l1(model, params.quad.samples, params.quad.seed)
    report = compare_density(config, model, params.quad.samples, params.quad.seed)
    write_csv(config, out / "points.csv")
    _dump_json(report.to_json(), out / "report.json")
    _svg(job, config, region, out)
    return {"seed": params.seed, "quadrature_seed": params.quad.seed}


def _cmd_split_probe(job, out, threads):
    if "regions" not in job:
        raise JobError("/regions", "split-probe needs two regions")
    regions = [_region(job, f"regions/{i}", spec) for i, spec in enumerate(job["regions"])]
    params = _params(job, threads)
    grid = [int(v) for v in job.get("n_grid", [_get(job, "n")])]
    try:
        rows = shortrange_split_probe(regions[0], regions[1], params, grid)
    except AsymptoticsError as exc:
        if "two boxes" in str(exc):
            raise JobError("/regions", str(exc)) from exc
        raise
    _write_rows(
        out / "trace.csv",
        ["n", "ratio", "n_a", "n_b", "balance", "expected_balance"],
        [(r.n, r.ratio, r.n_a, r.n_b, r.balance, r.expected_balance) for r in rows],
    )
    _dump_json({"rows": [r.to_json() for r in rows]}, out / "report.json")
    return {"seed": params.seed, "n_grid": grid}


HANDLERS = {
    "riesz-min": _cmd_riesz_min,
    "quantize": _cmd_quantize,
    "mesh-relax": _cmd_mesh_relax,
    "estimate-constant": _cmd_estimate_constant,
    "verify-density": _cmd_verify_density,
    "split-probe": _cmd_split_probe,
}

NUMERICAL_ERRORS = (
    OptimizeError,
    MeshError,
    DensityError,
    AsymptoticsError,
    QuantError,
    RieszError,
    RegionError,
    ExprError,
    ConfigError,
    FloatingPointError,
    np.linalg.LinAlgError,
)


def resolved_config(job: dict) -> dict:
    """The job with defaults filled in, as recorded in the manifest."""
    full = {**DEFAULTS, **job}
    full["quadrature"] = {**DEFAULTS["quadrature"], **job.get("quadrature", {})}
    return full


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        job = load_job(args)
        threads = _threads(job)
        out = Path(_get(job, "out"))
        out.mkdir(parents=True, exist_ok=True)
        seeds = HANDLERS[job["command"]](job, out, threads)
    except JobError as exc:
        print(f"srint: config error at {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"srint: numerical failure: {exc}", file=sys.stderr)
        return 1
    manifest = {
        "tool": "srint",
        "version": __version__,
        "command": job["command"],
        "config": resolved_config(job),
        "seeds": seeds,
        "threads": threads,
    }
    _dump_json(manifest, out / "manifest.json")
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
