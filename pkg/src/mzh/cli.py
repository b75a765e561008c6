"""Command-line entry point: ``mzh {decompose,norm,extend,divsolve,verify}``.

Exit codes: 0 success, 2 validation error (bad flags, malformed input),
3 numerical failure (diagnostics JSON is still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import mzf
from ._ops import centered_divergence, interior_mask
from .bogovskii import MeanNotZero, solve_divergence
from .extension import IllConditionedWeight, RayExitsBox, extend_special_lipschitz, moment_weight, regularized_distance
from .grid import Ball, GridError, LipschitzGraph, ScalarField, StarShaped, StarUnion, VectorField
from .helmholtz import DecompositionError, NeumannSolveError, decompose
from .norms import BallSampler, MorreyParams, block_norm_bounds, default_sampler, local_lq, lq_norm, morrey_norm
from .verify import SUITES, load_baselines, run_suite

SCHEMA = 1
EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


class ValidationError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class RunConfig:
    subcommand: str
    input: str | None = None
    outputs: dict = field(default_factory=dict)
    report: str = ""
    csv: str | None = None
    q: float = 2.0
    lam: float = 1.0
    domain: str | None = None
    seed: int = 0
    resolution: int | None = None
    options: dict = field(default_factory=dict)

    @property
    def params(self) -> MorreyParams:
        return MorreyParams(3, self.q, self.lam)

    def validate(self):
        try:
            self.params
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
        if self.input is not None and not Path(self.input).is_file():
            raise ValidationError(f"input file not found: {self.input}")
        if self.resolution is not None and self.resolution < 4:
            raise ValidationError("resolution must be at least 4 cells")


# ---------------------------------------------------------------------------
# output


def _fmt(obj) -> str:
    """JSON text with sorted keys and floats at 17 significant digits (non-finite as null)."""
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_fmt(v)}" for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return _fmt(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return format(x, ".17g") if math.isfinite(x) else "null"
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def dumps_report(obj) -> str:
    return _fmt(obj) + "\n"


def write_report(path, cfg: RunConfig, status: str, body: dict, artifacts=(), error: str | None = None):
    rep = {"schema": SCHEMA, "subcommand": cfg.subcommand, "status": status, "config": asdict(cfg),
           "artifacts": list(artifacts), **body}
    if error is not None:
        rep["error"] = error
    Path(path).write_text(dumps_report(rep))


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "series"])
        for x, y, s in rows:
            w.writerow([format(float(x), ".17g"), format(float(y), ".17g"), s])


# ---------------------------------------------------------------------------
# parsing helpers


def _read_field(path):
    try:
        return mzf.read(path)
    except mzf.MZFFormatError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _floats(text: str, count: int | None = None) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError as exc:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from exc
    if count is not None and len(vals) != count:
        raise ValidationError(f"expected {count} numbers, got {text!r}")
    return vals


def _sampler(cfg: RunConfig, f) -> BallSampler:
    stride = 1
    centers = cfg.options.get("centers", "all")
    if centers != "all":
        if not centers.startswith("stride="):
            raise ValidationError(f"--centers must be 'all' or 'stride=k', got {centers!r}")
        try:
            stride = int(centers[len("stride="):])
        except ValueError as exc:
            raise ValidationError(f"bad stride in {centers!r}") from exc
        if stride < 1:
            raise ValidationError("stride must be >= 1")
    radii = cfg.options.get("radii")
    try:
        if radii is None:
            s = default_sampler(f)
            s = BallSampler(s.radii, stride)
        else:
            lo, hi, count = _floats(radii, 3)
            if count != int(count) or count < 1 or not 0 < lo <= hi:
                raise ValidationError(f"--radii needs min,max,count with 0 < min <= max, got {radii!r}")
            s = BallSampler.geometric(lo, hi, int(count), stride)
        s.validate(f.grid)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    return s


def _star_domain(spec: str):
    kind, _, arg = spec.partition(":")
    if kind == "ball":
        cx, cy, cz, r = _floats(arg, 4)
        if r <= 0:
            raise ValidationError("ball radius must be positive")
        return Ball((cx, cy, cz), r)
    if kind == "union":
        try:
            desc = json.loads(Path(arg).read_text())
            pieces = tuple(StarShaped(tuple(map(float, p["center"])), float(p["star_radius"]), float(p["radius"]))
                           for p in desc["pieces"])
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ValidationError(f"bad union spec {arg!r}: {exc}") from exc
        return StarUnion(pieces)
    raise ValidationError(f"--domain must be ball:<cx,cy,cz,r> or union:<spec.json>, got {spec!r}")


def _graph_from(path, grid, lipschitz=None) -> LipschitzGraph:
    s = _read_field(path)
    if not isinstance(s, ScalarField) or s.grid.n != grid.n - 1:
        raise ValidationError("graph file must hold a scalar field on the tangential grid")
    if tuple(s.grid.shape) != tuple(grid.shape[:-1]) or not np.allclose(s.grid.spacing, grid.spacing[:-1]) \
            or not np.allclose(s.grid.origin, grid.origin[:-1]):
        raise ValidationError("graph lattice does not match the field's tangential lattice")
    try:
        return LipschitzGraph(s.data, lipschitz)
    except (ValueError, GridError) as exc:
        raise ValidationError(str(exc)) from exc


def _norms(fields: dict, p: MorreyParams) -> dict:
    return {k: {"morrey": morrey_norm(v, p), "l2": v.l2()} for k, v in fields.items()}


# ---------------------------------------------------------------------------
# subcommands


def run_decompose(cfg: RunConfig):
    u = _read_field(cfg.input)
    if not isinstance(u, VectorField):
        raise ValidationError("decompose needs a vector field")
    kind = cfg.domain
    kw = {}
    if kind == "fullspace":
        kind = "fullspace_" + cfg.options.get("method", "spectral")
    elif kind.startswith("bent:"):
        kw["domain"] = _graph_from(kind[len("bent:"):], u.grid)
        kind = "bent"
    elif kind not in ("halfspace", "bounded"):
        raise ValidationError(f"--domain must be fullspace|halfspace|bent:<sigma.mzf>|bounded, got {kind!r}")
    try:
        res = decompose(u, kind, **kw)
    except DecompositionError as exc:
        raise ValidationError(str(exc)) from exc
    except NeumannSolveError as exc:
        raise NumericalFailure(str(exc), {"cg_history": list(exc.history)}) from exc
    prefix = cfg.outputs["prefix"]
    arts = {"p": f"{prefix}p.mzf", "grad_p": f"{prefix}grad_p.mzf", "w": f"{prefix}w.mzf"}
    for key, fld in (("p", res.p), ("grad_p", res.grad_p), ("w", res.w)):
        mzf.write(arts[key], fld)
    body = {"diagnostics": res.diagnostics, "norms": _norms({"u": u, "grad_p": res.grad_p, "w": res.w}, cfg.params)}
    return body, list(arts.values()), []


def run_norm(cfg: RunConfig):
    f = _read_field(cfg.input)
    s = _sampler(cfg, f)
    p = cfg.params
    value, (idx, radius) = morrey_norm(f, p, s, return_argmax=True)
    x = np.asarray(f.grid.origin) + (np.asarray(idx) + 0.5) * np.asarray(f.grid.spacing)
    body = {"morrey": value, "argmax": {"index": list(idx), "center": x.tolist(), "radius": radius},
            "radii": list(s.radii), "stride": s.stride, "lq": lq_norm(f, p.q)}
    if s.stride > 1:
        # unsampled centres lie within stride*h/2*sqrt(n) of a sampled one
        body["stride_slack"] = {"center_shift": s.stride * f.grid.h * math.sqrt(f.grid.n) / 2}
    rows = []
    cmask = s.center_mask(f.mask)
    for r, sums in local_lq(f, p.q, s.radii):
        rows.append((r, r ** (-p.lam / p.q) * float(sums[cmask].max()) ** (1 / p.q), "morrey_radius_profile"))
    if cfg.options.get("block"):
        lower, upper, dec = block_norm_bounds(f, p, s)
        body["block"] = {"lower": lower, "upper": upper, "blocks": len(dec.blocks)}
    return body, [], rows


def run_extend(cfg: RunConfig):
    f = _read_field(cfg.input)
    if not isinstance(f, ScalarField):
        raise ValidationError("extend needs a scalar field")
    spec = cfg.domain
    if not spec.startswith("graph:"):
        raise ValidationError(f"--domain must be graph:<sigma.mzf,M>, got {spec!r}")
    path, _, m = spec[len("graph:"):].rpartition(",")
    if not path:
        raise ValidationError("graph domain needs both the sigma file and the Lipschitz bound M")
    dom = _graph_from(path, f.grid, _floats(m, 1)[0])
    K, T = cfg.options["moments"], cfg.options["support"]
    if K < 0 or not T > 1:
        raise ValidationError("need moments >= 0 and support T > 1")
    if not np.array_equal(dom.mask(f.grid), f.mask):
        raise ValidationError("input mask does not match the graph domain")
    try:
        psi = moment_weight(K, T)
        rd = regularized_distance(dom, f.grid)
        E, rep = extend_special_lipschitz(f, psi, rd)
    except (IllConditionedWeight, RayExitsBox) as exc:
        raise ValidationError(str(exc)) from exc
    mzf.write(cfg.outputs["out"], E)
    rep = {k: v for k, v in rep.items() if k != "fallback_mask"}
    body = {"psi": {"K": K, "T": T, "condition": psi.condition, "coefficients": list(psi.coeffs),
                    "moments": list(psi.moments)},
            "distance": rd.report, "extension": rep,
            "norms": {"f": morrey_norm(f, cfg.params), "extension": morrey_norm(E, cfg.params)}}
    return body, [cfg.outputs["out"]], []


def run_divsolve(cfg: RunConfig):
    f = _read_field(cfg.input)
    if not isinstance(f, ScalarField):
        raise ValidationError("divsolve needs a scalar field")
    dom = _star_domain(cfg.domain)
    if not np.array_equal(dom.mask(f.grid), f.mask):
        raise ValidationError("input mask does not match the domain")
    try:
        w = solve_divergence(dom, f)
    except MeanNotZero as exc:
        raise ValidationError(str(exc)) from exc
    if not np.all(np.isfinite(w.data)):
        raise NumericalFailure("non-finite values in the divergence solution")
    mzf.write(cfg.outputs["out"], w)
    inner = interior_mask(f.mask, 2)
    div = centered_divergence(w.data, f.grid.spacing)
    resid = float(np.sqrt(np.sum((div - f.data)[inner] ** 2) / max(np.sum(f.data[inner] ** 2), 1e-300)))
    body = {"mean": float(np.sum(f.data[f.mask]) * f.grid.cell_volume), "divergence_residual": resid,
            "norms": _norms({"f": f, "w": w}, cfg.params)}
    return body, [cfg.outputs["out"]], []


def run_verify(cfg: RunConfig):
    base = load_baselines()
    reps = run_suite(cfg.domain, cfg.q, cfg.lam, cfg.seed, cfg.resolution, cfg.options["count"], base)
    body = {"suites": {k: v.to_dict() for k, v in reps.items()}, "passed": all(r.passed for r in reps.values())}
    rows = [(i, r, rep.inequality) for rep in reps.values() for i, r in enumerate(rep.ratios)]
    if not body["passed"]:
        bad = sorted(k for k, v in reps.items() if not v.passed)
        raise NumericalFailure(f"inequality checks failed: {', '.join(bad)}", body)
    return body, [], rows


RUNNERS = {"decompose": run_decompose, "norm": run_norm, "extend": run_extend,
           "divsolve": run_divsolve, "verify": run_verify}


# ---------------------------------------------------------------------------
# argv


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mzh", description="Morrey-space operator toolkit")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    def common(p, inp=True):
        if inp:
            p.add_argument("--input", required=True)
        p.add_argument("--q", type=float, default=2.0)
        p.add_argument("--lambda", dest="lam", type=float, default=1.0)
        p.add_argument("--report", required=True)
        return p

    d = common(sub.add_parser("decompose"))
    d.add_argument("--domain", required=True)
    d.add_argument("--method", choices=("spectral", "direct"), default="spectral")
    d.add_argument("--out-prefix", required=True)

    n = common(sub.add_parser("norm"))
    n.add_argument("--block", action="store_true")
    n.add_argument("--centers", default="all")
    n.add_argument("--radii")
    n.add_argument("--csv")

    e = common(sub.add_parser("extend"))
    e.add_argument("--domain", required=True)
    e.add_argument("--moments", type=int, required=True)
    e.add_argument("--support", type=float, required=True)
    e.add_argument("--out", required=True)

    v = common(sub.add_parser("divsolve"))
    v.add_argument("--domain", required=True)
    v.add_argument("--out", required=True)

    s = common(sub.add_parser("verify"), inp=False)
    s.add_argument("--suite", choices=SUITES + ("all",), required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--resolution", type=int, default=24)
    s.add_argument("--count", type=int, default=20)
    s.add_argument("--csv")
    return ap


def config_from_args(a: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(a.subcommand, getattr(a, "input", None), report=a.report, csv=getattr(a, "csv", None),
                    q=a.q, lam=a.lam)
    if a.subcommand == "decompose":
        cfg.domain, cfg.outputs, cfg.options = a.domain, {"prefix": a.out_prefix}, {"method": a.method}
    elif a.subcommand == "norm":
        cfg.options = {"block": a.block, "centers": a.centers, "radii": a.radii}
    elif a.subcommand == "extend":
        cfg.domain, cfg.outputs = a.domain, {"out": a.out}
        cfg.options = {"moments": a.moments, "support": a.support}
    elif a.subcommand == "divsolve":
        cfg.domain, cfg.outputs = a.domain, {"out": a.out}
    else:
        cfg.domain, cfg.seed, cfg.resolution = a.suite, a.seed, a.resolution
        cfg.options = {"count": a.count}
        if a.count < 1:
            raise ValidationError("count must be positive")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)  # argparse exits with status 2 on bad flags
    try:
        cfg = config_from_args(args)
        cfg.validate()
    except ValidationError as exc:
        print(f"mzh: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        body, arts, rows = RUNNERS[cfg.subcommand](cfg)
    except ValidationError as exc:
        print(f"mzh: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalFailure as exc:
        write_report(cfg.report, cfg, "failed", exc.diagnostics, error=str(exc))
        print(f"mzh: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if cfg.csv:
        write_csv(cfg.csv, rows)
        arts = arts + [cfg.csv]
    write_report(cfg.report, cfg, "ok", body, arts)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
