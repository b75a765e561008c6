"""Sampled inequality checks with seeded random families and stored regression baselines."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ._ops import masked_gradient
from .bogovskii import BogovskiiConfig, solve_divergence
from .extension import extend_special_lipschitz, moment_weight, regularized_distance
from .grid import Ball, Box, Grid, LipschitzGraph, ScalarField, VectorField
from .helmholtz import DecompositionResult, decompose_bounded_neumann, default_testset
from .norms import BallSampler, MorreyParams, lq_norm, morrey_norm, weighted_lq_norm
from .potentials import FractionalParams, cz_apply, fractional_integral, hessian_gamma_kernel

REGRESSION_SLACK = 1.05


@dataclass
class InequalityReport:
    inequality: str
    params: dict
    ratios: list[float] = field(default_factory=list)
    threshold: float = math.inf
    skipped: int = 0

    @property
    def samples(self) -> int:
        return len(self.ratios)

    @property
    def worst(self) -> float:
        return float(max(self.ratios)) if self.ratios else math.nan

    @property
    def passed(self) -> bool:
        return bool(self.ratios) and math.isfinite(self.worst) and self.worst <= self.threshold

    def to_dict(self) -> dict:
        return {"inequality": self.inequality, "params": self.params, "samples": self.samples,
                "skipped": self.skipped, "worst": self.worst, "threshold": self.threshold,
                "passed": self.passed, "ratios": [float(r) for r in self.ratios]}


# ---------------------------------------------------------------------------
# random family


def random_bumps(grid: Grid, domain, count: int, seed: int, bumps=(5, 20), width=None) -> list[ScalarField]:
    """Seeded sums of Gaussian bumps with random centres, widths and signs, restricted to the mask."""
    rng = np.random.default_rng(seed)
    mask = domain.mask(grid)
    x = grid.centers()
    idx = np.argwhere(mask)
    lo = np.asarray(grid.origin) + idx.min(axis=0) * np.asarray(grid.spacing)
    hi = np.asarray(grid.origin) + (idx.max(axis=0) + 1) * np.asarray(grid.spacing)
    span = float(np.max(hi - lo))
    wlo, whi = (2 * grid.h, span / 4) if width is None else width
    out = []
    for _ in range(count):
        k = int(rng.integers(bumps[0], bumps[1] + 1))
        data = np.zeros(grid.shape)
        for _ in range(k):
            c = rng.uniform(lo, hi)
            w = rng.uniform(wlo, whi)
            a = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.5)
            r2 = np.sum((x - c.reshape((-1,) + (1,) * grid.n)) ** 2, axis=0)
            data += a * np.exp(-r2 / w**2)
        out.append(ScalarField(grid, domain, np.where(mask, data, 0.0), mask))
    return out


def gradient_norm(f: ScalarField, p: MorreyParams, s: BallSampler | None = None) -> float:
    """``max_i ||d_i f||`` in the sampled Morrey norm (centred differences, one-sided at the mask edge)."""
    g = masked_gradient(f.data, f.mask, f.grid.spacing)
    return max(morrey_norm(f.with_data(g[i]), p, s) for i in range(f.grid.n))


def vector_gradient_norm(w: VectorField, p: MorreyParams, s: BallSampler | None = None) -> float:
    """``max_j ||d_j w||`` with the Euclidean magnitude of the vector ``d_j w``."""
    n = w.grid.n
    parts = [masked_gradient(w.data[i], w.mask, w.grid.spacing) for i in range(n)]
    return max(morrey_norm(w.with_data(np.stack([parts[i][j] for i in range(n)])), p, s) for j in range(n))


# ---------------------------------------------------------------------------
# checks


def check_embedding(family, p0: MorreyParams, p1: MorreyParams | None = None, item: str = "I",
                    kappa: float | None = None) -> InequalityReport:
    """Ratio target/source for the embedding items.

    I: ``||f||_{p0} / ||f||_{p1}`` with ``(n-lam0)/q0 = (n-lam1)/q1``;
    III: ``||f||_{p0} / ||f||_{L^{n/alpha}}``; IV: ``||f||_{L^q_w} / ||f||_{p0}``.
    """
    n = p0.n
    params = {"item": item, "q0": p0.q, "lam0": p0.lam}
    if item == "I":
        if p1 is None:
            raise ValueError("item I needs the source parameters")
        if abs((n - p0.lam) / p0.q - (n - p1.lam) / p1.q) > 1e-12:
            raise ValueError("scaling relation (n-lam0)/q0 = (n-lam1)/q1 violated")
        params.update(q1=p1.q, lam1=p1.lam)
    elif item == "IV":
        kappa = (p0.lam + n) / 2 if kappa is None else kappa
        if not p0.lam < kappa < n:
            raise ValueError("weight exponent must satisfy lam < kappa < n")
        params["kappa"] = kappa
    elif item != "III":
        raise ValueError(f"unknown embedding item {item!r}")
    rep = InequalityReport(f"embedding_{item}", params)
    for f in family:
        if item == "I":
            num, den = morrey_norm(f, p0), morrey_norm(f, p1)
        elif item == "III":
            num, den = morrey_norm(f, p0), lq_norm(f, n / p0.alpha)
        else:
            num, den = weighted_lq_norm(f, p0.q, kappa), morrey_norm(f, p0)
        if den == 0:
            rep.skipped += 1
            continue
        rep.ratios.append(float(num / den))
    return rep


def check_poincare(family, p: MorreyParams, mode: str = "zero-mean", subset: np.ndarray | None = None,
                   mean_tol: float = 1e-8) -> InequalityReport:
    """``||f|| / ||grad f||``; samples failing the mode's precondition are filtered and counted."""
    rep = InequalityReport(f"poincare_{mode}", {"q": p.q, "lam": p.lam, "mode": mode})
    for f in family:
        if mode == "zero-mean":
            U = f.mask if subset is None else subset & f.mask
            l1 = float(np.sum(np.abs(f.data[U])))
            if abs(float(np.sum(f.data[U]))) > mean_tol * max(l1, 1e-300):
                rep.skipped += 1
                continue
        elif mode == "zero-boundary":
            edge = f.mask & ~_eroded(f.mask)
            if np.any(f.data[edge] != 0):
                rep.skipped += 1
                continue
        else:
            raise ValueError(f"unknown Poincare mode {mode!r}")
        den = gradient_norm(f, p)
        if den <= 1e-12 * max(float(np.abs(f.data).max()), 1e-300):
            rep.skipped += 1
            continue
        rep.ratios.append(float(morrey_norm(f, p) / den))
    return rep


def _eroded(mask):
    from ._ops import interior_mask
    return interior_mask(mask)


def mean_zero(f: ScalarField, subset: np.ndarray | None = None) -> ScalarField:
    U = f.mask if subset is None else subset & f.mask
    return f.with_data(np.where(f.mask, f.data - f.data[U].mean(), 0.0))


def boundary_cutoff(f: ScalarField, center, radius: float, layer: float) -> ScalarField:
    """Multiply by ``(1 - (r / (R - layer))^2)_+^2`` so the boundary layer is exactly zero."""
    x = f.grid.centers()
    r = np.sqrt(np.sum((x - np.asarray(center).reshape((-1,) + (1,) * f.grid.n)) ** 2, axis=0))
    s = r / (radius - layer)
    cut = np.where(s < 1, (1 - s**2) ** 2, 0.0)
    return f.with_data(f.data * cut)


def test_gradients(grid: Grid, mask: np.ndarray, size: int, p_field=None):
    """Gradients of the default test potentials (``p`` first when given)."""
    extra = () if p_field is None else (p_field.data,)
    return [masked_gradient(phi, mask, grid.spacing) for phi in default_testset(grid, mask, size, extra)]


test_gradients.__test__ = False  # not a pytest test


def check_variational(decompositions: list[DecompositionResult], p: MorreyParams, testset_size: int = 32,
                      include_p: bool = True) -> InequalityReport:
    """``||grad p|| / max_phi (int grad p . grad phi) / ||grad phi||_block`` per decomposition.

    The block norm of each test gradient is the constructive upper bound; the
    finite family only brackets the true supremum from below, so the ratios
    are empirical constants, not certified bounds.
    """
    rep = InequalityReport("variational", {"q": p.q, "lam": p.lam, "testset": testset_size})
    if not decompositions:
        return rep
    g0 = decompositions[0].p.grid
    mask = decompositions[0].p.mask
    dual = p.conjugate()
    base = test_gradients(g0, mask, testset_size)
    base_norms = [_block_upper(VectorField(g0, decompositions[0].p.domain, gp, mask), dual) for gp in base]
    vol = g0.cell_volume
    for d in decompositions:
        gp = d.grad_p.data
        if not np.any(gp[:, mask]):
            rep.skipped += 1
            continue
        quot = 0.0
        tests = list(zip(base, base_norms))
        if include_p:
            pg = masked_gradient(d.p.data, mask, g0.spacing)
            tests.append((pg, _block_upper(d.grad_p.with_data(pg), dual)))
        for tg, tn in tests:
            if tn == 0:
                continue
            quot = max(quot, abs(float(np.sum(gp * tg) * vol)) / tn)
        if quot == 0:
            rep.skipped += 1
            continue
        rep.ratios.append(float(morrey_norm(d.grad_p, p) / quot))
    return rep


def _block_upper(f, p: MorreyParams) -> float:
    """Smallest l1 weight over the enclosing ball and the dyadic tilings of the support.

    Vectorised counterpart of the block-norm upper bound (connected components
    are not tried, which can only enlarge the bound).
    """
    g = f.grid
    mag = f.magnitude()
    support = (mag > 0) & f.mask
    if not support.any():
        return 0.0
    q, lam, qc = p.q, p.lam, p.q_conj
    idx = np.argwhere(support)
    dens = mag[support] ** q * g.cell_volume
    pts = np.asarray(g.origin) + (idx + 0.5) * np.asarray(g.spacing)
    c = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
    r = max(float(np.sqrt(np.sum((pts - c) ** 2, axis=1)).max()) * (1 + 1e-12), g.h)
    best = r ** (lam / qc) * float(dens.sum()) ** (1 / q)
    lo = idx.min(axis=0)
    span = int((idx.max(axis=0) - lo + 1).max())
    side = 1
    while side < span:
        keys = (idx - lo) // side
        _, tile = np.unique(keys, axis=0, return_inverse=True)
        tile = tile.ravel()
        centres = np.asarray(g.origin) + (lo + keys * side + side / 2) * np.asarray(g.spacing)
        d = np.sqrt(np.sum((pts - centres) ** 2, axis=1))
        m = tile.max() + 1
        rad = np.zeros(m)
        np.maximum.at(rad, tile, d)
        rad = np.maximum(rad * (1 + 1e-12), g.h)
        mass = np.bincount(tile, dens, minlength=m)
        best = min(best, float(np.sum(rad ** (lam / qc) * mass ** (1 / q))))
        side *= 2
    return best


def check_operator(family, op, p0: MorreyParams, p1: MorreyParams, name: str) -> InequalityReport:
    """``||op f||_{p1} / ||f||_{p0}`` over the family."""
    rep = InequalityReport(name, {"q0": p0.q, "lam0": p0.lam, "q1": p1.q, "lam1": p1.lam})
    for f in family:
        den = morrey_norm(f, p0)
        if den == 0:
            rep.skipped += 1
            continue
        rep.ratios.append(float(morrey_norm(op(f), p1) / den))
    return rep


# ---------------------------------------------------------------------------
# suites


SUITES = ("embeddings", "poincare", "variational", "fractional", "cz", "bogovskii", "extension")


def _ball_setup(resolution: int, radius: float = 1.0):
    grid = Grid.cube(resolution, -1.125 * radius, 1.125 * radius)
    return grid, Ball((0.0, 0.0, 0.0), radius)


def suite_embeddings(q, lam, seed, resolution, count):
    n = 3
    grid = Grid.cube(resolution, -2.0, 2.0)
    fam = random_bumps(grid, Box(), count, seed)
    p0 = MorreyParams(n, q, lam)
    lam1 = lam / 2
    p1 = MorreyParams(n, q * (n - lam1) / (n - lam), lam1)
    return [_rename(check_embedding(fam, p0, p0, "I"), "embedding_identity"),
            check_embedding(fam, p0, p1, "I"),
            check_embedding(fam, p0, item="III"),
            check_embedding(fam, p0, item="IV")]


def _rename(rep, name):
    rep.inequality = name
    return rep


def suite_poincare(q, lam, seed, resolution, count):
    p = MorreyParams(3, q, lam)
    grid, ball = _ball_setup(resolution)
    fam = random_bumps(grid, ball, count, seed)
    zm = check_poincare([mean_zero(f) for f in fam], p, "zero-mean")
    zb = check_poincare([boundary_cutoff(f, ball.center, ball.radius, 2 * grid.h) for f in fam], p, "zero-boundary")
    box = Grid.cube(resolution, -1.0, 1.0)
    x = box.centers()
    modes = []
    for k in range(1, 5):
        data = np.cos(k * np.pi * (x[0] + 1) / 2) * np.cos(np.pi * (x[1] + 1) / 2)
        modes.append(mean_zero(ScalarField(box, Box(), data)))
    zk = _rename(check_poincare(modes, p, "zero-mean"), "poincare_modes")
    return [zm, zb, zk]


def suite_variational(q, lam, seed, resolution, count):
    p = MorreyParams(3, q, lam)
    grid, ball = _ball_setup(resolution)
    comps = random_bumps(grid, ball, 3 * count, seed)
    decs, stab = [], InequalityReport("helmholtz_stability", {"q": q, "lam": lam})
    for i in range(count):
        u = VectorField.stack(comps[3 * i: 3 * i + 3])
        d = decompose_bounded_neumann(u)
        decs.append(d)
        stab.ratios.append(float((morrey_norm(d.grad_p, p) + morrey_norm(d.w, p)) / morrey_norm(u, p)))
    return [check_variational(decs, p), stab]


def suite_fractional(q, lam, seed, resolution, count):
    p = MorreyParams(3, q, lam)
    grid, ball = _ball_setup(resolution)
    fam = random_bumps(grid, ball, count, seed)
    d = FractionalParams(1.0)
    return [check_operator(fam, lambda f: fractional_integral(f, d), p, p, "fractional_delta1")]


def suite_cz(q, lam, seed, resolution, count):
    p = MorreyParams(3, q, lam)
    grid, ball = _ball_setup(resolution)
    fam = random_bumps(grid, ball, count, seed)
    k = hessian_gamma_kernel(0, 0)
    return [check_operator(fam, lambda f: cz_apply(f, k), p, p, "cz_hessian_11")]


def suite_bogovskii(q, lam, seed, resolution, count):
    p = MorreyParams(3, q, lam)
    grid, ball = _ball_setup(max(resolution // 2, 12))
    fam = [mean_zero(f) for f in random_bumps(grid, ball, count, seed, width=(2 * grid.h, 0.5))]
    rep = InequalityReport("bogovskii_w1", {"q": q, "lam": lam})
    cfg = BogovskiiConfig()
    for f in fam:
        w = solve_divergence(ball, f, cfg)
        num = max(morrey_norm(w, p), vector_gradient_norm(w, p))
        rep.ratios.append(float(num / morrey_norm(f, p)))
    return [rep]


def extension_setup(resolution: int):
    """Graph domain over ``[-1, 1]^2`` in a box tall enough for the extension rays."""
    h = 2.0 / resolution
    nz = int(round(3.0 / h))
    grid = Grid((resolution, resolution, nz), (-1.0, -1.0, -0.5), (h, h, h))
    X, Y = np.meshgrid(*grid.axes()[:2], indexing="ij")
    sigma = 0.1 * np.sin(np.pi * X) * np.cos(np.pi * Y / 2)
    dom = LipschitzGraph(sigma, 0.1 * np.pi * 1.2)
    return grid, dom


def suite_extension(q, lam, seed, resolution, count):
    p = MorreyParams(3, q, lam)
    grid, dom = extension_setup(resolution)
    psi = moment_weight(1, 2.5)
    rd = regularized_distance(dom, grid, brute_force=False)
    fam = random_bumps(grid, dom, count, seed, width=(2 * grid.h, 0.5))
    k0 = InequalityReport("extension_k0", {"q": q, "lam": lam, "K": psi.K, "T": psi.T})
    k1 = InequalityReport("extension_k1", {"q": q, "lam": lam, "K": psi.K, "T": psi.T})
    sampler = BallSampler.dyadic(grid, 2.0)
    for f in fam:
        E, _ = extend_special_lipschitz(f, psi, rd)
        k0.ratios.append(float(morrey_norm(E, p, sampler) / morrey_norm(f, p, sampler)))
        k1.ratios.append(float(gradient_norm(E, p, sampler) / gradient_norm(f, p, sampler)))
    return [k0, k1]


_RUNNERS = {
    "embeddings": suite_embeddings, "poincare": suite_poincare, "variational": suite_variational,
    "fractional": suite_fractional, "cz": suite_cz, "bogovskii": suite_bogovskii, "extension": suite_extension,
}


def run_suite(suite: str, q: float = 2.0, lam: float = 1.0, seed: int = 7, resolution: int = 24,
              count: int = 20, baselines: dict | None = None) -> dict[str, InequalityReport]:
    names = SUITES if suite == "all" else (suite,)
    out = {}
    for name in names:
        if name not in _RUNNERS:
            raise ValueError(f"unknown suite {name!r}")
        for rep in _RUNNERS[name](q, lam, seed, resolution, count):
            key = baseline_key(name, rep.inequality, q, lam, seed, resolution, count)
            if baselines is not None and key in baselines:
                rep.threshold = baselines[key] * REGRESSION_SLACK
            rep.params.update(suite=name, seed=seed, resolution=resolution, count=count)
            out[f"{name}/{rep.inequality}"] = rep
    return out


def baseline_key(suite, inequality, q, lam, seed, resolution, count) -> str:
    return f"{suite}/{inequality}/q={q!r}/lam={lam!r}/seed={seed}/res={resolution}/count={count}"


def load_baselines() -> dict:
    try:
        text = resources.files("mzh").joinpath("data/baselines.json").read_text()
    except FileNotFoundError:
        return {}
    return json.loads(text)["worst"]
