"""Stein-type extension from graph domains and glued charts.

``E(f)(x', x_n) = int_1^T f(x', x_n + t delta*(x)) psi(t) dt`` below the graph,
``E(f) = f`` on the domain, with ``delta* = 2 m theta`` built from a
regularised distance ``theta``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, ndimage

from .grid import Box, Grid, GridError, LipschitzGraph, ScalarField
from .mollify import bump


class IllConditionedWeight(ValueError):
    pass


class RayExitsBox(ValueError):
    def __init__(self, needed: float):
        super().__init__(f"extension rays leave the box; pad the top by at least {needed:.6g}")
        self.needed = needed


# ---------------------------------------------------------------------------
# moment weight


@dataclass(frozen=True)
class PsiWeight:
    """``psi(t) = (t-1)^2 (T-t)^2 sum_j a_j P_j(s(t))`` on ``[1, T]``.

    Compact support replaces rapid decay, so every decay order holds
    trivially; ``decay_order`` is kept as a report field.
    """

    K: int
    T: float
    coeffs: np.ndarray
    condition: float
    moments: tuple[float, ...] = ()
    decay_order: float = math.inf

    def _s(self, t):
        return (2 * np.asarray(t, dtype=float) - (1 + self.T)) / (self.T - 1)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= 1) & (t <= self.T)
        val = (t - 1) ** 2 * (self.T - t) ** 2 * np.polynomial.legendre.legval(self._s(t), self.coeffs)
        return np.where(inside, val, 0.0)

    def rule(self, nodes: int | None = None):
        """Nodes ``t_i`` and weights ``c_i = w_i psi(t_i)``; exact for polynomial integrands of low degree."""
        nodes = max(24, len(self.coeffs) + self.K + 4) if nodes is None else nodes
        x, w = np.polynomial.legendre.leggauss(nodes)
        t = 1 + (self.T - 1) * 0.5 * (x + 1)
        return t, 0.5 * (self.T - 1) * w * self(t)

    def verify(self) -> tuple[float, ...]:
        """Moments ``int t^k psi`` for k = 0..K by adaptive quadrature (independent of the rule)."""
        with warnings.catch_warnings():
            # the integrands are polynomials; quad's roundoff notice is expected near 1e-14
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            return tuple(integrate.quad(lambda t, k=k: t**k * float(self(t)), 1.0, self.T,
                                        epsabs=1e-14, epsrel=1e-13, limit=200)[0] for k in range(self.K + 1))


def moment_weight(K: int, T: float = 6.0, basis: int | None = None, max_condition: float = 1e12) -> PsiWeight:
    """Solve for ``psi`` with unit mass and vanishing moments ``1..K``."""
    if K < 0:
        raise ValueError("K must be nonnegative")
    if not T > 1:
        raise ValueError("support end T must exceed 1")
    dim = K + 1 if basis is None else basis
    if dim < K + 1:
        raise ValueError(f"basis dimension {dim} cannot meet {K + 1} conditions")
    x, w = np.polynomial.legendre.leggauss(dim + K + 8)
    t = 1 + (T - 1) * 0.5 * (x + 1)
    w = 0.5 * (T - 1) * w
    env = (t - 1) ** 2 * (T - t) ** 2
    s = (2 * t - (1 + T)) / (T - 1)
    P = np.stack([np.polynomial.legendre.legval(s, np.eye(dim)[j]) for j in range(dim)])
    A = np.stack([np.sum(w * t**k * env * P, axis=1) for k in range(K + 1)])
    b = np.zeros(K + 1)
    b[0] = 1.0
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > max_condition:
        raise IllConditionedWeight(f"moment system condition number {cond:.3e}; use a smaller T or fewer moments")
    if dim == K + 1:
        coeffs = np.linalg.solve(A, b)
    else:
        coeffs = np.linalg.lstsq(A, b, rcond=None)[0]
    psi = PsiWeight(K, float(T), coeffs, cond)
    return PsiWeight(K, float(T), coeffs, cond, psi.verify())


# ---------------------------------------------------------------------------
# regularised distance


@dataclass
class RegularizedDistance:
    """``theta`` on cells below the graph plus measured constants.

    ``c1, c2``: extreme sampled ratios ``theta / dist`` over cells at least
    ``2 eps`` below the graph (nearer cells see the additive mollification
    defect, reported as ``report["additive_defect"]`` with the raw extremes);
    ``m``: smallest constant with ``m theta >= sigma - x_n`` on the sampled
    complement cells.
    """

    grid: Grid
    theta: np.ndarray
    complement: np.ndarray
    c1: float
    c2: float
    m: float
    eps: float
    lipschitz: float
    shift: float
    report: dict = field(default_factory=dict)


def _mollify_graph(sigma: np.ndarray, spacing, eps: float) -> np.ndarray:
    reach = [int(math.ceil(eps / h)) for h in spacing]
    axes = [np.arange(-r, r + 1) * h for r, h in zip(reach, spacing)]
    d = np.sqrt(sum(a**2 for a in np.meshgrid(*axes, indexing="ij")))
    k = bump(d / eps)
    k /= k.sum()
    return ndimage.convolve(sigma, k, mode="nearest")


def _graph_distance(grid: Grid, sigma: np.ndarray, pts: np.ndarray, upsample: int = 4, chunk: int = 1024):
    """Brute-force distance from points ``(n, m)`` to the graph, linearly upsampled between lattice samples."""
    n = grid.n
    frac = [np.linspace(0, s - 1, (s - 1) * upsample + 1) for s in sigma.shape]
    fidx = np.meshgrid(*frac, indexing="ij")
    fine = ndimage.map_coordinates(sigma, fidx, order=1, mode="nearest")
    base = np.stack([grid.origin[i] + (fidx[i] + 0.5) * grid.spacing[i] for i in range(n - 1)]).reshape(n - 1, -1)
    bpts = np.vstack([base, fine.reshape(1, -1)])
    out = np.empty(pts.shape[1])
    for a in range(0, pts.shape[1], chunk):
        p = pts[:, a:a + chunk]
        d2 = np.sum((p[:, :, None] - bpts[:, None, :]) ** 2, axis=0)
        out[a:a + chunk] = np.sqrt(d2.min(axis=1))
    return out


def regularized_distance(domain: LipschitzGraph, grid: Grid, eps: float | None = None,
                         brute_force: bool = True) -> RegularizedDistance:
    """``theta = (sigma_eps + s - x_n) / sqrt(1 + M^2)`` below the graph.

    ``sigma_eps`` is the graph mollified at scale ``eps`` (default 2h) and
    ``s = max(sigma - sigma_eps) >= 0`` lifts it above the graph, so ``theta``
    stays positive off the closed domain.
    """
    domain.check(grid)
    sigma = domain.sigma
    M = domain.bound(grid)
    eps = 2 * grid.h if eps is None else eps
    if sigma.size > 1 and np.ptp(sigma) > 0:
        sig_eps = _mollify_graph(sigma, grid.spacing[:-1], eps)
    else:
        sig_eps = sigma.copy()
    shift = max(float(np.max(sigma - sig_eps)), 0.0)
    xn = grid.centers()[-1]
    comp = ~domain.mask(grid)
    theta = np.zeros(grid.shape)
    theta[comp] = ((sig_eps[..., None] + shift - xn) / math.sqrt(1 + M * M))[comp]
    if np.any(theta[comp] <= 0):
        raise GridError("regularised distance is not positive below the graph")
    gap = (sigma[..., None] - xn)[comp]
    m = float(np.max(gap / theta[comp])) * (1 + 1e-12) if comp.any() else 1.0
    report = {"cells": int(comp.sum())}
    c1 = c2 = math.nan
    if brute_force and comp.any():
        pts = grid.centers()[(slice(None), comp)]
        dist = _graph_distance(grid, sigma, pts)
        ratio = theta[comp] / dist
        far = dist >= 2 * eps
        sel = ratio[far] if far.any() else ratio
        c1, c2 = float(sel.min()), float(sel.max())
        report.update(c1_all=float(ratio.min()), c2_all=float(ratio.max()),
                      additive_defect=float(np.max(theta[comp] - dist)))
    return RegularizedDistance(grid, theta, comp, c1, c2, m, eps, M, shift, report)


# ---------------------------------------------------------------------------
# extension along vertical rays


def _column_samples(f: ScalarField, mask: np.ndarray, z: np.ndarray, cols, counter: dict) -> np.ndarray:
    """Linear interpolation of ``f`` along x_n at heights ``z`` in the given columns."""
    g = f.grid
    h = g.spacing[-1]
    N = g.shape[-1]
    u = (z - g.origin[-1]) / h - 0.5
    j = np.floor(u).astype(np.int64)
    t = u - j
    if np.any(j + 1 > N - 1) or np.any(u > N - 1):
        over = float(np.max(u) - (N - 1)) * h
        raise RayExitsBox(over)
    lo = np.clip(j, 0, N - 1)
    hi = np.clip(j + 1, 0, N - 1)
    col = f.data[cols]
    cm = mask[cols]
    a = np.take_along_axis(col, lo, axis=-1)
    b = np.take_along_axis(col, hi, axis=-1)
    ma = np.take_along_axis(cm, lo, axis=-1)
    mb = np.take_along_axis(cm, hi, axis=-1)
    val = a * (1 - t) + b * t
    # ray points whose bracket leaves the mask: nearest in-mask value along the column
    bad = ~(ma & mb)
    if bad.any():
        first = np.argmax(cm, axis=-1)[..., None] * np.ones_like(j)
        near = np.take_along_axis(col, np.broadcast_to(first, j.shape), axis=-1)
        alt = np.where(ma & ~mb, a, np.where(mb & ~ma, b, near))
        val = np.where(bad, alt, val)
        counter["fallback"] = counter.get("fallback", 0) + int(bad.sum())
    counter["fallback_rows"] = bad.any(axis=-1)
    return val


def extend_special_lipschitz(f: ScalarField, psi: PsiWeight, rd: RegularizedDistance, nodes: int | None = None):
    """Extend ``f`` from the graph domain to the whole lattice box.

    Returns ``(E(f), report)``; the report counts ray samples that needed the
    nearest-in-mask fallback.
    """
    g = f.grid
    if not g.same_lattice(rd.grid):
        raise GridError("regularised distance lives on a different lattice")
    mask = f.mask
    t, c = psi.rule(nodes)
    comp = rd.complement
    out = np.where(mask, f.data, 0.0)
    counter = {"fallback": 0, "samples": 0}
    if comp.any():
        xn = g.centers()[-1]
        dstar = 2 * rd.m * rd.theta
        idx = np.nonzero(comp)
        cols = idx[:-1]
        z = xn[idx][:, None] + t[None, :] * dstar[idx][:, None]
        # column layout: one row per complement cell
        col_index = tuple(np.asarray(ci) for ci in cols)
        vals = _column_samples(f, mask, z, col_index, counter)
        counter["samples"] = int(z.size)
        out[idx] = vals @ c
        fb = np.zeros(g.shape, dtype=bool)
        fb[idx] = counter.pop("fallback_rows")
        counter["fallback_mask"] = fb
    return ScalarField(g, Box(), out), counter


# ---------------------------------------------------------------------------
# gluing


@dataclass
class Chart:
    """Rigid motion ``x = rotation @ xi + offset`` and a graph domain on a local lattice."""

    rotation: np.ndarray
    offset: np.ndarray
    local_grid: Grid
    graph: LipschitzGraph
    cutoff: Callable[..., np.ndarray]  # lambda_i(x) on global coordinates

    def to_local(self, x: np.ndarray) -> np.ndarray:
        return np.einsum("ji,j...->i...", self.rotation, x - self.offset.reshape((-1,) + (1,) * (x.ndim - 1)))

    def to_global(self, xi: np.ndarray) -> np.ndarray:
        return np.einsum("ij,j...->i...", self.rotation, xi) + self.offset.reshape((-1,) + (1,) * (xi.ndim - 1))


def _sample(data: np.ndarray, grid: Grid, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of lattice data at physical points (zero outside)."""
    coords = [(pts[i] - grid.origin[i]) / grid.spacing[i] - 0.5 for i in range(grid.n)]
    # snap roundoff so edge cell centres are not treated as outside
    coords = [np.where(np.abs(c - np.round(c)) < 1e-9, np.round(c), c) for c in coords]
    return ndimage.map_coordinates(data, coords, order=1, mode="constant", cval=0.0)


def extend_glued(f: ScalarField, charts: Sequence[Chart], lam_plus: Callable, lam_minus: Callable,
                 psi: PsiWeight, tol: float = 1e-12):
    """``Lambda+ (sum_i lambda_i E^i(lambda_i f)) / sum_i lambda_i^2 + Lambda- f``, then ``f`` on the domain."""
    g = f.grid
    x = g.centers()
    mask = f.mask
    lp = np.asarray(lam_plus(*x), dtype=float) * np.ones(g.shape)
    lm = np.asarray(lam_minus(*x), dtype=float) * np.ones(g.shape)
    bad = np.argwhere(mask & (np.abs(lp + lm - 1) > tol))
    if len(bad):
        raise GridError(f"Lambda+ + Lambda- != 1 at cell {tuple(int(i) for i in bad[0])}")
    lams = [np.asarray(ch.cutoff(*x), dtype=float) * np.ones(g.shape) for ch in charts]
    s2 = sum(l**2 for l in lams)
    bad = np.argwhere((lp > 0) & (s2 < 1 - tol))
    if len(bad):
        raise GridError(f"sum of squared chart cutoffs below 1 at cell {tuple(int(i) for i in bad[0])}")
    acc = np.zeros(g.shape)
    reports = []
    for ch, lam in zip(charts, lams):
        lg = ch.local_grid
        gx = ch.to_global(lg.centers())
        local = ScalarField(lg, ch.graph, _sample(np.where(mask, lam * f.data, 0.0), g, gx))
        rd = regularized_distance(ch.graph, lg, brute_force=False)
        ext, rep = extend_special_lipschitz(local, psi, rd)
        reports.append(rep)
        back = _sample(ext.data, lg, ch.to_local(x))
        acc += lam * back
    with np.errstate(invalid="ignore", divide="ignore"):
        glued = lp * np.where(s2 > 0, acc / np.where(s2 > 0, s2, 1), 0.0) + lm * np.where(mask, f.data, 0.0)
    out = np.where(mask, f.data, glued)
    return ScalarField(g, Box(), out), reports
