"""Sampled Morrey norms, block-norm brackets, weighted L^q norms and the maximal function."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
from scipy import ndimage

from ._ops import workers
from .grid import Grid, ScalarField


@dataclass(frozen=True)
class MorreyParams:
    n: int
    q: float
    lam: float

    def __post_init__(self):
        if not 1 < self.q < math.inf:
            raise ValueError(f"q must lie in (1, inf), got {self.q}")
        if not 0 <= self.lam < self.n:
            raise ValueError(f"lambda must lie in [0, n), got {self.lam}")

    @property
    def q_conj(self) -> float:
        return self.q / (self.q - 1)

    @property
    def alpha(self) -> float:
        return (self.n - self.lam) / self.q

    def conjugate(self) -> "MorreyParams":
        return MorreyParams(self.n, self.q_conj, self.lam)


@dataclass(frozen=True)
class BallSampler:
    """Discretised sup over balls: centre set (``stride``) times a radius ladder."""

    radii: tuple[float, ...]
    stride: int = 1

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        if not radii:
            raise ValueError("ball sampler needs at least one radius")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError("radii must be strictly increasing")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        object.__setattr__(self, "radii", radii)

    @classmethod
    def dyadic(cls, grid: Grid, diam: float, r_min: float | None = None, stride: int = 1) -> "BallSampler":
        r = grid.h if r_min is None else r_min
        radii = []
        while r < diam:
            radii.append(r)
            r *= 2
        radii.append(diam)
        return cls(tuple(radii), stride)

    @classmethod
    def geometric(cls, r_min: float, r_max: float, count: int, stride: int = 1) -> "BallSampler":
        return cls(tuple(np.geomspace(r_min, r_max, count)), stride)

    def refined(self, extra) -> "BallSampler":
        return BallSampler(tuple(sorted(set(self.radii) | set(float(r) for r in extra))), self.stride)

    def validate(self, grid: Grid):
        if self.radii[0] < grid.h * (1 - 1e-12):
            raise ValueError(f"smallest radius {self.radii[0]} below the grid spacing {grid.h}")

    def center_mask(self, mask: np.ndarray) -> np.ndarray:
        if self.stride == 1:
            return mask
        sel = np.ones(mask.shape, dtype=bool)
        for ax, s in enumerate(mask.shape):
            keep = np.zeros(s, dtype=bool)
            keep[:: self.stride] = True
            sel &= keep.reshape([-1 if i == ax else 1 for i in range(mask.ndim)])
        return mask & sel


def mask_diameter(grid: Grid, mask: np.ndarray) -> float:
    """Diameter bound: bounding-box diagonal of the mask cells plus one cell."""
    idx = np.argwhere(mask)
    if len(idx) == 0:
        return grid.h
    ext = (idx.max(axis=0) - idx.min(axis=0) + 1) * np.asarray(grid.spacing)
    return float(np.linalg.norm(ext))


def default_sampler(f) -> BallSampler:
    return BallSampler.dyadic(f.grid, mask_diameter(f.grid, f.mask))


class BallIntegrator:
    """Sums of a nonnegative lattice density over all balls ``B(x, R)`` (``|y - x| < R``)."""

    def __init__(self, grid: Grid, density: np.ndarray):
        self.grid = grid
        self.total = float(density.sum())
        self.padded = tuple(scipy.fft.next_fast_len(2 * s - 1, real=True) for s in grid.shape)
        with scipy.fft.set_workers(workers()):
            self.spectrum = scipy.fft.rfftn(density, s=self.padded)

    def ball_sums(self, radius: float) -> np.ndarray:
        g = self.grid
        if radius > math.dist(g.origin, g.upper):
            return np.full(g.shape, self.total)
        idx = [np.fft.fftfreq(p, 1.0 / p) for p in self.padded]
        d2 = sum((np.asarray(i) * h).reshape([-1 if k == ax else 1 for k in range(g.n)]) ** 2
                 for ax, (i, h) in enumerate(zip(idx, g.spacing)))
        kern = (d2 < radius**2).astype(float)
        with scipy.fft.set_workers(workers()):
            out = scipy.fft.irfftn(self.spectrum * scipy.fft.rfftn(kern), s=self.padded)
        out = out[tuple(slice(0, s) for s in g.shape)]
        # rounding noise of order eps * total
        out[out < 1e-13 * self.total] = 0.0
        return out


def local_lq(f, q: float, radii, centers: np.ndarray | None = None):
    """Yield ``(R, ||f||_{L^q(Omega_R(x))}^q)`` arrays over the lattice for each radius."""
    dens = f.magnitude() ** q * f.grid.cell_volume
    dens[~f.mask] = 0.0
    integ = BallIntegrator(f.grid, dens)
    for r in radii:
        yield r, integ.ball_sums(r)


def morrey_norm(f, p: MorreyParams, s: BallSampler | None = None, return_argmax: bool = False):
    """max over sampled ``(x, R)`` of ``R^{-lam/q} ||f||_{L^q(Omega_R(x))}``, x in the mask."""
    s = default_sampler(f) if s is None else s
    s.validate(f.grid)
    cmask = s.center_mask(f.mask)
    if not cmask.any():
        raise ValueError("ball sampler selects no centres")
    best, where = 0.0, None
    for r, sums in local_lq(f, p.q, s.radii):
        loc = sums[cmask]
        k = int(np.argmax(loc))
        val = r ** (-p.lam / p.q) * loc[k] ** (1 / p.q)
        if val > best:
            best, where = val, (tuple(np.argwhere(cmask)[k]), r)
    if return_argmax:
        return best, where
    return best


def lq_norm(f, q: float) -> float:
    return float((np.sum(f.magnitude()[f.mask] ** q) * f.grid.cell_volume) ** (1 / q))


def weighted_lq_norm(f, q: float, kappa: float) -> float:
    """``(int |f|^q (1+|x|^2)^{-kappa/2})^{1/q}`` by midpoint quadrature."""
    x = f.grid.centers()
    w = (1 + np.sum(x**2, axis=0)) ** (-kappa / 2)
    return float((np.sum((f.magnitude() ** q * w)[f.mask]) * f.grid.cell_volume) ** (1 / q))


def maximal_function(f, s: BallSampler | None = None) -> ScalarField:
    """Sampled ``sup_r r^{-n} int_{B(x,r)} |f|`` at every cell of ``f``'s grid.

    Normalised by ``r^n`` rather than the ball volume.
    """
    s = default_sampler(f) if s is None else s
    s.validate(f.grid)
    n = f.grid.n
    out = np.zeros(f.grid.shape)
    for r, sums in local_lq(f, 1.0, s.radii):
        np.maximum(out, sums / r**n, out=out)
    return ScalarField(f.grid, f.domain, out, f.mask)


# ---------------------------------------------------------------------------
# block space


@dataclass
class Block:
    coefficient: float
    center: tuple[float, ...]
    radius: float
    cells: np.ndarray  # boolean support on the lattice


@dataclass
class BlockDecomposition:
    blocks: list[Block] = field(default_factory=list)

    @property
    def weight(self) -> float:
        return float(sum(abs(b.coefficient) for b in self.blocks))

    def realize(self, f):
        """Sum of coefficient times block; reproduces ``f`` cell by cell."""
        out = np.zeros_like(f.data)
        for b in self.blocks:
            out[..., b.cells] += f.data[..., b.cells]
        return f.with_data(out)


def _block_for(f, cells, center, q, lam, qc):
    x = f.grid.centers()
    d = np.sqrt(np.sum((x[(slice(None), cells)] - np.asarray(center)[:, None]) ** 2, axis=0))
    radius = float(d.max()) * (1 + 1e-12) + 1e-300
    radius = max(radius, f.grid.h)
    norm = float((np.sum(f.magnitude()[cells] ** q) * f.grid.cell_volume) ** (1 / q))
    return Block(radius ** (lam / qc) * norm, tuple(center), radius, cells)


def _candidates(f, q, lam, qc):
    support = (f.magnitude() > 0) & f.mask
    x = f.grid.centers()
    idx = np.argwhere(support)

    def enclosing(cells):
        pts = x[(slice(None), cells)]
        center = 0.5 * (pts.min(axis=1) + pts.max(axis=1))
        return _block_for(f, cells, center, q, lam, qc)

    yield [enclosing(support)]
    labels, count = ndimage.label(support)
    if count > 1:
        yield [enclosing(labels == k) for k in range(1, count + 1)]
    lo = idx.min(axis=0)
    span = int((idx.max(axis=0) - lo + 1).max())
    side = 1
    while side < span:
        tiles = {}
        keys = (idx - lo) // side
        for key, cell in zip(map(tuple, keys), idx):
            tiles.setdefault(key, []).append(cell)
        blocks = []
        for key, cells in tiles.items():
            m = np.zeros(f.grid.shape, dtype=bool)
            m[tuple(np.array(cells).T)] = True
            first = lo + np.asarray(key) * side
            center = np.asarray(f.grid.origin) + (first + side / 2) * np.asarray(f.grid.spacing)
            blocks.append(_block_for(f, m, center, q, lam, qc))
        yield blocks
        side *= 2


def block_norm_bounds(f, p: MorreyParams, s: BallSampler | None = None):
    """Bracket the block-space norm ``||f||_{H_{q,lam}}``.

    upper: l1 weight of the best constructed decomposition (enclosing ball,
    connected components, dyadic tilings). lower: max over dual test functions
    ``g`` of ``|int f g| / ||g||_{M_{q',lam}}``; the Morrey norm of ``g`` also
    covers every ball used by the decomposition, so ``lower <= upper`` holds.
    """
    if not np.any(f.magnitude()[f.mask] > 0):
        return 0.0, 0.0, BlockDecomposition()
    q, lam, qc = p.q, p.lam, p.q_conj
    best = None
    for blocks in _candidates(f, q, lam, qc):
        dec = BlockDecomposition(blocks)
        if best is None or dec.weight < best.weight:
            best = dec
    upper = best.weight

    dual = p.conjugate()
    s = default_sampler(f) if s is None else s
    x = f.grid.centers()
    lower = 0.0
    for g in _dual_tests(f, q):
        pair = abs(float(np.sum(f.data * g.data) * f.grid.cell_volume))
        if pair == 0.0:
            continue
        gnorm = morrey_norm(g, dual, s)
        gmag = g.magnitude()
        for b in best.blocks:
            inside = np.sum((x - np.asarray(b.center).reshape((-1,) + (1,) * f.grid.n)) ** 2, axis=0) < b.radius**2
            loc = float((np.sum(gmag[inside & g.mask] ** qc) * f.grid.cell_volume) ** (1 / qc))
            gnorm = max(gnorm, b.radius ** (-lam / qc) * loc)
        lower = max(lower, pair / gnorm)
    # equality cases can cross by an ulp
    return min(lower, upper), upper, best


def _dual_tests(f, q):
    mag = f.magnitude()
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(mag > 0, f.data / np.where(mag > 0, mag, 1), 0.0)
    yield f.with_data(unit * mag ** (q - 1))
    yield f.with_data(f.data)
    yield f.with_data(unit)
    x = f.grid.centers()
    support = (mag > 0) & f.mask
    pts = x[(slice(None), support)]
    lo, hi = pts.min(axis=1), pts.max(axis=1)
    width = max(float(np.max(hi - lo)) / 4, f.grid.h)
    for ax in range(f.grid.n):
        for frac in (0.25, 0.75):
            c = 0.5 * (lo + hi)
            c[ax] = lo[ax] + frac * (hi[ax] - lo[ax])
            bump = np.exp(-np.sum((x - c.reshape((-1,) + (1,) * f.grid.n)) ** 2, axis=0) / width**2)
            yield f.with_data(unit * bump)
