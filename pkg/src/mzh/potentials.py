"""Fundamental solution, fractional integrals, principal-value singular integrals, Riesz projector."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._ops import full_convolve, offsets, sphere_rule
from .grid import Grid, ScalarField


def surface_area(n: int) -> float:
    """Area of the unit sphere in R^n."""
    return 2 * math.pi ** (n / 2) / math.gamma(n / 2)


def ball_volume(n: int) -> float:
    return surface_area(n) / n


def gamma_eval(x, n: int | None = None):
    """``|x|^{2-n} / ((2-n) sigma_n)``; ``x`` has the coordinate axis first."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0] if n is None else n
    if n < 3:
        raise ValueError("fundamental solution formula requires n >= 3")
    r = np.sqrt(np.sum(x**2, axis=0))
    if np.any(r == 0):
        raise ValueError("fundamental solution is singular at the origin")
    return r ** (2 - n) / ((2 - n) * surface_area(n))


def equal_volume_radius(grid: Grid) -> float:
    """Radius of the ball with the volume of one cell."""
    return (grid.cell_volume / ball_volume(grid.n)) ** (1 / grid.n)


def _distance_table(grid: Grid):
    d = offsets(grid)
    return d, np.sqrt(np.sum(d**2, axis=0))


def gamma_table(grid: Grid) -> np.ndarray:
    """Lattice weights of Gamma with the self cell integrated over an equal-volume ball."""
    n = grid.n
    d, r = _distance_table(grid)
    centre = r == 0
    r[centre] = 1.0
    k = r ** (2 - n) / ((2 - n) * surface_area(n)) * grid.cell_volume
    rho = equal_volume_radius(grid)
    k[centre] = rho**2 / (2 * (2 - n))
    return k


@dataclass(frozen=True)
class FractionalParams:
    delta: float
    n: int = 3

    def __post_init__(self):
        if not 0 < self.delta <= self.n:
            raise ValueError(f"order must lie in (0, n], got {self.delta}")


def fractional_integral(f: ScalarField, d: FractionalParams) -> ScalarField:
    """``int_Omega f(y) |x-y|^{delta-n} dy`` on the mask of ``f``.

    Midpoint sum; the self cell uses the analytic integral over a ball of the
    cell's volume, ``sigma_n rho^delta / delta``.
    """
    if not f.domain.bounded:
        raise ValueError("fractional integral requires a bounded domain")
    n = f.grid.n
    _, r = _distance_table(f.grid)
    centre = r == 0
    r[centre] = 1.0
    k = r ** (d.delta - n) * f.grid.cell_volume
    k[centre] = surface_area(n) * equal_volume_radius(f.grid) ** d.delta / d.delta
    out = full_convolve(f.data, k)
    return f.with_data(out)


@dataclass(frozen=True)
class CZKernel:
    """Kernel ``nu(y/|y|) / |y|^n`` with a zero-degree homogeneous, mean-zero symbol."""

    symbol: Callable[[np.ndarray], np.ndarray]
    n: int = 3
    bound: float | None = None
    sphere_mean: float = field(init=False, default=math.nan)

    def __post_init__(self):
        e, w = _sphere(self.n)
        vals = np.asarray(self.symbol(e), dtype=float)
        mean = float(np.sum(vals * w) / np.sum(w))
        if abs(mean) > 1e-6:
            raise ValueError(f"symbol is not mean-zero on the sphere (average {mean:.3e})")
        measured = float(np.abs(vals).max())
        if self.bound is not None and measured > self.bound * (1 + 1e-9):
            raise ValueError(f"symbol exceeds its declared bound ({measured} > {self.bound})")
        object.__setattr__(self, "sphere_mean", mean)
        if self.bound is None:
            object.__setattr__(self, "bound", measured)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        r = np.sqrt(np.sum(y**2, axis=0))
        return np.asarray(self.symbol(y / r), dtype=float) / r**self.n


def _sphere(n):
    if n == 3:
        return sphere_rule(48, 96)
    if n == 2:
        t = 2 * np.pi * (np.arange(512) + 0.5) / 512
        return np.stack([np.cos(t), np.sin(t)]), np.full(512, 2 * np.pi / 512)
    raise ValueError("sphere quadrature implemented for n = 2, 3")


def hessian_gamma_kernel(i: int, j: int, n: int = 3) -> CZKernel:
    """``d_i d_j Gamma``: symbol ``(delta_ij - n e_i e_j) / sigma_n``."""
    s = surface_area(n)
    return CZKernel(lambda e: ((1.0 if i == j else 0.0) - n * e[i] * e[j]) / s, n)


def cz_table(grid: Grid, kernel: CZKernel, r_cut: float | None = None, refine: int = 4) -> np.ndarray:
    """Lattice weights of the principal-value sum.

    The self cell is skipped (mean-zero symbol over a symmetric cell); cells
    with centre closer than ``r_cut`` use the kernel averaged over
    ``refine**n`` sub-points; farther cells use the midpoint value.
    """
    r_cut = 3 * grid.h if r_cut is None else r_cut
    if r_cut < grid.h * (1 - 1e-12):
        raise ValueError("r_cut must be at least one grid spacing")
    d, r = _distance_table(grid)
    centre = r == 0
    safe = d.copy()
    safe[(slice(None), centre)] = 1.0
    table = kernel(safe) * grid.cell_volume
    table[centre] = 0.0
    near = (r < r_cut) & ~centre
    if refine > 1 and near.any():
        sub = [(np.arange(refine) + 0.5) / refine - 0.5 for _ in range(grid.n)]
        sub = np.stack(np.meshgrid(*sub, indexing="ij")).reshape(grid.n, -1) * np.asarray(grid.spacing)[:, None]
        pts = d[(slice(None), near)]
        acc = np.zeros(pts.shape[1])
        for k in range(sub.shape[1]):
            acc += kernel(pts + sub[:, k: k + 1])
        table[near] = acc / sub.shape[1] * grid.cell_volume
    return table


def cz_apply(f: ScalarField, k: CZKernel, r_cut: float | None = None, refine: int = 4) -> ScalarField:
    """Principal-value ``int S(x-y) f(y) dy`` at every cell of ``f``'s grid."""
    return f.with_data(full_convolve(f.data, cz_table(f.grid, k, r_cut, refine)))


def wavenumbers(grid: Grid, real_last: bool = False, zero_nyquist: bool = False) -> list[np.ndarray]:
    """Angular wavenumbers per axis, broadcastable against the spectrum.

    ``zero_nyquist`` sets the Nyquist wavenumber of even axes to zero; a real
    field's Nyquist mode pairs with itself, so odd and mixed symbols are only
    consistent with that choice.
    """
    ks = []
    for ax, (s, h) in enumerate(zip(grid.shape, grid.spacing)):
        if real_last and ax == grid.n - 1:
            k = 2 * np.pi * np.fft.rfftfreq(s, h)
        else:
            k = 2 * np.pi * np.fft.fftfreq(s, h)
        if zero_nyquist and s % 2 == 0:
            k[s // 2] = 0.0
        ks.append(k.reshape([-1 if i == ax else 1 for i in range(grid.n)]))
    return ks


def riesz_projection_symbol(uhat: np.ndarray, xi) -> np.ndarray:
    """Apply ``delta_ij - xi_i xi_j / |xi|^2`` per mode; the zero mode passes unchanged."""
    n = uhat.shape[0]
    xi = [np.broadcast_to(k, uhat.shape[1:]) for k in xi]
    k2 = sum(k**2 for k in xi)
    zero = k2 == 0
    k2 = np.where(zero, 1.0, k2)
    dot = sum(xi[i] * uhat[i] for i in range(n)) / k2
    out = np.stack([uhat[i] - xi[i] * dot for i in range(n)])
    out[(slice(None), zero)] = uhat[(slice(None), zero)]
    return out
