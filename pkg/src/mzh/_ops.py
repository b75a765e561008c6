"""Shared lattice kernels: linear convolution, masked differences, thread caps."""

from __future__ import annotations

import os

import numpy as np
import scipy.fft
from scipy.signal import fftconvolve


def workers() -> int:
    """Inner parallelism cap from ``MZH_THREADS`` (defaults to 1)."""
    try:
        return max(1, int(os.environ.get("MZH_THREADS", "1")))
    except ValueError:
        return 1


def offsets(grid, reach=None) -> np.ndarray:
    """Offset vectors between cell centres, shape ``(n, 2s_1-1, ..., 2s_n-1)``.

    ``reach`` optionally limits the stencil half-width (in cells) per axis.
    """
    if reach is None:
        reach = [s - 1 for s in grid.shape]
    axes = [np.arange(-r, r + 1) * h for r, h in zip(reach, grid.spacing)]
    return np.stack(np.meshgrid(*axes, indexing="ij"))


def full_convolve(data: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Discrete sum ``out[i] = sum_j kernel[i - j] data[j]`` with kernel centred.

    ``kernel`` has shape ``2*shape - 1`` (all offsets); the result has the shape
    of ``data``. FFT-evaluated, identical to the direct lattice sum up to rounding.
    """
    with scipy.fft.set_workers(workers()):
        return fftconvolve(data, kernel, mode="same")


def masked_gradient(data: np.ndarray, mask: np.ndarray, spacing) -> np.ndarray:
    """Centred differences inside the mask, one-sided next to its boundary."""
    n = mask.ndim
    out = np.zeros((n,) + mask.shape)
    for ax in range(n):
        h = spacing[ax]
        fwd = np.zeros_like(mask)
        bwd = np.zeros_like(mask)
        sl_hi = [slice(None)] * n
        sl_lo = [slice(None)] * n
        sl_hi[ax] = slice(1, None)
        sl_lo[ax] = slice(None, -1)
        fwd[tuple(sl_lo)] = mask[tuple(sl_hi)]
        bwd[tuple(sl_hi)] = mask[tuple(sl_lo)]
        up = np.zeros_like(data)
        dn = np.zeros_like(data)
        up[tuple(sl_lo)] = data[tuple(sl_hi)]
        dn[tuple(sl_hi)] = data[tuple(sl_lo)]
        both = fwd & bwd & mask
        only_f = fwd & ~bwd & mask
        only_b = bwd & ~fwd & mask
        g = np.zeros_like(data)
        g[both] = (up[both] - dn[both]) / (2 * h)
        g[only_f] = (up[only_f] - data[only_f]) / h
        g[only_b] = (data[only_b] - dn[only_b]) / h
        out[ax] = g
    return out


def interior_mask(mask: np.ndarray, width: int = 1) -> np.ndarray:
    """Cells whose full centred stencil (``width`` cells each way) lies in the mask."""
    inner = mask.copy()
    n = mask.ndim
    for ax in range(n):
        for s in range(1, width + 1):
            for sign in (1, -1):
                shifted = np.zeros_like(mask)
                src = [slice(None)] * n
                dst = [slice(None)] * n
                if sign > 0:
                    src[ax], dst[ax] = slice(s, None), slice(None, -s)
                else:
                    src[ax], dst[ax] = slice(None, -s), slice(s, None)
                shifted[tuple(dst)] = mask[tuple(src)]
                inner &= shifted
    return inner


def centered_divergence(vec: np.ndarray, spacing) -> np.ndarray:
    """Centred divergence with zero values beyond the array."""
    out = np.zeros(vec.shape[1:])
    for ax in range(vec.shape[0]):
        out += _centered(vec[ax], ax, spacing[ax])
    return out


def _centered(a, ax, h):
    p = np.pad(a, [(1, 1) if i == ax else (0, 0) for i in range(a.ndim)])
    hi = [slice(None)] * a.ndim
    lo = [slice(None)] * a.ndim
    hi[ax] = slice(2, None)
    lo[ax] = slice(None, -2)
    return (p[tuple(hi)] - p[tuple(lo)]) / (2 * h)


def centered_curl(vec: np.ndarray, spacing) -> np.ndarray:
    """Centred curl for n = 3 (antisymmetric part of the Jacobian otherwise)."""
    n = vec.shape[0]
    d = [[_centered(vec[i], j, spacing[j]) for j in range(n)] for i in range(n)]
    if n == 3:
        return np.stack([d[2][1] - d[1][2], d[0][2] - d[2][0], d[1][0] - d[0][1]])
    return np.stack([d[i][j] - d[j][i] for i in range(n) for j in range(i + 1, n)])


def sphere_rule(n_theta: int, n_phi: int):
    """Product rule on S^2: Gauss-Legendre in cos(theta), trapezoid in phi.

    Returns directions ``(3, m)`` and weights summing to ``4*pi``.
    """
    ct, wt = np.polynomial.legendre.leggauss(n_theta)
    phi = 2 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    st = np.sqrt(1 - ct**2)
    e = np.stack([
        np.outer(st, np.cos(phi)).ravel(),
        np.outer(st, np.sin(phi)).ravel(),
        np.repeat(ct, n_phi),
    ])
    w = np.repeat(wt, n_phi) * (2 * np.pi / n_phi)
    return e, w
