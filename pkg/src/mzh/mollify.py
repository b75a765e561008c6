"""Mollification by a lattice-normalised C-infinity bump and the Zorko convergence diagnostic."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .norms import BallSampler, MorreyParams, morrey_norm


class UnderResolvedKernel(UserWarning):
    """The mollifier radius is below one grid spacing."""


def bump(r: np.ndarray) -> np.ndarray:
    """``exp(-1/(1-r^2))`` on the unit ball, zero outside."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


@dataclass(frozen=True)
class Mollifier:
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("mollifier scale must be positive")

    def stencil(self, grid: Grid):
        """Offsets (in cells) and weights of the discrete kernel; weights sum to one."""
        if self.eps < grid.h:
            warnings.warn(f"mollifier radius {self.eps} is below the grid spacing {grid.h}",
                          UnderResolvedKernel, stacklevel=3)
        reach = [int(np.ceil(self.eps / h)) for h in grid.spacing]
        axes = [np.arange(-r, r + 1) for r in reach]
        idx = np.stack(np.meshgrid(*axes, indexing="ij")).reshape(grid.n, -1)
        dist = np.sqrt(np.sum((idx * np.asarray(grid.spacing)[:, None]) ** 2, axis=0))
        w = bump(dist / self.eps)
        keep = w > 0
        if not keep.any():
            keep = dist == 0
            w = keep.astype(float)
        idx, w = idx[:, keep], w[keep]
        return idx, w / w.sum()

    def mass(self, grid: Grid) -> float:
        return float(self.stencil(grid)[1].sum())


def mollify(f, m: Mollifier):
    """Direct stencil convolution of the zero-extended field, restricted to its mask.

    Stencil order is fixed, so results are bit-reproducible.
    """
    idx, w = m.stencil(f.grid)
    reach = np.abs(idx).max(axis=1)
    lead = f.data.ndim - f.grid.n
    pad = [(0, 0)] * lead + [(int(r), int(r)) for r in reach]
    src = np.pad(f.data, pad)
    out = np.zeros_like(f.data)
    shape = f.grid.shape
    for k in range(idx.shape[1]):
        sl = tuple(slice(int(r - o), int(r - o) + s) for r, o, s in zip(reach, idx[:, k], shape))
        out += w[k] * src[(slice(None),) * lead + sl]
    return f.with_data(out)


def zorko_residuals(f, eps_values, p: MorreyParams, s: BallSampler | None = None):
    """Sampled Morrey norm of ``phi_eps * f - f`` for each scale.

    Decreasing residuals indicate membership in the Zorko closure; a plateau
    (as for ``|x|^{-alpha}`` restricted to a ball) indicates the opposite.
    """
    out = []
    for eps in eps_values:
        g = mollify(f, Mollifier(eps))
        out.append(morrey_norm(g - f, p, s))
    return out
