"""Divergence equation ``div w = f`` with ``w = 0`` on the boundary, on star-shaped pieces and their unions.

The solution operator is ``w(x) = int W(x, y) f(y) dy`` with
``W(x, y) = (x - y) int_1^inf omega(y + r (x - y)) r^{n-1} dr``. Writing
``y = x + tau e`` and ``rho = (r - 1) tau`` turns the double integral into a
sum over directions of products of two one-dimensional ray integrals,

    w(x) = - int_{S^{n-1}} e sum_k C(n-1, k) A_k(x, e) B_k(x, e) de,
    A_k = int_0^inf omega(x - rho e) rho^{n-1-k} drho,
    B_k = int_0^{exit} f(x + tau e) tau^k dtau,

which is what :func:`solve_divergence` evaluates. :class:`BogovskiiKernel`
keeps the pair kernel itself for independent checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from ._ops import sphere_rule
from .grid import Ball, GridError, ScalarField, StarShaped, StarUnion, VectorField
from .mollify import bump
from .potentials import surface_area


class MeanNotZero(ValueError):
    def __init__(self, mean, scale):
        super().__init__(f"f is not mean-zero: integral {mean:.3e} against L1 norm {scale:.3e}")
        self.mean = mean


@dataclass(frozen=True)
class BogovskiiConfig:
    n_theta: int = 16
    n_phi: int = 32
    radial_nodes: int = 16
    ray_nodes: int = 16
    star_fraction: float = 0.5  # star ball radius / ball radius for plain Ball domains
    mean_tol: float = 1e-8


def _bump_mass_1d(n: int, nodes: int = 400) -> float:
    """``int_0^1 exp(-1/(1-s^2)) s^{n-1} ds`` by Gauss-Legendre."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    s = 0.5 * (x + 1)
    return float(0.5 * np.sum(w * bump(s) * s ** (n - 1)))


@dataclass(frozen=True)
class BogovskiiKernel:
    """Unit-mass bump ``omega`` on ``B(center, radius)`` and the pair kernel ``W``."""

    center: tuple[float, ...]
    radius: float
    n: int = 3
    radial_nodes: int = 16

    @property
    def scale(self) -> float:
        """Normalising factor so that ``int omega = 1``."""
        return 1.0 / (surface_area(self.n) * self.radius**self.n * _bump_mass_1d(self.n))

    def omega(self, z: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center).reshape((-1,) + (1,) * (z.ndim - 1))
        return self.scale * bump(np.sqrt(np.sum((z - c) ** 2, axis=0)) / self.radius)

    def mass(self, nodes: int = 64) -> float:
        """Product Gauss rule in spherical coordinates around the centre."""
        e, we = sphere_rule(16, 32) if self.n == 3 else (None, None)
        if e is None:
            raise ValueError("mass check implemented for n = 3")
        x, w = np.polynomial.legendre.leggauss(nodes)
        r = 0.5 * (x + 1) * self.radius
        wr = 0.5 * w * self.radius * r ** (self.n - 1)
        pts = np.asarray(self.center)[:, None, None] + e[:, :, None] * r[None, None, :]
        return float(np.sum(self.omega(pts) * we[:, None] * wr[None, :]))

    def chord(self, p: np.ndarray, d: np.ndarray):
        """Parameter interval where ``p + t d`` lies in the bump's ball, or None."""
        q = p - np.asarray(self.center)
        a = float(d @ d)
        b = float(q @ d)
        c = float(q @ q) - self.radius**2
        disc = b * b - a * c
        if a == 0 or disc <= 0:
            return None
        s = math.sqrt(disc)
        return (-b - s) / a, (-b + s) / a

    def W(self, x, y) -> np.ndarray:
        """``(x - y) int_1^inf omega(y + r(x - y)) r^{n-1} dr`` on the exact support interval."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = x - y
        iv = self.chord(y, d)
        if iv is None:
            return np.zeros(self.n)
        lo, hi = max(iv[0], 1.0), iv[1]
        if hi <= lo:
            return np.zeros(self.n)
        t, w = np.polynomial.legendre.leggauss(self.radial_nodes)
        r = lo + (hi - lo) * 0.5 * (t + 1)
        z = y[:, None] + r[None, :] * d[:, None]
        val = float(np.sum(0.5 * (hi - lo) * w * self.omega(z) * r ** (self.n - 1)))
        return d * val


def pair_sum(kernel: BogovskiiKernel, f: ScalarField, points: np.ndarray) -> np.ndarray:
    """``sum_y h^n W(x, y) f(y)`` over the mask lattice for each point (rows of ``points``)."""
    y = f.grid.centers()[(slice(None), f.mask)]
    fy = f.data[f.mask]
    t, w = np.polynomial.legendre.leggauss(kernel.radial_nodes)
    return _pair_sum(np.ascontiguousarray(points, dtype=float), np.ascontiguousarray(y.T), fy,
                     np.asarray(kernel.center, dtype=float), kernel.radius, kernel.scale, t, w,
                     f.grid.cell_volume)


@numba.njit(cache=True)
def _bump_scalar(s):
    if s >= 1.0:
        return 0.0
    return math.exp(-1.0 / (1.0 - s * s))


@numba.njit(cache=True)
def _pair_sum(points, ys, fy, c, r0, scale, t, w, vol):
    m = points.shape[0]
    out = np.zeros((m, 3))
    for i in range(m):
        x = points[i]
        for j in range(ys.shape[0]):
            d0 = x[0] - ys[j, 0]
            d1 = x[1] - ys[j, 1]
            d2 = x[2] - ys[j, 2]
            a = d0 * d0 + d1 * d1 + d2 * d2
            if a == 0.0:
                continue
            q0 = ys[j, 0] - c[0]
            q1 = ys[j, 1] - c[1]
            q2 = ys[j, 2] - c[2]
            b = q0 * d0 + q1 * d1 + q2 * d2
            cc = q0 * q0 + q1 * q1 + q2 * q2 - r0 * r0
            disc = b * b - a * cc
            if disc <= 0.0:
                continue
            s = math.sqrt(disc)
            lo = max((-b - s) / a, 1.0)
            hi = (-b + s) / a
            if hi <= lo:
                continue
            acc = 0.0
            for k in range(t.shape[0]):
                r = lo + (hi - lo) * 0.5 * (t[k] + 1.0)
                z0 = q0 + r * d0
                z1 = q1 + r * d1
                z2 = q2 + r * d2
                acc += w[k] * _bump_scalar(math.sqrt(z0 * z0 + z1 * z1 + z2 * z2) / r0) * r * r
            acc *= 0.5 * (hi - lo) * scale * fy[j] * vol
            out[i, 0] += d0 * acc
            out[i, 1] += d1 * acc
            out[i, 2] += d2 * acc
    return out


# ---------------------------------------------------------------------------
# ray evaluation


@numba.njit(cache=True)
def _trilinear(fp, lo, h, p0, p1, p2):
    # fp is padded by two cells; lo is the centre of padded cell (0, 0, 0)
    u0 = (p0 - lo[0]) / h[0]
    u1 = (p1 - lo[1]) / h[1]
    u2 = (p2 - lo[2]) / h[2]
    n0, n1, n2 = fp.shape
    i0 = min(max(int(math.floor(u0)), 0), n0 - 2)
    i1 = min(max(int(math.floor(u1)), 0), n1 - 2)
    i2 = min(max(int(math.floor(u2)), 0), n2 - 2)
    t0 = min(max(u0 - i0, 0.0), 1.0)
    t1 = min(max(u1 - i1, 0.0), 1.0)
    t2 = min(max(u2 - i2, 0.0), 1.0)
    c00 = fp[i0, i1, i2] * (1 - t2) + fp[i0, i1, i2 + 1] * t2
    c01 = fp[i0, i1 + 1, i2] * (1 - t2) + fp[i0, i1 + 1, i2 + 1] * t2
    c10 = fp[i0 + 1, i1, i2] * (1 - t2) + fp[i0 + 1, i1, i2 + 1] * t2
    c11 = fp[i0 + 1, i1 + 1, i2] * (1 - t2) + fp[i0 + 1, i1 + 1, i2 + 1] * t2
    c0 = c00 * (1 - t1) + c01 * t1
    c1 = c10 * (1 - t1) + c11 * t1
    return c0 * (1 - t0) + c1 * t0


@numba.njit(cache=True)
def _ray_solve(xs, dirs, wdirs, c, r0, scale, fp, lo, h, ball, pc, R, tmax, gt, gw, rt, rw, step):
    m = xs.shape[0]
    nd = dirs.shape[1]
    out = np.zeros((m, 3))
    A = np.zeros(3)
    B = np.zeros(3)
    for i in range(m):
        x0 = xs[i, 0]
        x1 = xs[i, 1]
        x2 = xs[i, 2]
        q0 = x0 - c[0]
        q1 = x1 - c[1]
        q2 = x2 - c[2]
        qq = q0 * q0 + q1 * q1 + q2 * q2 - r0 * r0
        acc0 = 0.0
        acc1 = 0.0
        acc2 = 0.0
        for k in range(nd):
            e0 = dirs[0, k]
            e1 = dirs[1, k]
            e2 = dirs[2, k]
            # omega ray x - rho e meets B(c, r0) for rho in [lo, hi]
            b = -(q0 * e0 + q1 * e1 + q2 * e2)
            disc = b * b - qq
            if disc <= 0.0:
                continue
            s = math.sqrt(disc)
            rlo = max(-b - s, 0.0)
            rhi = -b + s
            if rhi <= rlo:
                continue
            A[0] = 0.0
            A[1] = 0.0
            A[2] = 0.0
            half = 0.5 * (rhi - rlo)
            for j in range(rt.shape[0]):
                rho = rlo + half * (rt[j] + 1.0)
                z0 = q0 - rho * e0
                z1 = q1 - rho * e1
                z2 = q2 - rho * e2
                om = rw[j] * half * _bump_scalar(math.sqrt(z0 * z0 + z1 * z1 + z2 * z2) / r0)
                A[0] += om * rho * rho
                A[1] += om * rho
                A[2] += om
            # f ray x + tau e
            B[0] = 0.0
            B[1] = 0.0
            B[2] = 0.0
            if ball:
                p0 = x0 - pc[0]
                p1 = x1 - pc[1]
                p2 = x2 - pc[2]
                bb = p0 * e0 + p1 * e1 + p2 * e2
                cc = p0 * p0 + p1 * p1 + p2 * p2 - R * R
                dd = bb * bb - cc
                texit = -bb + math.sqrt(max(dd, 0.0))
                if texit > 0.0:
                    ht = 0.5 * texit
                    for j in range(gt.shape[0]):
                        tau = ht * (gt[j] + 1.0)
                        fv = gw[j] * ht * _trilinear(fp, lo, h, x0 + tau * e0, x1 + tau * e1, x2 + tau * e2)
                        B[0] += fv
                        B[1] += fv * tau
                        B[2] += fv * tau * tau
            else:
                nstep = int(math.ceil(tmax / step))
                for j in range(nstep):
                    tau = (j + 0.5) * step
                    fv = step * _trilinear(fp, lo, h, x0 + tau * e0, x1 + tau * e1, x2 + tau * e2)
                    B[0] += fv
                    B[1] += fv * tau
                    B[2] += fv * tau * tau
            # binomial(2, k): 1, 2, 1
            tot = A[0] * B[0] + 2.0 * A[1] * B[1] + A[2] * B[2]
            tot *= wdirs[k]
            acc0 -= e0 * tot
            acc1 -= e1 * tot
            acc2 -= e2 * tot
        out[i, 0] = scale * acc0
        out[i, 1] = scale * acc1
        out[i, 2] = scale * acc2
    return out


def _as_star(domain) -> StarShaped:
    if isinstance(domain, StarShaped):
        return domain
    if isinstance(domain, Ball):
        raise TypeError("use _ball_star")
    raise GridError(f"domain of kind {getattr(domain, 'kind', '?')} is not star-shaped")


def _ball_star(domain: Ball, cfg: BogovskiiConfig) -> StarShaped:
    return StarShaped(domain.center, cfg.star_fraction * domain.radius, domain.radius)


def _padded_source(f: ScalarField, piece_mask: np.ndarray, fill: bool):
    data = np.where(piece_mask, f.data, 0.0)
    if fill and piece_mask.any():
        # nearest-cell values outside the piece keep interpolation second order up to the wall
        _, idx = ndimage.distance_transform_edt(~piece_mask, return_indices=True)
        data = data[tuple(idx)]
    fp = np.pad(data, 2, mode="edge" if fill else "constant")
    lo = np.asarray(f.grid.origin) + (0.5 - 2) * np.asarray(f.grid.spacing)
    return fp, lo


def _solve_piece(f: ScalarField, piece: StarShaped, piece_mask: np.ndarray, cfg: BogovskiiConfig) -> np.ndarray:
    g = f.grid
    if g.n != 3:
        raise ValueError("divergence solver implemented for n = 3")
    kern = BogovskiiKernel(piece.center, piece.star_radius, g.n)
    dirs, wdirs = sphere_rule(cfg.n_theta, cfg.n_phi)
    fp, lo = _padded_source(f, piece_mask, fill=piece.is_ball)
    xs = g.centers()[(slice(None), piece_mask)].T.copy()
    gt, gw = np.polynomial.legendre.leggauss(cfg.ray_nodes)
    rt, rw = np.polynomial.legendre.leggauss(cfg.radial_nodes)
    tmax = float(np.linalg.norm(np.asarray(g.upper) - np.asarray(g.origin)))
    R = piece.radius if piece.is_ball else 0.0
    w = _ray_solve(xs, dirs, wdirs, np.asarray(kern.center), kern.radius, kern.scale, fp, lo,
                   np.asarray(g.spacing, dtype=float), piece.is_ball, np.asarray(piece.center), float(R),
                   tmax, gt, gw, rt, rw, 0.5 * g.h)
    out = np.zeros((3,) + g.shape)
    for i in range(3):
        out[i][piece_mask] = w[:, i]
    return out


def _check_mean(f: ScalarField, tol: float):
    mean = float(np.sum(f.data[f.mask]) * f.grid.cell_volume)
    scale = float(np.sum(np.abs(f.data[f.mask])) * f.grid.cell_volume)
    if abs(mean) > tol * max(scale, 1e-300):
        raise MeanNotZero(mean, scale)


def solve_divergence(domain, f: ScalarField, cfg: BogovskiiConfig | None = None) -> VectorField:
    """``w`` with ``div w = f`` in the domain and ``w = 0`` outside it."""
    cfg = BogovskiiConfig() if cfg is None else cfg
    _check_mean(f, cfg.mean_tol)
    g = f.grid
    if isinstance(domain, StarUnion):
        domain.check(g)
        parts = split_mean_zero(domain, f)
        total = np.zeros((g.n,) + g.shape)
        for piece, pm, fk in zip(domain.pieces, domain.piece_masks(g), parts):
            if not piece.is_ball:
                piece.spot_check(g)
            total += _solve_piece(fk, piece, pm, cfg)
        return VectorField(g, f.domain, np.where(f.mask, total, 0.0), f.mask)
    piece = _ball_star(domain, cfg) if isinstance(domain, Ball) else _as_star(domain)
    if not piece.is_ball:
        piece.spot_check(g)
    pm = piece.mask(g) & f.mask
    w = _solve_piece(f, piece, pm, cfg)
    return VectorField(g, f.domain, w, f.mask)


def split_mean_zero(domain: StarUnion, f: ScalarField) -> list[ScalarField]:
    """Split a mean-zero ``f`` on a union into mean-zero pieces supported in each part.

    ``g_0 = f``; for k < N, with ``D_k`` the union of later pieces and ``F_k``
    the overlap of piece k with ``D_k``, ``f_k`` is ``g_{k-1}`` on piece k
    corrected by a constant on ``F_k``, and ``g_k`` carries the remainder to
    ``D_k``. ``f_N = g_{N-1}``.
    """
    g = f.grid
    masks = [m & f.mask for m in domain.piece_masks(g)]
    N = len(masks)
    vol = g.cell_volume
    out = []
    prev = np.where(f.mask, f.data, 0.0)
    for k in range(N - 1):
        omega_k = masks[k]
        D = np.logical_or.reduce(masks[k + 1:])
        F = omega_k & D
        size = float(F.sum()) * vol
        if size == 0:
            raise GridError(f"empty overlap between piece {k} and its successors")
        fk = np.where(omega_k, prev, 0.0) - np.where(F, np.sum(prev[omega_k]) * vol / size, 0.0)
        gk = np.where(D & ~F, prev, 0.0) - np.where(F, np.sum(prev[D & ~omega_k]) * vol / size, 0.0)
        out.append(f.with_data(fk))
        prev = gk
    out.append(f.with_data(prev))
    return out
