"""Helmholtz decompositions ``u = grad p + w`` on full space, half-spaces and bounded masks."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.fft
import scipy.sparse as sp
from scipy import ndimage
from scipy.signal import fftconvolve

from ._ops import centered_curl, centered_divergence, full_convolve, interior_mask, workers
from .grid import Grid, HalfSpace, LipschitzGraph, ScalarField, VectorField
from .potentials import cz_table, gamma_table, hessian_gamma_kernel, riesz_projection_symbol, \
    surface_area, wavenumbers


class DecompositionError(ValueError):
    pass


class NeumannSolveError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class DecompositionResult:
    p: ScalarField
    grad_p: VectorField
    w: VectorField
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# face-based discrete gradient shared by the bounded solver and the weak residual


class FaceGradient:
    """Gradient from mask cells to interior faces; its adjoint is the weak divergence."""

    def __init__(self, grid: Grid, mask: np.ndarray):
        self.grid, self.mask = grid, mask
        self.index = -np.ones(grid.shape, dtype=np.int64)
        self.index[mask] = np.arange(int(mask.sum()))
        rows, cols, vals, self.faces = [], [], [], []
        f0 = 0
        for ax in range(grid.n):
            lo = [slice(None)] * grid.n
            hi = [slice(None)] * grid.n
            lo[ax], hi[ax] = slice(None, -1), slice(1, None)
            both = mask[tuple(lo)] & mask[tuple(hi)]
            a = self.index[tuple(lo)][both]
            b = self.index[tuple(hi)][both]
            m = len(a)
            r = np.arange(f0, f0 + m)
            h = grid.spacing[ax]
            rows += [r, r]
            cols += [a, b]
            vals += [np.full(m, -1 / h), np.full(m, 1 / h)]
            self.faces.append((ax, a, b, r))
            f0 += m
        self.nfaces = f0
        self.matrix = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                    shape=(f0, int(mask.sum())))

    def face_average(self, vec: np.ndarray) -> np.ndarray:
        """Normal component of a cell vector field averaged onto each interior face."""
        out = np.empty(self.nfaces)
        for ax, a, b, r in self.faces:
            comp = vec[ax][self.mask]
            out[r] = 0.5 * (comp[a] + comp[b])
        return out

    def cell_gradient(self, face_grad: np.ndarray, fallback: np.ndarray) -> np.ndarray:
        """Average the two faces of each cell per axis; missing faces take ``fallback``."""
        n = self.grid.n
        ncell = int(self.mask.sum())
        out = np.zeros((n,) + self.grid.shape)
        for ax, a, b, r in self.faces:
            acc = np.zeros(ncell)
            cnt = np.zeros(ncell)
            np.add.at(acc, a, face_grad[r])
            np.add.at(acc, b, face_grad[r])
            np.add.at(cnt, a, 1)
            np.add.at(cnt, b, 1)
            fb = fallback[ax][self.mask]
            acc += (2 - cnt) * fb
            out[ax][self.mask] = acc / 2
        return out


def default_testset(grid: Grid, mask: np.ndarray, size: int = 32, extra=(), taper: bool = False) -> list[np.ndarray]:
    """Polynomial and tensor-trigonometric test potentials on the mask's bounding box.

    ``taper`` multiplies each member by a smooth cutoff vanishing on the
    artificial faces of a truncated half-space (sides and top) but not on the
    wall, so the test functions are admissible for the unbounded problem.
    """
    x = grid.centers()
    idx = np.argwhere(mask)
    lo = np.asarray(grid.origin) + idx.min(axis=0) * np.asarray(grid.spacing)
    hi = np.asarray(grid.origin) + (idx.max(axis=0) + 1) * np.asarray(grid.spacing)
    c = (lo + hi) / 2
    L = hi - lo
    y = (x - c.reshape((-1,) + (1,) * grid.n)) / L.reshape((-1,) + (1,) * grid.n)
    out = [np.asarray(e, dtype=float) for e in extra]
    for i in range(grid.n):
        out.append(y[i].copy())
    for i in range(grid.n):
        for j in range(i, grid.n):
            out.append(y[i] * y[j])
    modes = sorted((m for m in product(range(3), repeat=grid.n) if any(m)), key=lambda m: (sum(m), m))
    for m in modes:
        term = np.ones(grid.shape)
        for i, k in enumerate(m):
            term = term * np.cos(np.pi * k * (y[i] + 0.5))
        out.append(term)
        if len(out) >= size:
            break
    if taper:
        cut = np.cos(np.pi * (y[-1] + 0.5) / 2) ** 2
        for i in range(grid.n - 1):
            cut = cut * np.cos(np.pi * y[i]) ** 2
        out = [t * cut for t in out]
    return [np.where(mask, t, 0.0) for t in out[:size]]


def weak_neumann_residual(p: ScalarField, u: VectorField, testset) -> float:
    """``max_phi |int (grad p - u) . grad phi| / ||grad phi||`` over the test potentials."""
    if len(testset) == 0:
        raise ValueError("empty test set")
    G = FaceGradient(p.grid, p.mask)
    vol = p.grid.cell_volume
    r = G.matrix @ p.data[p.mask] - G.face_average(u.data)
    worst = 0.0
    for phi in testset:
        phi = phi.data if isinstance(phi, ScalarField) else phi
        g = G.matrix @ phi[p.mask]
        nrm = np.sqrt(np.sum(g**2) * vol)
        if nrm == 0:
            continue
        worst = max(worst, abs(float(np.dot(r, g) * vol)) / nrm)
    return worst


def _jacobian_norm(u: VectorField) -> float:
    h = u.grid.spacing
    tot = sum(np.sum(np.gradient(u.data[i], h[j], axis=j) ** 2) for i in range(u.grid.n) for j in range(u.grid.n))
    return float(np.sqrt(tot * u.grid.cell_volume))


def _diagnostics(u: VectorField, p: ScalarField, grad_p: VectorField, w: VectorField, testset_size=32) -> dict:
    inner = interior_mask(u.mask)
    du = _jacobian_norm(u) or 1.0
    unorm = u.l2() or 1.0
    vol = u.grid.cell_volume
    div = centered_divergence(np.where(u.mask, w.data, 0.0), u.grid.spacing)
    curl = centered_curl(np.where(u.mask, grad_p.data, 0.0), u.grid.spacing)
    tests = default_testset(u.grid, u.mask, testset_size, taper=not u.domain.bounded)
    return {
        "div_w_norm": float(np.sqrt(np.sum(div[inner] ** 2) * vol)) / du,
        "curl_gradp_norm": float(np.sqrt(np.sum(curl[:, inner] ** 2) * vol)) / du,
        "weak_residual": float(weak_neumann_residual(p, u, tests)) / unorm,
    }


def _result(u, p_data, grad_data, extra=None):
    p_data = np.where(u.mask, p_data, 0.0)
    p_data = p_data - np.where(u.mask, p_data[u.mask].mean(), 0.0)
    p = ScalarField(u.grid, u.domain, p_data, u.mask)
    grad_p = u.with_data(grad_data)
    w = u.with_data(u.data - grad_p.data)
    diag = _diagnostics(u, p, grad_p, w)
    diag.update(extra or {})
    return DecompositionResult(p, grad_p, w, diag)


# ---------------------------------------------------------------------------
# full space


def decompose_fullspace_spectral(u: VectorField) -> DecompositionResult:
    """Per-mode Riesz projection on the periodic box."""
    g = u.grid
    axes = tuple(range(1, g.n + 1))
    with scipy.fft.set_workers(workers()):
        uhat = scipy.fft.rfftn(u.data, axes=axes)
        xi = wavenumbers(g, real_last=True, zero_nyquist=True)
        what = riesz_projection_symbol(uhat, xi)
        w = scipy.fft.irfftn(what, s=g.shape, axes=axes)
        k2 = sum(np.broadcast_to(k, uhat.shape[1:]) ** 2 for k in xi)
        dot = sum(np.broadcast_to(xi[i], uhat.shape[1:]) * uhat[i] for i in range(g.n))
        phat = np.where(k2 > 0, -1j * dot / np.where(k2 > 0, k2, 1), 0.0)
        p = scipy.fft.irfftn(phat, s=g.shape)
        # spectral divergence of the realised solenoidal field
        wh = scipy.fft.rfftn(w, axes=axes)
        divw = sum(1j * np.broadcast_to(xi[i], wh.shape[1:]) * wh[i] for i in range(g.n))
    unorm = float(np.sqrt(np.sum(np.abs(uhat) ** 2))) or 1.0
    kmax = float(np.sqrt(max(np.max(k2), 1.0)))
    grad = u.data - w
    res = _result(u, p, grad)
    res.diagnostics["spectral_div_w"] = float(np.sqrt(np.sum(np.abs(divw) ** 2))) / (kmax * unorm)
    return res


def spectral_project(data: np.ndarray, grid: Grid) -> np.ndarray:
    """Solenoidal projection of a periodic array field (no diagnostics)."""
    axes = tuple(range(1, grid.n + 1))
    with scipy.fft.set_workers(workers()):
        uhat = scipy.fft.rfftn(data, axes=axes)
        what = riesz_projection_symbol(uhat, wavenumbers(grid, real_last=True, zero_nyquist=True))
        return scipy.fft.irfftn(what, s=grid.shape, axes=axes)


def _check_support(u: VectorField, tol: float, faces):
    mag = u.magnitude()
    peak = float(mag.max())
    if peak == 0:
        return
    for ax, side in faces:
        sl = [slice(None)] * u.grid.n
        sl[ax] = 0 if side == 0 else -1
        if float(mag[tuple(sl)].max()) > tol * peak:
            raise DecompositionError(f"support of u touches the box boundary (axis {ax}, side {side})")


def decompose_fullspace_direct(u: VectorField, r_cut: float | None = None, support_tol: float = 1e-6,
                               refine: int = 4) -> DecompositionResult:
    """``grad p = p.v. (Hess Gamma) * u + u/n`` and ``p = Gamma * div u`` by lattice sums."""
    g = u.grid
    n = g.n
    _check_support(u, support_tol, [(ax, s) for ax in range(n) for s in (0, 1)])
    tables = {}
    for i in range(n):
        for j in range(i, n):
            tables[i, j] = cz_table(g, hessian_gamma_kernel(i, j, n), r_cut, refine)
    grad = np.zeros_like(u.data)
    for i in range(n):
        for j in range(n):
            grad[i] += full_convolve(u.data[j], tables[min(i, j), max(i, j)])
        grad[i] += u.data[i] / n
    div = centered_divergence(u.data, g.spacing)
    p = full_convolve(div, gamma_table(g))
    return _result(u, p, grad)


# ---------------------------------------------------------------------------
# half space


def _square_inverse_distance(a1, a2, b1, b2, z):
    """Exact ``int_[a1,a2]x[b1,b2] dx dy / sqrt(x^2 + y^2 + z^2)`` for ``z > 0``."""
    def F(x, y):
        r = np.sqrt(x * x + y * y + z * z)
        return (x * np.arcsinh(y / np.sqrt(x * x + z * z)) + y * np.arcsinh(x / np.sqrt(y * y + z * z))
                - z * np.arctan(x * y / (z * r)))
    return F(a2, b2) - F(a1, b2) - F(a2, b1) + F(a1, b1)


def _layer_table(grid: Grid) -> np.ndarray:
    """Cell-integrated weights of ``Gamma(x' - y', x_n)`` over wall squares, n = 3."""
    (s1, s2, N), (h1, h2, h3) = grid.shape, grid.spacing
    a = (np.arange(-(s1 - 1), s1) * h1)[:, None, None]
    b = (np.arange(-(s2 - 1), s2) * h2)[None, :, None]
    z = ((np.arange(N) + 0.5) * h3)[None, None, :]
    w = _square_inverse_distance(a - h1 / 2, a + h1 / 2, b - h2 / 2, b + h2 / 2, z)
    return -w / surface_area(3)


def _image_table(grid: Grid, reflection: int) -> np.ndarray:
    """Weights of ``reflection * Gamma(x - ybar)`` for the flipped source (see ``neumann_potential``)."""
    n = grid.n
    N = grid.shape[-1]
    axes = [np.arange(-(s - 1), s) * h for s, h in zip(grid.shape[:-1], grid.spacing[:-1])]
    k = np.arange(-(N - 1), N)
    axes.append((k + N) * grid.spacing[-1])
    d = np.stack(np.meshgrid(*axes, indexing="ij"))
    r = np.sqrt(np.sum(d**2, axis=0))
    return reflection * r ** (2 - n) / ((2 - n) * surface_area(n)) * grid.cell_volume


def neumann_potential(source: np.ndarray, grid: Grid, reflection: int = 1) -> np.ndarray:
    """``int_{x_n>0} [Gamma(x-y) + reflection * Gamma(x-ybar)] source(y) dy`` on the slab lattice."""
    direct = full_convolve(source, gamma_table(grid))
    image = full_convolve(source[..., ::-1], _image_table(grid, reflection))
    return direct + image


def _check_halfspace_grid(grid: Grid):
    if abs(grid.origin[-1]) > 1e-12 * grid.spacing[-1]:
        raise DecompositionError("half-space grids must start at x_n = 0")


def _flux_residual(p: np.ndarray, u: np.ndarray, h: float) -> float:
    """max over the wall of |dp/dn - u_n| from quadratic one-sided stencils, relative to max |u|."""
    dp = (-2 * p[..., 0] + 3 * p[..., 1] - p[..., 2]) / h
    un = (15 * u[-1][..., 0] - 10 * u[-1][..., 1] + 3 * u[-1][..., 2]) / 8
    peak = float(np.sqrt(np.sum(u**2, axis=0)).max()) or 1.0
    return float(np.max(np.abs(dp - un))) / peak


def decompose_halfspace(u: VectorField, reflection: int = 1, support_tol: float = 1e-6) -> DecompositionResult:
    """Image-kernel potential on the slab ``0 < x_n < H`` (n = 3).

    ``p = int N(x, y) div u_0(y) dy`` for the zero extension ``u_0``, split into
    the volume source ``div u`` and the wall layer ``u_n(y', 0)``. ``reflection=+1``
    uses ``N = Gamma(x-y) + Gamma(x-ybar)`` (zero-flux wall, the Neumann
    problem); ``-1`` gives the odd image, which carries no wall layer.
    """
    g = u.grid
    _check_halfspace_grid(g)
    n = g.n
    if n != 3:
        raise DecompositionError("half-space route is implemented for n = 3")
    _check_support(u, support_tol, [(n - 1, 1)])
    data = np.where(u.mask, u.data, 0.0)
    src = sum(np.gradient(data[ax], g.spacing[ax], axis=ax, edge_order=2) for ax in range(n))
    p = neumann_potential(src, g, reflection)
    if reflection == 1:
        un = (15 * data[-1][..., 0] - 10 * data[-1][..., 1] + 3 * data[-1][..., 2]) / 8
        with scipy.fft.set_workers(workers()):
            p += 2 * fftconvolve(np.repeat(un[..., None], g.shape[-1], axis=-1), _layer_table(g), mode="same", axes=(0, 1))
    grad = np.stack([np.gradient(p, g.spacing[ax], axis=ax, edge_order=2) for ax in range(n)])
    res = _result(u, p, grad)
    res.diagnostics["boundary_flux_residual"] = _flux_residual(p, data, g.spacing[-1])
    res.diagnostics["graph_slope"] = 0.0
    return res


def _column_shift(data: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Linear interpolation ``out[..., j] = data[..., j + shift]`` along the last axis, clamped."""
    N = data.shape[-1]
    base = np.floor(shift)
    frac = (shift - base)[..., None]
    j = np.arange(N) + base[..., None].astype(np.int64)
    lo = np.clip(j, 0, N - 1)
    hi = np.clip(j + 1, 0, N - 1)
    a = np.take_along_axis(data, np.broadcast_to(lo, data.shape), axis=-1)
    b = np.take_along_axis(data, np.broadcast_to(hi, data.shape), axis=-1)
    out = a * (1.0 - frac) + b * frac
    # beyond the top or below the bottom of the column: zero
    out = np.where((j < -1) | (j > N - 1), 0.0, out)
    return out


def graph_gradient(sigma: np.ndarray, spacing) -> np.ndarray:
    if sigma.ndim == 0:
        return np.zeros((0,))
    return np.stack([np.gradient(sigma, spacing[ax], axis=ax) if sigma.shape[ax] > 1 else np.zeros_like(sigma)
                     for ax in range(sigma.ndim)])


def decompose_bent_halfspace(u: VectorField, domain: LipschitzGraph | None = None,
                             max_slope: float = 0.2, reflection: int = 1) -> DecompositionResult:
    """Flatten ``x_n > sigma(x')`` by ``y = (x', x_n - sigma(x'))``, decompose, map back.

    The field is pulled back as a covector (``u' + grad sigma u_n``, ``u_n``)
    so gradients stay gradients; ``p`` and its gradient are pushed forward by
    the chain rule.
    """
    domain = u.domain if domain is None else domain
    if not isinstance(domain, LipschitzGraph):
        raise DecompositionError("bent half-space needs a LipschitzGraph domain")
    g = u.grid
    n = g.n
    sigma = domain.sigma
    dsig = graph_gradient(sigma, g.spacing)
    slope = float(np.sqrt(np.sum(dsig**2, axis=0)).max()) if dsig.size else 0.0
    if slope > max_slope:
        raise DecompositionError(f"graph slope {slope:.4g} exceeds the threshold {max_slope}")
    if not np.any(sigma) and g.origin[-1] == 0.0:
        # identity flattening map
        return decompose_halfspace(u, reflection)
    h = g.spacing[-1]
    flat = Grid(g.shape, g.origin[:-1] + (0.0,), g.spacing)
    pulled = np.where(u.mask, u.data, 0.0)
    cov = pulled.copy()
    for i in range(n - 1):
        cov[i] = pulled[i] + dsig[i][..., None] * pulled[-1]
    shift_in = (sigma - g.origin[-1]) / h
    flat_u = np.stack([_column_shift(cov[i], shift_in) for i in range(n)])
    fu = VectorField(flat, HalfSpace(), flat_u)
    fres = decompose_halfspace(fu, reflection)
    shift_out = (g.origin[-1] - sigma) / h
    p = _column_shift(fres.p.data, shift_out)
    fg = np.stack([_column_shift(fres.grad_p.data[i], shift_out) for i in range(n)])
    grad = fg.copy()
    for i in range(n - 1):
        grad[i] = fg[i] - dsig[i][..., None] * fg[-1]
    res = _result(u, p, grad)
    res.diagnostics["boundary_flux_residual"] = fres.diagnostics["boundary_flux_residual"]
    res.diagnostics["graph_slope"] = slope
    return res


# ---------------------------------------------------------------------------
# bounded domains: weak Neumann problem


def conjugate_gradient(A, b, tol=1e-10, maxiter=None, project_mean=True):
    """CG for the semidefinite Neumann system; iterates kept mean-zero."""
    maxiter = 10 * len(b) if maxiter is None else maxiter
    x = np.zeros_like(b)
    if project_mean:
        b = b - b.mean()
    r = b.copy()
    d = r.copy()
    rr = float(r @ r)
    bnorm = np.sqrt(rr)
    history = [1.0]
    if bnorm == 0:
        return x, history
    for _ in range(maxiter):
        Ad = A @ d
        alpha = rr / float(d @ Ad)
        x += alpha * d
        r -= alpha * Ad
        if project_mean:
            r -= r.mean()
        rr_new = float(r @ r)
        history.append(np.sqrt(rr_new) / bnorm)
        if history[-1] <= tol:
            break
        d = r + (rr_new / rr) * d
        rr = rr_new
    else:
        raise NeumannSolveError(f"CG did not reach {tol:g} in {maxiter} iterations", history)
    if project_mean:
        x -= x.mean()
    return x, history


def decompose_bounded_neumann(u: VectorField, tol: float = 1e-10, maxiter: int | None = None) -> DecompositionResult:
    """Discrete weak Neumann problem ``(grad p, grad phi) = (u, grad phi)`` by CG.

    The 2n+1-point Laplacian comes from face gradients between mask cells;
    boundary faces carry no unknown flux (natural boundary condition).
    """
    mask = u.mask
    _, count = ndimage.label(mask)
    if count != 1:
        raise DecompositionError(f"mask has {count} connected components; expected one")
    G = FaceGradient(u.grid, mask)
    A = (G.matrix.T @ G.matrix).tocsr()
    b = G.matrix.T @ G.face_average(u.data)
    x, history = conjugate_gradient(A, b, tol, maxiter)
    p = np.zeros(u.grid.shape)
    p[mask] = x
    grad = G.cell_gradient(G.matrix @ x, u.data)
    res = _result(u, p, grad)
    wf = G.face_average(u.data) - G.matrix @ x
    bnorm = float(np.linalg.norm(b)) or 1.0
    res.diagnostics.update({
        "weak_divergence": float(np.linalg.norm(G.matrix.T @ wf)) / bnorm,
        "boundary_flux_residual": 0.0,
        "cg_iterations": len(history) - 1,
        "cg_history": history,
    })
    return res


def decompose(u: VectorField, kind: str, **kw) -> DecompositionResult:
    routes = {
        "fullspace": decompose_fullspace_spectral,
        "fullspace_spectral": decompose_fullspace_spectral,
        "fullspace_direct": decompose_fullspace_direct,
        "halfspace": decompose_halfspace,
        "bent": decompose_bent_halfspace,
        "bounded": decompose_bounded_neumann,
    }
    if kind not in routes:
        raise ValueError(f"unknown decomposition route {kind!r}")
    return routes[kind](u, **kw)
