import numpy as np
import pytest

from mzh.grid import Ball, Box, Grid, HalfSpace, LipschitzGraph, VectorField, build_vector_field
from mzh import helmholtz as H


def rel(a, b):
    return a.l2() / b.l2()


def _gauss(c=(0.0, 0.0, 0.0), a=1.0):
    def E(x, y, z):
        return np.exp(-a * ((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2))
    return E


def grad_gauss(c=(0.0, 0.0, 0.0), a=1.0):
    E = _gauss(c, a)
    return lambda x, y, z: (-2 * a * (x - c[0]) * E(x, y, z), -2 * a * (y - c[1]) * E(x, y, z),
                            -2 * a * (z - c[2]) * E(x, y, z))


def swirl(c=(0.0, 0.0, 0.0), a=1.0):
    E = _gauss(c, a)
    return lambda x, y, z: (-(y - c[1]) * E(x, y, z), (x - c[0]) * E(x, y, z), 0 * z)


def slab(N, top=6.0, width=4.0):
    h = width / N
    return Grid((N, N, int(round(top / h))), (-width / 2, -width / 2, 0.0), (h, h, h))


def random_band_limited(g, seed, kmax=6):
    rng = np.random.default_rng(seed)
    x = g.centers()
    L = np.asarray(g.upper) - np.asarray(g.origin)
    data = np.zeros((3,) + g.shape)
    for _ in range(12):
        k = rng.integers(-kmax, kmax + 1, size=3)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.normal(size=3)
        arg = sum(2 * np.pi * k[i] * x[i] / L[i] for i in range(3)) + phase
        data += amp[:, None, None, None] * np.cos(arg)
    return VectorField(g, Box(), data)


# ---------------------------------------------------------------------------
# full space


def test_spectral_annihilation_pair():
    g = Grid.cube(32, -5, 5)
    u = build_vector_field(g, Box(), grad_gauss())
    assert rel(H.decompose_fullspace_spectral(u).w, u) <= 1e-3
    s = build_vector_field(g, Box(), swirl())
    assert rel(H.decompose_fullspace_spectral(s).grad_p, s) <= 1e-3


def test_spectral_projection_identities():
    g = Grid.cube(16, 0, 1)
    for seed in range(3):
        u = random_band_limited(g, seed)
        res = H.decompose_fullspace_spectral(u)
        assert res.diagnostics["spectral_div_w"] <= 1e-12
        Pu = res.w.data
        assert np.sqrt(np.sum((H.spectral_project(Pu, g) - Pu) ** 2)) <= 1e-12 * np.sqrt(np.sum(u.data**2))


def test_spectral_orthogonality():
    g = Grid.cube(16, 0, 1)
    u = random_band_limited(g, 9)
    res = H.decompose_fullspace_spectral(u)
    dot = np.sum(res.w.data * res.grad_p.data)
    assert abs(dot) <= 1e-10 * np.sum(u.data**2)


def test_direct_route_annihilation_and_agreement():
    g = Grid.cube(32, -5, 5)
    u = build_vector_field(g, Box(), grad_gauss())
    d = H.decompose_fullspace_direct(u)
    assert rel(d.w, u) <= 0.05
    s = build_vector_field(g, Box(), swirl())
    assert rel(H.decompose_fullspace_direct(s).grad_p, s) <= 0.05
    sp = H.decompose_fullspace_spectral(u)
    inner = H.interior_mask(u.mask, 2)
    err = np.sqrt(np.sum((d.grad_p.data - sp.grad_p.data)[:, inner] ** 2) / np.sum(u.data[:, inner] ** 2))
    assert err <= 0.03


def test_direct_curl_second_order():
    vals = []
    for N in (16, 32):
        g = Grid.cube(N, -5, 5)
        u = build_vector_field(g, Box(), lambda x, y, z: tuple(a + b for a, b in zip(grad_gauss()(x, y, z), swirl()(x, y, z))))
        vals.append(H.decompose_fullspace_direct(u).diagnostics["curl_gradp_norm"])
    assert vals[1] < 0.05
    assert vals[0] / vals[1] > 3.0


def test_direct_rejects_support_on_boundary():
    g = Grid.cube(16, -1, 1)
    u = build_vector_field(g, Box(), grad_gauss())
    with pytest.raises(H.DecompositionError):
        H.decompose_fullspace_direct(u)


# ---------------------------------------------------------------------------
# half space


def test_halfspace_annihilation_pair():
    g = slab(32)
    s = build_vector_field(g, HalfSpace(), swirl((0, 0, 1.5), 2.0))
    assert rel(H.decompose_halfspace(s).grad_p, s) <= 0.05
    u = build_vector_field(g, HalfSpace(), grad_gauss((0, 0, 1.5), 2.0))
    assert rel(H.decompose_halfspace(u).w, u) <= 0.05


def test_halfspace_flux_residual_refines():
    res = []
    for N in (16, 32):
        u = build_vector_field(slab(N), HalfSpace(), grad_gauss((0, 0, 0.3), 2.0))
        res.append(H.decompose_halfspace(u).diagnostics["boundary_flux_residual"])
    assert res[0] / res[1] >= 1.7


def test_halfspace_odd_image_dirichlet_wall():
    g = slab(24)
    u = build_vector_field(g, HalfSpace(), grad_gauss((0.2, -0.1, 1.0), 2.0))
    p = H.decompose_halfspace(u, reflection=-1).p
    even = H.decompose_halfspace(u).p
    # odd image: p ~ 0 at the wall (after removing the mean gauge)
    wall_odd = np.abs(p.data[..., 0] - p.data[..., -1].mean()).max()
    assert wall_odd < np.abs(even.data[..., 0] - even.data[..., -1].mean()).max()


def test_halfspace_grid_must_start_at_wall():
    g = Grid((8, 8, 12), (-1.0, -1.0, 0.5), (0.25, 0.25, 0.25))
    u = build_vector_field(g, HalfSpace(), grad_gauss((0, 0, 2.0), 2.0))
    with pytest.raises(H.DecompositionError):
        H.decompose_halfspace(u)


def test_layer_cell_integral_matches_cubature():
    from scipy import integrate
    for a1, a2, b1, b2, z in [(-.5, .5, -.5, .5, .5), (0.5, 1.5, -0.5, 0.5, 0.5), (-2, -1, 0.3, 1.1, 0.1)]:
        ref = integrate.dblquad(lambda y, x: 1 / np.sqrt(x * x + y * y + z * z), a1, a2, b1, b2, epsabs=1e-12)[0]
        assert H._square_inverse_distance(a1, a2, b1, b2, z) == pytest.approx(ref, rel=1e-9)


def test_bent_flat_graph_is_bitwise_halfspace():
    g = slab(16)
    f = lambda x, y, z: tuple(a + b for a, b in zip(grad_gauss((0, 0, 1.5), 2.0)(x, y, z), swirl((0.2, 0, 1.2), 2.0)(x, y, z)))
    r0 = H.decompose_halfspace(build_vector_field(g, HalfSpace(), f))
    rb = H.decompose_bent_halfspace(build_vector_field(g, LipschitzGraph(np.zeros(g.shape[:2])), f))
    for a, b in ((r0.p, rb.p), (r0.grad_p, rb.grad_p), (r0.w, rb.w)):
        assert a.data.tobytes() == b.data.tobytes()
    assert r0.diagnostics == rb.diagnostics


def test_bent_gradient_and_residual_sweep():
    g = slab(32)
    X, Y = np.meshgrid(*g.axes()[:2], indexing="ij")
    E = _gauss((0.3, -0.2, 1.4), 3.0)
    generic = lambda x, y, z: (E(x, y, z), 0.5 * E(x, y, z), E(x, y, z) * (1 + x))
    slopes, resid = [], []
    for A in (0.0, 0.025, 0.05, 0.1, 0.2):
        dom = LipschitzGraph(A * np.sin(1.3 * X + 0.4) * np.cos(0.9 * Y - 0.2))
        r = H.decompose_bent_halfspace(build_vector_field(g, dom, generic), max_slope=1.0)
        slopes.append(r.diagnostics["graph_slope"])
        resid.append(r.diagnostics["weak_residual"])
        ug = build_vector_field(g, dom, grad_gauss((0, 0, 1.5), 2.0))
        rg = H.decompose_bent_halfspace(ug, max_slope=1.0)
        assert rel(rg.w, ug) <= 0.05 + 0.1 * slopes[-1]
    slopes, resid = np.array(slopes), np.array(resid)
    k, c = np.polyfit(slopes, resid, 1)
    fit = k * slopes + c
    r2 = 1 - np.sum((resid - fit) ** 2) / np.sum((resid - resid.mean()) ** 2)
    assert k > 0
    assert r2 > 0.97


def test_bent_slope_threshold():
    g = slab(16)
    X, _ = np.meshgrid(*g.axes()[:2], indexing="ij")
    dom = LipschitzGraph(0.5 * np.sin(2 * X))
    u = build_vector_field(g, dom, grad_gauss((0, 0, 2.0), 2.0))
    with pytest.raises(H.DecompositionError):
        H.decompose_bent_halfspace(u)


# ---------------------------------------------------------------------------
# bounded


def _trig_gradient(x, y, z):
    return np.cos(x) * np.sin(y) * z, np.sin(x) * np.cos(y) * z, np.sin(x) * np.sin(y) + 0 * z


@pytest.mark.parametrize("dom,lo", [(Box(), -1.0), (Ball((0.0, 0.0, 0.0), 1.0), -1.1)])
def test_bounded_gradient_converges(dom, lo):
    errs = []
    for N in (12, 24, 48):
        u = build_vector_field(Grid.cube(N, lo, -lo), dom, _trig_gradient)
        r = H.decompose_bounded_neumann(u)
        assert r.diagnostics["weak_residual"] <= 1e-8
        errs.append(rel(r.w, u))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.0)


def test_bounded_swirl_and_gauge():
    g = Grid.cube(24, -4, 4)
    s = build_vector_field(g, Box(), swirl())
    r = H.decompose_bounded_neumann(s)
    assert rel(r.grad_p, s) <= 0.05
    G = H.FaceGradient(g, s.mask)
    x = r.p.data[s.mask]
    shifted = G.matrix @ (x + 3.0)
    assert np.max(np.abs(shifted - G.matrix @ x)) <= 1e-12 * np.max(np.abs(G.matrix @ x))
    assert np.allclose(G.cell_gradient(shifted, s.data), r.grad_p.data, rtol=0, atol=1e-12)


def test_bounded_rejects_disconnected_mask():
    g = Grid.cube(12, -1, 1)
    mask = np.zeros(g.shape, dtype=bool)
    mask[1:4, 1:4, 1:4] = True
    mask[7:10, 7:10, 7:10] = True
    u = VectorField(g, Box(), np.ones((3,) + g.shape), mask)
    with pytest.raises(H.DecompositionError):
        H.decompose_bounded_neumann(u)


def test_bounded_cg_failure_keeps_history():
    g = Grid.cube(16, -1, 1)
    u = build_vector_field(g, Box(), _trig_gradient)
    with pytest.raises(H.NeumannSolveError) as err:
        H.decompose_bounded_neumann(u, maxiter=3)
    assert len(err.value.history) == 4


def test_weak_residual_affine_and_probe():
    g = Grid.cube(12, -1, 1)
    dom = Ball((0.0, 0.0, 0.0), 0.95)
    u = build_vector_field(g, dom, _trig_gradient)
    r = H.decompose_bounded_neumann(u)
    psi = np.where(u.mask, g.centers()[0] ** 2, 0.0)
    tests = [psi]
    # residual of p + t psi against the single test psi is |t| * ||grad psi|| (affine through the solution)
    vals = [H.weak_neumann_residual(r.p.with_data(r.p.data + t * psi), u, tests) for t in (0.0, 1.0, 2.0, 3.0)]
    assert vals[0] < 1e-12
    assert np.allclose(np.diff(vals[1:]), vals[1] - vals[0], rtol=1e-9)
    # testset {p}: the pairing equals the face-gradient quadrature of |grad p|^2
    G = H.FaceGradient(g, u.mask)
    gp = G.matrix @ r.p.data[u.mask]
    zero = u.with_data(np.zeros_like(u.data))
    probe = H.weak_neumann_residual(r.p, zero, [r.p.data])
    assert probe == pytest.approx(np.sqrt(np.sum(gp**2) * g.cell_volume), rel=1e-12)
    with pytest.raises(ValueError):
        H.weak_neumann_residual(r.p, u, [])


def test_dispatch():
    g = Grid.cube(12, -1, 1)
    u = build_vector_field(g, Box(), _trig_gradient)
    assert H.decompose(u, "bounded").diagnostics["cg_iterations"] > 0
    with pytest.raises(ValueError):
        H.decompose(u, "nowhere")
