import math

import numpy as np
import pytest
from scipy import integrate

from mzh.extension import (Chart, IllConditionedWeight, RayExitsBox, extend_glued, extend_special_lipschitz,
                           moment_weight, regularized_distance)
from mzh.grid import Grid, GridError, LipschitzGraph, ScalarField
from mzh.verify import extension_setup


def _box(N, top=2.5):
    h = 2.0 / N
    return Grid((N, N, int(round((top + 0.5) / h))), (-1.0, -1.0, -0.5), (h, h, h))


def _wavy(grid):
    X, Y = np.meshgrid(*grid.axes()[:2], indexing="ij")
    return LipschitzGraph(0.1 * np.sin(np.pi * X) * np.cos(np.pi * Y / 2), 0.1 * np.pi * 1.2)


# ---------------------------------------------------------------------------
# psi


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("K,T", [(0, 3.0), (1, 2.5), (3, 6.0)])
def test_psi_moments(K, T):
    psi = moment_weight(K, T)
    # independent of both the solve and the rule: plain quad on psi itself
    for k in range(K + 1):
        val = integrate.quad(lambda t: t**k * float(psi(t)), 1.0, T, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
        assert val == pytest.approx(1.0 if k == 0 else 0.0, abs=1e-10)
    t, c = psi.rule()
    for k in range(K + 1):
        assert np.sum(c * t**k) == pytest.approx(1.0 if k == 0 else 0.0, abs=1e-10)


def test_psi_support_and_sign():
    psi = moment_weight(0, 3.0)
    assert psi(0.5) == 0 and psi(3.5) == 0
    # a vanishing first moment forces a sign change
    t = np.linspace(1.01, 2.49, 400)
    v = moment_weight(1, 2.5)(t)
    assert v.min() < 0 < v.max()


def test_psi_ill_conditioned():
    with pytest.raises(IllConditionedWeight):
        moment_weight(12, 400.0, max_condition=1e8)
    with pytest.raises(ValueError):
        moment_weight(2, 3.0, basis=2)


# ---------------------------------------------------------------------------
# regularised distance


def test_flat_graph_distance_exact():
    g = _box(16)
    rd = regularized_distance(LipschitzGraph(np.zeros(g.shape[:2]), 0.0), g)
    z = g.centers()[-1]
    assert np.allclose(rd.theta[rd.complement], -z[rd.complement], atol=1e-14)
    assert rd.c1 == pytest.approx(1.0, abs=1e-12)
    assert rd.c2 == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("N", [16, 32])
def test_sawtooth_constants(N):
    g = _box(N)
    X, Y = np.meshgrid(*g.axes()[:2], indexing="ij")
    M = 0.5
    saw = M * np.abs(((X + 1) % 0.5) - 0.25)
    rd = regularized_distance(LipschitzGraph(saw, M + 1e-9), g)
    assert rd.c1 >= 1 / math.sqrt(1 + M * M) - 1e-6
    assert rd.c2 <= 1 + rd.eps
    # m theta dominates the vertical gap
    gap = (saw[..., None] - g.centers()[-1])[rd.complement]
    assert np.all(rd.m * rd.theta[rd.complement] >= gap)


# ---------------------------------------------------------------------------
# extension


@pytest.fixture(scope="module")
def wavy_setup():
    grid, dom = extension_setup(24)
    return grid, dom, regularized_distance(dom, grid, brute_force=False)


def test_restriction_and_constants(wavy_setup):
    g, dom, rd = wavy_setup
    psi = moment_weight(1, 2.5)
    x = g.centers()
    f = ScalarField(g, dom, np.sin(2 * x[0]) + x[2] ** 2)
    E, _ = extend_special_lipschitz(f, psi, rd)
    assert np.array_equal(E.data[f.mask], f.data[f.mask])
    one, rep = extend_special_lipschitz(ScalarField(g, dom, np.ones(g.shape)), psi, rd)
    assert np.max(np.abs(one.data - 1)) <= 1e-10


def test_linear_in_xn_reproduced(wavy_setup):
    # K >= 1 reflects polynomials of degree one along the rays
    g, dom, rd = wavy_setup
    x = g.centers()
    f = ScalarField(g, dom, 1.0 + 0.7 * x[2] + x[0])
    E, rep = extend_special_lipschitz(f, moment_weight(1, 2.5), rd)
    ok = ~rep["fallback_mask"]
    exact = 1.0 + 0.7 * x[2] + x[0]
    assert np.max(np.abs(E.data - exact)[ok]) < 1e-10


def test_ray_exits_box():
    g = _box(16, top=0.5)
    dom = _wavy(g)
    rd = regularized_distance(dom, g, brute_force=False)
    f = ScalarField(g, dom, np.ones(g.shape))
    with pytest.raises(RayExitsBox) as err:
        extend_special_lipschitz(f, moment_weight(1, 6.0), rd)
    assert err.value.needed > 0


def test_normal_jump_first_order():
    errs, hs = [], []
    for N in (16, 32):
        g = _box(N)
        dom = _wavy(g)
        rd = regularized_distance(dom, g, brute_force=False)
        x = g.centers()
        smooth = np.cos(x[0]) * np.exp(x[2]) + x[1]
        E, _ = extend_special_lipschitz(ScalarField(g, dom, smooth), moment_weight(1, 2.5), rd)
        k = np.argmax(rd.complement == 0, axis=-1)
        i, j = np.indices(k.shape)
        below = (i, j, k - 1)
        errs.append(float(np.max(np.abs(E.data[below] - smooth[below]))))
        hs.append(g.h)
    assert errs[0] <= 1.5 * hs[0] and errs[1] <= 1.5 * hs[1]
    assert errs[0] / errs[1] >= 1.6


def test_single_chart_glue_matches_direct(wavy_setup):
    g, dom, rd = wavy_setup
    psi = moment_weight(1, 2.5)
    x = g.centers()
    f = ScalarField(g, dom, np.exp(-x[0] ** 2 - (x[2] - 0.5) ** 2))
    direct, _ = extend_special_lipschitz(f, psi, rd)
    chart = Chart(np.eye(3), np.zeros(3), g, dom, lambda *x: 1.0)
    glued, _ = extend_glued(f, [chart], lambda *x: 1.0, lambda *x: 0.0, psi)
    assert np.max(np.abs(glued.data - direct.data)) < 1e-12


def test_glue_rejects_bad_partition(wavy_setup):
    g, dom, _ = wavy_setup
    f = ScalarField(g, dom, np.ones(g.shape))
    chart = Chart(np.eye(3), np.zeros(3), g, dom, lambda *x: 0.5)
    psi = moment_weight(0, 3.0)
    with pytest.raises(GridError):
        extend_glued(f, [chart], lambda *x: 1.0, lambda *x: 0.0, psi)
    with pytest.raises(GridError):
        extend_glued(f, [chart], lambda *x: 0.6, lambda *x: 0.6, psi)
