import math

import numpy as np
import pytest

from mzh import verify
from mzh.grid import Ball, Box, Grid, ScalarField, VectorField
from mzh.helmholtz import decompose_bounded_neumann
from mzh.norms import MorreyParams


@pytest.fixture(scope="module")
def family():
    return verify.random_bumps(Grid.cube(16, -2.0, 2.0), Box(), 6, seed=3)


def test_random_family_seeded(family):
    again = verify.random_bumps(Grid.cube(16, -2.0, 2.0), Box(), 6, seed=3)
    other = verify.random_bumps(Grid.cube(16, -2.0, 2.0), Box(), 6, seed=4)
    assert all(np.array_equal(a.data, b.data) for a, b in zip(family, again))
    assert not np.array_equal(family[0].data, other[0].data)


def test_identity_embedding_ratio_one(family):
    p = MorreyParams(3, 2.0, 1.0)
    rep = verify.check_embedding(family, p, p, "I")
    assert rep.samples == len(family)
    assert all(r == pytest.approx(1.0, rel=1e-14) for r in rep.ratios)


def test_embedding_scaling_relation_enforced(family):
    p0 = MorreyParams(3, 2.0, 1.0)
    with pytest.raises(ValueError, match="scaling relation"):
        verify.check_embedding(family, p0, MorreyParams(3, 2.0, 0.5), "I")
    with pytest.raises(ValueError):
        verify.check_embedding(family, p0, item="IV", kappa=0.5)


def test_report_pass_logic():
    rep = verify.InequalityReport("x", {}, [0.5, 1.2], threshold=1.3)
    assert rep.worst == 1.2 and rep.passed
    rep.threshold = 1.0
    assert not rep.passed
    assert not verify.InequalityReport("x", {}, [math.nan], threshold=2.0).passed
    assert not verify.InequalityReport("x", {}).passed


def test_poincare_filters_constants():
    g, ball = Grid.cube(16, -1.125, 1.125), Ball((0, 0, 0), 1.0)
    fam = verify.random_bumps(g, ball, 3, seed=1)
    p = MorreyParams(3, 2.0, 1.0)
    rep = verify.check_poincare(fam, p, "zero-mean")
    # raw bumps are not mean zero
    assert rep.skipped == 3 and rep.samples == 0
    rep = verify.check_poincare([verify.mean_zero(f) for f in fam], p, "zero-mean")
    assert rep.samples == 3
    cut = [verify.boundary_cutoff(f, (0, 0, 0), 1.0, 2 * g.h) for f in fam]
    rep = verify.check_poincare(cut, p, "zero-boundary")
    assert rep.samples == 3 and rep.skipped == 0
    rep = verify.check_poincare(fam, p, "zero-boundary")
    assert rep.skipped == 3


def test_poincare_modes_decrease():
    # higher oscillation means a smaller ||f|| / ||grad f||
    g = Grid.cube(24, -1.0, 1.0)
    x = g.centers()
    p = MorreyParams(3, 2.0, 1.0)
    modes = [verify.mean_zero(ScalarField(g, Box(), np.cos(k * np.pi * (x[0] + 1) / 2))) for k in (1, 2, 4)]
    r = verify.check_poincare(modes, p, "zero-mean").ratios
    assert r[0] > r[1] > r[2]


@pytest.fixture(scope="module")
def decompositions():
    g, ball = Grid.cube(14, -1.125, 1.125), Ball((0, 0, 0), 1.0)
    comps = verify.random_bumps(g, ball, 9, seed=2)
    return [decompose_bounded_neumann(VectorField.stack(comps[3 * i:3 * i + 3])) for i in range(3)]


def test_variational_skips_solenoidal(decompositions):
    p = MorreyParams(3, 2.0, 1.0)
    d = decompositions[0]
    zero = type(d)(d.p.with_data(np.zeros(d.p.grid.shape)), d.grad_p.with_data(np.zeros_like(d.grad_p.data)),
                   d.w, d.diagnostics)
    rep = verify.check_variational([zero] + decompositions, p, testset_size=8)
    assert rep.skipped == 1 and rep.samples == 3


def test_variational_monotone_in_testset(decompositions):
    # a larger test family can only raise the sup, hence lower the ratio
    p = MorreyParams(3, 2.0, 1.0)
    small = verify.check_variational(decompositions, p, testset_size=8, include_p=False).ratios
    big = verify.check_variational(decompositions, p, testset_size=16, include_p=False).ratios
    assert all(b <= s * (1 + 1e-12) for s, b in zip(small, big))


def test_block_upper_matches_library():
    from mzh.norms import block_norm_bounds
    g = Grid.cube(12, -1.0, 1.0)
    x = g.centers()
    f = ScalarField(g, Box(), np.where(np.abs(x[0]) < 0.5, np.exp(-x[1] ** 2), 0.0))
    p = MorreyParams(3, 2.0, 1.0).conjugate()
    assert verify._block_upper(f, p) == pytest.approx(block_norm_bounds(f, p)[1], rel=1e-10)


def test_check_operator_linear_scaling(family):
    p = MorreyParams(3, 2.0, 1.0)
    rep = verify.check_operator(family, lambda f: f.with_data(3 * f.data), p, p, "triple")
    assert all(r == pytest.approx(3.0, rel=1e-12) for r in rep.ratios)


def test_suite_reproducible_and_keyed():
    a = verify.run_suite("fractional", resolution=12, count=3)
    b = verify.run_suite("fractional", resolution=12, count=3)
    assert list(a) == ["fractional/fractional_delta1"]
    assert a["fractional/fractional_delta1"].ratios == b["fractional/fractional_delta1"].ratios
    key = verify.baseline_key("fractional", "fractional_delta1", 2.0, 1.0, 7, 12, 3)
    c = verify.run_suite("fractional", resolution=12, count=3, baselines={key: 100.0})
    assert c["fractional/fractional_delta1"].threshold == pytest.approx(100.0 * verify.REGRESSION_SLACK)
    with pytest.raises(ValueError):
        verify.run_suite("nonsense")


def test_stored_baselines_cover_default_config():
    base = verify.load_baselines()
    keys = [k for k in base if k.endswith("q=2.0/lam=1.0/seed=7/res=24/count=20")]
    suites = {k.split("/")[0] for k in keys}
    assert suites == set(verify.SUITES)
    assert all(math.isfinite(v) for v in base.values())
