import numpy as np
import pytest
from hypothesis import given, strategies as st

from mzh import mzf
from mzh.grid import Ball, Box, Grid, LipschitzGraph, MaskDomain, ScalarField, VectorField


def _random_field(seed: int):
    rng = np.random.default_rng(seed)
    shape = tuple(int(s) for s in rng.integers(1, 9, size=3))
    g = Grid(shape, tuple(rng.normal(size=3)), tuple(rng.uniform(0.05, 2.0, size=3)))
    mask = rng.random(shape) < rng.uniform(0.2, 1.0)
    dom = MaskDomain(mask, {"kind": "random"})
    if rng.random() < 0.5:
        data = np.where(mask, rng.normal(size=shape) * 10.0 ** rng.integers(-300, 300), 0.0)
        return ScalarField(g, dom, data, mask)
    data = np.where(mask, rng.normal(size=(3,) + shape), 0.0)
    return VectorField(g, dom, data, mask)


def _same(a, b):
    assert type(a) is type(b)
    assert a.grid == b.grid
    assert np.array_equal(a.mask, b.mask)
    assert a.data.tobytes() == b.data.tobytes()


def test_round_trip_hundred_fields():
    for seed in range(100):
        f = _random_field(seed)
        _same(f, mzf.decode(mzf.encode(f)))


@given(st.integers(0, 2**32 - 1))
def test_round_trip_property(seed):
    f = _random_field(seed)
    blob = mzf.encode(f)
    assert mzf.encode(mzf.decode(blob)) == blob


def test_round_trip_keeps_special_values():
    g = Grid.cube(2, 0, 1)
    data = np.array([-0.0, 5e-324, 1.7976931348623157e308, -1e-310, 1.0, 2.0, 3.0, np.pi]).reshape(2, 2, 2)
    f = ScalarField(g, Box(), data)
    _same(f, mzf.decode(mzf.encode(f)))


def test_domain_descriptors_survive(tmp_path):
    g = Grid((4, 4, 6), (0.0, 0.0, -1.0), (0.5, 0.5, 0.5))
    sigma = 0.1 * np.arange(16.0).reshape(4, 4) / 16
    for dom in (Ball((1.0, 1.0, 0.5), 0.9), LipschitzGraph(sigma, 0.5)):
        f = ScalarField(g, dom, np.ones(g.shape))
        mzf.write(tmp_path / "f.mzf", f)
        back = mzf.read(tmp_path / "f.mzf")
        assert back.domain.descriptor() == dom.descriptor()
        _same(f, back)


def test_malformed_inputs_report_offsets():
    g = Grid.cube(3, 0, 1)
    blob = mzf.encode(ScalarField(g, Box(), np.ones(g.shape)))
    with pytest.raises(mzf.MZFFormatError) as e:
        mzf.decode(b"MZF2\n" + blob[5:])
    assert e.value.offset == 0
    with pytest.raises(mzf.MZFFormatError) as e:
        mzf.decode(blob[:-3])
    assert e.value.offset == blob.index(b"\n", 5) + 1
    with pytest.raises(mzf.MZFFormatError):
        mzf.decode(blob[:5] + b"{not json}\n" + blob[blob.index(b"\n", 5) + 1:])
    with pytest.raises(mzf.MZFFormatError):
        mzf.decode(b"MZF1\n{\"shape\": [2, 2, 2]")
    nan = blob[:-8] + np.array([np.nan], "<f8").tobytes()
    with pytest.raises(mzf.MZFFormatError) as e:
        mzf.decode(nan)
    assert e.value.offset == len(blob) - 8
