import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anosov_lab import torus_core as tc
from anosov_lab.fields import GridField, eval_trig


def _trig(p):
    x, y = p[..., 0], p[..., 1]
    return np.cos(2 * math.pi * (2 * x - y)) + 0.5 * np.sin(2 * math.pi * 3 * y) - 0.25


def _trig_grad(p):
    x, y = p[..., 0], p[..., 1]
    s = -2 * math.pi * np.sin(2 * math.pi * (2 * x - y))
    return np.stack([2 * s, -s + 0.5 * 6 * math.pi * np.cos(2 * math.pi * 3 * y)], axis=-1)


def test_spectral_evaluation_is_exact_for_trig_polynomials(rng):
    g = GridField.from_function(_trig, 32, cutoff=8)
    p = rng.random((200, 2))
    assert np.max(np.abs(g(p) - _trig(p))) < 1e-13
    assert np.max(np.abs(g.gradient(p) - _trig_grad(p))) < 1e-11


def test_cubic_fallback_is_accurate(rng):
    g = GridField.from_function(_trig, 256)
    p = rng.random((200, 2))
    assert np.max(np.abs(g(p, method="cubic") - _trig(p))) < 1e-4


def test_grid_values_are_reproduced():
    g = GridField.from_function(_trig, 16, cutoff=7)
    assert np.allclose(g(tc.grid_points(16)), g.values, atol=1e-13)


def test_from_coefficients_roundtrip(rng):
    F = 4
    c = rng.standard_normal((2 * F + 1, 2 * F + 1)) + 1j * rng.standard_normal((2 * F + 1, 2 * F + 1))
    c = 0.5 * (c + np.conj(c[::-1, ::-1]))  # real field
    g = GridField.from_coefficients(c, 16)
    back = GridField.from_values(g.values, F)
    assert np.allclose(back.coef, c, atol=1e-13)
    p = rng.random((20, 2))
    assert np.allclose(eval_trig(c, p), g(p), atol=1e-12)


def test_arithmetic_and_map():
    a = GridField.from_function(_trig, 16, cutoff=4)
    b = GridField.from_function(lambda p: p[..., 0] * 0 + 1.0, 16, cutoff=4)
    s = a + b
    assert np.allclose(s.values, a.values + 1)
    assert np.allclose((a - a).values, 0)
    assert (-a).sup_norm() == a.sup_norm()
    e = a.map(np.exp)
    assert np.allclose(e.values, np.exp(a.values))


def test_validation():
    with pytest.raises(ValueError):
        GridField(np.zeros((4, 5)))
    with pytest.raises(ValueError):
        GridField.from_values(np.zeros((8, 8)), cutoff=4)
    with pytest.raises(ValueError):
        GridField.zeros(8).evaluate(np.zeros((1, 2)), method="linear")


@settings(max_examples=15, deadline=None)
@given(N=st.sampled_from([4, 8, 16]), with_coef=st.booleans(), mean=st.floats(-3, 3))
def test_binary_roundtrip(N, with_coef, mean):
    rng = np.random.default_rng(N)
    vals = rng.standard_normal((N, N))
    g = GridField.from_values(vals, N // 2 - 1, mean) if with_coef else GridField(vals, None, mean)
    h = GridField.from_bytes(g.to_bytes())
    assert np.array_equal(h.values, g.values)
    assert h.mean == g.mean
    if with_coef:
        assert np.array_equal(h.coef, g.coef)
    else:
        assert h.coef is None


def test_file_roundtrip_and_header(tmp_path):
    g = GridField.from_function(_trig, 8, cutoff=3)
    g.save(tmp_path / "g.grid")
    raw = (tmp_path / "g.grid").read_bytes()
    assert raw.startswith(b"GRIDFIELD 1 N=8 F=3 ")
    assert np.array_equal(GridField.load(tmp_path / "g.grid").values, g.values)
    with pytest.raises(ValueError):
        GridField.from_bytes(b"not a field")
