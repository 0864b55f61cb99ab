import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from anosov_lab import torus_core as tc
from anosov_lab.errors import ModelError

coords = arrays(np.float64, (5, 2), elements=st.floats(-50, 50, allow_nan=False))
shifts = arrays(np.int64, (5, 2), elements=st.integers(-5, 5))


@given(coords)
def test_reduce_lands_in_unit_square(x):
    r = tc.reduce(x)
    assert np.all(r >= 0) and np.all(r < 1)
    assert np.allclose(np.rint(x - r), x - r, atol=1e-9)


@given(coords, coords)
def test_distance_is_symmetric_and_bounded(p, q):
    d = tc.distance(p, q)
    assert np.allclose(d, tc.distance(q, p))
    assert np.all(d <= math.sqrt(0.5) + 1e-12)


@given(coords, shifts)
def test_distance_invariant_under_integer_shifts(p, c):
    q = np.full_like(p, 0.25)
    assert np.allclose(tc.distance(p + c, q), tc.distance(p, q), atol=1e-9)


def test_grid_points_layout():
    g = tc.grid_points(4)
    assert g.shape == (4, 4, 2)
    assert np.allclose(g[1, 2], [0.25, 0.5])


def test_cat_map_splitting():
    sp = tc.eigen_split(tc.CAT_MATRIX)
    assert sp.mu_u == pytest.approx(2 + math.sqrt(2), abs=1e-14)
    assert sp.mu_s == pytest.approx(2 - math.sqrt(2), abs=1e-14)
    assert sp.lambda_u == pytest.approx(1.227947177299515, abs=1e-12)
    assert sp.lambda_s == pytest.approx(-0.534799996739570, abs=1e-12)
    A = np.array(tc.CAT_MATRIX, dtype=float)
    assert np.allclose(A @ sp.e_u, sp.mu_u * sp.e_u)
    assert np.allclose(A @ sp.e_s, sp.mu_s * sp.e_s)


@pytest.mark.parametrize("name", ["linear", "conjugated", "trig02", "trig05"])
@settings(max_examples=20, deadline=None)
@given(u=arrays(np.float64, (4, 2), elements=st.floats(-3, 3)), c=shifts.map(lambda a: a[:4]))
def test_lift_is_homotopic_to_linear_part(request, name, u, c):
    f = request.getfixturevalue(name)
    lhs = f.lift_apply(u + c) - f.lift_apply(u)
    assert np.allclose(lhs, c @ f.A.T, atol=1e-10)


@pytest.mark.parametrize("name", ["linear", "conjugated", "trig05"])
def test_preimages_map_back(request, name, rng):
    f = request.getfixturevalue(name)
    y = rng.random((30, 2))
    pre = f.preimages(y)
    assert pre.shape == (30, f.degree, 2)
    for c in range(f.degree):
        assert np.max(tc.distance(f.apply(pre[:, c]), y)) < 1e-11
    # the k preimages are distinct points
    assert np.min(tc.distance(pre[:, 0], pre[:, 1])) > 1e-3


@pytest.mark.parametrize("name", ["linear", "conjugated", "trig05"])
def test_invert_lift_roundtrip(request, name, rng):
    f = request.getfixturevalue(name)
    u = rng.uniform(-20, 20, (50, 2))
    assert np.allclose(f.invert_lift(f.lift_apply(u)), u, atol=1e-10)


def test_jacobian_matches_finite_differences(trig05, rng):
    u = rng.random((10, 2))
    h = 1e-6
    J = trig05.lift_jacobian(u)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (trig05.lift_apply(u + e) - trig05.lift_apply(u - e)) / (2 * h)
        assert np.allclose(J[..., :, j], fd, atol=1e-8)


def test_conjugated_model_intertwines_warp(conjugated, rng):
    v = rng.random((100, 2))
    lhs = conjugated.lift_apply(conjugated.warp_apply(v))
    rhs = conjugated.warp_apply(v @ conjugated.A.T)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_degree_and_linear_identity(linear):
    assert linear.degree == 2
    assert linear.is_linear
    x = np.array([[0.3, 0.7]])
    assert np.allclose(linear.apply(x), tc.reduce(x @ np.array([[3, 1], [1, 1]]).T))


def test_iterate_shape_and_reduction(trig05):
    orb = trig05.iterate(np.array([[0.1, 0.2], [0.5, 0.5]]), 7)
    assert orb.shape == (2, 8, 2)
    assert np.all((orb >= 0) & (orb < 1))


def test_power_composes(conjugated, rng):
    f2 = tc.PowerEndomorphism(conjugated, 2)
    u = rng.random((5, 2))
    assert np.allclose(f2.lift_apply(u), conjugated.lift_apply(conjugated.lift_apply(u)))
    assert np.array_equal(f2.A, conjugated.A @ conjugated.A)
    J = conjugated.lift_jacobian(conjugated.lift_apply(u)) @ conjugated.lift_jacobian(u)
    assert np.allclose(f2.lift_jacobian(u), J)


@pytest.mark.parametrize("A", [[[1, 1], [0, 1]], [[2, 1], [1, 1]], [[1, 0.5], [0, 2]]])
def test_bad_linear_parts_rejected(A):
    with pytest.raises(ModelError):
        tc.LinearEndomorphism(A)


def test_strong_perturbation_fails_validation():
    with pytest.raises(Exception):
        tc.trig_model(2.0)


@pytest.mark.parametrize("name", ["linear", "conjugated", "trig05"])
def test_model_json_roundtrip(request, name, tmp_path, rng):
    f = request.getfixturevalue(name)
    f.save(tmp_path / "m.json")
    g = tc.load_model(tmp_path / "m.json")
    u = rng.random((10, 2))
    assert np.array_equal(g.lift_apply(u), f.lift_apply(u))
    assert json.loads((tmp_path / "m.json").read_text()) == f.to_dict()


def test_load_model_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "kind": "linear",\n  "matrix": [[3, 1] [1, 1]]\n}\n')
    with pytest.raises(ModelError, match="line 3"):
        tc.load_model(p)
