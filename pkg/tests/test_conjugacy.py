import numpy as np
import pytest

from anosov_lab import conjugacy as cj
from anosov_lab import leaves as lv
from anosov_lab import srb_measures as sm
from anosov_lab import torus_core as tc
from anosov_lab.errors import AnchorMismatch, NoConvergence


def test_linear_conjugacy_is_identity(linear):
    h = cj.base_conjugacy(linear, N=64)
    assert np.max(np.abs(h.U)) < 1e-12
    assert h.residual < 1e-12


def test_recovers_warp(conjugated, conj_h, rng):
    X = tc.grid_points(conj_h.N)
    assert np.max(np.linalg.norm(X + conj_h.U - conjugated.warp_apply(X), axis=-1)) < 1e-10
    P = rng.random((300, 2))
    assert np.max(np.linalg.norm(conj_h.lift(P) - conjugated.warp_apply(P), axis=-1)) < 1e-10
    assert conj_h.residual < 1e-8
    assert np.max(conj_h.conjugacy_defect(conjugated, P)) < 1e-10
    assert conj_h.sup_displacement() < 0.05


def test_uniqueness_from_random_start(conjugated, rng):
    a = cj.base_conjugacy(conjugated, N=64)
    b = cj.base_conjugacy(conjugated, N=64, init=1e-3 * rng.standard_normal((64, 64, 2)))
    assert np.max(np.abs(a.U - b.U)) < 1e-8
    assert b.sweeps > 2


def test_sweep_budget(conjugated, rng):
    with pytest.raises(NoConvergence):
        cj.base_conjugacy(conjugated, N=64, init=1e-3 * rng.standard_normal((64, 64, 2)), max_sweeps=3)


def test_homotopy_class_checked(conjugated):
    with pytest.raises(ValueError):
        cj.base_conjugacy(conjugated, A=[[2, 1], [1, 1]], N=16)


def test_non_special_model_has_no_bounded_solution(trig02):
    with pytest.raises(NoConvergence):
        cj.base_conjugacy(trig02, N=128)
    h = cj.base_conjugacy(trig02, N=128, strict=False)
    # the grid relation holds but the displacement is unbounded
    assert not h.bounded and h.residual < 1e-8
    assert h.sup_displacement() > 0.5


def test_save_load(conj_h, tmp_path, rng):
    conj_h.save(tmp_path / "h")
    back = cj.ConjugacyMap.load(tmp_path / "h")
    P = rng.random((10, 2))
    assert np.array_equal(back.lift(P), conj_h.lift(P))


def test_orientation_normalisation(linear):
    f, n = cj.orientation_normalized(linear)
    assert f is linear and n == 1
    flip = tc.LinearEndomorphism([[-3, -1], [-1, -1]])
    g, n = cj.orientation_normalized(flip)
    assert n == 2 and g.split.mu_u > 0


def test_leaf_mapping(conjugated, conj_h):
    assert cj.leaf_mapping_defect(conjugated, conj_h) < 1e-5


# leaf ODE


def test_leaf_ode_linear_is_identity(linear):
    h = cj.base_conjugacy(linear, N=32)
    lm = cj.leaf_ode_conjugacy(linear, h=h)
    t = np.linspace(0, 1, 21)
    assert np.max(np.abs(lm(t) - t[:, None] * linear.split.e_u)) < 1e-12


def test_leaf_ode_matches_warp(conjugated, conj_h, conj_phi):
    lm = cj.leaf_ode_conjugacy(conjugated, phi=conj_phi, h=conj_h)
    t = np.linspace(0, 1, 41)
    truth = conjugated.warp_apply(t[:, None] * conjugated.split.e_u)
    assert np.max(np.linalg.norm(lm(t) - truth, axis=-1)) < 1e-4
    assert lm.midpoint_defect() < 1e-8
    assert np.max(lm.intertwining_defect(conjugated)) < 1e-6


def test_leaf_ode_anchor_mismatch(conjugated, conj_h, conj_phi):
    # with two unit intervals a wrong transfer function misses the third anchor
    lm = cj.leaf_ode_conjugacy(conjugated, phi=conj_phi, h=conj_h, span=2)
    assert lm.endpoint_miss < 1e-6
    wrong = lambda p: 0.3 * np.sin(2 * np.pi * p[..., 0])
    with pytest.raises(AnchorMismatch):
        cj.leaf_ode_conjugacy(conjugated, phi=wrong, h=conj_h, span=2)


# density ratio ODE


def test_density_ratio_identity(conjugated):
    seg = lv.trace_leaf(conjugated, [0.3, 0.6], 0.5)
    rho = sm.leaf_density(conjugated, seg)
    tm = cj.density_ratio_conjugacy(conjugated, conjugated, rho, rho)
    t = np.linspace(0, seg.length, 21)
    assert np.max(np.abs(tm.arclength_at(t) - t)) < 1e-12


def test_density_ratio_matches_warp(linear, conjugated, conj_h):
    lm = cj.leaf_ode_conjugacy(conjugated, anchors=conj_h.lift(np.array([[0.0, 0.0], linear.split.e_u])))
    seg_f = lv.trace_leaf(linear, [0.0, 0.0], 1.0)
    tm = cj.density_ratio_conjugacy(linear, conjugated, sm.leaf_density(linear, seg_f),
                                    sm.leaf_density(conjugated, lm.segment))
    t = np.linspace(0, 1, 20)
    truth = conjugated.warp_apply(t[:, None] * linear.split.e_u)
    assert np.max(np.linalg.norm(tm(t) - truth, axis=-1)) < 1e-4
    assert np.max(tm.transport_defect(t)) < 1e-6


def test_density_ratio_checkpoints(linear):
    a = sm.leaf_density(linear, lv.trace_leaf(linear, [0, 0], 0.5))
    b = sm.leaf_density(linear, lv.trace_leaf(linear, [0, 0], 0.6))
    mid = 0.3 * linear.split.e_u
    tm = cj.density_ratio_conjugacy(linear, linear, a, b, checkpoints=[(0.25, mid)])
    assert tm.endpoint_miss < 1e-12
    with pytest.raises(AnchorMismatch):
        cj.density_ratio_conjugacy(linear, linear, a, b, checkpoints=[(0.25, 0.25 * linear.split.e_u)])


def test_method_agreement(conjugated, conj_h, conj_phi):
    rep = cj.method_agreement(conjugated, conj_h, conj_phi, truth=conjugated.warp_apply)
    assert rep.worst < 1e-4
    assert rep.truth_error < 1e-4


# regularity


def test_regularity_identity_is_degenerate(linear):
    r = cj.regularity_estimate(lambda p: p, np.array([0.3, 0.4]), linear.split.e_u)
    assert r.degenerate and not r.poor_fit
    assert np.allclose(r.central, 1.0) and r.derivative == pytest.approx(1.0)
    assert np.all(np.diff(r.scales) < 0)


def test_regularity_matches_warp_derivative(conjugated, conj_h, rng):
    e = conjugated.split.e_u
    for p in rng.random((3, 2)):
        r = cj.regularity_estimate(conj_h, p, e)
        ref = np.linalg.norm(conjugated.warp_jacobian(p) @ e)
        assert r.derivative == pytest.approx(ref, abs=1e-3)
        assert r.stabilized and not r.poor_fit


def test_non_rigid_quotients_do_not_stabilise(trig05):
    h = cj.base_conjugacy(trig05, N=256, strict=False)
    r = cj.regularity_estimate(h, np.array([0.3, 0.4]), trig05.split.e_u)
    assert not r.stabilized
    assert set(r.to_dict()) >= {"scales", "central", "holder_exponent", "r2", "poor_fit"}
