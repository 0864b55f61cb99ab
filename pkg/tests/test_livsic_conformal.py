import math

import numpy as np
import pytest

from anosov_lab import leaves as lv
from anosov_lab import livsic_conformal as lc
from anosov_lab import torus_core as tc
from anosov_lab.errors import ObstructionNonzero, ResidualTooLarge
from anosov_lab.fields import GridField

from .conftest import warp_oracles


def _random_trig(rng, K=5):
    k = np.arange(-K, K + 1)
    c = (rng.standard_normal((2 * K + 1, 2 * K + 1)) + 1j * rng.standard_normal((2 * K + 1, 2 * K + 1)))
    c *= np.exp(-0.3 * (np.abs(k)[:, None] + np.abs(k)[None, :]))
    c = 0.5 * (c + np.conj(c[::-1, ::-1]))
    c[K, K] = 0.0
    return c


def test_manufactured_solution_is_recovered(trig05, rng):
    N, F = 128, 16
    coef = _random_trig(rng)
    from anosov_lab.fields import eval_trig

    X = tc.grid_points(N)
    truth = eval_trig(coef, X)
    psi = GridField.from_values(eval_trig(coef, trig05.apply(X)) - truth, N // 2 - 1)
    sol = lc.solve_cohomology(trig05, psi, F=F, details=True)
    err = sol.phi.values - (truth - truth.mean())
    assert np.max(np.abs(err)) < 1e-6
    assert sol.sup_residual < 1e-8


def test_linear_observable_is_zero(linear):
    psi = lc.observable_log_unstable(linear, 64)
    assert psi.sup_norm() < 1e-14
    sol = lc.solve_cohomology(linear, psi, F=8, details=True)
    assert sol.iterations == 0 and sol.phi.sup_norm() == 0


def test_conjugated_transfer_function_matches_oracle(conjugated, conj_solution):
    psi, sol = conj_solution
    assert sol.sup_residual < 1e-4
    s_u, _, _ = warp_oracles(conjugated)
    X = tc.grid_points(psi.N)
    truth = np.log(s_u(X))
    # psi = log|Dg E^u| - lambda = log s_u(g x) - log s_u(x), so phi = log s_u + const
    assert np.max(np.abs(sol.phi.values - (truth - truth.mean()))) < 1e-6


def test_cocycle_identity(conjugated, conj_solution, rng):
    psi, sol = conj_solution
    d = lc.cocycle_defect(conjugated, psi, sol.phi, rng.random((50, 2)), 6)
    assert np.max(np.abs(d)) < 1e-4


def test_obstruction_gate(trig05):
    with pytest.raises(ObstructionNonzero) as exc:
        lc.observable_log_unstable(trig05, 32)
    assert exc.value.defect > 1e-4
    rep = lc.observable_log_unstable(trig05, 32, check=False, report=True)
    assert rep.max_obstruction == pytest.approx(exc.value.defect)
    with pytest.raises(ObstructionNonzero):
        lc.observable_log_jacobian(trig05, 32)


def test_residual_gate(conjugated, conj_solution):
    psi, _ = conj_solution
    with pytest.raises(ResidualTooLarge):
        lc.solve_cohomology(conjugated, psi, F=1, limit=1e-6)


def test_grid_mismatch(linear):
    with pytest.raises(ValueError):
        lc.solve_cohomology(linear, GridField.zeros(16), N=32)


def test_linear_conformal_distance_is_arclength(linear):
    a = np.array([0.2, 0.3])
    b = a + 0.37 * linear.split.e_u
    assert lc.conformal_distance(linear, None, a, b) == pytest.approx(0.37, abs=1e-10)


def test_leaf_integral_quadrature(linear):
    seg = lv.trace_leaf(linear, [0.0, 0.0], 0.5)
    val = lc.leaf_integral(seg, lambda p: np.ones(p.shape[:-1]) * 2.0)
    assert val == pytest.approx(1.0, abs=1e-12)
    assert lc.leaf_integral(seg, lambda p: np.ones(p.shape[:-1]), 0.3, 0.1) == pytest.approx(-0.2, abs=1e-12)


def test_linear_scaling(linear, rng):
    a, b = lc.random_unstable_pairs(linear, 20, rng)
    rep = lc.conformal_scaling(linear, None, a, b)
    assert rep.target == pytest.approx(2 + math.sqrt(2))
    assert rep.max_rel_error < 1e-9


def test_conjugated_scaling(conjugated, conj_phi, rng):
    a, b = lc.random_unstable_pairs(conjugated, 10, rng)
    rep = lc.conformal_scaling(conjugated, conj_phi, a, b)
    assert rep.max_rel_error < 1e-6
    # plain arclength does not scale uniformly
    raw = lc.conformal_scaling(conjugated, None, a, b)
    assert raw.max_rel_error > 1e-3
    assert set(rep.to_dict()) >= {"target", "max_rel_error", "ratios"}
