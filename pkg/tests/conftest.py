import numpy as np
import pytest

from anosov_lab import conjugacy as cj
from anosov_lab import livsic_conformal as lc
from anosov_lab import torus_core as tc


@pytest.fixture(scope="session")
def linear():
    return tc.linear_model()


@pytest.fixture(scope="session")
def conjugated():
    return tc.conjugated_model(0.02)


@pytest.fixture(scope="session")
def trig05():
    return tc.trig_model(0.05)


@pytest.fixture(scope="session")
def trig02():
    return tc.trig_model(0.02)


@pytest.fixture(scope="session")
def conj_solution(conjugated):
    """Unstable cohomology solution for the conjugated model on a modest grid."""
    psi = lc.observable_log_unstable(conjugated, 128)
    return psi, lc.solve_cohomology(conjugated, psi, F=16, details=True)


@pytest.fixture(scope="session")
def conj_phi(conj_solution):
    return conj_solution[1].phi


@pytest.fixture(scope="session")
def conj_h(conjugated):
    return cj.base_conjugacy(conjugated, N=256)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def warp_oracles(g):
    """Closed-form quantities of ``g = h0 A h0^-1`` used as test oracles."""
    eu, es = g.split.e_u, g.split.e_s

    def Dh(z):
        return g.warp_jacobian(g.warp_inverse(z))

    def s_u(z):
        return np.linalg.norm(tc.matvec(Dh(z), eu), axis=-1)

    def s_s(z):
        return np.linalg.norm(tc.matvec(Dh(z), es), axis=-1)

    def jac(z):
        return np.abs(np.linalg.det(Dh(z)))

    return s_u, s_s, jac


@pytest.fixture(scope="session")
def conj_measure(conjugated):
    from anosov_lab import srb_measures as sm

    return sm.invariant_density(conjugated, N=128, F=16)
