"""Cohomological equations over the map and the conformal unstable metric.

``solve_cohomology`` fits a mean-zero real trigonometric polynomial ``phi``
with ``phi(f x) - phi(x) ~ psi(x)`` on the grid by matrix-free LSQR. The
conformal leaf metric ``d^u(a, b) = int_a^b exp(-phi^u)`` then scales exactly
by ``exp(lambda_u)`` under ``f``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, lsqr

from . import hyperbolic_bundles as hb
from . import leaves as lv
from . import periodic_data as pdata
from . import torus_core as tc
from .errors import ObstructionNonzero, ResidualTooLarge
from .fields import GridField, exp_matrix

DEFAULT_N = 256
DEFAULT_F = 32
OBSTRUCTION_LIMIT = 1e-4
RESIDUAL_LIMIT = 1e-3
GL_NODES = 12
GL_PANEL = 0.05

LeafSegment = lv.LeafSegment


# ---------------------------------------------------------------------------
# observables


@dataclass
class ObservableReport:
    field: GridField
    lambda_u: float
    periodic_averages: np.ndarray
    max_obstruction: float


def periodic_unstable_obstruction(f, max_period=4, lam=None, orbits=None):
    """Periodic averages ``lambda_u(orbit) - lam`` for all orbits of period <= ``max_period``."""
    orbits = pdata.periodic_table(f, max_period) if orbits is None else orbits
    lam = orbits[0].lambda_u if lam is None else lam
    return np.array([o.lambda_u - lam for o in orbits]), lam


def observable_log_unstable(f, N=DEFAULT_N, depth=hb.DEFAULT_DEPTH, lam=None, max_period=4,
                            check=True, report=False):
    """``psi = log |Df|E^u| - lambda_u`` on the grid.

    ``E^u`` follows the all-zero coset branch. ``lambda_u`` defaults to the
    exponent of the fixed point; the obstruction check compares it with every
    orbit of period ``<= max_period`` and raises :class:`ObstructionNonzero`
    if some periodic average exceeds ``1e-4``.
    """
    pts = tc.grid_points(N)
    avgs, lam = periodic_unstable_obstruction(f, max_period, lam)
    worst = float(np.max(np.abs(avgs)))
    if check and worst > OBSTRUCTION_LIMIT:
        raise ObstructionNonzero(
            f"periodic unstable exponents differ by up to {worst:.3g} (limit {OBSTRUCTION_LIMIT})", worst
        )
    E = hb.unstable_field(f, pts, depth)
    vals = np.log(np.linalg.norm(tc.matvec(f.lift_jacobian(pts), E), axis=-1)) - lam
    psi = GridField.from_values(vals, min(DEFAULT_F * 2, N // 2 - 1))
    if report:
        return ObservableReport(psi, lam, avgs, worst)
    return psi


def observable_log_jacobian(f, N=DEFAULT_N, max_period=4, check=True):
    """``log Jf - log k`` on the grid, with the periodic obstruction check."""
    orbits = pdata.periodic_table(f, max_period)
    worst = max(abs(o.log_jacobian - math.log(f.degree)) for o in orbits)
    if check and worst > OBSTRUCTION_LIMIT:
        raise ObstructionNonzero(f"periodic Jacobian averages deviate from log k by {worst:.3g}", worst)
    vals = np.log(f.jacobian_det(tc.grid_points(N))) - math.log(f.degree)
    return GridField.from_values(vals, min(DEFAULT_F * 2, N // 2 - 1))


# ---------------------------------------------------------------------------
# cohomology solver


class _TrigOperator:
    """``C -> phi(f x) - phi(x)`` on grid points for ``phi = Re sum_H C_k e_k``."""

    def __init__(self, f, N, F):
        self.N, self.F = N, F
        k1 = np.arange(0, F + 1)
        k2 = np.arange(-F, F + 1)
        K1, K2 = np.meshgrid(k1, k2, indexing="ij")
        self.mask = (K1 > 0) | ((K1 == 0) & (K2 > 0))
        self.n = int(self.mask.sum())
        X = tc.grid_points(N).reshape(-1, 2)
        Y = tc.reduce(f.apply(X))
        self.E1x, self.E2x = exp_matrix(X[:, 0], k1), exp_matrix(X[:, 1], k2)
        self.E1y, self.E2y = exp_matrix(Y[:, 0], k1), exp_matrix(Y[:, 1], k2)

    def coefficients(self, x):
        C = np.zeros(self.mask.shape, dtype=complex)
        C[self.mask] = x[: self.n] - 1j * x[self.n :]
        return C

    def matvec(self, x):
        C = self.coefficients(np.ravel(x))
        fy = np.real(np.sum((self.E1y @ C) * self.E2y, axis=1))
        fx = np.real(np.sum((self.E1x @ C) * self.E2x, axis=1))
        return fy - fx

    def rmatvec(self, r):
        r = np.ravel(r)
        G = self.E1y.T @ (r[:, None] * self.E2y) - self.E1x.T @ (r[:, None] * self.E2x)
        g = G[self.mask]
        return np.concatenate([g.real, g.imag])

    def linear_operator(self):
        m = self.N * self.N
        return LinearOperator((m, 2 * self.n), matvec=self.matvec, rmatvec=self.rmatvec, dtype=float)

    def full_coefficients(self, x):
        """Coefficient array on ``|k_i| <= F`` (both half planes)."""
        C = self.coefficients(x)
        F = self.F
        full = np.zeros((2 * F + 1, 2 * F + 1), dtype=complex)
        full[F:, :] += C / 2
        full[: F + 1, :] += np.conj(C[::-1, ::-1]) / 2
        return full


@dataclass
class CohomologySolution:
    phi: GridField
    residual: GridField = field(repr=False)
    sup_residual: float
    iterations: int


def solve_cohomology(f, psi, F=DEFAULT_F, N=None, tol=1e-14, maxiter=400, limit=RESIDUAL_LIMIT,
                     details=False, operator=None):
    """Least-squares solution of ``phi(f x) - phi(x) = psi(x)`` on the grid.

    Parameters
    ----------
    psi : GridField
        Right-hand side, sampled on the ``N x N`` grid.
    F : int
        Frequency cutoff of the trigonometric ansatz (mean-zero).
    limit : float
        :class:`ResidualTooLarge` is raised if the sup residual exceeds it.

    Returns
    -------
    GridField or CohomologySolution
        ``phi`` (with Fourier data), or the full record if ``details``.
    """
    N = psi.N if N is None else N
    if N != psi.N:
        raise ValueError("psi must be sampled on the solver grid")
    op = _TrigOperator(f, N, F) if operator is None else operator
    rhs = psi.values.ravel()
    if not np.any(rhs):
        x = np.zeros(2 * op.n)
        its = 0
    else:
        out = lsqr(op.linear_operator(), rhs, atol=tol, btol=tol, iter_lim=maxiter)
        x, its = out[0], out[2]
    coef = op.full_coefficients(x)
    phi = GridField.from_coefficients(coef, N)
    res = (op.matvec(x) - rhs).reshape(N, N)
    sup = float(np.max(np.abs(res)))
    if sup > limit:
        raise ResidualTooLarge(f"cohomology residual {sup:.3g} exceeds {limit:.3g} (F={F}, N={N})")
    if details:
        return CohomologySolution(phi, GridField(res), sup, its)
    return phi


def cocycle_defect(f, psi, phi, points, n):
    """``sum_{i<n} psi(f^i x) - (phi(f^n x) - phi(x))`` at ``points``."""
    orbit = f.iterate(points, n)
    birk = np.sum(psi(orbit[..., :n, :]), axis=-1)
    return birk - (phi(orbit[..., n, :]) - phi(orbit[..., 0, :]))


# ---------------------------------------------------------------------------
# conformal metric


def _gauss_legendre(a, b, panel=GL_PANEL, order=GL_NODES):
    x, w = np.polynomial.legendre.leggauss(order)
    npan = max(1, int(math.ceil((b - a) / panel)))
    edges = np.linspace(a, b, npan + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def leaf_integral(seg, density, s0=0.0, s1=None):
    """``int_{s0}^{s1} density(gamma(s)) ds`` by composite Gauss-Legendre."""
    s1 = seg.length if s1 is None else s1
    if s1 == s0:
        return 0.0
    sign = 1.0
    if s1 < s0:
        s0, s1, sign = s1, s0, -1.0
    nodes, weights = _gauss_legendre(s0, s1)
    return sign * float(np.sum(weights * density(seg.point_at(nodes))))


def conformal_length(seg, phi):
    """``d^u`` length of a leaf segment for transfer function ``phi``."""
    if phi is None:
        return seg.length
    return leaf_integral(seg, lambda p: np.exp(-phi(p)))


def conformal_distance(f, phi, a, b, which="unstable", **kw):
    """Conformal distance ``int_a^b exp(-phi)`` along the leaf through ``a`` and ``b``.

    ``a`` and ``b`` are lift points on one leaf; ``phi=None`` means ``phi = 0``.
    """
    seg = lv.segment_between(f, a, b, which, **kw)
    return conformal_length(seg, phi)


def conformal_distances(f, phi, a, b, which="unstable", **kw):
    segs = lv.segments_between(f, a, b, which, **kw)
    return np.array([conformal_length(s, phi) for s in segs])


@dataclass
class ScalingReport:
    ratios: np.ndarray
    target: float
    max_rel_error: float
    spread: float

    def to_dict(self):
        return {
            "target": self.target,
            "max_rel_error": self.max_rel_error,
            "spread": self.spread,
            "ratios": self.ratios.tolist(),
        }


def random_unstable_pairs(f, n, rng, length=(0.05, 0.3)):
    """``n`` pairs ``(a, b)`` of lift points on common unstable leaves."""
    a = rng.random((n, 2))
    ell = rng.uniform(length[0], length[1], size=n)
    segs = lv.trace_leaves(f, a, ell, "unstable")
    b = np.array([s.points[-1] for s in segs])
    return a, b


def conformal_scaling(f, phi, a, b, lam=None):
    """Ratios ``d^u(f a, f b) / d^u(a, b)`` for pairs of lift points."""
    lam = f.split.lambda_u if lam is None else lam
    d0 = conformal_distances(f, phi, a, b)
    d1 = conformal_distances(f, phi, f.lift_apply(a), f.lift_apply(b))
    ratios = d1 / d0
    target = math.exp(lam)
    rel = np.abs(ratios / target - 1.0)
    spread = float((ratios.max() - ratios.min()) / ratios.mean())
    return ScalingReport(ratios, target, float(rel.max()), spread)
