"""Conjugacies ``h o A = f o h`` built three ways, and leafwise regularity.

``base_conjugacy`` works on the grid ``(1/N) Z^2``, which ``A`` maps into
itself. Every grid point is eventually periodic under ``A``; on the periodic
cycles ``h`` is found by the periodic-orbit Newton solver and elsewhere by
``H(x) = lift(f)^-1(H(A x))``, processed in order of distance to the cycles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from . import leaves as lv
from . import livsic_conformal as lc
from . import periodic_data as pdata
from . import torus_core as tc
from .errors import AnchorMismatch, NoConvergence
from .fields import GridField

ODE_STEP = 1e-3
ANCHOR_TOL = 1e-4
SWEEP_TOL = 1e-10
MAX_SWEEPS = 500
MAX_DISPLACEMENT = 0.5


# ---------------------------------------------------------------------------
# grid conjugacy


@dataclass
class ConjugacyMap:
    """Displacement ``U = H - id`` on the ``N x N`` grid.

    Off-grid values use the truncated Fourier series of each component.
    """

    U: np.ndarray = field(repr=False)
    residual: float
    update: float
    sweeps: int
    components: tuple = field(repr=False, default=())
    bounded: bool = True

    def __post_init__(self):
        if not self.components:
            F = min(self.N // 2 - 1, 64)
            self.components = (
                GridField.from_values(self.U[..., 0], F),
                GridField.from_values(self.U[..., 1], F),
            )

    @property
    def N(self):
        return self.U.shape[0]

    def displacement(self, points, method="spectral"):
        points = np.asarray(points, dtype=float)
        return np.stack([c(points, method) for c in self.components], axis=-1)

    def lift(self, points, method="spectral"):
        points = np.asarray(points, dtype=float)
        return points + self.displacement(points, method)

    def __call__(self, points):
        return tc.reduce(self.lift(points))

    def sup_displacement(self):
        return float(np.max(np.linalg.norm(self.U, axis=-1)))

    def conjugacy_defect(self, f, points):
        """``d(h(A x), f(h(x)))`` at arbitrary points."""
        points = np.asarray(points, dtype=float)
        lhs = self(tc.reduce(tc.matvec(f._Af, points)))
        rhs = f.apply(self.lift(points))
        return tc.distance(lhs, rhs)

    def save(self, stem):
        self.components[0].save(f"{stem}.u1.grid")
        self.components[1].save(f"{stem}.u2.grid")

    @classmethod
    def load(cls, stem, residual=math.nan):
        c1 = GridField.load(f"{stem}.u1.grid")
        c2 = GridField.load(f"{stem}.u2.grid")
        return cls(np.stack([c1.values, c2.values], axis=-1), residual, math.nan, 0, (c1, c2))


def _grid_graph(A, N):
    """Successor index, integer offset and cyclic mask of ``x -> A x`` on the grid."""
    J = np.stack(np.meshgrid(np.arange(N), np.arange(N), indexing="ij"), axis=-1).reshape(-1, 2)
    img = J @ np.asarray(A, dtype=np.int64).T
    nxt = img % N
    offsets = (img - nxt) // N
    succ = nxt[:, 0] * N + nxt[:, 1]
    on_cycle = np.zeros(len(J), dtype=bool)
    S = np.unique(succ)
    while True:
        S2 = np.unique(succ[S])
        if len(S2) == len(S):
            break
        S = S2
    on_cycle[S] = True
    return J, succ, offsets, on_cycle


def _levels(succ, on_cycle):
    depth = np.where(on_cycle, 0, -1)
    lev = 0
    while np.any(depth < 0):
        lev += 1
        ready = (depth < 0) & (depth[succ] == lev - 1)
        if not np.any(ready):
            raise NoConvergence("grid dependency graph is inconsistent")
        depth[ready] = lev
    return depth


def _cycles(succ, on_cycle):
    seen = np.zeros(len(succ), dtype=bool)
    out = []
    for i in np.flatnonzero(on_cycle):
        if seen[i]:
            continue
        cyc = [i]
        seen[i] = True
        j = succ[i]
        while j != i:
            cyc.append(j)
            seen[j] = True
            j = succ[j]
        out.append(np.array(cyc))
    return out


def base_conjugacy(f, A=None, N=512, tol=SWEEP_TOL, max_sweeps=MAX_SWEEPS, init=None,
                   max_displacement=MAX_DISPLACEMENT, strict=True):
    """Conjugacy ``h`` with ``h o A = f o h`` on the ``N x N`` grid.

    Parameters
    ----------
    A : array, optional
        Linear part (defaults to ``f.A``; must agree with it).
    init : array (N, N, 2), optional
        Initial displacement. When given, off-cycle values are relaxed by
        Jacobi sweeps from it instead of the direct level-ordered pass.
    max_displacement : float
        Bound on ``sup |U|``. Without a continuous conjugacy (non-special
        ``f``) the grid relation can still be met, but the stable part of
        ``U`` grows geometrically with the distance to the cycles.
    strict : bool
        Raise when the bound fails; otherwise return the map with
        ``bounded=False``.

    Raises
    ------
    NoConvergence
        If the sweep update stays above ``tol`` after ``max_sweeps``, or the
        displacement is unbounded and ``strict``.
    """
    if A is not None and not np.array_equal(np.asarray(A), f.A):
        raise ValueError("f is not homotopic to the given matrix")
    J, succ, offsets, on_cycle = _grid_graph(f.A, N)
    X = J / N
    U = np.zeros((N * N, 2)) if init is None else np.array(init, dtype=float).reshape(-1, 2)

    for cyc in _cycles(succ, on_cycle):
        seed = X[cyc] + U[cyc]
        P, _ = pdata.solve_periodic(f, seed, offsets[cyc].astype(float))
        U[cyc] = P - X[cyc]

    off = np.flatnonzero(~on_cycle)

    def relax(idx):
        tgt = X[succ[idx]] + U[succ[idx]] + offsets[idx]
        return f.invert_lift(tgt) - X[idx]

    sweeps = 0
    if init is None:
        depth = _levels(succ, on_cycle)
        for lev in range(1, int(depth.max()) + 1):
            idx = np.flatnonzero(depth == lev)
            U[idx] = relax(idx)
        sweeps = 1
    update = math.inf
    while True:
        new = relax(off)
        update = float(np.max(np.abs(new - U[off]))) if len(off) else 0.0
        U[off] = new
        sweeps += 1
        if update < tol:
            break
        if sweeps >= max_sweeps:
            raise NoConvergence(f"conjugacy sweeps stalled at update {update:.3g} after {sweeps} sweeps")

    H = X + U
    lhs = tc.reduce(X[succ] + U[succ])
    rhs = f.apply(H)
    residual = float(np.max(tc.distance(lhs, rhs)))
    sup = float(np.max(np.linalg.norm(U, axis=-1)))
    bounded = sup <= max_displacement
    if strict and not bounded:
        raise NoConvergence(
            f"grid solution has sup displacement {sup:.3g} > {max_displacement}; "
            "no bounded periodic conjugacy (is f special?)"
        )
    return ConjugacyMap(U.reshape(N, N, 2), residual, update, sweeps, bounded=bounded)


def orientation_normalized(f):
    """``(f, n)`` with ``f`` replaced by ``f^2`` if it reverses unstable orientation."""
    if f.split.mu_u < 0:
        return tc.PowerEndomorphism(f, 2), 2
    return f, 1


# ---------------------------------------------------------------------------
# leaf ODE


def _rk4_scalar(rhs, y0, t):
    y = np.empty(len(t))
    dy = np.empty(len(t))
    y[0] = y0
    for i in range(len(t) - 1):
        h = t[i + 1] - t[i]
        k1 = rhs(t[i], y[i])
        dy[i] = k1
        k2 = rhs(t[i] + 0.5 * h, y[i] + 0.5 * h * k1)
        k3 = rhs(t[i] + 0.5 * h, y[i] + 0.5 * h * k2)
        k4 = rhs(t[i + 1], y[i] + h * k3)
        y[i + 1] = y[i] + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    dy[-1] = rhs(t[-1], y[-1])
    return y, dy


@dataclass
class LeafMap:
    """Map from a parameter interval onto a leaf segment via ``s(t)``."""

    params: np.ndarray
    arclength: np.ndarray
    speed: np.ndarray
    segment: lv.LeafSegment = field(repr=False)
    endpoint_miss: float = 0.0
    _spline: CubicHermiteSpline = field(init=False, repr=False)

    def __post_init__(self):
        self._spline = CubicHermiteSpline(self.params, self.arclength, self.speed)

    def arclength_at(self, t):
        return self._spline(t)

    def __call__(self, t):
        return self.segment.point_at(self.arclength_at(t))


@dataclass
class LeafODEMap(LeafMap):
    phi: object = None
    conformal_total: float = 1.0
    mu: float = 1.0

    def conformal_position(self, t):
        """``d^u(b_0, h(t))`` by quadrature along the segment."""
        dens = (lambda p: np.ones(p.shape[:-1])) if self.phi is None else (lambda p: np.exp(-self.phi(p)))
        return np.array([lc.leaf_integral(self.segment, dens, 0.0, float(self.arclength_at(ti)))
                         for ti in np.atleast_1d(t)])

    def midpoint_defect(self):
        """Relative gap between ``d^u(b_0, h(1/2))`` and half the anchor distance."""
        half = float(self.conformal_position(0.5)[0])
        return abs(half / self.conformal_total - 0.5)

    def intertwining_defect(self, f, t=None):
        """``d(f(h(t)), h(mu t))`` for ``0 < t <= 1/mu`` (``a_0`` must be fixed by ``A``)."""
        t = np.linspace(0.05, 0.95, 19) / self.mu if t is None else np.asarray(t, dtype=float)
        return tc.distance(f.apply(self(t)), tc.reduce(self(self.mu * t)))


def leaf_ode_conjugacy(f, A=None, phi=None, h=None, a0=(0.0, 0.0), anchors=None, step=ODE_STEP,
                       segment=None, span=1):
    """Conjugacy on one unstable leaf of ``A`` from the conformal arclength ODE.

    The leaf is ``a(theta) = a0 + theta e_u`` with unit-spaced anchors
    ``a_j = a0 + j e_u``, ``j = 0..span``. Their images ``b_j`` come from
    ``h`` (or ``anchors``). The map solves ``sigma' = exp(phi_0(gamma(sigma)))``
    along the ``f``-leaf from ``b_0``, with ``phi_0 = phi + log d^u(b_0, b_1)``
    fixed by the first interval.

    Raises
    ------
    AnchorMismatch
        If the ODE passes more than ``1e-4`` away from some ``b_j``.
    """
    e = f.split.e_u
    a0 = np.asarray(a0, dtype=float)
    if anchors is None:
        if h is None:
            raise ValueError("need a grid conjugacy or explicit anchors")
        anchors = h.lift(a0 + np.arange(span + 1)[:, None] * e)
    anchors = np.asarray(anchors, dtype=float)
    span = len(anchors) - 1
    if span < 1:
        raise ValueError("need at least two anchors")
    seg = lv.segment_between(f, anchors[0], anchors[-1], tol=1e-6) if segment is None else segment
    s1 = seg.locate(anchors[1], tol=1e-6)[0] if span > 1 else seg.length
    if phi is None:
        D = s1
        rhs = lambda t, s: D
    else:
        D = lc.leaf_integral(seg, lambda p: np.exp(-phi(p)), 0.0, s1)
        rhs = lambda t, s: D * math.exp(float(phi(seg.point_at(s)[None])[0]))
    n = int(math.ceil(1.0 / step))
    theta = np.linspace(0.0, float(span), span * n + 1)
    sig, dsig = _rk4_scalar(rhs, 0.0, theta)
    hit = seg.point_at(sig[::n])
    miss = float(np.max(np.linalg.norm(hit - anchors, axis=-1)) + max(sig[-1] - seg.length, 0.0))
    if miss > ANCHOR_TOL:
        raise AnchorMismatch(f"leaf ODE misses an anchor by {miss:.3g}")
    return LeafODEMap(theta, sig, dsig, seg, miss, phi=phi, conformal_total=D, mu=float(f.split.mu_u))


def leaf_mapping_defect(f, h, a0=(0.0, 0.0), length=1.0, samples=41):
    """Max distance from ``h(a0 + t e_u)`` to the ``f``-unstable leaf through ``h(a0)``."""
    a0 = np.asarray(a0, dtype=float)
    t = np.linspace(0.0, length, samples)
    img = h.lift(a0 + t[:, None] * f.split.e_u)
    span = 1.5 * float(np.sum(np.linalg.norm(np.diff(img, axis=0), axis=-1))) + 0.05
    seg = lv.trace_leaf(f, img[0], span)
    return max(seg.locate(q, tol=np.inf)[1] for q in img)


# ---------------------------------------------------------------------------
# density-ratio ODE


@dataclass
class TransportMap(LeafMap):
    rho_f: object = None
    rho_g: object = None

    def transport_defect(self, t):
        t = np.asarray(t, dtype=float)
        return np.abs(self.rho_f.cumulative(t) - self.rho_g.cumulative(self.arclength_at(t)))


def density_ratio_conjugacy(f, g, rho_f, rho_g, step=ODE_STEP, checkpoints=()):
    """Map between matched unstable segments sending ``rho_f`` to ``rho_g``.

    Solves ``x' = rho_f(t) / rho_g(x)``, ``x(0) = 0`` in arclength on both
    segments. The end of the ``f`` segment must go to the end of the ``g``
    segment, and each ``(t, point)`` in ``checkpoints`` to its point;
    :class:`AnchorMismatch` is raised for misses above ``1e-4``.
    """
    Lf, Lg = rho_f.length, rho_g.length
    n = int(math.ceil(Lf / step))
    t = np.linspace(0.0, Lf, n + 1)
    rhs = lambda tt, x: float(rho_f(tt) / rho_g(min(max(x, 0.0), Lg)))
    x, dx = _rk4_scalar(rhs, 0.0, t)
    seg = rho_g.segment
    miss = float(np.linalg.norm(seg.point_at(min(x[-1], Lg)) - seg.points[-1]) + max(x[-1] - Lg, 0.0))
    tm = TransportMap(t, x, dx, seg, miss, rho_f, rho_g)
    for tc_, q in checkpoints:
        tm.endpoint_miss = max(tm.endpoint_miss, float(np.linalg.norm(tm(tc_) - np.asarray(q))))
    if tm.endpoint_miss > ANCHOR_TOL:
        raise AnchorMismatch(f"density-ratio ODE misses a checkpoint by {tm.endpoint_miss:.3g}")
    return tm


@dataclass
class AgreementReport:
    base_vs_leaf: float
    base_vs_density: float
    leaf_vs_density: float
    truth_error: float | None = None

    @property
    def worst(self):
        return max(self.base_vs_leaf, self.base_vs_density, self.leaf_vs_density)

    def to_dict(self):
        return dict(self.__dict__, worst=self.worst)


def method_agreement(g, h, phi, a0=(0.0, 0.0), samples=101, truth=None):
    """Compare the three constructions on the segment ``a0 + theta e_u``, ``0 <= theta <= 1``.

    ``g`` is the nonlinear model, ``h`` its grid conjugacy to the linear part
    and ``phi`` the unstable transfer function of ``g``. ``truth`` is an
    optional callable giving the exact conjugacy on lift points.
    """
    from . import srb_measures as sm

    lin = tc.LinearEndomorphism(g.A)
    e = g.split.e_u
    a0 = np.asarray(a0, dtype=float)
    theta = np.linspace(0.0, 1.0, samples)
    base_pts = h.lift(a0 + theta[:, None] * e)
    lm = leaf_ode_conjugacy(g, phi=phi, h=h, a0=a0)
    leaf_pts = lm(theta)
    seg_f = lv.trace_leaf(lin, a0, 1.0)
    rho_f = sm.leaf_density(lin, seg_f)
    rho_g = sm.leaf_density(g, lm.segment)
    tm = density_ratio_conjugacy(lin, g, rho_f, rho_g)
    dens_pts = tm(theta)
    d = lambda p, q: float(np.max(np.linalg.norm(p - q, axis=-1)))
    rep = AgreementReport(d(base_pts, leaf_pts), d(base_pts, dens_pts), d(leaf_pts, dens_pts))
    if truth is not None:
        exact = truth(a0 + theta[:, None] * e)
        rep.truth_error = max(d(exact, base_pts), d(exact, leaf_pts), d(exact, dens_pts))
    return rep


# ---------------------------------------------------------------------------
# regularity


DYADIC = tuple(2.0 ** -k for k in range(3, 11))


@dataclass
class RegularityEstimate:
    scales: np.ndarray
    central: np.ndarray
    forward: np.ndarray
    backward: np.ndarray
    derivative: float
    holder_exponent: float
    r2: float
    degenerate: bool
    stabilized: bool

    @property
    def poor_fit(self):
        return (not self.degenerate) and self.r2 < 0.9

    def to_dict(self):
        return {
            "scales": self.scales.tolist(),
            "central": self.central.tolist(),
            "forward": self.forward.tolist(),
            "backward": self.backward.tolist(),
            "derivative": self.derivative,
            "holder_exponent": self.holder_exponent,
            "r2": self.r2,
            "degenerate": self.degenerate,
            "stabilized": self.stabilized,
            "poor_fit": self.poor_fit,
        }


def regularity_estimate(h, base, direction, scales=DYADIC, stab_tol=1e-3):
    """Leafwise difference quotients of ``h`` at ``base`` along ``direction``.

    ``h`` maps lift points to lift points (a :class:`ConjugacyMap` uses its
    ``lift``). The derivative is the Richardson-extrapolated centred quotient
    at the two finest scales; the Holder exponent of the derivative is the
    log-log slope of ``|q_+(r) - q_-(r)|`` against ``r``.
    """
    hf = h.lift if isinstance(h, ConjugacyMap) else h
    scales = np.asarray(sorted(scales, reverse=True), dtype=float)
    base = np.asarray(base, dtype=float)
    e = np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    pts = np.concatenate([base[None], base + scales[:, None] * e, base - scales[:, None] * e])
    img = hf(pts)
    h0, hp, hm = img[0], img[1 : 1 + len(scales)], img[1 + len(scales) :]
    central = np.linalg.norm(hp - hm, axis=-1) / (2 * scales)
    fwd = np.linalg.norm(hp - h0, axis=-1) / scales
    bwd = np.linalg.norm(h0 - hm, axis=-1) / scales
    deriv = float((4 * central[-1] - central[-2]) / 3)
    gap = np.abs(fwd - bwd)
    degenerate = bool(np.all(gap < 1e-12 * np.maximum(1.0, fwd)))
    if degenerate:
        alpha, r2 = math.nan, math.nan
    else:
        keep = gap > 0
        x, y = np.log(scales[keep]), np.log(gap[keep])
        if len(x) >= 3:
            alpha, icpt = np.polyfit(x, y, 1)
            pred = icpt + alpha * x
            ss = float(np.sum((y - y.mean()) ** 2))
            r2 = 1.0 - float(np.sum((y - pred) ** 2)) / ss if ss > 0 else 1.0
        else:
            alpha, r2 = math.nan, 0.0
    rel = np.abs(np.diff(central[-3:])) / np.maximum(np.abs(central[-3:-1]), 1e-300)
    stabilized = bool(np.all(rel < stab_tol))
    return RegularityEstimate(scales, central, fwd, bwd, deriv, float(alpha), float(r2), degenerate, stabilized)
