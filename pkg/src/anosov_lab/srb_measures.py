"""Conditional densities on leaves, the invariant density, and entropy checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Chebyshev

from . import hyperbolic_bundles as hb
from . import leaves as lv
from . import livsic_conformal as lc
from . import torus_core as tc
from .errors import BranchMismatch, NewtonDivergence, PairSeparation
from .fields import GridField

INCREMENT_TOL = 1e-12
SEPARATION_LIMIT = 0.2
LEAF_TOL = 1e-6
BOX_ORDER = 64


# ---------------------------------------------------------------------------
# geometric fits


@dataclass
class RateFit:
    """Log-linear fit ``log y_k ~ a + k log(theta)``."""

    theta: float
    r2: float
    npoints: int

    @property
    def geometric(self):
        return self.theta < 1.0

    def to_dict(self):
        return {"theta": self.theta, "r2": self.r2, "npoints": self.npoints}


def fit_rate(values, ks=None, floor=1e-13):
    values = np.abs(np.asarray(values, dtype=float))
    ks = np.arange(len(values)) if ks is None else np.asarray(ks, dtype=float)
    keep = values > floor
    if keep.sum() < 3:
        return RateFit(0.0, 1.0, int(keep.sum()))
    x, y = ks[keep], np.log(values[keep])
    slope, icpt = np.polyfit(x, y, 1)
    pred = icpt + slope * x
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - pred) ** 2)) / ss if ss > 0 else 1.0
    return RateFit(float(math.exp(slope)), r2, int(keep.sum()))


# ---------------------------------------------------------------------------
# unstable product


def _unstable_jacobians(f, chain, extra=hb.DEFAULT_DEPTH):
    """``|Df|E^u|`` at every level of ``chain`` (..., D+1, 2), branch = the chain itself."""
    more = hb.branch_points(f, chain[..., -1, :], extra)[..., 1:, :]
    full = np.concatenate([chain, more], axis=-2)
    vecs, _ = hb._push_forward(f, full, f.split.e_u)
    D = chain.shape[-2]
    pts = chain
    return np.linalg.norm(tc.matvec(f.lift_jacobian(pts), vecs[..., :D, :]), axis=-1)


PROJECT_BELOW = 1e-6


def _paired_chain(f, branch, ys, project_below=PROJECT_BELOW):
    """Backward iterates of lift points ``ys`` following ``branch`` (shape (..., D+1, 2)).

    Backward iteration amplifies any off-leaf error of ``y`` along ``E^s``.
    Once a pair is closer than ``project_below`` the preimage is replaced by
    its ``E^s``-projection onto the line ``x_-k + t E^u(x_-k)``, where the
    leaf curvature error is negligible.
    """
    eu = unstable_along_branch(f, branch)
    es = hb.stable_field(f, branch.points)
    y = np.asarray(ys, dtype=float)
    out = [y]
    for j, (c, s) in enumerate(zip(branch.choices, branch.shifts)):
        y = f.pull_back(y, int(c)) - s
        x = branch.points[j + 1]
        r = y - x
        near = np.linalg.norm(r, axis=-1) < project_below
        if np.any(near):
            basis = np.column_stack([eu[j + 1], es[j + 1]])
            coords = np.linalg.solve(basis, r.reshape(-1, 2).T).T.reshape(r.shape)
            proj = x + coords[..., :1] * eu[j + 1]
            y = np.where(near[..., None], proj, y)
        out.append(y)
    return np.stack(out, axis=-2)


def unstable_along_branch(f, branch):
    return hb.unstable_along_branch(f, branch)


@dataclass
class DeltaResult:
    value: float
    partial: np.ndarray = field(repr=False)
    increments: np.ndarray = field(repr=False)
    terms_used: int = 0
    fit: RateFit | None = None
    distance_fit: RateFit | None = None
    tail_bound: float = 0.0

    def to_dict(self):
        return {
            "value": self.value,
            "terms_used": self.terms_used,
            "theta": None if self.fit is None else self.fit.theta,
            "r2": None if self.fit is None else self.fit.r2,
            "distance_theta": None if self.distance_fit is None else self.distance_fit.theta,
            "tail_bound": self.tail_bound,
        }


def _finish_product(logs, dists, K, tol):
    """Truncate the log increments and fit the convergence rate.

    The rate is fitted to the tail sums ``S_K = sum_{j>=K} |log increment_j|``,
    which bound the truncation error and decay monotonically; the raw
    increments oscillate around their geometric envelope.
    """
    logs = np.asarray(logs[:K], dtype=float)
    used = len(logs)
    for i, v in enumerate(logs):
        if i > 0 and abs(v) < tol:
            used = i + 1
            break
    partial = np.exp(np.cumsum(logs))
    tails = np.cumsum(np.abs(logs[:used])[::-1])[::-1]
    fit = fit_rate(tails, np.arange(1, used + 1))
    dfit = fit_rate(dists, np.arange(len(dists)))
    if 0 < fit.theta < 1:
        tail = float(tails[-1]) * fit.theta / (1 - fit.theta)
    else:
        tail = 0.0
    return DeltaResult(float(partial[used - 1]), partial, logs, used, fit, dfit, tail)


def delta_u(f, branch_x, branch_y, K=None, tol=INCREMENT_TOL):
    """Truncated product ``prod_{k=1..K} J^u f(x_-k) / J^u f(y_-k)``.

    The branches must use identical coset choices (:class:`BranchMismatch`
    otherwise). The reported ``fit`` is the geometric rate of the log
    increments; ``distance_fit`` the contraction rate of ``|x_-k - y_-k|``.
    """
    hb.check_paired(branch_x, branch_y)
    K = branch_x.depth if K is None else min(K, branch_x.depth)
    chain = _paired_chain(f, branch_x, branch_y.points[0])
    jx = _unstable_jacobians(f, branch_x.points)
    jy = _unstable_jacobians(f, chain)
    logs = np.log(jx[1 : K + 1]) - np.log(jy[1 : K + 1])
    dists = np.linalg.norm(branch_x.points - chain, axis=-1)[: K + 1]
    return _finish_product(logs, dists, K, tol)


def delta_u_many(f, branch_x, ys, K=None):
    """Full products ``Delta^u(x, y)`` for many lift points ``ys`` paired with ``branch_x``."""
    K = branch_x.depth if K is None else min(K, branch_x.depth)
    chain = _paired_chain(f, branch_x, ys)
    d = np.linalg.norm(chain - branch_x.points, axis=-1)
    if np.any(d[..., 1:] > d[..., :1] + 1e-9):
        raise BranchMismatch("paired preimages separate under backward iteration")
    jx = _unstable_jacobians(f, branch_x.points)
    jy = _unstable_jacobians(f, chain)
    logs = np.log(jx[1 : K + 1]) - np.log(jy[..., 1 : K + 1])
    return np.exp(np.sum(logs, axis=-1))


# ---------------------------------------------------------------------------
# stable product


def _reduced_orbit(f, x, K):
    """Orbit ``x_0..x_K`` kept near the unit square and the integer shifts used."""
    xs, shifts = [x], []
    for _ in range(K):
        img = f.lift_apply(xs[-1])
        n = np.floor(img)
        xs.append(img - n)
        shifts.append(n)
    return np.array(xs), np.array(shifts)


def _stable_bvp(f, x, y, K, tol=1e-13, maxiter=40):
    """Orbit ``y_0..y_K`` with ``y_0 = y + a e_u`` and ``y_K - x_K`` along ``E^s(x_K)``.

    ``y`` is carried in the lift frame of ``x``: ``y_{k+1} = f(y_k) - n_k``
    with the shifts ``n_k`` of the orbit of ``x``.
    """
    xs, shifts = _reduced_orbit(f, x, K)
    es_K = hb.stable_field(f, xs[K])
    eu = f.split.e_u
    d0 = float(np.linalg.norm(y - x))
    Y = [y]
    for k in range(K):
        nxt = f.lift_apply(Y[-1]) - shifts[k]
        # beyond this the naive orbit is dominated by round-off along E^u
        if np.linalg.norm(nxt - xs[k + 1]) > 2 * d0 + 1e-12:
            nxt = xs[k + 1].copy()
        Y.append(nxt)
    Y = np.array(Y)
    alpha = 0.0
    n = 2 * K + 1
    eye = np.eye(2)
    for _ in range(maxiter):
        Y[0] = y + alpha * eu
        R = np.empty(n)
        R[: 2 * K] = (f.lift_apply(Y[:-1]) - shifts - Y[1:]).ravel()
        diff = Y[K] - xs[K]
        R[2 * K] = diff[0] * es_K[1] - diff[1] * es_K[0]
        err = float(np.max(np.abs(R)))
        if not np.isfinite(err):
            break
        # unknowns: alpha, then y_1..y_K
        Jf = f.lift_jacobian(Y[:-1])
        J = np.zeros((n, n))
        J[0:2, 0] = Jf[0] @ eu
        for k in range(K):
            if k > 0:
                J[2 * k : 2 * k + 2, 2 * k - 1 : 2 * k + 1] = Jf[k]
            J[2 * k : 2 * k + 2, 2 * k + 1 : 2 * k + 3] -= eye
        J[2 * K, 2 * K - 1] = es_K[1]
        J[2 * K, 2 * K] = -es_K[0]
        step = np.linalg.solve(J, R)
        alpha -= step[0]
        Y[1:] -= step[1:].reshape(K, 2)
        if err < tol:
            Y[0] = y + alpha * eu
            return xs, Y, alpha
    raise NewtonDivergence("stable pairing did not converge")


def delta_s(f, x, y, K=40, tol=INCREMENT_TOL, leaf_tol=LEAF_TOL):
    """Truncated product ``prod_{k=0..K} [Jf(x_k)/Jf(y_k)] [J^s f(x_k)/J^s f(y_k)]``.

    ``y`` should lie on the local stable leaf of ``x`` (both lift points). The
    forward orbit of ``y`` is obtained from a boundary-value problem that
    keeps it on the stable leaf despite round-off growth along ``E^u``; if
    that requires moving ``y`` by more than ``leaf_tol`` along ``e_u`` the
    pair is rejected with :class:`PairSeparation`.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.linalg.norm(y - x) > SEPARATION_LIMIT:
        raise PairSeparation("points are too far apart to be stably paired")
    if np.linalg.norm(y - x) == 0.0:
        return _finish_product(np.zeros(K + 1), np.zeros(K + 1), K + 1, tol)
    try:
        xs, ys, alpha = _stable_bvp(f, x, y, K)
    except NewtonDivergence as exc:
        raise PairSeparation(f"y is not on the stable leaf of x ({exc})") from exc
    sep = np.linalg.norm(ys - xs, axis=-1)
    if np.max(sep) > SEPARATION_LIMIT:
        raise PairSeparation(f"forward iterates separate to {np.max(sep):.3g}")
    if abs(alpha) > leaf_tol:
        raise PairSeparation(f"y is {abs(alpha):.3g} off the stable leaf of x")
    ex = hb.stable_field(f, xs)
    ey = hb.stable_field(f, ys)
    jsx = np.linalg.norm(tc.matvec(f.lift_jacobian(xs), ex), axis=-1)
    jsy = np.linalg.norm(tc.matvec(f.lift_jacobian(ys), ey), axis=-1)
    logs = (np.log(f.jacobian_det(xs)) - np.log(f.jacobian_det(ys))) + (np.log(jsx) - np.log(jsy))
    return _finish_product(logs, sep, K + 1, tol)


# ---------------------------------------------------------------------------
# leaf densities


@dataclass
class LeafDensity:
    """Normalised conditional density on a leaf segment (Chebyshev interpolant)."""

    segment: lv.LeafSegment
    nodes: np.ndarray
    values: np.ndarray
    normalizer: float
    poly: Chebyshev = field(repr=False)
    antideriv: Chebyshev = field(repr=False)

    def __call__(self, s):
        return self.poly(s)

    def cumulative(self, s):
        return self.antideriv(s)

    @property
    def length(self):
        return self.segment.length


def leaf_density(f, segment, n=48, depth=hb.DEFAULT_DEPTH, values=None):
    """Conditional density ``rho(y) = Delta^u(x, y) / L`` along an unstable segment.

    ``x`` is the start of the segment with the all-zero coset branch.
    """
    L = segment.length
    k = np.arange(n)
    s = 0.5 * L * (1 - np.cos(math.pi * k / (n - 1)))
    if values is None:
        base = segment.points[0]
        bx = hb.zero_branch(f, base, depth)
        ys = segment.point_at(s) - base + bx.base
        raw = delta_u_many(f, bx, ys)
    else:
        raw = np.asarray(values(segment.point_at(s)), dtype=float)
    poly = Chebyshev.fit(s, raw, n - 1, domain=[0.0, L])
    anti = poly.integ(lbnd=0.0)
    Z = float(anti(L))
    poly = poly / Z
    anti = poly.integ(lbnd=0.0)
    return LeafDensity(segment, s, raw / Z, Z, poly, anti)


# ---------------------------------------------------------------------------
# invariant density


@dataclass
class MeasureOnGrid:
    """Absolutely continuous measure with density ``exp(-phi) / Z``."""

    phi: GridField
    normalizer: float
    residual: float

    @property
    def N(self):
        return self.phi.N

    @property
    def weights(self):
        w = np.exp(-self.phi.values)
        return w / w.sum()

    def density_field(self):
        return GridField.from_values(np.exp(-self.phi.values) / self.normalizer, self.phi.cutoff)

    def density(self, points):
        return np.exp(-self.phi(points)) / self.normalizer

    def box_mass(self, boxes, order=BOX_ORDER):
        return np.array([_box_quad(b, order, self.density) for b in boxes])


def _trim(coef, tol=1e-18):
    """Drop outer frequency shells whose coefficients are negligible."""
    F = (coef.shape[0] - 1) // 2
    scale = np.max(np.abs(coef)) or 1.0
    while F > 0:
        ring = np.abs(coef).copy()
        ring[1:-1, 1:-1] = 0.0
        if np.max(ring) > tol * scale:
            break
        coef = coef[1:-1, 1:-1]
        F -= 1
    return coef


def invariant_density(f, N=lc.DEFAULT_N, F=lc.DEFAULT_F, max_period=4, check=True):
    """Density ``exp(-phi)`` with ``log Jf - log k = phi o f - phi``."""
    psi = lc.observable_log_jacobian(f, N, max_period, check)
    sol = lc.solve_cohomology(f, psi, F, details=True)
    coef = _trim(sol.phi.coef)
    phi = GridField(sol.phi.values, coef)
    Z = float(np.mean(np.exp(-phi.values)))
    return MeasureOnGrid(phi, Z, sol.sup_residual)


def _box_quad(box, order, func):
    x0, y0, w, h = box
    t, wt = np.polynomial.legendre.leggauss(order)
    xs = x0 + 0.5 * w * (t + 1)
    ys = y0 + 0.5 * h * (t + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    W = np.outer(wt, wt) * (0.25 * w * h)
    vals = func(np.stack([X, Y], axis=-1))
    return float(np.sum(W * vals))


def pullback_mass(f, measure, box, order=BOX_ORDER):
    """``nu(f^-1 B)`` as ``int_B sum_c rho(g_c y) / Jf(g_c y) dy``."""

    def integrand(y):
        pre = f.preimages(y)
        return np.sum(measure.density(pre) / f.jacobian_det(pre), axis=-1)

    return _box_quad(box, order, integrand)


def random_boxes(n, rng, sides=(1 / 8, 1 / 16, 1 / 32)):
    s = rng.choice(np.asarray(sides), size=(n, 2))
    c = rng.random((n, 2))
    return np.column_stack([c, s])


def invariance_defects(f, measure, boxes, order=BOX_ORDER):
    return np.array([abs(pullback_mass(f, measure, b, order) - _box_quad(b, order, measure.density)) for b in boxes])


# ---------------------------------------------------------------------------
# exponents and entropy


def birkhoff_exponents(f, n_orbits=8, length=10_000, burn=100, seed=0):
    """Per-orbit Birkhoff averages of ``log|Df|E^u|``, ``log|Df|E^s|`` and ``log Jf``."""
    rng = np.random.default_rng(seed)
    x = rng.random((n_orbits, 2))
    total = length + 2 * burn
    orbit = np.empty((n_orbits, total, 2))
    for t in range(total):
        orbit[:, t] = x
        x = tc.reduce(f.lift_apply(x))
    J = f.lift_jacobian(orbit)
    v = np.broadcast_to(f.split.e_u, (n_orbits, 2)).copy()
    lu = np.zeros((n_orbits, total))
    for t in range(total):
        w = tc.matvec(J[:, t], v)
        nn = np.linalg.norm(w, axis=-1)
        lu[:, t] = np.log(nn)
        v = w / nn[:, None]
    Jinv = tc.inv2(J)
    w = np.broadcast_to(f.split.e_s, (n_orbits, 2)).copy()
    ls = np.zeros((n_orbits, total))
    for t in range(total - 1, -1, -1):
        z = tc.matvec(Jinv[:, t], w)
        nn = np.linalg.norm(z, axis=-1)
        ls[:, t] = -np.log(nn)
        w = z / nn[:, None]
    lj = np.log(np.abs(np.linalg.det(J)))
    win = slice(burn, burn + length)
    return lu[:, win], ls[:, win], lj[:, win]


def linear_spectrum(M):
    """Eigenvalue splitting of an integer ``d x d`` matrix.

    Returns moduli, the dimensions of the expanding/contracting parts and
    ``sum log+ |beta_i|``.
    """
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("square matrix required")
    if not np.all(np.equal(np.mod(M, 1), 0)):
        raise ValueError("integer matrix required")
    ev = np.linalg.eigvals(M.astype(float))
    mod = np.abs(ev)
    order = np.argsort(-mod)
    ev, mod = ev[order], mod[order]
    charpoly = np.rint(np.real(np.poly(M.astype(float)))).astype(np.int64)
    det = int(round(np.linalg.det(M.astype(float))))
    return {
        "dimension": int(M.shape[0]),
        "eigenvalues_real": np.real(ev).tolist(),
        "eigenvalues_imag": np.imag(ev).tolist(),
        "moduli": mod.tolist(),
        "unstable_dim": int(np.sum(mod > 1 + 1e-12)),
        "stable_dim": int(np.sum(mod < 1 - 1e-12)),
        "central_dim": int(np.sum(np.abs(mod - 1) <= 1e-12)),
        "real_spectrum": bool(np.all(np.abs(np.imag(ev)) < 1e-12)),
        "simple_spectrum": bool(len(np.unique(np.round(ev, 10))) == len(ev)),
        "charpoly": charpoly.tolist(),
        "degree": abs(det),
        "log_degree": math.log(abs(det)) if det else -math.inf,
        "entropy_linear": float(np.sum(np.log(mod[mod > 1]))),
    }


def _bowen_far(orb, i, j, eps):
    return np.max(tc.distance(orb[i], orb[j])) >= eps


def separated_count(f, n, eps=1 / 64, base=None, length=None, resolution=4):
    """Greedy ``(n, eps)``-separated subset of a short unstable segment.

    Points are sampled along a straight segment in the linear unstable
    direction finely enough to resolve separation at time ``n - 1``.
    """
    base = np.array([0.2345, 0.6789]) if base is None else np.asarray(base, dtype=float)
    length = eps if length is None else length
    grow = abs(f.split.mu_u) ** (n - 1) * 1.5
    M = int(resolution * length * grow / eps) + 2
    t = np.linspace(0.0, length, M)
    pts = base + t[:, None] * f.split.e_u
    orb = np.empty((M, n, 2))
    x = tc.reduce(pts)
    for k in range(n):
        orb[:, k] = x
        x = tc.reduce(f.lift_apply(x))
    count, i = 1, 0
    while True:
        step = 1
        while i + step < M and not _bowen_far(orb, i, i + step, eps):
            step *= 2
        if i + step >= M:
            if not _bowen_far(orb, i, M - 1, eps):
                return count
            hi = M - 1
        else:
            hi = i + step
        lo = i + step // 2 if step > 1 else i
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if _bowen_far(orb, i, mid, eps):
                hi = mid
            else:
                lo = mid
        count += 1
        i = hi


def separated_entropy(f, eps=1 / 64, ns=range(3, 10), **kw):
    ns = np.asarray(list(ns))
    counts = np.array([separated_count(f, int(n), eps, **kw) for n in ns])
    slope, _ = np.polyfit(ns, np.log(counts), 1)
    return float(slope), counts


@dataclass
class EntropyReport:
    lambda_u: float
    lambda_s: float
    log_k: float
    h_plus: float
    h_minus: float
    h_separated: float
    separated_counts: list
    spread_u: float
    spread_s: float
    tolerance: float
    checks: dict

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items()}


def entropy_report(f, n_orbits=8, length=10_000, burn=100, seed=0, tol=1e-3, eps=1 / 64,
                   ns=range(3, 10), entropy_window=0.15, separated=True):
    """Exponents by Birkhoff averages and the entropy identities they imply."""
    lu, ls, lj = birkhoff_exponents(f, n_orbits, length, burn, seed)
    mu, ms = lu.mean(axis=1), ls.mean(axis=1)
    lam_u, lam_s = float(mu.mean()), float(ms.mean())
    logk = math.log(f.degree)
    h_sep, counts = separated_entropy(f, eps, ns) if separated else (math.nan, np.array([]))
    h_plus = lam_u
    h_minus = logk - lam_s
    checks = {
        "exponent_sum": abs(lam_u + lam_s - logk) < tol,
        "entropy_balance": abs(h_plus - h_minus) < tol,
    }
    if separated:
        checks["separated_entropy"] = abs(h_sep - lam_u) < entropy_window
    return EntropyReport(
        lam_u, lam_s, logk, h_plus, h_minus, h_sep, counts.tolist(),
        float(mu.max() - mu.min()), float(ms.max() - ms.min()), tol, checks,
    )
