"""Periodic orbits, their Lyapunov exponents, closing and specification.

Periodic orbits of a model are found by continuation from the rational
periodic points of its linear part: an orbit of ``A`` fixes the integer
offsets ``c_i`` in ``lift(f)(p_i) = p_{i+1} + c_i``, after which the cyclic
system is solved by Newton's method on the lift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import torus_core as tc
from .errors import CountMismatch, DegenerateMatrix, NewtonDivergence

SHADOW_TOL = 1e-12
DEDUP_TOL = 1e-7


# ---------------------------------------------------------------------------
# linear part: exact counts and points


def _int_matrix_power(A, n):
    M = [[int(v) for v in row] for row in np.asarray(A).tolist()]
    R = [[1, 0], [0, 1]]
    for _ in range(n):
        R = [
            [R[0][0] * M[0][0] + R[0][1] * M[1][0], R[0][0] * M[0][1] + R[0][1] * M[1][1]],
            [R[1][0] * M[0][0] + R[1][1] * M[1][0], R[1][0] * M[0][1] + R[1][1] * M[1][1]],
        ]
    return R


def linear_periodic_count(A, n):
    """``|det(A^n - I)|``: the number of solutions of ``A^n x = x`` on the torus."""
    P = _int_matrix_power(A, n)
    det = (P[0][0] - 1) * (P[1][1] - 1) - P[0][1] * P[1][0]
    if det == 0:
        raise DegenerateMatrix(f"A^{n} - I is singular")
    return abs(det)


def linear_periodic_numerators(A, n):
    """Fixed points of ``A^n`` as integer numerators over ``q = |det(A^n - I)|``.

    Returns ``(q, y)`` with ``y`` of shape (q, 2); the points are ``y / q``.
    The set is the subgroup of (Z/q)^2 generated by the columns of
    ``adj(A^n - I)``, enumerated by closure.
    """
    q = linear_periodic_count(A, n)
    P = _int_matrix_power(A, n)
    m11, m12, m21, m22 = P[0][0] - 1, P[0][1], P[1][0], P[1][1] - 1
    gens = [((m22) % q, (-m21) % q), ((-m12) % q, (m11) % q)]
    seen = {(0, 0)}
    frontier = [(0, 0)]
    while frontier:
        nxt = []
        for a, b in frontier:
            for g1, g2 in gens:
                y = ((a + g1) % q, (b + g2) % q)
                if y not in seen:
                    seen.add(y)
                    nxt.append(y)
        frontier = nxt
    if len(seen) != q:
        raise CountMismatch(f"enumerated {len(seen)} fixed points of A^{n}, expected {q}")
    y = np.array(sorted(seen), dtype=np.int64)
    return q, y


def _linear_orbits(A, n):
    """Group the fixed points of ``A^n`` into ``A``-orbits.

    Yields ``(numerators, offsets, q)`` per orbit where ``offsets[i]`` is the
    integer vector with ``A y_i / q = y_{i+1} / q + offsets[i]``.
    """
    q, ys = linear_periodic_numerators(A, n)
    A = np.asarray(A, dtype=np.int64)
    index = {tuple(y): i for i, y in enumerate(ys.tolist())}
    done = np.zeros(len(ys), dtype=bool)
    orbits = []
    for i0 in range(len(ys)):
        if done[i0]:
            continue
        cur = ys[i0]
        pts, offs = [], []
        while True:
            j = index[tuple(cur.tolist())]
            if done[j]:
                break
            done[j] = True
            pts.append(cur)
            img = A @ cur
            nxt = img % q
            offs.append((img - nxt) // q)
            cur = nxt
        orbits.append((np.array(pts), np.array(offs), q))
    return orbits


# ---------------------------------------------------------------------------
# periodic orbits of a model


@dataclass
class PeriodicOrbit:
    """A periodic orbit ``points[0] -> points[1] -> ...`` with its exponents.

    ``offsets[i]`` is the integer vector with
    ``lift(f)(points[i]) = points[i+1] + offsets[i]``.
    """

    period: int
    points: np.ndarray
    offsets: np.ndarray
    lambda_u: float = math.nan
    lambda_s: float = math.nan
    log_jacobian: float = math.nan
    residual: float = math.nan
    linear_points: np.ndarray | None = field(default=None, repr=False)

    @property
    def exponent_sum_defect(self):
        return self.lambda_u + self.lambda_s - self.log_jacobian


def _cyclic_residual(f, P, offsets):
    return f.lift_apply(P) - np.roll(P, -1, axis=-2) - offsets


def _batched_periodic_newton(f, P, offsets, tol=SHADOW_TOL, maxiter=50):
    """Newton for a batch of cyclic systems, ``P`` of shape (B, d, 2)."""
    B, d, _ = P.shape
    eye = np.eye(2)
    for _ in range(maxiter):
        R = _cyclic_residual(f, P, offsets)
        err = float(np.max(np.abs(R)))
        if not np.isfinite(err):
            break
        J = f.lift_jacobian(P)
        big = np.zeros((B, 2 * d, 2 * d))
        for i in range(d):
            j = (i + 1) % d
            big[:, 2 * i : 2 * i + 2, 2 * i : 2 * i + 2] += J[:, i]
            big[:, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2] -= eye
        step = np.linalg.solve(big, R.reshape(B, 2 * d, 1)).reshape(B, d, 2)
        P = P - step
        if err < tol:
            R = _cyclic_residual(f, P, offsets)
            return P, float(np.max(np.abs(R)))
    raise NewtonDivergence(f"periodic Newton (period {d}) did not converge")


def _sparse_periodic_newton(f, P, offsets, tol=SHADOW_TOL, maxiter=50):
    """Newton for one long cyclic system using a sparse block-cyclic Jacobian."""
    m = len(P)
    idx = np.arange(m)
    nxt = (idx + 1) % m
    rows_J = 2 * idx[:, None] + np.array([0, 0, 1, 1])
    cols_J = 2 * idx[:, None] + np.array([0, 1, 0, 1])
    rows_I = 2 * idx[:, None] + np.array([0, 1])
    cols_I = 2 * nxt[:, None] + np.array([0, 1])
    rows = np.concatenate([rows_J.ravel(), rows_I.ravel()])
    cols = np.concatenate([cols_J.ravel(), cols_I.ravel()])
    for _ in range(maxiter):
        R = _cyclic_residual(f, P, offsets)
        err = float(np.max(np.abs(R)))
        if not np.isfinite(err):
            break
        J = f.lift_jacobian(P)
        vals = np.concatenate([J.reshape(m, 4).ravel(), -np.ones(2 * m)])
        mat = sp.csc_matrix((vals, (rows, cols)), shape=(2 * m, 2 * m))
        P = P - spla.spsolve(mat, R.ravel()).reshape(m, 2)
        if err < tol:
            R = _cyclic_residual(f, P, offsets)
            return P, float(np.max(np.abs(R)))
    raise NewtonDivergence(f"periodic Newton (period {m}) did not converge")


def solve_periodic(f, seed, offsets, tol=SHADOW_TOL):
    """Solve ``lift(f)(P_i) = P_{i+1} + offsets_i`` cyclically from ``seed``."""
    seed = np.asarray(seed, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    if len(seed) <= 24:
        P, res = _batched_periodic_newton(f, seed[None], offsets[None], tol)
        return P[0], res
    return _sparse_periodic_newton(f, seed, offsets, tol)


def orbit_exponents(f, points, burn=40):
    """Unstable/stable exponents and mean log-Jacobian along periodic orbits.

    ``points`` has shape (..., d, 2). The unstable direction is obtained by
    pushing the linear eigenvector around the orbit (``burn`` steps before
    recording), the stable one by pulling back with ``Df^-1``.
    """
    points = np.asarray(points, dtype=float)
    d = points.shape[-2]
    J = f.lift_jacobian(points)
    Jinv = tc.inv2(J)
    lead = points.shape[:-2]

    v = np.broadcast_to(f.split.e_u, lead + (2,)).copy()
    for t in range(burn):
        v = tc.matvec(J[..., (t - burn) % d, :, :], v)
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
    logs_u = np.zeros(lead)
    for i in range(d):
        w = tc.matvec(J[..., i, :, :], v)
        n = np.linalg.norm(w, axis=-1)
        logs_u += np.log(n)
        v = w / n[..., None]

    w = np.broadcast_to(f.split.e_s, lead + (2,)).copy()
    for t in range(burn):
        i = (d - 1 - t) % d
        w = tc.matvec(Jinv[..., i, :, :], w)
        w /= np.linalg.norm(w, axis=-1, keepdims=True)
    # w now sits at index (d - burn) mod d; continue pulling back one full period
    start = (d - burn) % d
    logs_s = np.zeros(lead)
    for t in range(d):
        i = (start - 1 - t) % d
        z = tc.matvec(Jinv[..., i, :, :], w)
        n = np.linalg.norm(z, axis=-1)
        logs_s -= np.log(n)
        w = z / n[..., None]

    detJ = np.abs(J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0])
    logjac = np.sum(np.log(detJ), axis=-1) / d
    return logs_u / d, logs_s / d, logjac


def lyapunov_at(f, orbit):
    """Return ``(lambda_u, lambda_s)`` at a periodic orbit."""
    lu, ls, _ = orbit_exponents(f, orbit.points)
    return float(lu), float(ls)


def _orbit_offsets(f, points):
    img = f.lift_apply(points)
    return np.rint(img - np.roll(points, -1, axis=-2)).astype(np.int64)


def find_periodic(f, n, check_count=True):
    """All periodic orbits whose period divides ``n``.

    Each orbit of ``A`` with minimal period ``d | n`` is continued to an orbit
    of ``f`` by Newton's method; orbits are returned with minimal periods and
    exponents filled in.
    """
    if n < 1 or n > 8:
        raise ValueError("periods 1..8 only (desk scale)")
    expected = linear_periodic_count(f.A, n)
    by_period = {}
    for nums, offs, q in _linear_orbits(f.A, n):
        by_period.setdefault(len(nums), []).append((nums / q, offs))

    orbits = []
    for d, items in sorted(by_period.items()):
        seeds = np.array([x for x, _ in items])
        offsets = np.array([c for _, c in items], dtype=float)
        P, _ = _batched_periodic_newton(f, seeds.copy(), offsets)
        lu, ls, lj = orbit_exponents(f, P)
        res = np.max(np.abs(_cyclic_residual(f, P, offsets)), axis=(-2, -1))
        for b in range(len(items)):
            pts = tc.reduce(P[b])
            orbits.append(
                PeriodicOrbit(
                    period=d,
                    points=pts,
                    offsets=_orbit_offsets(f, pts),
                    lambda_u=float(lu[b]),
                    lambda_s=float(ls[b]),
                    log_jacobian=float(lj[b]),
                    residual=float(res[b]),
                    linear_points=seeds[b],
                )
            )

    total = sum(o.period for o in orbits)
    allpts = np.concatenate([o.points for o in orbits])
    if check_count:
        distinct = _count_distinct(allpts)
        if total != expected or distinct != expected:
            raise CountMismatch(f"period {n}: found {distinct} distinct points, expected {expected}")
    return orbits


def _count_distinct(points, tol=DEDUP_TOL):
    """Number of distinct torus points (greedy clustering on a hash grid)."""
    pts = tc.reduce(points)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    keep = []
    for p in pts:
        if keep:
            near = np.asarray(keep[-64:])
            if np.min(tc.distance(near, p)) < tol:
                continue
        keep.append(p)
    # wrap-around duplicates near x1 = 0 ~ 1
    keep = np.asarray(keep)
    edge = keep[(keep[:, 0] < tol) | (keep[:, 0] > 1 - tol)]
    dup = 0
    for i in range(len(edge)):
        for j in range(i + 1, len(edge)):
            if tc.distance(edge[i], edge[j]) < tol:
                dup += 1
    return len(keep) - dup


def periodic_table(f, max_period=5):
    """Orbits of minimal period ``1..max_period`` (each orbit once)."""
    out = []
    for n in range(1, max_period + 1):
        out.extend(o for o in find_periodic(f, n) if o.period == n)
    return out


def periodic_data_defect(f, max_period=5, orbits=None):
    """Largest deviation of periodic exponents from those of the linear part."""
    orbits = periodic_table(f, max_period) if orbits is None else orbits
    lu, ls = f.split.lambda_u, f.split.lambda_s
    return max(max(abs(o.lambda_u - lu), abs(o.lambda_s - ls)) for o in orbits)


# ---------------------------------------------------------------------------
# closing lemma


@dataclass
class PseudoOrbitSegment:
    """Points ``x_0, ..., x_m`` with ``x_m`` close to ``x_0``."""

    points: np.ndarray

    def __post_init__(self):
        self.points = tc.reduce(np.asarray(self.points, dtype=float))

    @property
    def period(self):
        return len(self.points) - 1

    def jump_errors(self, f):
        return tc.distance(f.apply(self.points[:-1]), self.points[1:])

    def closing_gap(self):
        return float(tc.distance(self.points[-1], self.points[0]))


@dataclass
class ShadowResult:
    orbit: PeriodicOrbit
    distance: float
    residual: float
    lifts: np.ndarray = field(repr=False)


def closing_lemma_shadow(f, seg, gamma=0.05, offsets=None, seed=None, exponents=True):
    """Shadow a nearly closed pseudo-orbit by a true periodic orbit.

    The integer offsets are read off the segment (or passed in); Newton on the
    cyclic lifted system is seeded by the segment itself unless ``seed`` is
    given. ``distance`` is ``max_j d(f^j p, x_j)``.
    """
    if not isinstance(seg, PseudoOrbitSegment):
        seg = PseudoOrbitSegment(seg)
    m = seg.period
    if m < 1:
        raise ValueError("segment needs at least two points")
    x = seg.points[:-1]
    if offsets is None:
        gap = seg.closing_gap()
        jumps = seg.jump_errors(f)
        if gap > gamma or np.max(jumps) > gamma:
            raise NewtonDivergence(
                f"segment does not nearly close (gap {gap:.3g}, max jump {np.max(jumps):.3g}, gamma {gamma})"
            )
        offsets = _orbit_offsets(f, x)
    offsets = np.asarray(offsets, dtype=float)
    P0 = x.copy() if seed is None else np.asarray(seed, dtype=float)
    P, res = solve_periodic(f, P0, offsets)
    pts = tc.reduce(P)
    dist = float(np.max(tc.distance(pts, x)))
    orbit = PeriodicOrbit(period=m, points=pts, offsets=_orbit_offsets(f, pts), residual=res)
    if exponents:
        lu, ls, lj = orbit_exponents(f, pts)
        orbit.lambda_u, orbit.lambda_s, orbit.log_jacobian = float(lu), float(ls), float(lj)
    return ShadowResult(orbit, dist, res, P)


# ---------------------------------------------------------------------------
# specification


def lemma_block_lengths(k1, gap, cap=10_000):
    """Squared block schedule ``k_{j+1} = (k_1 + ... + k_j + j N)^2``, truncated at ``cap``."""
    ks = [int(k1)]
    while True:
        nxt = (sum(ks) + len(ks) * gap) ** 2
        if sum(ks) + nxt + (len(ks) + 1) * gap > cap:
            return ks
        ks.append(nxt)


def admissible_delta(lam_p, lam_q):
    """Supremum of ``delta`` with ``(1+delta)^2 lam_p < (1-delta^2) lam_q``."""
    lo, hi = sorted((lam_p, lam_q))
    return (hi - lo) / (hi + lo)


def linear_cyclic_solution(A, offsets, wraps_min=60):
    """Solve ``A q_i - q_{i+1} = c_i`` cyclically by splitting along the eigenbasis.

    The unstable coordinate is solved by backward substitution and the stable
    one by forward substitution; both recursions contract, so going round the
    cycle long enough yields the periodic solution.
    """
    split = tc.eigen_split(A)
    B = split.basis
    coords = np.linalg.solve(B, np.asarray(offsets, dtype=float).T).T
    a, b = coords[:, 0], coords[:, 1]
    m = len(offsets)
    steps = m + max(wraps_min, 0)
    u = np.zeros(m)
    cur = 0.0
    for t in range(steps + m):
        i = (-1 - t) % m
        cur = (cur + a[i]) / split.mu_u
        u[i] = cur
    s = np.zeros(m)
    cur = 0.0
    for t in range(steps + m):
        i = t % m
        s[i] = cur
        cur = split.mu_s * cur - b[i]
    return np.column_stack([u, s]) @ B.T


@dataclass
class SpecificationResult:
    orbit: PeriodicOrbit
    blocks: list
    targets: np.ndarray = field(repr=False)
    delta_max: float = math.nan

    def to_dict(self):
        return {
            "period": self.orbit.period,
            "residual": self.orbit.residual,
            "delta_max": self.delta_max,
            "blocks": self.blocks,
        }


def unstable_log_norms(f, points, burn=40):
    """``log |Df|E^u|`` at each point of a periodic orbit (branch = the orbit itself)."""
    points = np.asarray(points, dtype=float)
    d = len(points)
    J = f.lift_jacobian(points)
    v = f.split.e_u.copy()
    for t in range(burn):
        v = J[(t - burn) % d] @ v
        v /= np.linalg.norm(v)
    out = np.empty(d)
    for i in range(d):
        w = J[i] @ v
        out[i] = math.log(math.hypot(w[0], w[1]))
        v = w / math.exp(out[i])
    return out


def specification_concatenate(f, p, q, block_lengths, gap=20, epsilon=0.05):
    """Concatenate blocks of ``p`` and ``q`` (alternating) into one periodic orbit.

    Block lengths are rounded up to whole periods of their orbit. Each gap of
    ``gap`` steps continues the previous orbit for half its length and leads
    into the next one for the rest; the resulting symbolic offsets determine a
    unique periodic orbit, seeded by the linear solution and refined by
    Newton. The report lists per-block Birkhoff averages of
    ``log |Df|E^u|`` and tracking distances.
    """
    targets, offsets, labels = [], [], []
    blocks = []
    orbits = [p, q]
    nblocks = len(block_lengths)
    pos = 0
    for j, k in enumerate(block_lengths):
        th = orbits[j % 2]
        nx = orbits[(j + 1) % 2] if nblocks > 1 else th
        k = int(math.ceil(k / th.period) * th.period)
        blocks.append({"index": j, "orbit": "p" if j % 2 == 0 else "q", "start": pos, "length": k})
        h1 = gap // 2
        h2 = gap - h1
        for i in range(k + h1):
            targets.append(th.points[i % th.period])
            labels.append(j)
        for i in range(-h2, 0):
            targets.append(nx.points[i % nx.period])
            labels.append(-1)
        pos += k + gap
    targets = np.array(targets)
    offsets = _orbit_offsets(f, targets)

    seed = linear_cyclic_solution(f.A, offsets)
    res = closing_lemma_shadow(f, PseudoOrbitSegment(np.vstack([targets, targets[:1]])),
                               offsets=offsets, seed=seed, exponents=False)
    orbit = res.orbit
    logs = unstable_log_norms(f, orbit.points)
    lu, ls, lj = orbit_exponents(f, orbit.points)
    orbit.lambda_u, orbit.lambda_s, orbit.log_jacobian = float(lu), float(ls), float(lj)
    track = tc.distance(orbit.points, targets)
    for b in blocks:
        s, k = b["start"], b["length"]
        th = orbits[b["index"] % 2]
        b["target_lambda_u"] = th.lambda_u
        b["birkhoff_lambda_u"] = float(np.mean(logs[s : s + k]))
        b["tracking_distance"] = float(np.max(track[s : s + k]))
        b["tracked"] = bool(b["tracking_distance"] < epsilon)
    return SpecificationResult(orbit, blocks, targets, admissible_delta(p.lambda_u, q.lambda_u))
