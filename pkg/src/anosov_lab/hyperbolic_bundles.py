"""Stable and unstable directions, cone certificates and specialness.

The stable direction at ``p`` is obtained by pulling the linear stable
eigenvector back through ``Df^-1`` along the forward orbit of ``p``. The
unstable direction depends on a backward branch (a truncated inverse-limit
orbit): the linear unstable eigenvector is pushed forward by ``Df`` from the
deepest preimage to the base point.

Directions are unit vectors oriented to have positive inner product with the
corresponding eigenvector of the linear part.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import torus_core as tc
from .errors import BranchMismatch, CertificationFailed, DepthTooShallow

DEFAULT_DEPTH = 30
CONTRACTION_LIMIT = 0.5


@dataclass(frozen=True)
class ConeParams:
    """Cone half-angles (radians) around the linear eigendirections plus growth bounds."""

    unstable_half_angle: float = 0.3
    stable_half_angle: float = 0.3
    expansion: float = 1.2
    constant: float = 1.0

    def to_dict(self):
        return {
            "unstable_half_angle": self.unstable_half_angle,
            "stable_half_angle": self.stable_half_angle,
            "expansion": self.expansion,
            "constant": self.constant,
        }


# ---------------------------------------------------------------------------
# backward branches


@dataclass
class BackwardBranch:
    """A truncated backward orbit ``x_0, x_-1, ..., x_-N``.

    ``choices[j]`` is the coset index used to go from ``x_-j`` to
    ``x_-(j+1)``. ``points`` holds lifts in (approximately) the unit square
    and ``shifts[j]`` the integer vector subtracted at level ``j+1`` to get
    there; a branch paired with this one reuses both so that nearby base
    points stay nearby on the lift.
    """

    base: np.ndarray
    choices: np.ndarray
    points: np.ndarray = field(repr=False)
    shifts: np.ndarray = field(repr=False)

    @property
    def depth(self):
        return len(self.choices)


def backward_branch(f, base, choices):
    """Build a branch from explicit coset choices."""
    choices = np.asarray(choices, dtype=np.int64)
    if choices.ndim != 1 or len(choices) < 1:
        raise ValueError("a branch needs depth >= 1")
    x = tc.reduce(np.asarray(base, dtype=float))
    pts, shifts = [x], []
    for c in choices:
        y = f.pull_back(x, int(c))
        s = np.floor(y)
        x = y - s
        pts.append(x)
        shifts.append(s)
    return BackwardBranch(pts[0], choices, np.array(pts), np.array(shifts))


def random_branch(f, base, depth, rng):
    return backward_branch(f, base, rng.integers(0, f.degree, size=depth))


def zero_branch(f, base, depth=DEFAULT_DEPTH):
    """The 'all-zero coset' branch convention."""
    return backward_branch(f, base, np.zeros(depth, dtype=np.int64))


def paired_branch(f, branch, base):
    """Branch at ``base`` that follows ``branch`` preimage by preimage.

    ``base`` is interpreted as a lift point close to ``branch.base``.
    """
    y = np.asarray(base, dtype=float)
    pts = [y]
    for c, s in zip(branch.choices, branch.shifts):
        y = f.pull_back(y, int(c)) - s
        pts.append(y)
    return BackwardBranch(pts[0], branch.choices.copy(), np.array(pts), branch.shifts.copy())


def check_paired(x_branch, y_branch, slack=1e-9):
    """Raise :class:`BranchMismatch` unless the branches pair corresponding preimages."""
    if x_branch.depth != y_branch.depth or np.any(x_branch.choices != y_branch.choices):
        raise BranchMismatch("branches use different coset choices")
    d = np.linalg.norm(x_branch.points - y_branch.points, axis=-1)
    if np.any(d[1:] > d[0] + slack):
        raise BranchMismatch("paired preimages separate under backward iteration")


# ---------------------------------------------------------------------------
# vectorised branch pull-back used for whole point sets


def branch_points(f, points, depth, choice=0):
    """Backward iterates of ``points`` along a constant coset choice.

    Returns an array of shape ``points.shape[:-1] + (depth + 1, 2)`` ordered
    ``x_0, x_-1, ..., x_-depth`` (reduced to the unit square).
    """
    x = tc.reduce(points)
    out = [x]
    for _ in range(depth):
        x = tc.reduce(f.pull_back(x, choice))
        out.append(x)
    return np.stack(out, axis=-2)


def _push_forward(f, chain, seed):
    """Push ``seed`` along ``chain`` (deepest point last); returns (vectors, factor).

    ``vectors[..., j, :]`` is the normalised direction at ``chain[..., j, :]``;
    ``factor`` is the product of projective derivatives, i.e. how much a
    perturbation of the seed direction is damped by the time it reaches the base.
    """
    depth = chain.shape[-2] - 1
    v = np.broadcast_to(seed, chain.shape[:-2] + (2,)).copy()
    vecs = [None] * (depth + 1)
    vecs[depth] = v
    factor = np.ones(chain.shape[:-2])
    for j in range(depth, 0, -1):
        J = f.lift_jacobian(chain[..., j, :])
        w = tc.matvec(J, v)
        n2 = np.sum(w * w, axis=-1)
        det = np.abs(J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0])
        factor = factor * det / n2
        v = w / np.sqrt(n2)[..., None]
        vecs[j - 1] = v
    return np.stack(vecs, axis=-2), factor


def _orient_like(v, ref):
    sign = np.where(np.sum(v * ref, axis=-1) < 0, -1.0, 1.0)
    return v * sign[..., None]


def _check_factor(factor, what):
    worst = float(np.max(factor)) if np.size(factor) else 0.0
    if worst > CONTRACTION_LIMIT:
        raise DepthTooShallow(f"{what}: seed influence {worst:.3g} exceeds {CONTRACTION_LIMIT}")
    return worst


def unstable_direction(f, branch, seed=None, return_factor=False):
    """Unstable direction at ``branch.base`` for the given backward branch."""
    if branch.depth < 1:
        raise DepthTooShallow("branch depth must be at least 1")
    seed = f.split.e_u if seed is None else np.asarray(seed, dtype=float)
    vecs, factor = _push_forward(f, branch.points, seed / np.linalg.norm(seed))
    _check_factor(factor, "unstable direction")
    v = _orient_like(vecs[0], f.split.e_u)
    return (v, float(factor)) if return_factor else v


def unstable_along_branch(f, branch, extra=DEFAULT_DEPTH):
    """Unstable directions at every level ``x_0 .. x_-depth`` of ``branch``.

    The branch is internally extended by ``extra`` further zero-coset
    preimages so that the deepest requested level is also converged.
    """
    deep = branch.points[-1]
    more = branch_points(f, deep, extra)[1:]
    chain = np.concatenate([branch.points, more], axis=0)
    vecs, factor = _push_forward(f, chain, f.split.e_u)
    return _orient_like(vecs[: branch.depth + 1], f.split.e_u)


def unstable_field(f, points, depth=DEFAULT_DEPTH, choice=0, return_factor=False):
    """Vectorised unstable directions using a constant coset choice."""
    points = np.asarray(points, dtype=float)
    chain = branch_points(f, points, depth, choice)
    vecs, factor = _push_forward(f, chain, f.split.e_u)
    _check_factor(factor, "unstable direction")
    v = _orient_like(vecs[..., 0, :], f.split.e_u)
    return (v, factor) if return_factor else v


def stable_field(f, points, depth=40, return_factor=False):
    """Stable directions: pull the linear stable eigenvector back along forward orbits."""
    if depth < 1:
        raise DepthTooShallow("depth must be at least 1")
    orbit = f.iterate(points, depth)
    w = np.broadcast_to(f.split.e_s, np.shape(points)).copy()
    factor = np.ones(np.shape(points)[:-1])
    for j in range(depth - 1, -1, -1):
        J = f.lift_jacobian(orbit[..., j, :])
        Jinv = tc.inv2(J)
        z = tc.matvec(Jinv, w)
        n2 = np.sum(z * z, axis=-1)
        det = np.abs(Jinv[..., 0, 0] * Jinv[..., 1, 1] - Jinv[..., 0, 1] * Jinv[..., 1, 0])
        factor = factor * det / n2
        w = z / np.sqrt(n2)[..., None]
    _check_factor(factor, "stable direction")
    w = _orient_like(w, f.split.e_s)
    return (w, factor) if return_factor else w


def stable_direction(f, p, depth=40):
    """Stable direction at ``p``; depends only on the forward orbit."""
    return stable_field(f, np.asarray(p, dtype=float), depth)


def direction_field(f, points, which, depth=None):
    if which == "unstable":
        return unstable_field(f, points, DEFAULT_DEPTH if depth is None else depth)
    if which == "stable":
        return stable_field(f, points, 40 if depth is None else depth)
    raise ValueError(f"unknown bundle {which!r}")


def branch_index(f, image, point, tol=1e-7):
    """Coset index ``c`` with ``pull_back(image, c) == point`` on the torus."""
    pre = f.preimages(image)
    d = tc.distance(pre, np.asarray(point, dtype=float)[..., None, :])
    idx = np.argmin(d, axis=-1)
    if np.max(np.min(d, axis=-1)) > tol:
        raise BranchMismatch("point is not a preimage of the image point")
    return idx


def invariance_defect(f, points, which, depth=None):
    """Angle between ``Df E(x)`` and ``E(f x)`` at each point.

    For the unstable bundle ``E(f x)`` is recomputed along the branch that
    passes through ``x`` (so the comparison is meaningful for non-special maps)
    with a seed placed one level deeper than the one used for ``E(x)``.
    """
    points = tc.reduce(np.asarray(points, dtype=float))
    fx = f.apply(points)
    if which == "stable":
        E = stable_field(f, points, 40 if depth is None else depth)
        image = tc.matvec(f.jacobian(points), E)
        return tc.angle_between(image, stable_field(f, fx, 40 if depth is None else depth))
    if which != "unstable":
        raise ValueError(f"unknown bundle {which!r}")
    depth = DEFAULT_DEPTH if depth is None else depth
    chain = branch_points(f, points, depth)
    E = _orient_like(_push_forward(f, chain, f.split.e_u)[0][..., 0, :], f.split.e_u)
    image = tc.matvec(f.jacobian(points), E)
    deeper = branch_points(f, chain[..., -1, :], 1)[..., 1:, :]
    full = np.concatenate([fx[..., None, :], chain, deeper], axis=-2)
    E_fx = _push_forward(f, full, f.split.e_u)[0][..., 0, :]
    return tc.angle_between(image, E_fx)


# ---------------------------------------------------------------------------
# cones


def _min_growth(M, e, half_angle):
    """Minimum of |M v| over unit v within ``half_angle`` of the line through ``e``."""
    eperp = np.array([-e[1], e[0]])
    Q = np.swapaxes(M, -1, -2) @ M
    a = np.einsum("i,...ij,j->...", e, Q, e)
    g = np.einsum("i,...ij,j->...", eperp, Q, eperp)
    b = np.einsum("i,...ij,j->...", e, Q, eperp)

    def quad(t):
        return 0.5 * (a + g) + 0.5 * (a - g) * np.cos(2 * t) + b * np.sin(2 * t)

    vals = [quad(-half_angle), quad(half_angle)]
    t0 = 0.5 * np.arctan2(2 * b, a - g)
    for k in (-2, -1, 0, 1, 2):
        t = t0 + k * np.pi / 2
        inside = np.abs(t) <= half_angle
        vals.append(np.where(inside, quad(t), np.inf))
    return np.sqrt(np.min(np.stack(vals), axis=0))


def _signed_angle(v, e):
    eperp = np.array([-e[1], e[0]])
    x = np.einsum("...i,i->...", v, e)
    y = np.einsum("...i,i->...", v, eperp)
    # fold to a line angle in (-pi/2, pi/2]
    t = np.arctan2(y, x)
    return (t + np.pi / 2) % np.pi - np.pi / 2


def _cone_check(M, e, half_angle):
    """Worst image angle and minimum growth of the cone about ``e`` under ``M``."""
    eperp = np.array([-e[1], e[0]])
    vm = np.cos(half_angle) * e - np.sin(half_angle) * eperp
    vp = np.cos(half_angle) * e + np.sin(half_angle) * eperp
    am = _signed_angle(tc.matvec(M, vm), e)
    ap = _signed_angle(tc.matvec(M, vp), e)
    a0 = _signed_angle(tc.matvec(M, e), e)
    worst = np.maximum(np.abs(am), np.abs(ap))
    ordered = ((am <= a0) & (a0 <= ap)) | ((ap <= a0) & (a0 <= am))
    worst = np.where(ordered, worst, np.inf)
    return worst, _min_growth(M, e, half_angle)


def certify_cones(f, params=None, n=256, raise_on_fail=True):
    """Grid certificate that ``Df`` preserves the unstable cone and ``Df^-1`` the stable one.

    Returns a JSON-serialisable report with worst-case margins. Raises
    :class:`CertificationFailed` (carrying the offending grid cell) when a
    cone is not mapped strictly inside itself or growth falls below
    ``params.expansion``.
    """
    params = params or ConeParams()
    pts = tc.grid_points(n)
    J = f.lift_jacobian(pts)
    e_u, e_s = f.split.e_u, f.split.e_s
    ang_u, grow_u = _cone_check(J, e_u, params.unstable_half_angle)
    ang_s, grow_s = _cone_check(tc.inv2(J), e_s, params.stable_half_angle)

    margins = {
        "unstable_angle": params.unstable_half_angle - ang_u,
        "stable_angle": params.stable_half_angle - ang_s,
        "unstable_growth": grow_u - params.expansion,
        "stable_growth": grow_s - params.expansion,
    }
    report = {
        "grid": n,
        "cone_params": params.to_dict(),
        "unstable_growth_min": float(grow_u.min()),
        "stable_growth_min": float(grow_s.min()),
        "unstable_image_angle_max": float(ang_u.max()),
        "stable_image_angle_max": float(ang_s.max()),
        "margins": {k: float(v.min()) for k, v in margins.items()},
    }
    failed = [k for k, v in margins.items() if not v.min() > 0]
    report["passed"] = not failed
    if failed:
        k = failed[0]
        i, j = np.unravel_index(int(np.argmin(margins[k])), margins[k].shape)
        cell = (int(i), int(j))
        report["failed_check"] = k
        report["cell"] = list(cell)
        if raise_on_fail:
            raise CertificationFailed(
                f"cone check {k!r} fails at grid cell {cell} "
                f"(point {pts[i, j].tolist()}, margin {float(margins[k][i, j]):.4g})",
                cell=cell,
                report=report,
            )
    return report


# ---------------------------------------------------------------------------
# specialness


def specialness_spread(f, p, depth=DEFAULT_DEPTH, trials=8, seed=0):
    """Largest pairwise angle between unstable directions over random branches at ``p``."""
    if trials < 2:
        raise ValueError("need at least two branches")
    rng = np.random.default_rng(seed)
    vecs = [unstable_direction(f, random_branch(f, p, depth, rng)) for _ in range(trials)]
    spread = 0.0
    for u, v in itertools.combinations(vecs, 2):
        spread = max(spread, float(tc.angle_between(u, v)))
    return spread
