"""Points, lifts and degree-k endomorphisms of the 2-torus.

Points are plain float arrays with a trailing axis of length 2. A torus
point has coordinates in [0, 1); a lift point is any point of the plane.
Every map method is vectorised over the leading axes.

Three model families are provided, all sharing the lift interface:

* :class:`LinearEndomorphism` -- ``x -> A x mod 1``;
* :class:`TrigPerturbation` -- ``u -> A u + g(u)`` with ``g`` a real
  trigonometric polynomial;
* :class:`ConjugatedEndomorphism` -- ``h0 o A o h0^-1`` for a warp
  ``h0 = id + w`` isotopic to the identity.

:class:`PowerEndomorphism` composes a model with itself (used to fix leaf
orientations).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ModelError, NewtonDivergence

TWO_PI = 2.0 * math.pi

NEWTON_TOL = 1e-12
NEWTON_MAXITER = 50
_BELOW_ONE = np.nextafter(1.0, 0.0)


# ---------------------------------------------------------------------------
# torus geometry


def reduce(x):
    """Reduce coordinates into [0, 1)."""
    x = np.asarray(x, dtype=float)
    r = x - np.floor(x)
    # -tiny maps to 1.0 in floating point; keep the half-open interval
    return np.where(r >= 1.0, _BELOW_ONE, r)


def displacement(p, q):
    """Shortest lift of ``q - p``, componentwise in [-1/2, 1/2)."""
    d = np.asarray(q, dtype=float) - np.asarray(p, dtype=float)
    return d - np.floor(d + 0.5)


def distance(p, q):
    """Flat torus distance."""
    return np.linalg.norm(displacement(p, q), axis=-1)


def angle_between(u, v):
    """Angle in [0, pi/2] between the lines spanned by ``u`` and ``v``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    cross = u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]
    dot = np.sum(u * v, axis=-1)
    return np.arctan2(np.abs(cross), np.abs(dot))


def grid_points(n):
    """Nodes ``(i/n, j/n)`` of the uniform grid, shape (n, n, 2), 'ij' order."""
    s = np.arange(n) / n
    g1, g2 = np.meshgrid(s, s, indexing="ij")
    return np.stack([g1, g2], axis=-1)


def solve2(m, r):
    """Solve the batched 2x2 systems ``m @ x = r``."""
    a, b = m[..., 0, 0], m[..., 0, 1]
    c, d = m[..., 1, 0], m[..., 1, 1]
    det = a * d - b * c
    x0 = (d * r[..., 0] - b * r[..., 1]) / det
    x1 = (a * r[..., 1] - c * r[..., 0]) / det
    return np.stack([x0, x1], axis=-1)


def inv2(m):
    a, b = m[..., 0, 0], m[..., 0, 1]
    c, d = m[..., 1, 0], m[..., 1, 1]
    det = a * d - b * c
    out = np.empty(np.shape(m))
    out[..., 0, 0] = d / det
    out[..., 0, 1] = -b / det
    out[..., 1, 0] = -c / det
    out[..., 1, 1] = a / det
    return out


def matvec(m, v):
    return np.einsum("...ij,...j->...i", m, v)


# ---------------------------------------------------------------------------
# integer matrices


@dataclass(frozen=True)
class EigenSplit:
    """Real eigen-data of a hyperbolic 2x2 integer matrix."""

    mu_u: float
    mu_s: float
    e_u: np.ndarray
    e_s: np.ndarray

    @property
    def lambda_u(self):
        return math.log(abs(self.mu_u))

    @property
    def lambda_s(self):
        return math.log(abs(self.mu_s))

    @property
    def basis(self):
        """Columns ``(e_u, e_s)``."""
        return np.column_stack([self.e_u, self.e_s])


def _orient(v):
    v = v / np.linalg.norm(v)
    i = int(np.argmax(np.abs(v)))
    return v if v[i] > 0 else -v


def eigen_split(A):
    A = np.asarray(A, dtype=float)
    tr = A[0, 0] + A[1, 1]
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    disc = tr * tr - 4.0 * det
    if disc <= 0:
        raise ModelError("linear part has no real eigen-splitting")
    root = math.sqrt(disc)
    # cancellation-free pair
    big = 0.5 * (tr + math.copysign(root, tr))
    small = det / big
    mu_u, mu_s = (big, small) if abs(big) >= abs(small) else (small, big)
    if not (abs(mu_u) > 1.0 > abs(mu_s)):
        raise ModelError("linear part is not hyperbolic")

    def eigvec(mu):
        a, b, c, d = A[0, 0] - mu, A[0, 1], A[1, 0], A[1, 1] - mu
        v = np.array([-b, a]) if abs(a) + abs(b) >= abs(c) + abs(d) else np.array([-d, c])
        return _orient(v)

    return EigenSplit(mu_u, mu_s, eigvec(mu_u), eigvec(mu_s))


def int_det(A):
    A = [[int(v) for v in row] for row in np.asarray(A).tolist()]
    return A[0][0] * A[1][1] - A[0][1] * A[1][0]


def coset_representatives(A):
    """Integer vectors ``c`` with ``A^-1 c`` in [0,1)^2, one per class of Z^2 / A Z^2.

    Sorted lexicographically so that branch indices are reproducible.
    """
    A = np.asarray(A, dtype=np.int64)
    det = int_det(A)
    adj = np.array([[A[1, 1], -A[0, 1]], [-A[1, 0], A[0, 0]]], dtype=np.int64)
    corners = A @ np.array([[0, 1, 0, 1], [0, 0, 1, 1]])
    lo, hi = corners.min(axis=1), corners.max(axis=1)
    c1, c2 = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1), indexing="ij")
    cs = np.stack([c1.ravel(), c2.ravel()], axis=-1)
    num = cs @ adj.T  # det * A^-1 c, exact
    if det > 0:
        keep = np.all((num >= 0) & (num < det), axis=1)
    else:
        keep = np.all((num <= 0) & (num > det), axis=1)
    reps = cs[keep]
    if len(reps) != abs(det):
        raise ModelError(f"found {len(reps)} coset representatives, expected {abs(det)}")
    return reps[np.lexsort((reps[:, 1], reps[:, 0]))]


# ---------------------------------------------------------------------------
# trigonometric fields


@dataclass(frozen=True)
class TrigField:
    """Vector field ``g(u) = sum_j a_j sin(2 pi m_j . u + phase_j)``."""

    freqs: np.ndarray
    amps: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "freqs", np.asarray(self.freqs, dtype=np.int64).reshape(-1, 2))
        object.__setattr__(self, "amps", np.asarray(self.amps, dtype=float).reshape(-1, 2))
        ph = np.zeros(len(self.freqs)) if self.phases is None else self.phases
        object.__setattr__(self, "phases", np.asarray(ph, dtype=float).reshape(-1))
        if not (len(self.freqs) == len(self.amps) == len(self.phases)):
            raise ModelError("trigonometric term lists have different lengths")

    @classmethod
    def from_terms(cls, terms):
        terms = list(terms)
        if not terms:
            return cls(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))
        freqs = [t["freq"] for t in terms]
        amps = [t["amp"] for t in terms]
        phases = [t.get("phase", 0.0) for t in terms]
        return cls(freqs, amps, phases)

    def terms(self):
        return [
            {"freq": [int(m) for m in f], "amp": [float(a) for a in am], "phase": float(ph)}
            for f, am, ph in zip(self.freqs, self.amps, self.phases)
        ]

    def scaled(self, s):
        return TrigField(self.freqs, self.amps * s, self.phases)

    def _theta(self, u):
        return TWO_PI * np.einsum("...i,ji->...j", u, self.freqs) + self.phases

    def value(self, u):
        u = np.asarray(u, dtype=float)
        if len(self.freqs) == 0:
            return np.zeros_like(u)
        return np.einsum("...j,ji->...i", np.sin(self._theta(u)), self.amps)

    def jacobian(self, u):
        u = np.asarray(u, dtype=float)
        if len(self.freqs) == 0:
            return np.zeros(u.shape + (2,))
        c = np.cos(self._theta(u))
        return TWO_PI * np.einsum("...j,ji,jk->...ik", c, self.amps, self.freqs)

    def derivative_bound(self):
        """Upper bound for the operator norm of the Jacobian."""
        return float(
            TWO_PI * np.sum(np.linalg.norm(self.amps, axis=1) * np.linalg.norm(self.freqs, axis=1))
        )

    @property
    def max_frequency(self):
        return int(np.max(np.abs(self.freqs))) if len(self.freqs) else 0


# ---------------------------------------------------------------------------
# models


class ToralEndomorphism:
    """Base class: a local diffeomorphism of T^2 homotopic to ``linear_part``.

    Subclasses implement :meth:`lift_apply` and :meth:`lift_jacobian`;
    everything else is derived from the lift.
    """

    kind = "abstract"

    def __init__(self, A):
        A = np.asarray(A)
        if A.shape != (2, 2) or not np.all(A == np.round(A)):
            raise ModelError("linear part must be a 2x2 integer matrix")
        self.A = A.astype(np.int64)
        self.degree = abs(int_det(self.A))
        if self.degree < 2:
            raise ModelError(f"|det A| must be at least 2, got {self.degree}")
        self.split = eigen_split(self.A)
        self.cosets = coset_representatives(self.A)
        self._Af = self.A.astype(float)
        self._Ainv = np.linalg.inv(self._Af)

    # -- lift interface --------------------------------------------------
    def lift_apply(self, u):
        raise NotImplementedError

    def lift_jacobian(self, u):
        raise NotImplementedError

    # -- derived -----------------------------------------------------------
    def apply(self, p):
        return reduce(self.lift_apply(p))

    def jacobian(self, p):
        return self.lift_jacobian(p)

    def jacobian_det(self, p):
        J = self.lift_jacobian(p)
        return np.abs(J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0])

    def iterate(self, p, n):
        """Forward orbit ``p, f(p), ..., f^n(p)`` stacked on a new axis -2."""
        p = reduce(p)
        out = [p]
        for _ in range(n):
            p = self.apply(p)
            out.append(p)
        return np.stack(out, axis=-2)

    def invert_lift(self, q, seed=None, tol=NEWTON_TOL, maxiter=NEWTON_MAXITER):
        """Solve ``lift_apply(u) = q`` by Newton's method."""
        q = np.asarray(q, dtype=float)
        u = matvec(self._Ainv, q) if seed is None else np.array(seed, dtype=float)
        u = np.broadcast_to(u, q.shape).copy()
        return _newton(self.lift_apply, self.lift_jacobian, q, u, tol, maxiter, "lift inverse")

    def pull_back(self, u, index):
        """Lift of the preimage selected by coset ``index`` of the lift point ``u``."""
        return self.invert_lift(np.asarray(u, dtype=float) + self.cosets[index])

    def preimages(self, p):
        """All ``k`` preimages of ``p`` (axis -2 indexes the coset)."""
        p = reduce(p)
        out = [reduce(self.pull_back(p, i)) for i in range(self.degree)]
        return np.stack(out, axis=-2)

    # -- checks --------------------------------------------------------------
    def check_local_diffeo(self, n=512):
        J = self.jacobian_det(grid_points(n))
        jmin = float(J.min())
        if not jmin > 1e-8:
            raise ModelError(f"Jacobian determinant vanishes on the grid (min {jmin:.3e})")
        return jmin

    def check_homotopy(self, trials=64, seed=0, tol=1e-10):
        rng = np.random.default_rng(seed)
        u = rng.random((trials, 2))
        c = rng.integers(-2, 3, size=(trials, 2))
        lhs = self.lift_apply(u + c) - self.lift_apply(u)
        err = float(np.max(np.abs(lhs - c @ self._Af.T)))
        if err > tol:
            raise ModelError(f"lift is not equivariant with the linear part (error {err:.3e})")
        return err

    def validate(self):
        self.check_homotopy()
        self.check_local_diffeo()
        return self

    # -- serialisation ---------------------------------------------------------
    def to_dict(self):
        return {"kind": self.kind, "matrix": self.A.tolist()}

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @property
    def is_linear(self):
        return False

    def __repr__(self):
        return f"{type(self).__name__}(A={self.A.tolist()})"


def _newton(func, jac, target, u, tol, maxiter, what):
    # tolerance is absolute near the unit square, relative for far-out lifts
    if target.size:
        tol = tol * max(1.0, float(np.max(np.abs(target))))
    for _ in range(maxiter):
        r = func(u) - target
        err = np.max(np.abs(r)) if r.size else 0.0
        if not np.isfinite(err):
            break
        u = u - solve2(jac(u), r)
        if err < tol:
            # one polishing step past the tolerance
            return u
    raise NewtonDivergence(f"{what}: Newton did not converge in {maxiter} iterations")


class LinearEndomorphism(ToralEndomorphism):
    kind = "linear"

    def lift_apply(self, u):
        return matvec(self._Af, np.asarray(u, dtype=float))

    def lift_jacobian(self, u):
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(self._Af, u.shape[:-1] + (2, 2)).copy()

    def invert_lift(self, q, seed=None, tol=NEWTON_TOL, maxiter=NEWTON_MAXITER):
        return matvec(self._Ainv, np.asarray(q, dtype=float))

    @property
    def is_linear(self):
        return True


class TrigPerturbation(ToralEndomorphism):
    """``u -> A u + g(u)`` with ``g`` a trigonometric polynomial field."""

    kind = "trig_perturbation"

    def __init__(self, A, perturbation, validate=True, cone_params=None):
        super().__init__(A)
        if not isinstance(perturbation, TrigField):
            perturbation = TrigField.from_terms(perturbation)
        self.perturbation = perturbation
        if validate:
            self.validate(cone_params)

    def lift_apply(self, u):
        u = np.asarray(u, dtype=float)
        return matvec(self._Af, u) + self.perturbation.value(u)

    def lift_jacobian(self, u):
        return self._Af + self.perturbation.jacobian(u)

    def validate(self, cone_params=None):
        from .hyperbolic_bundles import ConeParams, certify_cones

        super().validate()
        certify_cones(self, cone_params or ConeParams())
        return self

    def to_dict(self):
        d = super().to_dict()
        d["perturbation"] = self.perturbation.terms()
        return d

    @property
    def is_linear(self):
        return len(self.perturbation.freqs) == 0 or not np.any(self.perturbation.amps)


class ConjugatedEndomorphism(ToralEndomorphism):
    """``f = h0 o A o h0^-1`` with ``h0(v) = v + w(v)``."""

    kind = "conjugated"
    WARP_DERIVATIVE_LIMIT = 0.3

    def __init__(self, A, warp, validate=True):
        super().__init__(A)
        if not isinstance(warp, TrigField):
            warp = TrigField.from_terms(warp)
        self.warp = warp
        bound = warp.derivative_bound()
        if bound >= self.WARP_DERIVATIVE_LIMIT:
            sup = float(np.max(np.linalg.norm(warp.jacobian(grid_points(256)), ord=2, axis=(-2, -1))))
            if sup >= self.WARP_DERIVATIVE_LIMIT:
                raise ModelError(f"warp derivative {sup:.3f} too large for a diffeomorphism")
        if validate:
            self.validate()

    # the warp and its inverse
    def warp_apply(self, v):
        v = np.asarray(v, dtype=float)
        return v + self.warp.value(v)

    def warp_jacobian(self, v):
        return np.eye(2) + self.warp.jacobian(v)

    def warp_inverse(self, z, tol=1e-13, maxiter=NEWTON_MAXITER):
        z = np.asarray(z, dtype=float)
        v = z - self.warp.value(z)
        return _newton(self.warp_apply, self.warp_jacobian, z, v, tol, maxiter, "warp inverse")

    def lift_apply(self, u):
        v = self.warp_inverse(u)
        return self.warp_apply(matvec(self._Af, v))

    def lift_jacobian(self, u):
        v = self.warp_inverse(u)
        Dh_in = self.warp_jacobian(v)
        Dh_out = self.warp_jacobian(matvec(self._Af, v))
        return Dh_out @ self._Af @ inv2(Dh_in)

    def invert_lift(self, q, seed=None, tol=NEWTON_TOL, maxiter=NEWTON_MAXITER):
        return self.warp_apply(matvec(self._Ainv, self.warp_inverse(q)))

    def to_dict(self):
        d = super().to_dict()
        d["warp"] = self.warp.terms()
        return d


class PowerEndomorphism(ToralEndomorphism):
    """The ``n``-fold composition of ``base``."""

    kind = "power"

    def __init__(self, base, n):
        if n < 1:
            raise ModelError("power must be positive")
        self.base = base
        self.n = int(n)
        super().__init__(np.linalg.matrix_power(base.A, self.n))

    def lift_apply(self, u):
        u = np.asarray(u, dtype=float)
        for _ in range(self.n):
            u = self.base.lift_apply(u)
        return u

    def lift_jacobian(self, u):
        u = np.asarray(u, dtype=float)
        J = np.broadcast_to(np.eye(2), u.shape[:-1] + (2, 2))
        for _ in range(self.n):
            J = self.base.lift_jacobian(u) @ J
            u = self.base.lift_apply(u)
        return J

    def invert_lift(self, q, seed=None, tol=NEWTON_TOL, maxiter=NEWTON_MAXITER):
        q = np.asarray(q, dtype=float)
        for _ in range(self.n):
            q = self.base.invert_lift(q)
        return q

    def to_dict(self):
        return {"kind": self.kind, "base": self.base.to_dict(), "exponent": self.n}

    @property
    def is_linear(self):
        return self.base.is_linear


# ---------------------------------------------------------------------------
# construction helpers


CAT_MATRIX = np.array([[3, 1], [1, 1]])

# default perturbation shape, scaled by epsilon
DEFAULT_PERTURBATION = [
    {"freq": [1, 0], "amp": [1.0 / TWO_PI, 0.5 / TWO_PI], "phase": 0.0},
    {"freq": [0, 1], "amp": [-0.5 / TWO_PI, 1.0 / TWO_PI], "phase": 0.3},
]

# reference warp: frequency one, amplitude delta
DEFAULT_WARP = [
    {"freq": [0, 1], "amp": [1.0, 0.0], "phase": 0.0},
    {"freq": [1, 0], "amp": [0.0, 1.0], "phase": 0.5},
]


def linear_model(A=CAT_MATRIX):
    return LinearEndomorphism(A)


def trig_model(epsilon, A=CAT_MATRIX, terms=None, validate=True):
    """Trigonometric perturbation of strength ``epsilon`` (default shape)."""
    field_ = TrigField.from_terms(DEFAULT_PERTURBATION if terms is None else terms)
    return TrigPerturbation(A, field_.scaled(epsilon), validate=validate)


def conjugated_model(delta=0.02, A=CAT_MATRIX, terms=None, validate=True):
    """Smoothly conjugated model with warp of amplitude ``delta``."""
    field_ = TrigField.from_terms(DEFAULT_WARP if terms is None else terms)
    return ConjugatedEndomorphism(A, field_.scaled(delta), validate=validate)


def from_dict(d, validate=True):
    kind = d.get("kind")
    if kind == "linear":
        return LinearEndomorphism(d["matrix"])
    if kind == "trig_perturbation":
        return TrigPerturbation(d["matrix"], TrigField.from_terms(d.get("perturbation", [])), validate=validate)
    if kind == "conjugated":
        return ConjugatedEndomorphism(d["matrix"], TrigField.from_terms(d.get("warp", [])), validate=validate)
    if kind == "power":
        return PowerEndomorphism(from_dict(d["base"], validate=validate), d["exponent"])
    raise ModelError(f"unknown model kind {kind!r}")


def load_model(path, validate=True):
    """Load a model description (JSON). Parse errors report line numbers."""
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return from_dict(d, validate=validate)
