"""Scalar fields on a uniform torus grid.

A :class:`GridField` stores samples ``values[i, j]`` at ``(i/N, j/N)`` together
with a truncated Fourier representation used for off-grid evaluation.
"""

from __future__ import annotations

import io
import math
import re
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import torus_core as tc

_HEADER = re.compile(rb"GRIDFIELD 1 N=(\d+) F=(-?\d+) mean=(\S+) coef=([01])\n")
_CHUNK = 1 << 15


def exp_matrix(x, freqs):
    """``exp(2 pi i x k)`` for coordinates ``x`` (P,) and integer ``freqs`` (K,)."""
    return np.exp((2j * math.pi) * np.multiply.outer(np.asarray(x, dtype=float), freqs))


def eval_trig(coef, points):
    """Evaluate ``sum_k coef[k1+F, k2+F] e_k(x)`` (real part) at ``points`` (..., 2)."""
    coef = np.asarray(coef)
    F = (coef.shape[0] - 1) // 2
    k = np.arange(-F, F + 1)
    pts = np.asarray(points, dtype=float)
    flat = pts.reshape(-1, 2)
    out = np.empty(len(flat))
    for s in range(0, len(flat), _CHUNK):
        blk = flat[s : s + _CHUNK]
        E1 = exp_matrix(blk[:, 0], k)
        E2 = exp_matrix(blk[:, 1], k)
        out[s : s + _CHUNK] = np.real(np.sum((E1 @ coef) * E2, axis=1))
    return out.reshape(pts.shape[:-1])


def eval_trig_gradient(coef, points):
    """Gradient of :func:`eval_trig` with respect to the point."""
    coef = np.asarray(coef)
    F = (coef.shape[0] - 1) // 2
    k = np.arange(-F, F + 1)
    pts = np.asarray(points, dtype=float)
    flat = pts.reshape(-1, 2)
    out = np.empty((len(flat), 2))
    for s in range(0, len(flat), _CHUNK):
        blk = flat[s : s + _CHUNK]
        E1 = exp_matrix(blk[:, 0], k)
        E2 = exp_matrix(blk[:, 1], k)
        w = 2j * math.pi * k
        out[s : s + _CHUNK, 0] = np.real(np.sum(((E1 * w) @ coef) * E2, axis=1))
        out[s : s + _CHUNK, 1] = np.real(np.sum((E1 @ coef) * (E2 * w), axis=1))
    return out.reshape(pts.shape)


@dataclass
class GridField:
    """Periodic scalar field on the ``N x N`` grid.

    Parameters
    ----------
    values : ndarray, shape (N, N)
        Samples in ``'ij'`` layout, ``values[i, j]`` at ``(i/N, j/N)``.
    coef : ndarray, shape (2F+1, 2F+1), optional
        Complex Fourier coefficients for frequencies ``|k_i| <= F``.
    mean : float
        The mean that was subtracted when the field was normalised (metadata).
    """

    values: np.ndarray
    coef: np.ndarray | None = None
    mean: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ValueError("GridField values must be square")

    # construction
    @classmethod
    def from_values(cls, values, cutoff=None, mean=0.0):
        values = np.asarray(values, dtype=float)
        N = values.shape[0]
        F = N // 2 - 1 if cutoff is None else int(cutoff)
        if F >= N // 2:
            raise ValueError("cutoff must be below N/2")
        full = np.fft.fft2(values) / (N * N)
        k = np.arange(-F, F + 1) % N
        coef = full[np.ix_(k, k)]
        return cls(values, coef, mean)

    @classmethod
    def from_coefficients(cls, coef, N, mean=0.0):
        coef = np.asarray(coef, dtype=complex)
        F = (coef.shape[0] - 1) // 2
        if F >= N // 2:
            raise ValueError("grid too coarse for the coefficient cutoff")
        full = np.zeros((N, N), dtype=complex)
        k = np.arange(-F, F + 1) % N
        full[np.ix_(k, k)] = coef
        values = np.real(np.fft.ifft2(full)) * (N * N)
        return cls(values, coef, mean)

    @classmethod
    def from_function(cls, func, N, cutoff=None):
        return cls.from_values(func(tc.grid_points(N)), cutoff)

    @classmethod
    def zeros(cls, N, cutoff=0):
        return cls.from_values(np.zeros((N, N)), cutoff)

    # basic properties
    @property
    def N(self):
        return self.values.shape[0]

    @property
    def cutoff(self):
        return -1 if self.coef is None else (self.coef.shape[0] - 1) // 2

    def sup_norm(self):
        return float(np.max(np.abs(self.values)))

    def __neg__(self):
        return GridField(-self.values, None if self.coef is None else -self.coef, -self.mean)

    def __add__(self, other):
        if self.N != other.N:
            raise ValueError("grid sizes differ")
        coef = None
        if self.coef is not None and other.coef is not None and self.cutoff == other.cutoff:
            coef = self.coef + other.coef
        return GridField(self.values + other.values, coef, self.mean + other.mean)

    def __sub__(self, other):
        return self + (-other)

    def map(self, func, cutoff=None):
        """Pointwise transform of the samples (Fourier data recomputed)."""
        return GridField.from_values(func(self.values), self.cutoff if cutoff is None else cutoff)

    # evaluation
    def __call__(self, points, method="spectral"):
        return self.evaluate(points, method)

    def evaluate(self, points, method="spectral"):
        points = tc.reduce(np.asarray(points, dtype=float))
        if method == "spectral" and self.coef is not None:
            return eval_trig(self.coef, points)
        if method not in ("spectral", "cubic"):
            raise ValueError(f"unknown interpolation {method!r}")
        N = self.N
        flat = points.reshape(-1, 2) * N
        out = ndimage.map_coordinates(self.values, flat.T, order=3, mode="grid-wrap")
        return out.reshape(points.shape[:-1])

    def gradient(self, points):
        if self.coef is None:
            raise ValueError("gradient needs Fourier data")
        return eval_trig_gradient(self.coef, tc.reduce(np.asarray(points, dtype=float)))

    # serialisation
    def to_bytes(self):
        has = self.coef is not None
        head = f"GRIDFIELD 1 N={self.N} F={self.cutoff} mean={self.mean!r} coef={int(has)}\n"
        buf = io.BytesIO()
        buf.write(head.encode("ascii"))
        buf.write(self.values.astype("<f8").tobytes())
        if has:
            buf.write(np.ascontiguousarray(self.coef.real).astype("<f8").tobytes())
            buf.write(np.ascontiguousarray(self.coef.imag).astype("<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data):
        m = _HEADER.match(data)
        if m is None:
            raise ValueError("not a GridField file")
        N, F = int(m.group(1)), int(m.group(2))
        mean = float(m.group(3))
        off = m.end()
        vals = np.frombuffer(data, dtype="<f8", count=N * N, offset=off).reshape(N, N).copy()
        coef = None
        if m.group(4) == b"1":
            n = (2 * F + 1) ** 2
            off += 8 * N * N
            re_ = np.frombuffer(data, dtype="<f8", count=n, offset=off)
            im_ = np.frombuffer(data, dtype="<f8", count=n, offset=off + 8 * n)
            coef = (re_ + 1j * im_).reshape(2 * F + 1, 2 * F + 1)
        return cls(vals, coef, mean)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
