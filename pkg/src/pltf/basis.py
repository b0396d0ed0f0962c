"""Falling factorial basis over sorted knots and its fast transforms.

The n basis functions of order k on knots z_1 < ... < z_n are

    q_i(t)     = prod_{l=1..i-1} (t - z_l),                 i = 1..k+1,
    q_{i+k+1}(t) = prod_{l=1..k} (t - z_{i+l}) * 1{t > z_{i+k}},  i = 1..n-k-1,

with the empty product equal to 1, so q_1 is the constant function.  The
matrix Q with entries Q[i, l] = q_l(z_i) is invertible and multiplication by
Q, Q' and Q^{-1} all run in O(n k) through divided-difference sweeps: the
coefficient vector of an interpolant consists of the Newton coefficients on
the first k+1 knots followed by scaled order-(k+1) divided differences,
which is also why the l1 norm of the tail coefficients times k! equals the
l1 norm of the order-(k+1) discrete differences of the interpolated values.
"""

from dataclasses import dataclass, field

import numpy as np

from .banded import as_knots
from .errors import DimensionMismatch, TooFewPoints

__all__ = [
    "FallingFactorialBasis",
    "GFunction",
    "eval_basis",
    "q_matvec",
    "q_transpose_matvec",
    "q_inverse_apply",
    "eval_g",
]


@dataclass(frozen=True)
class FallingFactorialBasis:
    """Order-k falling factorial basis on a strictly increasing knot vector."""

    knots: np.ndarray
    k: int

    def __post_init__(self):
        z = as_knots(self.knots)
        if self.k < 0:
            raise ValueError("order k must be >= 0")
        if z.size < self.k + 2:
            raise TooFewPoints(f"need at least k + 2 = {self.k + 2} knots")
        object.__setattr__(self, "knots", z)

    @property
    def n(self):
        return self.knots.size


def eval_basis(basis: FallingFactorialBasis, t: float) -> np.ndarray:
    """Evaluate all n basis functions at a scalar t."""
    z = basis.knots
    n, k = basis.n, basis.k
    out = np.empty(n)
    prod = 1.0
    for i in range(k + 1):  # polynomial part, q_{i+1}
        out[i] = prod
        prod *= t - z[i]
    tail = np.ones(n - k - 1)
    for l in range(1, k + 1):
        tail *= t - z[l : n - k - 1 + l]
    tail *= t > z[k : n - 1]
    out[k + 1 :] = tail
    return out


def _check_len(basis, v):
    v = np.asarray(v, dtype=float)
    if v.shape != (basis.n,):
        raise DimensionMismatch(f"expected vector of length {basis.n}")
    return v


def q_inverse_apply(basis: FallingFactorialBasis, theta) -> np.ndarray:
    """Coefficients alpha with Q alpha = theta, via divided-difference sweeps."""
    theta = _check_len(basis, theta)
    z, k, n = basis.knots, basis.k, basis.n
    c = theta.copy()
    for m in range(1, k + 2):
        c[m:] = (c[m:] - c[m - 1 : -1]) / (z[m:] - z[:-m])
    c[k + 1 :] *= z[k + 1 :] - z[: n - k - 1]
    return c


def q_matvec(basis: FallingFactorialBasis, alpha) -> np.ndarray:
    """Values Q alpha, i.e. the interpolant with coefficients alpha at the knots."""
    alpha = _check_len(basis, alpha)
    z, k, n = basis.knots, basis.k, basis.n
    c = alpha.copy()
    c[k + 1 :] /= z[k + 1 :] - z[: n - k - 1]
    for m in range(k + 1, 0, -1):
        gaps = z[m:] - z[:-m]
        c[m:] = c[m - 1] + np.cumsum(gaps * c[m:])
    return c


def q_transpose_matvec(basis: FallingFactorialBasis, v) -> np.ndarray:
    """Product Q' v."""
    v = _check_len(basis, v)
    z, k, n = basis.knots, basis.k, basis.n
    w = v.copy()
    for m in range(1, k + 2):
        gaps = z[m:] - z[:-m]
        rev = np.cumsum(w[::-1])[::-1]  # rev[j] = sum_{i >= j} w[i]
        w[m:] = gaps * rev[m:]
        w[m - 1] = rev[m - 1]
    w[k + 1 :] /= z[k + 1 :] - z[: n - k - 1]
    return w


@dataclass(frozen=True)
class GFunction:
    """Fitted nonparametric component g(t) = sum_l alpha_l q_l(t)."""

    basis: FallingFactorialBasis
    alpha: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "alpha", _check_len(self.basis, self.alpha))

    def __call__(self, t):
        return eval_g(self, t)


def eval_g(g: GFunction, t) -> np.ndarray | float:
    """Evaluate g at a scalar or array of points (polynomial extrapolation
    outside the knot range)."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    z, k, n = g.basis.knots, g.basis.k, g.basis.n
    alpha = g.alpha
    out = np.zeros_like(t_arr)
    prod = np.ones_like(t_arr)
    for i in range(k + 1):
        out += alpha[i] * prod
        prod *= t_arr - z[i]
    for j in range(n - k - 1):  # truncated part, q_{j+k+2}
        a = alpha[k + 1 + j]
        if a == 0.0:
            continue
        term = np.where(t_arr > z[j + k], a, 0.0)
        for l in range(1, k + 1):
            term = term * (t_arr - z[j + l])
        out += term
    if np.isscalar(t) or np.asarray(t).ndim == 0:
        return float(out[0])
    return out
