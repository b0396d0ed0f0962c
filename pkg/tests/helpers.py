"""Shared reference implementations used as independent test oracles.

Everything here is deliberately slow and direct: dense matrices, classical
recursions, no reuse of the fast code paths under test.
"""

import numpy as np


def divided_difference(z, f):
    """Top-order divided difference f[z_0, ..., z_m] via the classical table."""
    z = np.asarray(z, dtype=float)
    table = np.asarray(f, dtype=float).copy()
    for m in range(1, z.size):
        table = (table[1:] - table[:-1]) / (z[m:] - z[:-m])
    return table[0]


def difference_operator_dense(z, k):
    """Dense D^(k+1) built by the recursion with plain dense matrices."""
    z = np.asarray(z, dtype=float)
    n = z.size
    d = np.zeros((n - 1, n))
    for i in range(n - 1):
        d[i, i] = -1.0
        d[i, i + 1] = 1.0
    for m in range(1, k + 1):
        w = np.diag(m / (z[m:] - z[:-m]))
        d1 = np.zeros((n - m - 1, n - m))
        for i in range(n - m - 1):
            d1[i, i] = -1.0
            d1[i, i + 1] = 1.0
        d = d1 @ w @ d
    return d


def falling_factorial_dense(z, k):
    """Dense Q with Q[i, l] = q_{l+1}(z_i), built from the product formulas."""
    z = np.asarray(z, dtype=float)
    n = z.size
    q = np.zeros((n, n))
    for i, t in enumerate(z):
        for l in range(k + 1):
            q[i, l] = np.prod(t - z[:l])
        for j in range(n - k - 1):
            if t > z[j + k]:
                q[i, k + 1 + j] = np.prod(t - z[j + 1 : j + k + 1])
    return q


def unit_gap_knots(rng, n, lo=0.5, hi=1.5):
    """Random strictly increasing knots with Theta(1) gaps (well conditioned)."""
    return np.cumsum(rng.uniform(lo, hi, size=n))
