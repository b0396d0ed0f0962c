"""Banded matrices, discrete difference operators and banded SPD solves.

The central object is the order-(k+1) discrete difference operator on an
arbitrary strictly increasing knot sequence.  Row i of the operator applied
to a vector theta equals

    k! * (z[i+k+1] - z[i]) * (divided difference of theta over z[i..i+k+1]),

so its null space is exactly the degree-k polynomials evaluated at the
knots.  For k = 0 it reduces to plain first differences.  All operators are
stored in a fixed-width row-major band layout so that Gram matrices and SPD
solves run in O(n) for fixed bandwidth.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky_banded, cho_solve_banded

from .errors import DimensionMismatch, NotPositiveDefinite, TiesInKnots, TooFewPoints

__all__ = [
    "BandedMatrix",
    "KnotVector",
    "BandedCholesky",
    "build_difference_operator",
    "banded_gram",
    "banded_spd_solve",
]

# Absolute floor on Cholesky pivots; the solver targets I/n + rho*D'D style
# systems which are strictly SPD, so anything at or below this is a data bug.
PIVOT_TOL = 1e-14


@dataclass(frozen=True)
class KnotVector:
    """Strictly increasing knot sequence.

    Raises TiesInKnots on construction if two consecutive values coincide
    (or are out of order).
    """

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise DimensionMismatch("knots must be a 1-d sequence")
        if vals.size >= 2 and not np.all(np.diff(vals) > 0):
            raise TiesInKnots("knot values must be strictly increasing")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.size


def as_knots(knots) -> np.ndarray:
    """Accept a KnotVector or array-like, return the validated array."""
    if isinstance(knots, KnotVector):
        return knots.values
    return KnotVector(np.asarray(knots, dtype=float)).values


@dataclass(frozen=True)
class BandedMatrix:
    """Row-major fixed-width band storage.

    ``data`` has shape (rows, lower_bandwidth + upper_bandwidth + 1) and
    ``data[i, d]`` holds entry (i, i - lower_bandwidth + d).  Band slots that
    fall outside the matrix are zero.
    """

    rows: int
    cols: int
    lower_bandwidth: int
    upper_bandwidth: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        width = self.lower_bandwidth + self.upper_bandwidth + 1
        if self.data.shape != (self.rows, width):
            raise DimensionMismatch(
                f"band storage must be {(self.rows, width)}, got {self.data.shape}"
            )

    @property
    def shape(self):
        return (self.rows, self.cols)

    @classmethod
    def from_dense(cls, a, lower_bandwidth, upper_bandwidth):
        a = np.asarray(a, dtype=float)
        rows, cols = a.shape
        width = lower_bandwidth + upper_bandwidth + 1
        data = np.zeros((rows, width))
        for i in range(rows):
            for d in range(width):
                j = i - lower_bandwidth + d
                if 0 <= j < cols:
                    data[i, d] = a[i, j]
        return cls(rows, cols, lower_bandwidth, upper_bandwidth, data)

    def to_dense(self):
        out = np.zeros((self.rows, self.cols))
        for d in range(self.lower_bandwidth + self.upper_bandwidth + 1):
            offs = d - self.lower_bandwidth
            for i in range(self.rows):
                j = i + offs
                if 0 <= j < self.cols:
                    out[i, j] = self.data[i, d]
        return out

    def matvec(self, x):
        """Return A @ x using band slices only."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.cols,):
            raise DimensionMismatch(f"expected vector of length {self.cols}")
        out = np.zeros(self.rows)
        for d in range(self.lower_bandwidth + self.upper_bandwidth + 1):
            offs = d - self.lower_bandwidth
            i0 = max(0, -offs)
            i1 = min(self.rows, self.cols - offs)
            if i0 < i1:
                out[i0:i1] += self.data[i0:i1, d] * x[i0 + offs : i1 + offs]
        return out

    def rmatvec(self, v):
        """Return A.T @ v using band slices only."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.rows,):
            raise DimensionMismatch(f"expected vector of length {self.rows}")
        out = np.zeros(self.cols)
        for d in range(self.lower_bandwidth + self.upper_bandwidth + 1):
            offs = d - self.lower_bandwidth
            i0 = max(0, -offs)
            i1 = min(self.rows, self.cols - offs)
            if i0 < i1:
                out[i0 + offs : i1 + offs] += self.data[i0:i1, d] * v[i0:i1]
        return out

    def to_sparse(self):
        from scipy.sparse import csr_matrix

        width = self.lower_bandwidth + self.upper_bandwidth + 1
        ii, jj, vv = [], [], []
        for d in range(width):
            offs = d - self.lower_bandwidth
            i0 = max(0, -offs)
            i1 = min(self.rows, self.cols - offs)
            if i0 < i1:
                idx = np.arange(i0, i1)
                ii.append(idx)
                jj.append(idx + offs)
                vv.append(self.data[i0:i1, d])
        if not ii:
            return csr_matrix((self.rows, self.cols))
        return csr_matrix(
            (np.concatenate(vv), (np.concatenate(ii), np.concatenate(jj))),
            shape=(self.rows, self.cols),
        )


def build_difference_operator(knots, k: int) -> BandedMatrix:
    """Order-(k+1) discrete difference operator on the given knots.

    Returns a (n-k-1) x n banded matrix with lower bandwidth 0 and upper
    bandwidth k+1.  For k = 0 the rows are plain first differences
    (-1, 1); for k >= 1 the operator is built by the recursion
    D_(k+1) = D_(1) * diag(k / (z[i+k] - z[i])) * D_(k).
    """
    z = as_knots(knots)
    n = z.size
    if k < 0:
        raise ValueError("order k must be >= 0")
    if n < k + 2:
        raise TooFewPoints(f"need at least k + 2 = {k + 2} knots, got {n}")

    # band[i, :] holds the m+1 coefficients of row i on columns i..i+m
    band = np.zeros((n - 1, 2))
    band[:, 0] = -1.0
    band[:, 1] = 1.0
    for m in range(1, k + 1):
        w = m / (z[m:] - z[:-m])  # length n - m
        scaled = band * w[:, None]  # rows of diag(w) @ D_(m)
        nxt = np.zeros((n - m - 1, m + 2))
        nxt[:, 1:] = scaled[1:]
        nxt[:, :-1] -= scaled[:-1]
        band = nxt
    return BandedMatrix(n - k - 1, n, 0, k + 1, band)


def banded_gram(d: BandedMatrix, transpose_first: bool = False) -> BandedMatrix:
    """Gram matrix D @ D.T (or D.T @ D when ``transpose_first``) in band form."""
    sp = d.to_sparse()
    g = (sp.T @ sp) if transpose_first else (sp @ sp.T)
    g = g.tocoo()
    size = d.cols if transpose_first else d.rows
    bw = d.lower_bandwidth + d.upper_bandwidth
    data = np.zeros((size, 2 * bw + 1))
    keep = np.abs(g.col - g.row) <= bw
    data[g.row[keep], g.col[keep] - g.row[keep] + bw] = g.data[keep]
    return BandedMatrix(size, size, bw, bw, data)


def _to_upper_ab(a: BandedMatrix, sym_tol: float = 1e-10):
    """Convert a symmetric BandedMatrix to scipy's upper 'ab' layout."""
    if a.rows != a.cols:
        raise DimensionMismatch("SPD solve requires a square matrix")
    u = max(a.lower_bandwidth, a.upper_bandwidth)
    dense_scale = np.max(np.abs(a.data)) if a.data.size else 0.0
    # symmetry check via band storage: entry (i, i+off) vs (i+off, i)
    for off in range(1, min(u, a.rows - 1) + 1):
        zeros = np.zeros(a.rows - off)
        hi = a.data[: a.rows - off, a.lower_bandwidth + off] if off <= a.upper_bandwidth else zeros
        lo = a.data[off:, a.lower_bandwidth - off] if off <= a.lower_bandwidth else zeros
        if hi.size and np.max(np.abs(hi - lo)) > sym_tol * (1.0 + dense_scale):
            raise DimensionMismatch("matrix is not symmetric within tolerance")
    ab = np.zeros((u + 1, a.rows))
    ab[u, :] = a.data[:, a.lower_bandwidth]
    for off in range(1, min(u, a.rows - 1) + 1):
        if off <= a.upper_bandwidth:
            ab[u - off, off:] = a.data[: a.rows - off, a.lower_bandwidth + off]
        else:  # recover the upper triangle from the stored lower band
            ab[u - off, off:] = a.data[off:, a.lower_bandwidth - off]
    return ab, u


class BandedCholesky:
    """Factor a symmetric positive definite banded matrix once, solve many times."""

    def __init__(self, a: BandedMatrix):
        ab, u = _to_upper_ab(a)
        try:
            self._factor = cholesky_banded(ab, lower=False)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite(str(exc)) from exc
        pivots = self._factor[u, :] ** 2
        if pivots.min() <= PIVOT_TOL:
            raise NotPositiveDefinite(
                f"pivot {pivots.min():.3e} at or below tolerance {PIVOT_TOL:.0e}"
            )
        self._a = a

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        return cho_solve_banded((self._factor, False), b)


def banded_spd_solve(a: BandedMatrix, b) -> np.ndarray:
    """Solve A x = b for symmetric positive definite banded A.

    One step of iterative refinement keeps the residual at
    ||A x - b||_inf <= 1e-10 * (1 + ||b||_inf) on reasonably conditioned
    systems.  Raises NotPositiveDefinite when a Cholesky pivot falls at or
    below 1e-14.
    """
    b = np.asarray(b, dtype=float)
    if b.shape != (a.rows,):
        raise DimensionMismatch(f"right-hand side must have length {a.rows}")
    fac = BandedCholesky(a)
    x = fac.solve(b)
    resid = b - a.matvec(x)
    if np.max(np.abs(resid)) > 1e-10 * (1.0 + np.max(np.abs(b))):
        x = x + fac.solve(resid)
    return x
