"""Block solvers: lasso coordinate descent, univariate trend filtering via a
specialized ADMM, the exact 1-d fused lasso used as its inner step, and the
natural cubic smoothing spline used by the spline baseline.

Conventions: every least-squares term carries the 1/n normalization, i.e.
||v||_n^2 = (1/n) v'v, so the lasso objective is
(1/2)||y - X b||_n^2 + lam ||b||_1 and the trend-filter objective is
(1/2)||y - th||_n^2 + gam ||D th||_1 with D the order-(k+1) difference
operator on the sorted knots.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import (
    _band_matvec,
    dp_fused_weighted,
    lasso_cd_sweeps,
    lasso_kkt_violation,
    tf_admm_loop,
)
from .banded import (
    BandedCholesky,
    BandedMatrix,
    as_knots,
    banded_gram,
    build_difference_operator,
)
from .errors import DimensionMismatch, NotPositiveDefinite, TooFewPoints

__all__ = [
    "SolverControls",
    "LassoProblem",
    "TrendFilterProblem",
    "LassoResult",
    "TrendFilterResult",
    "TrendFilterWorkspace",
    "SmoothingSplineResult",
    "soft_threshold",
    "lasso_cd",
    "lasso_kkt_residual",
    "fused_lasso_1d",
    "trend_filter",
    "trend_filter_gamma_max",
    "trend_filter_kkt_residual",
    "smoothing_spline_cubic",
    "natural_spline_eval",
    "polynomial_fit_values",
]

DEFAULT_TF_ITERS = 5000
DEFAULT_LASSO_SWEEPS = 10000


@dataclass(frozen=True)
class SolverControls:
    """Inner-solver knobs.

    ``max_iters`` of None means each solver's own default (5000 ADMM
    iterations for the trend filter, 10000 sweeps for the lasso).  ``rho``
    overrides the ADMM penalty (default gamma * n).  ``standardize`` makes
    the lasso penalty proportional to the column root-mean-squares, i.e. it
    solves the glmnet-style standardized problem instead of the plain one.
    """

    max_iters: int | None = None
    tol: float = 1e-8
    rho: float | None = None
    standardize: bool = False
    residual_balancing: bool = True
    record_objective: bool = False

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class LassoProblem:
    x: np.ndarray
    y: np.ndarray
    lam: float
    penalty_factor: np.ndarray | None = None

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.size:
            raise DimensionMismatch("X must be (n, p) and y length n")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class TrendFilterProblem:
    y: np.ndarray
    knots: np.ndarray
    k: int
    gamma: float

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        z = as_knots(self.knots)
        if y.shape != z.shape:
            raise DimensionMismatch("y and knots must have equal length")
        if z.size < self.k + 2:
            raise TooFewPoints(f"need at least k + 2 = {self.k + 2} points")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "knots", z)


@dataclass
class LassoResult:
    beta: np.ndarray
    iterations: int
    converged: bool
    kkt_violation: float


@dataclass
class TrendFilterResult:
    theta: np.ndarray
    iterations: int
    converged: bool
    objective: float
    objective_history: list = field(default_factory=list, repr=False)
    # ADMM state kept for warm starts
    split: np.ndarray | None = field(default=None, repr=False)
    dual: np.ndarray | None = field(default=None, repr=False)
    rho: float | None = None


@dataclass
class SmoothingSplineResult:
    theta: np.ndarray
    second_derivs: np.ndarray
    penalty_integral: float  # int (g'')^2 of the fitted natural spline


def soft_threshold(u: float, t: float) -> float:
    """sign(u) * max(|u| - t, 0)."""
    if t < 0:
        raise ValueError("threshold must be >= 0")
    return np.sign(u) * max(abs(u) - t, 0.0)


# ---------------------------------------------------------------------------
# lasso
# ---------------------------------------------------------------------------


def lasso_cd(prob: LassoProblem, warm=None, ctrl: SolverControls | None = None) -> LassoResult:
    """Coordinate descent for (1/2)||y - X b||_n^2 + lam * sum_j pf_j |b_j|.

    Columns with zero variance keep coefficient zero.  Stops once a full
    sweep moves no coefficient by more than tol (rescaled) and the
    stationarity violations are below tol * max(lam, ||X'y/n||_inf).
    """
    ctrl = ctrl or SolverControls()
    x = np.asfortranarray(prob.x)
    y = prob.y
    n, p = x.shape
    max_sweeps = ctrl.max_iters if ctrl.max_iters is not None else DEFAULT_LASSO_SWEEPS

    if prob.penalty_factor is not None:
        pf = np.asarray(prob.penalty_factor, dtype=float).copy()
        if pf.shape != (p,):
            raise DimensionMismatch("penalty_factor must have length p")
    else:
        pf = np.ones(p)
    col_ss = np.einsum("ij,ij->j", x, x) / n if p else np.zeros(0)
    if ctrl.standardize:
        pf = pf * np.sqrt(col_ss)

    beta = np.zeros(p)
    if warm is not None:
        warm_arr = np.asarray(warm, dtype=float)
        if warm_arr.shape != (p,):
            raise DimensionMismatch("warm start must have length p")
        beta = warm_arr.copy()
    beta[col_ss <= 0.0] = 0.0
    resid = y - x @ beta

    if p == 0:
        return LassoResult(beta, 0, True, 0.0)

    kkt_scale = max(prob.lam, np.max(np.abs(x.T @ y)) / n, 1e-300)
    tol_delta = ctrl.tol * (1.0 + np.sqrt(np.mean(y**2)))
    active_mask = beta != 0.0

    sweeps = 0
    converged = False
    viol = np.inf
    while sweeps < max_sweeps:
        delta = lasso_cd_sweeps(
            x, y, prob.lam, pf, col_ss, beta, resid, False, active_mask, tol_delta
        )
        sweeps += 1
        # polish on the active set while it makes progress
        while delta > tol_delta and sweeps < max_sweeps and active_mask.any():
            delta = lasso_cd_sweeps(
                x, y, prob.lam, pf, col_ss, beta, resid, True, active_mask, tol_delta
            )
            sweeps += 1
        viol = lasso_kkt_violation(x, resid, prob.lam, pf, beta)
        if viol <= ctrl.tol * kkt_scale:
            converged = True
            break
    return LassoResult(beta, sweeps, converged, float(viol))


def lasso_kkt_residual(x, y, beta, lam, penalty_factor=None) -> float:
    """Scaled stationarity residual of a lasso solution.

    Violations of |X_j'(y - X beta)/n| <= lam (inactive) and equality with
    lam * sign(beta_j) (active), divided by max(lam, ||X'y/n||_inf).
    """
    x = np.asfortranarray(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    beta = np.asarray(beta, dtype=float)
    n, p = x.shape
    if p == 0:
        return 0.0
    pf = np.ones(p) if penalty_factor is None else np.asarray(penalty_factor, dtype=float)
    resid = y - x @ beta
    viol = lasso_kkt_violation(x, resid, lam, pf, beta)
    scale = max(lam, np.max(np.abs(x.T @ y)) / n, 1e-300)
    return float(viol / scale)


# ---------------------------------------------------------------------------
# fused lasso
# ---------------------------------------------------------------------------


def fused_lasso_1d(y, weight: float, sample_weights=None) -> np.ndarray:
    """Exact minimizer of (1/2) sum w_i (y_i - th_i)^2 + weight * sum |th_{i+1} - th_i|.

    ``sample_weights`` defaults to ones (the plain fused lasso).  Solved in
    O(n) by dynamic programming.
    """
    y = np.asarray(y, dtype=float)
    if weight < 0:
        raise ValueError("weight must be >= 0")
    if sample_weights is None:
        w = np.ones_like(y)
    else:
        w = np.asarray(sample_weights, dtype=float)
        if w.shape != y.shape:
            raise DimensionMismatch("sample_weights must match y")
        if np.any(w <= 0):
            raise ValueError("sample_weights must be positive")
    return dp_fused_weighted(y, w, float(weight))


# ---------------------------------------------------------------------------
# trend filtering
# ---------------------------------------------------------------------------


def _poly_vandermonde(z, k):
    zc = (z - z.mean()) / max(z.std(), 1e-300)
    return np.vander(zc, k + 1, increasing=True)


def polynomial_fit_values(z, y, k) -> np.ndarray:
    """Fitted values of the degree-k least-squares polynomial of y on z."""
    v = _poly_vandermonde(np.asarray(z, dtype=float), k)
    coef, *_ = np.linalg.lstsq(v, np.asarray(y, dtype=float), rcond=None)
    return v @ coef


def trend_filter_gamma_max(y, knots, k) -> float:
    """Smallest gamma at which the degree-k polynomial fit is optimal.

    Equals ||(D D')^{-1} D y||_inf / n, the sup-norm of the least-squares
    dual at the polynomial solution.
    """
    y = np.asarray(y, dtype=float)
    z = as_knots(knots)
    d = build_difference_operator(z, k)
    gram = banded_gram(d)
    u = BandedCholesky(gram).solve(d.matvec(y))
    return float(np.max(np.abs(u)) / y.size)


def _tf_objective(y, d: BandedMatrix, gamma, theta):
    r = y - theta
    return 0.5 * float(r @ r) / y.size + gamma * float(np.sum(np.abs(d.matvec(theta))))


class TrendFilterWorkspace:
    """Knot-dependent operators reused across solver calls on the same data."""

    def __init__(self, knots, k):
        z = as_knots(knots)
        self.knots = z
        self.k = k
        self.d_full = build_difference_operator(z, k)
        self.gram_full_chol = BandedCholesky(banded_gram(self.d_full))
        if k >= 1:
            m_op = build_difference_operator(z, k - 1)  # D^(k), shape (n - k, n)
            self.m_band = np.ascontiguousarray(m_op.data)
            self.w = k / (z[k:] - z[:-k])  # links D^(k+1) = D1 diag(w) D^(k)
            gram = banded_gram(m_op, transpose_first=True)
            self.gram_lower = np.ascontiguousarray(
                gram.data[:, : gram.lower_bandwidth + 1]
            )


def trend_filter(
    prob: TrendFilterProblem,
    warm=None,
    ctrl: SolverControls | None = None,
    workspace: TrendFilterWorkspace | None = None,
) -> TrendFilterResult:
    """Univariate trend filtering on sorted knots.

    k = 0 is solved exactly by the fused-lasso dynamic program, and any
    gamma at or above the dual bound returns the exact polynomial fit.  For
    k >= 1 an ADMM splitting on a = D^(k) th makes the a-update a weighted
    fused lasso (solved exactly) and the th-update a banded SPD solve of
    I/n + rho * D^(k)' D^(k); rho starts at gamma * n and is rebalanced by
    factors of 2 whenever the primal/dual residual ratio exceeds 10.

    ``warm`` may be a TrendFilterResult (reusing split/dual/rho) or a theta
    vector; ``workspace`` lets repeated solves on the same (knots, k) share
    the banded operators.
    """
    ctrl = ctrl or SolverControls()
    y, z, k, gamma = prob.y, prob.knots, prob.k, prob.gamma
    n = y.size
    ws = workspace if workspace is not None and workspace.k == k else TrendFilterWorkspace(z, k)
    d_full = ws.d_full

    if gamma == 0.0:
        return TrendFilterResult(y.copy(), 0, True, 0.0)

    if k == 0:
        theta = dp_fused_weighted(y, np.ones(n), gamma * n)
        return TrendFilterResult(theta, 1, True, _tf_objective(y, d_full, gamma, theta))

    # at or above the dual bound the unique solution is the polynomial fit;
    # this also avoids the numerically singular huge-rho ADMM system
    dual_at_poly = ws.gram_full_chol.solve(d_full.matvec(y))
    if gamma >= np.max(np.abs(dual_at_poly)) / n:
        theta = polynomial_fit_values(z, y, k)
        return TrendFilterResult(theta, 0, True, _tf_objective(y, d_full, gamma, theta))

    max_iters = ctrl.max_iters if ctrl.max_iters is not None else DEFAULT_TF_ITERS
    theta = np.zeros(n)
    alpha = None
    dual = None
    rho = ctrl.rho if ctrl.rho is not None else gamma * n
    if isinstance(warm, TrendFilterResult):
        theta = warm.theta.copy()
        if warm.split is not None and warm.split.size == n - k:
            alpha = warm.split.copy()
            dual = warm.dual.copy()
            if ctrl.rho is None and warm.rho is not None:
                rho = warm.rho
    elif warm is not None:
        theta = np.asarray(warm, dtype=float).copy()
    if alpha is None:
        alpha = np.empty(n - k)
        _band_matvec(ws.m_band, theta, alpha)
        dual = np.zeros(n - k)

    if ctrl.record_objective:
        # stepped execution so the objective trace is observable
        history = []
        iterations = 0
        converged = False
        for _ in range(max_iters):
            _, done, rho, bad = tf_admm_loop(
                ws.m_band, ws.gram_lower, ws.w, y, gamma, rho, theta, alpha, dual,
                ctrl.tol, 1, ctrl.residual_balancing,
            )
            if bad:
                raise NotPositiveDefinite("ADMM system lost positive definiteness")
            iterations += 1
            history.append(_tf_objective(y, d_full, gamma, theta))
            if done:
                converged = True
                break
    else:
        iterations, converged, rho, bad = tf_admm_loop(
            ws.m_band, ws.gram_lower, ws.w, y, gamma, rho, theta, alpha, dual,
            ctrl.tol, max_iters, ctrl.residual_balancing,
        )
        if bad:
            raise NotPositiveDefinite("ADMM system lost positive definiteness")
        history = []

    return TrendFilterResult(
        theta,
        iterations,
        converged,
        _tf_objective(y, d_full, gamma, theta),
        history,
        split=alpha,
        dual=dual,
        rho=rho,
    )


def trend_filter_kkt_residual(y, knots, k, gamma, theta, active_tol=None) -> float:
    """Scaled optimality residual for a trend-filter solution.

    Recovers the dual by a banded least squares on D'u = y - theta and
    returns the largest of: the unexplained (polynomial) component of the
    residual scaled by max(1, ||y||_inf), the dual-feasibility excess
    (|u| - n*gamma)+ / (n*gamma), and the misalignment of u with
    n*gamma*sign(D theta) on the active rows, also relative to n*gamma.
    """
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    z = as_knots(knots)
    n = y.size
    d = build_difference_operator(z, k)
    if gamma == 0.0:
        return float(np.max(np.abs(y - theta)) / max(1.0, np.max(np.abs(y))))
    r = y - theta
    u = BandedCholesky(banded_gram(d)).solve(d.matvec(r))
    stat = np.max(np.abs(d.rmatvec(u) - r)) / max(1.0, np.max(np.abs(y)))
    bound = n * gamma
    feas = max(0.0, np.max(np.abs(u)) - bound) / bound
    dtheta = d.matvec(theta)
    if active_tol is None:
        active_tol = 1e-6 * max(1.0, np.max(np.abs(dtheta)))
    active = np.abs(dtheta) > active_tol
    align = 0.0
    if active.any():
        align = np.max(np.abs(u[active] - bound * np.sign(dtheta[active]))) / bound
    return float(max(stat, feas, align))


# ---------------------------------------------------------------------------
# cubic smoothing spline (Reinsch banded form)
# ---------------------------------------------------------------------------


class CubicSplineSystem:
    """Natural cubic smoothing spline machinery for one knot vector.

    Minimizes (1/2)||y - th||_n^2 + gamma * int (g'')^2 over natural cubic
    splines with knots at the inputs; factors the pentadiagonal Reinsch
    system once per gamma and caches it.
    """

    def __init__(self, knots):
        z = as_knots(knots)
        if z.size < 3:
            raise TooFewPoints("cubic smoothing spline needs at least 3 points")
        self.knots = z
        n = z.size
        h = np.diff(z)
        # second-difference map Q (n x (n-2)) and penalty Gram R ((n-2) x (n-2))
        rows = np.repeat(np.arange(n - 2), 3) + np.tile([0, 1, 2], n - 2)
        cols = np.repeat(np.arange(n - 2), 3)
        vals = np.stack(
            [1.0 / h[:-1], -1.0 / h[:-1] - 1.0 / h[1:], 1.0 / h[1:]], axis=1
        ).ravel()
        from scipy.sparse import csc_matrix

        self._q = csc_matrix((vals, (rows, cols)), shape=(n, n - 2))
        r = np.zeros((n - 2, 3))  # symmetric tridiagonal bands of R
        r[:, 1] = (h[:-1] + h[1:]) / 3.0
        r[:-1, 2] = h[1:-1] / 6.0
        r[1:, 0] = h[1:-1] / 6.0
        self._r_bands = r
        self._h = h
        self._factors = {}

    def _system(self, gamma, weights):
        n = self.knots.size
        qtq = (self._q.T @ self._q).tocoo() if weights is None else (
            self._q.T @ (self._q.multiply((1.0 / weights)[:, None]))
        ).tocoo()
        data = np.zeros((n - 2, 5))
        keep = np.abs(qtq.col - qtq.row) <= 2
        data[qtq.row[keep], qtq.col[keep] - qtq.row[keep] + 2] = qtq.data[keep]
        data *= 2.0 * n * gamma
        data[:, 1:4] += self._r_bands
        return BandedCholesky(BandedMatrix(n - 2, n - 2, 2, 2, data))

    def penalty_value(self, theta) -> float:
        """int (g'')^2 for the natural cubic spline interpolating theta."""
        from scipy.linalg import solveh_banded

        theta = np.asarray(theta, dtype=float)
        qtt = self._q.T @ theta
        ab = np.zeros((2, qtt.size))
        ab[1] = self._r_bands[:, 1]
        ab[0, 1:] = self._r_bands[:-1, 2]
        c = solveh_banded(ab, qtt)
        return float(c @ qtt)

    def solve(self, y, gamma, weights=None) -> SmoothingSplineResult:
        y = np.asarray(y, dtype=float)
        n = self.knots.size
        if y.shape != (n,):
            raise DimensionMismatch(f"y must have length {n}")
        qty = self._q.T @ y
        if gamma == 0.0:
            theta = y.copy()
            c = np.zeros(n - 2)
        else:
            key = float(gamma)
            if weights is None and key in self._factors:
                chol = self._factors[key]
            else:
                chol = self._system(gamma, weights)
                if weights is None:
                    self._factors[key] = chol
            c = chol.solve(qty)
            correction = 2.0 * n * gamma * (self._q @ c)
            if weights is not None:
                correction = correction / weights
            theta = y - correction
        m = np.zeros(n)
        m[1:-1] = c
        # int (g'')^2 = c' R c for the natural spline with these second derivs
        rc = self._r_bands[:, 1] * c
        if n > 3:
            rc[:-1] += self._r_bands[:-1, 2] * c[1:]
            rc[1:] += self._r_bands[1:, 0] * c[:-1]
        return SmoothingSplineResult(theta, m, float(c @ rc))


def smoothing_spline_cubic(y, knots, gamma, weights=None) -> SmoothingSplineResult:
    """Natural cubic smoothing spline fit; see CubicSplineSystem."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    return CubicSplineSystem(knots).solve(y, gamma, weights)


def natural_spline_eval(knots, theta, second_derivs, t):
    """Evaluate the natural cubic spline with values theta and second
    derivatives ``second_derivs`` at the knots; linear beyond the ends."""
    z = np.asarray(knots, dtype=float)
    theta = np.asarray(theta, dtype=float)
    m = np.asarray(second_derivs, dtype=float)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    h = np.diff(z)
    idx = np.clip(np.searchsorted(z, t_arr, side="right") - 1, 0, z.size - 2)
    hi = h[idx]
    a = (z[idx + 1] - t_arr) / hi
    b = (t_arr - z[idx]) / hi
    out = (
        a * theta[idx]
        + b * theta[idx + 1]
        + ((a**3 - a) * m[idx] + (b**3 - b) * m[idx + 1]) * hi**2 / 6.0
    )
    slope_lo = (theta[1] - theta[0]) / h[0] - h[0] * m[1] / 6.0
    slope_hi = (theta[-1] - theta[-2]) / h[-1] + h[-1] * m[-2] / 6.0
    below = t_arr < z[0]
    above = t_arr > z[-1]
    out[below] = theta[0] + slope_lo * (t_arr[below] - z[0])
    out[above] = theta[-1] + slope_hi * (t_arr[above] - z[-1])
    if np.isscalar(t) or np.asarray(t).ndim == 0:
        return float(out[0])
    return out
