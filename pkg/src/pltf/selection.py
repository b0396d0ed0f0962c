"""Tuning grids, warm-started grid sweeps, and k-fold cross-validation."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, FoldTooSmall
from .model import BcdControls, PltfFit, SortedDesign, plss_fit, pltf_fit, predict
from .solvers import (
    CubicSplineSystem,
    LassoProblem,
    TrendFilterWorkspace,
    lasso_cd,
    polynomial_fit_values,
    trend_filter_gamma_max,
)
from .utils import parallel_map

__all__ = [
    "TuningGrid",
    "CvResult",
    "default_grid",
    "grid_fit",
    "cross_validate",
    "plss_gamma_ceiling",
    "fit_method",
    "LinearZ",
]

GRID_FLOOR_RATIO = 1e-4
METHODS = ("pltf", "plss", "lasso")


@dataclass(frozen=True)
class TuningGrid:
    """Strictly decreasing positive penalty sequences for the 2-d sweep."""

    lambdas: np.ndarray
    gammas: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        gam = np.asarray(self.gammas, dtype=float)
        for name, arr in [("lambdas", lam), ("gammas", gam)]:
            if arr.ndim != 1 or arr.size < 1:
                raise DimensionMismatch(f"{name} must be a non-empty 1-d sequence")
            if np.any(arr <= 0):
                raise ValueError(f"{name} must be positive")
            if arr.size > 1 and np.any(np.diff(arr) >= 0):
                raise ValueError(f"{name} must be strictly decreasing")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "gammas", gam)

    @property
    def shape(self):
        return (self.lambdas.size, self.gammas.size)


@dataclass(frozen=True)
class CvResult:
    grid: TuningGrid
    mean_error: np.ndarray
    se_error: np.ndarray
    best: tuple
    best_1se: tuple
    fold_assignments: np.ndarray
    seed: int
    fold_errors: np.ndarray = field(repr=False, default=None)


def _log_spaced(ceiling, count):
    if count == 1:
        return np.array([ceiling])
    return ceiling * GRID_FLOOR_RATIO ** (np.arange(count) / (count - 1))


def plss_gamma_ceiling(y, knots, spline_system=None) -> float:
    """Smallest gamma (by doubling search) at which the cubic smoothing
    spline is within 1e-3 of the least-squares line, the quadratic-penalty
    analogue of the trend-filter ceiling."""
    y = np.asarray(y, dtype=float)
    sys = spline_system or CubicSplineSystem(knots)
    line = polynomial_fit_values(sys.knots, y, 1)
    scale = max(float(np.sqrt(np.mean((y - line) ** 2))), 1e-12 * (1 + np.max(np.abs(y))))
    gamma = 1e-8 * scale**2
    for _ in range(100):
        theta = sys.solve(y, gamma).theta
        if np.sqrt(np.mean((theta - line) ** 2)) <= 1e-3 * scale:
            return gamma
        gamma *= 4.0
    return gamma


def default_grid(design: SortedDesign, k, n_lambda, n_gamma, method="pltf") -> TuningGrid:
    """Log-spaced grid from data-driven ceilings down to ceiling * 1e-4.

    The lambda ceiling covers both the raw response and the response after
    removing its degree-k polynomial trend, so the (lambda_max, gamma_max)
    corner fits the null model.  For p = 0 the lambda axis is a placeholder.
    """
    if n_lambda < 2 or n_gamma < 2:
        raise ValueError("grid needs at least 2 points per axis")
    y, x, z = design.y, design.x, design.z
    if design.p:
        k_eff = PLSS_K if method == "plss" else k
        detrended = y - polynomial_fit_values(z, y, min(k_eff, 3))
        lam_max = max(
            np.max(np.abs(x.T @ y)) / design.n,
            np.max(np.abs(x.T @ detrended)) / design.n,
        )
    else:
        lam_max = 1.0
    if method == "plss":
        gam_max = plss_gamma_ceiling(y, z)
    else:
        gam_max = trend_filter_gamma_max(y, z, k)
    return TuningGrid(_log_spaced(lam_max, n_lambda), _log_spaced(gam_max, n_gamma))


PLSS_K = 3


@dataclass(frozen=True)
class LinearZ:
    """Nonparametric slot of the lasso comparator: a plain linear term in z."""

    coef: float

    def __call__(self, t):
        return self.coef * np.asarray(t, dtype=float)


def _lasso_comparator_fit(design: SortedDesign, lam, warm=None, ctrl=None) -> PltfFit:
    """Lasso with z appended as one unpenalized linear column."""
    ctrl = ctrl or BcdControls()
    x_aug = np.hstack([design.x, design.z[:, None]])
    pf = np.append(np.ones(design.p), 0.0)
    res = lasso_cd(
        LassoProblem(x_aug, design.y, lam, penalty_factor=pf),
        warm=None if warm is None else np.append(warm.beta, warm.g.coef),
        ctrl=ctrl.inner,
    )
    beta, z_coef = res.beta[:-1], float(res.beta[-1])
    r = design.y - x_aug @ res.beta
    obj = 0.5 * float(r @ r) / design.n + lam * float(np.sum(np.abs(beta)))
    return PltfFit(
        beta=beta,
        theta=z_coef * design.z,
        alpha=np.array([z_coef]),
        g=LinearZ(z_coef),
        k=0,
        lam=lam,
        gamma=0.0,
        objective=obj,
        iterations=res.iterations,
        converged=res.converged,
        active_beta=np.flatnonzero(beta),
        active_knots=np.zeros(0, dtype=int),
        method="lasso",
        knots=design.z,
    )


def fit_method(
    design, method, k, lam, gamma, warm=None, ctrl=None, spline_system=None, tf_workspace=None
) -> PltfFit:
    """Dispatch a single fit for one of the supported methods."""
    if method == "pltf":
        return pltf_fit(design, k, lam, gamma, warm=warm, ctrl=ctrl, tf_workspace=tf_workspace)
    if method == "plss":
        return plss_fit(design, lam, gamma, warm=warm, ctrl=ctrl, spline_system=spline_system)
    if method == "lasso":
        return _lasso_comparator_fit(design, lam, warm=warm, ctrl=ctrl)
    raise ValueError(f"unknown method {method!r}")


def grid_fit(design: SortedDesign, k, grid: TuningGrid, ctrl=None, method="pltf"):
    """Warm-started sweep over the grid: lambda outer-decreasing, gamma
    inner-decreasing, each cell warm-started from its predecessor (previous
    gamma in the row; previous row's first cell when a row starts).

    Returns a nested list ``fits[i][j]`` matching (lambdas[i], gammas[j]).
    """
    ctrl = ctrl or BcdControls()
    spline_system = CubicSplineSystem(design.z) if method == "plss" else None
    tf_workspace = TrendFilterWorkspace(design.z, k) if method == "pltf" else None
    fits = []
    row_start_warm = None
    for i, lam in enumerate(grid.lambdas):
        row = []
        warm = row_start_warm
        for j, gam in enumerate(grid.gammas):
            fit = fit_method(
                design, method, k, float(lam), float(gam), warm=warm, ctrl=ctrl,
                spline_system=spline_system, tf_workspace=tf_workspace,
            )
            row.append(fit)
            warm = fit
        row_start_warm = row[0]
        fits.append(row)
    return fits


def assign_folds(n, folds, seed) -> np.ndarray:
    """Contiguous-in-z stratified random assignment: consecutive blocks of
    ``folds`` samples each contribute one sample per fold."""
    rng = np.random.default_rng(seed)
    out = np.empty(n, dtype=int)
    full = n // folds
    for b in range(full):
        out[b * folds : (b + 1) * folds] = rng.permutation(folds)
    rest = n - full * folds
    if rest:
        out[full * folds :] = rng.choice(folds, size=rest, replace=False)
    return out


def _fold_errors(design, k, grid, method, fold_ids, fold, ctrl):
    train = fold_ids != fold
    val = ~train
    sub = SortedDesign.from_arrays(design.y[train], design.x[train], design.z[train])
    x_val, y_val, z_val = design.x[val], design.y[val], design.z[val]
    shape = grid.shape
    errors = np.empty(shape)
    if method == "lasso":
        warm = None
        for i, lam in enumerate(grid.lambdas):
            fit = _lasso_comparator_fit(sub, float(lam), warm=warm, ctrl=ctrl)
            warm = fit
            pred = predict(fit, x_val, z_val)
            errors[i, :] = float(np.mean((y_val - pred) ** 2))
        return errors
    fits = grid_fit(sub, k, grid, ctrl=ctrl, method=method)
    for i in range(shape[0]):
        for j in range(shape[1]):
            pred = predict(fits[i][j], x_val, z_val)
            errors[i, j] = float(np.mean((y_val - pred) ** 2))
    return errors


def _fold_worker(payload):
    design_arrays, k, grid_arrays, method, fold_ids, fold, ctrl = payload
    design = SortedDesign(*design_arrays)
    grid = TuningGrid(*grid_arrays)
    return _fold_errors(design, k, grid, method, fold_ids, fold, ctrl)


def cross_validate(
    design: SortedDesign,
    k,
    grid: TuningGrid,
    folds=10,
    seed=0,
    method="pltf",
    ctrl=None,
    threads=1,
) -> CvResult:
    """K-fold cross-validation over the grid.

    Fold assignment is contiguous-in-z stratified (each fold spans the z
    range) and deterministic given ``seed``; validation error is mean squared
    prediction error.  ``best`` minimizes the mean surface with ties broken
    toward larger penalties; ``best_1se`` is the largest-penalty cell within
    one standard error of the minimum.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if folds < 2:
        raise FoldTooSmall("need at least 2 folds")
    if design.n < folds:
        raise FoldTooSmall(f"cannot split {design.n} samples into {folds} folds")
    ctrl = ctrl or BcdControls()
    fold_ids = assign_folds(design.n, folds, seed)
    payloads = [
        (
            (design.y, design.x, design.z, design.sort_perm),
            k,
            (grid.lambdas, grid.gammas),
            method,
            fold_ids,
            fold,
            ctrl,
        )
        for fold in range(folds)
    ]
    per_fold = np.array(parallel_map(_fold_worker, payloads, threads=threads))
    mean_error = per_fold.mean(axis=0)
    se_error = per_fold.std(axis=0, ddof=1) / np.sqrt(folds)
    i_best, j_best = np.unravel_index(np.argmin(mean_error), mean_error.shape)
    best = (float(grid.lambdas[i_best]), float(grid.gammas[j_best]))
    threshold = mean_error[i_best, j_best] + se_error[i_best, j_best]
    within = np.argwhere(mean_error <= threshold)
    i1, j1 = min(map(tuple, within))
    best_1se = (float(grid.lambdas[i1]), float(grid.gammas[j1]))
    return CvResult(
        grid=grid,
        mean_error=mean_error,
        se_error=se_error,
        best=best,
        best_1se=best_1se,
        fold_assignments=fold_ids,
        seed=seed,
        fold_errors=per_fold,
    )
