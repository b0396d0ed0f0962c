"""Partial linear regression y = x'beta + g(z) + noise with a sparse lasso
part and a trend-filtering (or smoothing-spline) nonparametric part."""

from .banded import (
    BandedMatrix,
    KnotVector,
    banded_gram,
    banded_spd_solve,
    build_difference_operator,
)
from .basis import (
    FallingFactorialBasis,
    GFunction,
    eval_basis,
    eval_g,
    q_inverse_apply,
    q_matvec,
    q_transpose_matvec,
)
from .errors import (
    DimensionMismatch,
    FoldTooSmall,
    NotConverged,
    NotPositiveDefinite,
    PltfError,
    TiesInKnots,
    TooFewPoints,
)
from .model import (
    BcdControls,
    PltfFit,
    SortedDesign,
    df_monte_carlo,
    df_unbiased,
    fit_kkt_residuals,
    objective,
    plss_fit,
    plss_objective,
    pltf_fit,
    predict,
)
from .oracle import DenseGenLassoProblem, OracleResult, oracle_solve
from .selection import (
    CvResult,
    TuningGrid,
    cross_validate,
    default_grid,
    fit_method,
    grid_fit,
)
from .simulate import (
    SimMetrics,
    SimScenario,
    calibrate_tsnr,
    evaluate,
    generate,
    run_experiment,
)
from .solvers import (
    LassoProblem,
    SolverControls,
    TrendFilterProblem,
    fused_lasso_1d,
    lasso_cd,
    smoothing_spline_cubic,
    soft_threshold,
    trend_filter,
    trend_filter_gamma_max,
)

__version__ = "0.1.0"
