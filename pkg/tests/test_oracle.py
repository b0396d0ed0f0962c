import numpy as np
import pytest

from pltf.banded import build_difference_operator
from pltf.oracle import DenseGenLassoProblem, oracle_solve
from pltf.solvers import (
    LassoProblem,
    SolverControls,
    TrendFilterProblem,
    lasso_cd,
    trend_filter,
    trend_filter_gamma_max,
)


def test_unpenalized_square_system_gives_least_squares():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(6, 6)) + 3 * np.eye(6)
    y = rng.normal(size=6)
    res = oracle_solve(DenseGenLassoProblem(y, a))
    assert res.converged
    assert np.max(np.abs(res.solution - np.linalg.solve(a, y))) < 1e-8


def test_matches_lasso_cd():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(18, 4))
    y = x @ np.array([1.0, -0.5, 0.0, 0.0]) + rng.normal(size=18) * 0.3
    lam = 0.07
    ref = oracle_solve(DenseGenLassoProblem(y, x, extra_l1=(np.arange(4), lam)))
    assert ref.converged
    cd = lasso_cd(LassoProblem(x, y, lam), ctrl=SolverControls(tol=1e-12))
    r = y - x @ cd.beta
    obj_cd = 0.5 * float(r @ r) / 18 + lam * np.sum(np.abs(cd.beta))
    assert obj_cd == pytest.approx(ref.objective, rel=1e-8)


def test_matches_trend_filter():
    rng = np.random.default_rng(2)
    n, k = 15, 2
    z = np.sort(rng.uniform(0, 1, n))
    y = np.sin(6 * z) + rng.normal(size=n) * 0.25
    gamma = 0.04 * trend_filter_gamma_max(y, z, k)
    ref = oracle_solve(
        DenseGenLassoProblem(
            y, np.eye(n), penalty_matrix=build_difference_operator(z, k).to_dense(), weight=gamma
        )
    )
    assert ref.converged
    tf = trend_filter(TrendFilterProblem(y, z, k, gamma), ctrl=SolverControls(tol=1e-11))
    d = build_difference_operator(z, k)
    r = y - tf.theta
    obj_tf = 0.5 * float(r @ r) / n + gamma * np.sum(np.abs(d.matvec(tf.theta)))
    assert obj_tf == pytest.approx(ref.objective, rel=1e-6)


def test_size_limit_enforced():
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError):
        oracle_solve(DenseGenLassoProblem(rng.normal(size=30), rng.normal(size=(30, 250))))


def test_rejects_overlapping_penalties():
    rng = np.random.default_rng(4)
    with pytest.raises(ValueError):
        oracle_solve(
            DenseGenLassoProblem(
                rng.normal(size=5),
                rng.normal(size=(5, 3)),
                penalty_matrix=np.eye(3),
                weight=0.1,
                extra_l1=(np.array([0]), 0.1),
            )
        )
