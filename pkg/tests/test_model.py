import numpy as np
import pytest

from pltf.banded import build_difference_operator
from pltf.basis import eval_basis, q_matvec
from pltf.errors import DimensionMismatch, TiesInKnots
from pltf.model import (
    BcdControls,
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
from pltf.oracle import DenseGenLassoProblem, oracle_solve
from pltf.solvers import (
    SolverControls,
    TrendFilterProblem,
    smoothing_spline_cubic,
    trend_filter,
    trend_filter_gamma_max,
)

TIGHT = BcdControls(eps=1e-14, max_bcd_iters=300, inner=SolverControls(tol=1e-11))


def random_design(rng, n, p, noise=0.5):
    x = rng.normal(size=(n, p))
    z = np.sort(rng.uniform(0, 1, n))
    beta0 = np.zeros(p)
    if p:
        beta0[: min(2, p)] = [1.0, -0.7][: min(2, p)]
    y = x @ beta0 + np.sin(5 * z) + noise * rng.normal(size=n)
    return SortedDesign.from_arrays(y, x, z)


def joint_oracle_objective(design, k, lam, gamma):
    n, p = design.n, design.p
    a = np.hstack([design.x, np.eye(n)])
    pen = np.hstack(
        [np.zeros((n - k - 1, p)), build_difference_operator(design.z, k).to_dense()]
    )
    extra = (np.arange(p), lam) if p else None
    res = oracle_solve(DenseGenLassoProblem(design.y, a, penalty_matrix=pen, weight=gamma, extra_l1=extra))
    assert res.converged
    return res.objective


class TestSortedDesign:
    def test_sorts_and_round_trips(self):
        rng = np.random.default_rng(0)
        z = rng.uniform(0, 1, 15)
        x = rng.normal(size=(15, 3))
        y = rng.normal(size=15)
        d = SortedDesign.from_arrays(y, x, z)
        assert np.all(np.diff(d.z) > 0)
        assert np.array_equal(d.y, y[d.sort_perm])
        assert np.array_equal(d.x, x[d.sort_perm])
        assert np.array_equal(d.z, z[d.sort_perm])

    def test_ties_rejected_by_default(self):
        y = np.arange(4.0)
        x = np.zeros((4, 0))
        z = np.array([0.1, 0.5, 0.5, 0.9])
        with pytest.raises(TiesInKnots):
            SortedDesign.from_arrays(y, x, z)

    def test_ties_averaged_on_request(self):
        y = np.array([1.0, 2.0, 4.0, 5.0])
        x = np.arange(8.0).reshape(4, 2)
        z = np.array([0.1, 0.5, 0.5, 0.9])
        d = SortedDesign.from_arrays(y, x, z, ties="average")
        assert np.array_equal(d.z, [0.1, 0.5, 0.9])
        assert np.array_equal(d.y, [1.0, 3.0, 5.0])
        assert np.array_equal(d.x[1], [(2.0 + 4.0) / 2, (3.0 + 5.0) / 2])


class TestObjective:
    def test_zero_fit(self):
        rng = np.random.default_rng(1)
        d = random_design(rng, 12, 2)
        val = objective(d, np.zeros(2), np.zeros(12), 1, 0.3, 0.2)
        assert val == pytest.approx(0.5 * np.mean(d.y**2))

    def test_interpolating_theta(self):
        rng = np.random.default_rng(2)
        d = random_design(rng, 10, 2)
        assert objective(d, np.zeros(2), d.y, 1, 0.5, 0.0) == pytest.approx(0.0, abs=1e-15)

    def test_matches_dense_recomputation(self):
        rng = np.random.default_rng(3)
        d = random_design(rng, 14, 3)
        beta = rng.normal(size=3)
        theta = rng.normal(size=14)
        k, lam, gamma = 2, 0.17, 0.03
        dd = build_difference_operator(d.z, k).to_dense()
        expected = (
            0.5 * np.mean((d.y - d.x @ beta - theta) ** 2)
            + lam * np.abs(beta).sum()
            + gamma * np.abs(dd @ theta).sum()
        )
        assert objective(d, beta, theta, k, lam, gamma) == pytest.approx(expected, rel=1e-12)

    def test_shape_errors(self):
        rng = np.random.default_rng(4)
        d = random_design(rng, 10, 2)
        with pytest.raises(DimensionMismatch):
            objective(d, np.zeros(3), np.zeros(10), 1, 0.1, 0.1)


class TestPltfFit:
    def test_huge_lambda_reduces_to_trend_filter(self):
        rng = np.random.default_rng(5)
        d = random_design(rng, 30, 4)
        gamma = 0.1 * trend_filter_gamma_max(d.y, d.z, 1)
        lam = 10.0 * np.max(np.abs(d.x.T @ d.y)) / d.n
        fit = pltf_fit(d, 1, lam, gamma, ctrl=TIGHT)
        assert np.array_equal(fit.beta, np.zeros(4))
        tf = trend_filter(TrendFilterProblem(d.y, d.z, 1, gamma), ctrl=TIGHT.inner)
        assert np.max(np.abs(fit.theta - tf.theta)) < 1e-9

    def test_gamma_zero_interpolates_lasso_residual(self):
        rng = np.random.default_rng(6)
        d = random_design(rng, 25, 3)
        fit = pltf_fit(d, 2, 0.05, 0.0, ctrl=TIGHT)
        assert np.max(np.abs(fit.theta - (d.y - d.x @ fit.beta))) <= 1e-8
        assert np.max(np.abs(d.x @ fit.beta + fit.theta - d.y)) <= 1e-10
        assert fit.objective == pytest.approx(fit.lam * np.abs(fit.beta).sum(), abs=1e-12)

    @pytest.mark.parametrize("k", [0, 1, 2])
    def test_matches_joint_oracle(self, k):
        rng = np.random.default_rng(10 + k)
        d = random_design(rng, 25, 4)
        lam, gamma = 0.1, 0.05
        fit = pltf_fit(d, k, lam, gamma, ctrl=TIGHT)
        assert fit.converged
        mine = objective(d, fit.beta, fit.theta, k, lam, gamma)
        ref = joint_oracle_objective(d, k, lam, gamma)
        assert mine == pytest.approx(ref, rel=1e-6)

    def test_bcd_objective_non_increasing(self):
        rng = np.random.default_rng(13)
        d = random_design(rng, 40, 6)
        fit = pltf_fit(d, 1, 0.05, 0.01, ctrl=TIGHT)
        hist = fit.objective_history
        for a, b in zip(hist, hist[1:]):
            assert b <= a + 1e-9 * (1 + abs(a))

    def test_joint_kkt_at_convergence(self):
        rng = np.random.default_rng(14)
        d = random_design(rng, 35, 5)
        for k in [0, 1, 2]:
            gamma = 0.1 * trend_filter_gamma_max(d.y, d.z, k)
            fit = pltf_fit(d, k, 0.04, gamma, ctrl=TIGHT)
            assert fit.converged
            res = fit_kkt_residuals(d, fit)
            assert res["lasso"] < 1e-6
            assert res["trend_filter"] < 1e-6

    def test_polynomial_shift_invariance(self):
        rng = np.random.default_rng(15)
        d = random_design(rng, 30, 4)
        k = 2
        gamma = 0.2 * trend_filter_gamma_max(d.y, d.z, k)
        base = pltf_fit(d, k, 0.08, gamma, ctrl=TIGHT)
        coefs = rng.normal(size=k + 1) * 0.5
        shift = sum(c * d.z**m for m, c in enumerate(coefs))
        shifted_design = SortedDesign(d.y + shift, d.x, d.z, d.sort_perm)
        moved = pltf_fit(shifted_design, k, 0.08, gamma, ctrl=TIGHT)
        assert np.max(np.abs(moved.beta - base.beta)) < 1e-6
        assert np.max(np.abs(moved.theta - base.theta - shift)) < 1e-6

    def test_joint_scaling_equivariance(self):
        rng = np.random.default_rng(16)
        d = random_design(rng, 28, 3)
        c = 4.2
        scaled = SortedDesign(c * d.y, d.x, d.z, d.sort_perm)
        f1 = pltf_fit(d, 1, 0.07, 0.02, ctrl=TIGHT)
        f2 = pltf_fit(scaled, 1, c * 0.07, c * 0.02, ctrl=TIGHT)
        denom = max(1, np.max(np.abs(c * f1.theta)))
        assert np.max(np.abs(f2.beta - c * f1.beta)) < 1e-7 * denom
        assert np.max(np.abs(f2.theta - c * f1.theta)) < 1e-7 * denom

    def test_alpha_theta_consistency(self):
        rng = np.random.default_rng(17)
        d = random_design(rng, 30, 3)
        for k in [0, 1, 2]:
            fit = pltf_fit(d, k, 0.05, 0.02, ctrl=TIGHT)
            from pltf.basis import FallingFactorialBasis

            basis = FallingFactorialBasis(d.z, k)
            assert np.max(np.abs(q_matvec(basis, fit.alpha) - fit.theta)) < 1e-8

    def test_p_zero(self):
        rng = np.random.default_rng(18)
        z = np.sort(rng.uniform(0, 1, 20))
        y = np.sin(6 * z) + 0.2 * rng.normal(size=20)
        d = SortedDesign.from_arrays(y, np.zeros((20, 0)), z)
        gamma = 0.1 * trend_filter_gamma_max(y, z, 2)
        fit = pltf_fit(d, 2, 0.1, gamma, ctrl=TIGHT)
        tf = trend_filter(TrendFilterProblem(y, z, 2, gamma), ctrl=TIGHT.inner)
        assert np.max(np.abs(fit.theta - tf.theta)) < 1e-9

    def test_nonconvergence_flag(self):
        rng = np.random.default_rng(19)
        d = random_design(rng, 40, 5)
        fit = pltf_fit(d, 1, 1e-4, 1e-5, ctrl=BcdControls(eps=1e-30, max_bcd_iters=2))
        assert not fit.converged
        assert fit.iterations == 2


class TestPlssFit:
    def test_huge_lambda_reduces_to_smoothing_spline(self):
        rng = np.random.default_rng(20)
        d = random_design(rng, 25, 3)
        lam = 10.0 * np.max(np.abs(d.x.T @ d.y)) / d.n
        fit = plss_fit(d, lam, 0.01, ctrl=TIGHT)
        assert np.array_equal(fit.beta, np.zeros(3))
        ref = smoothing_spline_cubic(d.y, d.z, 0.01)
        assert np.max(np.abs(fit.theta - ref.theta)) < 1e-10

    def test_gamma_zero_interpolates(self):
        rng = np.random.default_rng(21)
        d = random_design(rng, 20, 2)
        fit = plss_fit(d, 0.05, 0.0, ctrl=TIGHT)
        assert np.max(np.abs(fit.theta - (d.y - d.x @ fit.beta))) < 1e-10
        assert fit.objective == pytest.approx(fit.lam * np.abs(fit.beta).sum(), abs=1e-12)

    def test_matches_quadratic_oracle(self):
        rng = np.random.default_rng(22)
        d = random_design(rng, 20, 3)
        lam, gamma = 0.08, 0.02
        fit = plss_fit(d, lam, gamma, ctrl=TIGHT)
        n, p = d.n, d.p
        h = np.diff(d.z)
        q = np.zeros((n, n - 2))
        r = np.zeros((n - 2, n - 2))
        for j in range(n - 2):
            q[j, j] = 1 / h[j]
            q[j + 1, j] = -1 / h[j] - 1 / h[j + 1]
            q[j + 2, j] = 1 / h[j + 1]
            r[j, j] = (h[j] + h[j + 1]) / 3
            if j + 1 < n - 2:
                r[j, j + 1] = r[j + 1, j] = h[j + 1] / 6
        kmat = q @ np.linalg.solve(r, q.T)
        quad = np.zeros((p + n, p + n))
        quad[p:, p:] = gamma * kmat
        ref = oracle_solve(
            DenseGenLassoProblem(
                d.y,
                np.hstack([d.x, np.eye(n)]),
                extra_l1=(np.arange(p), lam),
                quad_penalty=quad,
            )
        )
        assert ref.converged
        mine = plss_objective(d, fit.beta, fit.theta, lam, gamma)
        assert mine == pytest.approx(ref.objective, rel=1e-6)

    def test_off_grid_evaluation(self):
        rng = np.random.default_rng(23)
        d = random_design(rng, 22, 2)
        fit = plss_fit(d, 0.05, 0.01, ctrl=TIGHT)
        assert np.max(np.abs(fit.g(d.z) - fit.theta)) < 1e-10
        mid = (d.z[:-1] + d.z[1:]) / 2
        vals = fit.g(mid)
        assert np.all(np.isfinite(vals))


class TestPredict:
    def test_training_points_recover_fitted_values(self):
        rng = np.random.default_rng(24)
        d = random_design(rng, 26, 4)
        for fit in [pltf_fit(d, 2, 0.06, 0.02, ctrl=TIGHT), plss_fit(d, 0.06, 0.02, ctrl=TIGHT)]:
            pred = predict(fit, d.x, d.z)
            assert np.max(np.abs(pred - (d.x @ fit.beta + fit.theta))) < 1e-8

    def test_zero_beta_predicts_g_only(self):
        rng = np.random.default_rng(25)
        d = random_design(rng, 20, 3)
        lam = 10.0 * np.max(np.abs(d.x.T @ d.y)) / d.n
        fit = pltf_fit(d, 1, lam, 0.01, ctrl=TIGHT)
        z_new = np.linspace(d.z[2], d.z[-3], 7)
        pred = predict(fit, np.zeros((7, 3)), z_new)
        assert np.allclose(pred, fit.g(z_new), atol=1e-12)

    def test_matches_dense_basis_evaluation(self):
        rng = np.random.default_rng(26)
        d = random_design(rng, 24, 2)
        fit = pltf_fit(d, 2, 0.05, 0.01, ctrl=TIGHT)
        z_new = rng.uniform(d.z[0], d.z[-1], size=5)
        x_new = rng.normal(size=(5, 2))
        pred = predict(fit, x_new, z_new)
        from pltf.basis import FallingFactorialBasis

        basis = FallingFactorialBasis(d.z, 2)
        dense = np.array([eval_basis(basis, t) for t in z_new])
        expected = x_new @ fit.beta + dense @ fit.alpha
        assert np.max(np.abs(pred - expected)) < 1e-9

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(27)
        d = random_design(rng, 15, 2)
        fit = pltf_fit(d, 1, 0.1, 0.05, ctrl=TIGHT)
        with pytest.raises(DimensionMismatch):
            predict(fit, np.zeros((3, 5)), np.zeros(3))
        with pytest.raises(DimensionMismatch):
            predict(fit, np.zeros((3, 2)), np.zeros(4))


class TestDegreesOfFreedom:
    def test_null_fit_has_k_plus_one(self):
        rng = np.random.default_rng(28)
        d = random_design(rng, 30, 4)
        for k in [0, 1, 2]:
            lam = 10.0 * np.max(np.abs(d.x.T @ d.y)) / d.n
            gamma = 2.0 * trend_filter_gamma_max(d.y, d.z, k)
            fit = pltf_fit(d, k, lam, gamma, ctrl=TIGHT)
            assert df_unbiased(fit) == k + 1

    def test_saturated_fit(self):
        rng = np.random.default_rng(29)
        d = random_design(rng, 20, 3)
        fit = pltf_fit(d, 1, 0.0, 0.0, ctrl=TIGHT)
        # gamma = 0 interpolates the lasso residual: all knots generically active
        assert df_unbiased(fit) == d.p + d.n

    def test_df_lower_bound_and_sets(self):
        rng = np.random.default_rng(30)
        d = random_design(rng, 40, 5)
        for lam, gamma in [(0.2, 0.1), (0.02, 0.005), (1.0, 1.0)]:
            fit = pltf_fit(d, 1, lam, gamma, ctrl=TIGHT)
            assert df_unbiased(fit) >= fit.k + 1
            assert np.array_equal(fit.active_beta, np.flatnonzero(fit.beta))

    def test_monte_carlo_identity_fitter(self):
        rng = np.random.default_rng(31)
        truth = rng.normal(size=30)
        df, se = df_monte_carlo(
            lambda y, x, z: y, np.zeros((30, 0)), np.linspace(0, 1, 30), truth, 1.0, 2000, 7
        )
        assert abs(df - 30) <= 3 * se

    def test_monte_carlo_projection_fitter(self):
        rng = np.random.default_rng(32)
        n, r = 40, 6
        basis, _ = np.linalg.qr(rng.normal(size=(n, r)))
        truth = rng.normal(size=n)

        def proj(y, x, z):
            return basis @ (basis.T @ y)

        df, se = df_monte_carlo(proj, np.zeros((n, 0)), np.linspace(0, 1, n), truth, 0.7, 2000, 11)
        assert abs(df - r) <= 3 * se

    def test_monte_carlo_deterministic_given_seed(self):
        truth = np.zeros(10)
        a = df_monte_carlo(lambda y, x, z: 0.5 * y, np.zeros((10, 0)), np.arange(10.0), truth, 1.0, 50, 3)
        b = df_monte_carlo(lambda y, x, z: 0.5 * y, np.zeros((10, 0)), np.arange(10.0), truth, 1.0, 50, 3)
        assert a == b

    def test_df_rejects_plss(self):
        rng = np.random.default_rng(33)
        d = random_design(rng, 15, 2)
        fit = plss_fit(d, 0.1, 0.01, ctrl=TIGHT)
        with pytest.raises(ValueError):
            df_unbiased(fit)
