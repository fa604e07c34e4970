"""Estimator point estimates and variances against independent oracles.

Closed forms and statsmodels/scipy references serve as the second route;
tolerances reflect how exactly the two routes should agree (shared
normal-equation algebra is machine precision, separate optimizers are
looser).
"""

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, strategies as st
from scipy.stats import mannwhitneyu

from psps.datatypes import Dataset, EstimationError, InputError, TaskSpec
from psps.estimators import (
    fit_debiased_lasso,
    fit_iv_2sls,
    fit_logistic,
    fit_mean,
    fit_negbin,
    fit_ols,
    fit_quantile,
    fit_task,
    lasso_coefficients,
    wilcoxon_estimate,
)


def dataset(X, y, names=None, **kw):
    names = names or [f"x{j + 1}" for j in range(X.shape[1])]
    return Dataset(features=np.asarray(X, float), feature_names=names, outcome=y, **kw)


class TestMean:
    def test_four_row_fixture(self):
        d = dataset(np.zeros((4, 1)), np.array([1.0, 2.0, 3.0, 4.0]))
        r = fit_mean(d)
        assert r.estimate[0] == 2.5
        assert r.variance[0, 0] == pytest.approx(np.var([1, 2, 3, 4], ddof=1) / 4)

    def test_weighted_mean(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=30)
        w = rng.uniform(0.5, 2.0, size=30)
        d = dataset(np.zeros((30, 1)), y, weights=w)
        assert fit_mean(d).estimate[0] == pytest.approx(np.average(y, weights=w))

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_shift_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.normal(size=12)
        d0 = dataset(np.zeros((12, 1)), y)
        d1 = dataset(np.zeros((12, 1)), y + 5.0)
        r0, r1 = fit_mean(d0), fit_mean(d1)
        assert r1.estimate[0] == pytest.approx(r0.estimate[0] + 5.0, abs=1e-9)
        assert r1.variance[0, 0] == pytest.approx(r0.variance[0, 0], rel=1e-12)


class TestOls:
    def fixture(self, seed=42, n=150):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, 2))
        y = 1.0 + 0.5 * X[:, 0] - 0.2 * X[:, 1] + rng.normal(size=n) * (
            1.0 + 0.3 * np.abs(X[:, 0])
        )
        return X, y

    def test_matches_statsmodels_hc1(self):
        X, y = self.fixture()
        r = fit_ols(dataset(X, y))
        ref = sm.OLS(y, sm.add_constant(X)).fit(cov_type="HC1")
        np.testing.assert_allclose(r.estimate, ref.params, atol=1e-10)
        np.testing.assert_allclose(r.variance, ref.cov_params(), atol=1e-12)

    def test_no_intercept(self):
        X, y = self.fixture(seed=3)
        r = fit_ols(dataset(X, y), intercept=False)
        ref = sm.OLS(y, X).fit(cov_type="HC1")
        np.testing.assert_allclose(r.estimate, ref.params, atol=1e-10)
        assert r.labels == ["x1", "x2"]

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_outcome_scale_equivariance(self, seed):
        X, y = self.fixture(seed=seed, n=40)
        r1 = fit_ols(dataset(X, y))
        r2 = fit_ols(dataset(X, 3.0 * y))
        np.testing.assert_allclose(r2.estimate, 3.0 * r1.estimate, rtol=1e-8)
        np.testing.assert_allclose(r2.variance, 9.0 * r1.variance, rtol=1e-8)

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_row_permutation_invariance(self, seed):
        X, y = self.fixture(seed=seed, n=40)
        perm = np.random.default_rng(seed + 1).permutation(40)
        r1 = fit_ols(dataset(X, y))
        r2 = fit_ols(dataset(X[perm], y[perm]))
        np.testing.assert_allclose(r2.estimate, r1.estimate, atol=1e-10)
        np.testing.assert_allclose(r2.variance, r1.variance, atol=1e-12)

    def test_singular_design_raises(self):
        X = np.ones((30, 2))
        y = np.arange(30.0)
        with pytest.raises(EstimationError):
            fit_ols(dataset(X, y))


class TestLogistic:
    def fixture(self, seed=42, n=200):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, 2))
        p = 1.0 / (1.0 + np.exp(-(0.3 + 0.8 * X[:, 0])))
        y = (rng.uniform(size=n) < p).astype(float)
        return X, y

    def test_matches_statsmodels_robust(self):
        X, y = self.fixture()
        r = fit_logistic(dataset(X, y))
        ref = sm.GLM(y, sm.add_constant(X), family=sm.families.Binomial()).fit(
            cov_type="HC0"
        )
        np.testing.assert_allclose(r.estimate, ref.params, atol=1e-8)
        np.testing.assert_allclose(r.variance, ref.cov_params(), atol=1e-9)

    def test_separable_data_raises(self):
        X = np.linspace(-1, 1, 40)[:, None]
        y = (X[:, 0] > 0).astype(float)
        with pytest.raises(EstimationError):
            fit_logistic(dataset(X, y))

    def test_nonbinary_outcome_rejected(self):
        X = np.random.default_rng(0).normal(size=(30, 1))
        with pytest.raises(InputError):
            fit_logistic(dataset(X, np.linspace(0, 2, 30)))


class TestQuantile:
    def test_matches_statsmodels_point(self):
        rng = np.random.default_rng(7)
        n = 400
        X = rng.normal(size=(n, 1))
        y = 1.0 + 2.0 * X[:, 0] + rng.normal(size=n) * (1.0 + 0.5 * np.abs(X[:, 0]))
        r = fit_quantile(dataset(X, y), 0.75)
        ref = sm.QuantReg(y, sm.add_constant(X)).fit(q=0.75)
        np.testing.assert_allclose(r.estimate, ref.params, atol=5e-4)
        assert r.variance is None

    def test_median_of_constants(self):
        # Pure-intercept median equals an order statistic of the outcome.
        y = np.array([1.0, 2.0, 50.0, 3.0, 2.5])
        r = fit_quantile(dataset(np.zeros((5, 0)), y, names=[]), 0.5)
        assert r.estimate[0] == pytest.approx(np.quantile(y, 0.5), abs=1e-8)

    def test_level_out_of_range(self):
        y = np.random.default_rng(0).normal(size=30)
        with pytest.raises(InputError):
            fit_quantile(dataset(np.zeros((30, 1)), y), 1.5)


class TestIv2sls:
    def fixture(self, seed=7, n=300):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=n)
        u = rng.normal(size=n)
        xe = 0.8 * z + 0.5 * u + rng.normal(size=n)
        y = 1.0 + 1.5 * xe + u
        return z, xe, y

    def test_closed_form(self):
        z, xe, y = self.fixture()
        d = Dataset(
            features=np.column_stack([xe, z]),
            feature_names=["xe", "z"],
            outcome=y,
            column_roles={"z": "instrument", "xe": "endogenous"},
        )
        r = fit_iv_2sls(d)
        n = len(y)
        Z = np.column_stack([np.ones(n), z])
        X = np.column_stack([np.ones(n), xe])
        beta = np.linalg.solve(Z.T @ X, Z.T @ y)
        np.testing.assert_allclose(r.estimate, beta, atol=1e-10)
        assert r.labels == ["(intercept)", "xe"]

    def test_sandwich_variance_closed_form(self):
        z, xe, y = self.fixture(seed=11)
        d = Dataset(
            features=np.column_stack([xe, z]),
            feature_names=["xe", "z"],
            outcome=y,
            column_roles={"z": "instrument", "xe": "endogenous"},
        )
        r = fit_iv_2sls(d)
        n = len(y)
        Z = np.column_stack([np.ones(n), z])
        X = np.column_stack([np.ones(n), xe])
        beta = np.linalg.solve(Z.T @ X, Z.T @ y)
        e = y - X @ beta
        A = Z.T @ X
        meat = (Z * (e**2)[:, None]).T @ Z
        V = np.linalg.solve(A, np.linalg.solve(A, meat.T).T)
        np.testing.assert_allclose(r.variance, V, rtol=1e-8)

    def test_requires_instrument(self):
        z, xe, y = self.fixture()
        d = Dataset(
            features=np.column_stack([xe, z]),
            feature_names=["xe", "z"],
            outcome=y,
            column_roles={"xe": "endogenous"},
        )
        with pytest.raises(InputError):
            fit_iv_2sls(d)


class TestNegbin:
    def fixture(self, seed=7, n=400):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, 1))
        mu = np.exp(0.5 + 0.6 * X[:, 0])
        lam = rng.gamma(2.0, mu / 2.0)
        return X, rng.poisson(lam).astype(float)

    def test_matches_statsmodels_coefficients(self):
        X, y = self.fixture()
        r = fit_negbin(dataset(X, y))
        ref = sm.NegativeBinomial(y, sm.add_constant(X)).fit(disp=0)
        np.testing.assert_allclose(r.estimate, ref.params[:2], atol=2e-4)
        # Profile sandwich vs full-MLE information: same order, not equal.
        np.testing.assert_allclose(
            np.sqrt(np.diag(r.variance)), ref.bse[:2], rtol=0.15
        )

    def test_fixed_dispersion_is_deterministic(self):
        X, y = self.fixture(seed=8)
        a = fit_negbin(dataset(X, y), dispersion=2.0)
        b = fit_negbin(dataset(X, y), dispersion=2.0)
        np.testing.assert_array_equal(a.estimate, b.estimate)

    def test_negative_counts_rejected(self):
        X, _ = self.fixture()
        with pytest.raises(InputError):
            fit_negbin(dataset(X, np.full(400, -1.0)))


class TestWilcoxon:
    def fixture(self, seed=3, n=120, shift=0.4):
        rng = np.random.default_rng(seed)
        g = (rng.uniform(size=n) < 0.5).astype(float)
        y = rng.normal(size=n) + shift * g
        return g, y

    def test_matches_mann_whitney_u(self):
        g, y = self.fixture()
        d = Dataset(
            features=g[:, None],
            feature_names=["g"],
            outcome=y,
            column_roles={"g": "group-indicator"},
        )
        r = wilcoxon_estimate(d, group_column="g")
        u = mannwhitneyu(y[g == 1], y[g == 0]).statistic
        n1, n0 = int(g.sum()), int((1 - g).sum())
        assert r.estimate[0] == pytest.approx(u / (n1 * n0), abs=1e-12)
        assert r.null_values[0] == 0.5

    def test_single_group_rejected(self):
        g = np.ones(40)
        y = np.random.default_rng(0).normal(size=40)
        d = Dataset(
            features=g[:, None],
            feature_names=["g"],
            outcome=y,
            column_roles={"g": "group-indicator"},
        )
        with pytest.raises(EstimationError):
            wilcoxon_estimate(d, group_column="g")

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_monotone_transform_invariance(self, seed):
        # The estimator depends on outcomes only through ranks.
        g, y = self.fixture(seed=seed, n=50)
        d1 = Dataset(
            features=g[:, None],
            feature_names=["g"],
            outcome=y,
            column_roles={"g": "group-indicator"},
        )
        d2 = Dataset(
            features=g[:, None],
            feature_names=["g"],
            outcome=np.exp(y),
            column_roles={"g": "group-indicator"},
        )
        assert wilcoxon_estimate(d1, group_column="g").estimate[
            0
        ] == wilcoxon_estimate(d2, group_column="g").estimate[0]


class TestDebiasedLasso:
    def test_single_column_soft_threshold(self):
        rng = np.random.default_rng(1)
        n = 200
        x = rng.normal(size=n)
        y = 0.7 * x + rng.normal(size=n)
        beta = lasso_coefficients(x[:, None], y, penalty=0.1)
        xs = (x - x.mean()) / x.std()
        yc = y - y.mean()
        rho = float(xs @ yc) / n
        expected = np.sign(rho) * max(abs(rho) - 0.1, 0.0) / x.std()
        assert beta[0] == pytest.approx(expected, rel=1e-6)

    def test_kkt_certificate(self):
        rng = np.random.default_rng(2)
        n, p = 80, 30
        X = rng.normal(size=(n, p))
        y = X[:, 0] - 0.5 * X[:, 1] + rng.normal(size=n)
        lam = 0.15
        beta_orig = lasso_coefficients(X, y, penalty=lam)
        Xs = (X - X.mean(0)) / X.std(0)
        beta = beta_orig * X.std(0)
        g = Xs.T @ (y - y.mean() - Xs @ beta) / n
        active = beta != 0.0
        # Stationarity: active gradients at +-lam, inactive within the band.
        np.testing.assert_allclose(g[active], lam * np.sign(beta[active]), atol=1e-5)
        assert np.all(np.abs(g[~active]) <= lam + 1e-5)

    def test_low_dimensional_limit_matches_ols(self):
        # With p << n and a zero penalty the debiased step is plain OLS.
        rng = np.random.default_rng(3)
        n = 300
        X = rng.normal(size=(n, 3))
        y = 1.0 + X @ np.array([0.5, -0.3, 0.0]) + rng.normal(size=n)
        r = fit_debiased_lasso(dataset(X, y), penalty=0.0)
        ref = sm.OLS(y, sm.add_constant(X)).fit()
        np.testing.assert_allclose(r.estimate, ref.params[1:], atol=5e-3)

    def test_recovers_sparse_signal(self):
        rng = np.random.default_rng(4)
        n, p = 120, 60
        X = rng.normal(size=(n, p))
        theta = np.zeros(p)
        theta[:3] = [1.0, -1.0, 0.8]
        y = X @ theta + 0.3 * rng.normal(size=n)
        r = fit_debiased_lasso(dataset(X, y))
        se = np.sqrt(np.diag(r.variance))
        z = np.abs(r.estimate) / se
        assert set(np.flatnonzero(z > 4.0)) == {0, 1, 2}

    def test_constant_column_rejected(self):
        rng = np.random.default_rng(5)
        X = np.column_stack([np.ones(50), rng.normal(size=50)])
        y = rng.normal(size=50)
        with pytest.raises(EstimationError):
            fit_debiased_lasso(dataset(X, y))


class TestFitTask:
    def test_dispatch_matches_direct_calls(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(60, 2))
        y = X[:, 0] + rng.normal(size=60)
        d = dataset(X, y)
        np.testing.assert_array_equal(
            fit_task(TaskSpec("ols"), d).estimate, fit_ols(d).estimate
        )
        np.testing.assert_array_equal(
            fit_task(TaskSpec("mean"), d).estimate, fit_mean(d).estimate
        )

    def test_target_columns_restrict_report(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(60, 2))
        y = X[:, 0] + rng.normal(size=60)
        d = dataset(X, y)
        full = fit_task(TaskSpec("ols"), d)
        sub = fit_task(TaskSpec("ols", target_columns=("x1",)), d)
        assert sub.labels == ["x1"]
        k = full.labels.index("x1")
        assert sub.estimate[0] == full.estimate[k]
        assert sub.variance[0, 0] == full.variance[k, k]

    def test_unknown_task_rejected(self):
        with pytest.raises(InputError):
            TaskSpec("anova")
