"""Debiased combination: closed forms, dominance, optimality, sensitivity."""

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import norm

from psps.datatypes import EstimationError, InputError, TaskSpec
from psps.debias import (
    combine,
    combine_dependent,
    combine_fixed_weight,
    model_selection_metric,
    sensitivity_test,
)
from psps.summary import BootstrapPlan, SummaryStatistics, compute_summary

from conftest import make_pair, random_summary

PLAN = BootstrapPlan(replicates=120, seed=5)


def mean_summary(seed=0, analytic=False):
    lab, unl = make_pair(n=90, N=360, seed=seed)
    plan = BootstrapPlan(replicates=120, seed=5, full_bootstrap=not analytic)
    return lab, unl, compute_summary(TaskSpec("mean"), lab, unl, plan)


class TestClosedForm:
    def test_mean_task_matches_scalar_algebra(self):
        # Independent route: raw sample moments and the one-step formula.
        lab, unl, s = mean_summary(seed=1, analytic=True)
        y, f, fu = lab.outcome, lab.prediction, unl.prediction
        n, N = lab.n, unl.n
        vt = np.var(y, ddof=1) / n
        ve = np.var(f, ddof=1) / n
        vu = np.var(fu, ddof=1) / N
        c = np.cov(y, f, ddof=1)[0, 1] / n
        w = c / (ve + vu)
        est = y.mean() + w * (fu.mean() - f.mean())
        var = vt - c * c / (ve + vu)
        res = combine(s)
        assert res.estimate[0] == pytest.approx(est, abs=1e-10)
        assert res.variance[0, 0] == pytest.approx(var, abs=1e-10)
        assert res.weight[0, 0] == pytest.approx(w, abs=1e-10)

    def test_interval_and_pvalue_formulas(self):
        _, _, s = mean_summary(seed=2)
        res = combine(s, alpha=0.1)
        se = float(np.sqrt(res.variance[0, 0]))
        z = norm.ppf(0.95)
        assert res.std_error[0] == pytest.approx(se, rel=1e-12)
        assert res.ci_lower[0] == pytest.approx(res.estimate[0] - z * se, rel=1e-12)
        assert res.ci_upper[0] == pytest.approx(res.estimate[0] + z * se, rel=1e-12)
        assert res.p_values[0] == pytest.approx(
            2.0 * norm.sf(abs(res.estimate[0]) / se), rel=1e-9
        )

    def test_null_values_move_pvalue_only(self):
        _, _, s = mean_summary(seed=3)
        base = combine(s)
        shifted = combine(s, null_values=[base.estimate[0]])
        assert shifted.p_values[0] == pytest.approx(1.0)
        np.testing.assert_array_equal(shifted.estimate, base.estimate)
        np.testing.assert_array_equal(shifted.ci_lower, base.ci_lower)


class TestDominance:
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_never_wider_than_classical(self, seed):
        rng = np.random.default_rng(seed)
        K = int(rng.integers(1, 7))
        s = random_summary(rng, K)
        res = combine(s)
        for k in range(K):
            assert res.variance[k, k] <= s.theta_L.variance[k, k] + 1e-10

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_variance_reduction_consistent(self, seed):
        rng = np.random.default_rng(seed)
        s = random_summary(rng, 3)
        res = combine(s)
        for k in range(3):
            expect = s.theta_L.variance[k, k] - res.variance[k, k]
            assert res.variance_reduction[k] == pytest.approx(expect, abs=1e-12)

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_scalar_fallback_also_dominates(self, seed):
        # Few bootstrap replicates per coordinate trigger diagonal weights.
        rng = np.random.default_rng(seed)
        K = int(rng.integers(2, 7))
        s = random_summary(rng, K, q_factor=10)
        res = combine(s)
        assert np.count_nonzero(res.weight - np.diag(np.diag(res.weight))) == 0
        for k in range(K):
            assert res.variance[k, k] <= s.theta_L.variance[k, k] + 1e-10
            assert res.variance[k, k] >= -1e-10


class TestOptimality:
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_beats_random_fixed_weights(self, seed):
        rng = np.random.default_rng(seed)
        K = int(rng.integers(1, 6))
        s = random_summary(rng, K)
        res = combine(s)
        for _ in range(4):
            W = rng.normal(size=(K, K))
            fixed = combine_fixed_weight(s, W)
            for k in range(K):
                assert res.variance[k, k] <= fixed.variance[k, k] + 1e-10

    def test_zero_weight_recovers_classical(self):
        rng = np.random.default_rng(0)
        s = random_summary(rng, 4)
        res = combine_fixed_weight(s, np.zeros((4, 4)))
        np.testing.assert_array_equal(res.estimate, s.theta_L.estimate)
        np.testing.assert_array_equal(res.variance, s.theta_L.variance)

    def test_optimal_weight_passed_as_fixed_matches(self):
        rng = np.random.default_rng(1)
        s = random_summary(rng, 4)
        res = combine(s)
        fixed = combine_fixed_weight(s, res.weight)
        np.testing.assert_allclose(fixed.estimate, res.estimate, rtol=1e-12)
        np.testing.assert_allclose(
            np.diag(fixed.variance), np.diag(res.variance), rtol=1e-9
        )


class TestDependentMode:
    def test_zero_extra_blocks_reduce_to_combine(self):
        rng = np.random.default_rng(2)
        s = random_summary(rng, 3)
        K = s.K
        s_dep = SummaryStatistics(
            task=s.task,
            labels=s.labels,
            n=s.n,
            N=s.N,
            bootstrap_replicates=s.bootstrap_replicates,
            mode=s.mode,
            theta_L=s.theta_L,
            eta_L=s.eta_L,
            eta_U=s.eta_U,
            cov_theta_eta_L=s.cov_theta_eta_L,
            extra_blocks={
                "cov_eta_L_eta_U": np.zeros((K, K)),
                "cov_theta_L_eta_U": np.zeros((K, K)),
            },
        )
        a = combine(s)
        b = combine_dependent(s_dep)
        np.testing.assert_array_equal(a.estimate, b.estimate)
        np.testing.assert_array_equal(a.variance, b.variance)
        np.testing.assert_array_equal(a.p_values, b.p_values)

    def test_overlap_block_changes_weight(self):
        rng = np.random.default_rng(3)
        s = random_summary(rng, 3)
        K = s.K
        s_dep = SummaryStatistics(
            task=s.task,
            labels=s.labels,
            n=s.n,
            N=s.N,
            bootstrap_replicates=s.bootstrap_replicates,
            mode=s.mode,
            theta_L=s.theta_L,
            eta_L=s.eta_L,
            eta_U=s.eta_U,
            cov_theta_eta_L=s.cov_theta_eta_L,
            extra_blocks={"cov_eta_L_eta_U": 0.01 * np.eye(K)},
        )
        assert not np.array_equal(
            combine_dependent(s_dep).weight, combine(s).weight
        )


class TestEquivariance:
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_affine_outcome_shift(self, seed):
        # Shifting every block estimate by b shifts the result by b.
        rng = np.random.default_rng(seed)
        s = random_summary(rng, 2)
        b = rng.normal(size=2)

        def shifted_block(e):
            from psps.datatypes import EstimateWithVariance

            return EstimateWithVariance(
                estimate=e.estimate + b, variance=e.variance, n=e.n, labels=e.labels
            )

        s2 = SummaryStatistics(
            task=s.task,
            labels=s.labels,
            n=s.n,
            N=s.N,
            bootstrap_replicates=s.bootstrap_replicates,
            mode=s.mode,
            theta_L=shifted_block(s.theta_L),
            eta_L=shifted_block(s.eta_L),
            eta_U=shifted_block(s.eta_U),
            cov_theta_eta_L=s.cov_theta_eta_L,
        )
        r1, r2 = combine(s), combine(s2)
        np.testing.assert_allclose(r2.estimate, r1.estimate + b, rtol=1e-9)
        np.testing.assert_allclose(r2.variance, r1.variance, rtol=1e-12)


class TestGuards:
    def test_negative_variance_rejected(self):
        # An inconsistent summary (correlation above one) must fail loudly.
        rng = np.random.default_rng(4)
        s = random_summary(rng, 2)
        s.cov_theta_eta_L[:] = 10.0
        with pytest.raises(EstimationError, match="negative"):
            combine(s)

    def test_singular_combiner_needs_ridge(self):
        rng = np.random.default_rng(5)
        s = random_summary(rng, 2)
        s.eta_L.variance[:] = np.ones((2, 2))  # rank one
        s.eta_U.variance[:] = 0.0
        s.cov_theta_eta_L[:] = 0.0
        with pytest.raises(EstimationError):
            combine(s)
        res = combine(s, ridge=True)
        assert res.ridge_perturbation is not None
        assert np.all(np.isfinite(res.estimate))

    def test_partial_summary_rejected(self):
        lab, _ = make_pair(seed=6)
        from psps.summary import labeled_summary

        part = labeled_summary(TaskSpec("mean"), lab, PLAN)
        with pytest.raises(InputError):
            combine(part)

    def test_alpha_out_of_range(self):
        rng = np.random.default_rng(6)
        s = random_summary(rng, 2)
        with pytest.raises(InputError):
            combine(s, alpha=1.5)


class TestSensitivity:
    def test_no_shift_mostly_unflagged(self):
        lab, unl, s = mean_summary(seed=7)
        r = sensitivity_test(s)
        assert r.p_values[0] > 0.1
        assert not r.flagged[0]

    def test_shifted_unlabeled_flagged(self):
        lab, unl = make_pair(n=200, N=2000, seed=8)
        from psps.datatypes import Dataset

        unl_shift = Dataset(
            features=unl.features,
            feature_names=unl.feature_names,
            prediction=unl.prediction + 1.5,
        )
        s = compute_summary(TaskSpec("mean"), lab, unl_shift, PLAN)
        r = sensitivity_test(s)
        assert r.flagged[0]
        assert r.p_values[0] < 1e-4

    def test_threshold_controls_flag(self):
        _, _, s = mean_summary(seed=9)
        r = sensitivity_test(s, threshold=1.0)
        assert r.flagged.all()


class TestModelSelection:
    def test_perfect_predictor_scores_higher(self):
        lab, unl = make_pair(n=120, N=600, seed=10)
        from psps.datatypes import Dataset

        perfect = Dataset(
            features=lab.features,
            feature_names=lab.feature_names,
            outcome=lab.outcome,
            prediction=lab.outcome.copy(),
        )
        rng = np.random.default_rng(11)
        noise = Dataset(
            features=lab.features,
            feature_names=lab.feature_names,
            outcome=lab.outcome,
            prediction=rng.normal(size=lab.n),
        )
        s_good = compute_summary(TaskSpec("mean"), perfect, unl, PLAN)
        s_bad = compute_summary(TaskSpec("mean"), noise, unl, PLAN)
        assert model_selection_metric(s_good)[0] > model_selection_metric(s_bad)[0]
