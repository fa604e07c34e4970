"""Summary construction, serialization, and federated merging."""

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from psps.datatypes import Dataset, InputError, TaskSpec
from psps.summary import (
    BootstrapPlan,
    compute_summary,
    labeled_summary,
    merge_summaries,
    parse_summary,
    serialize_summary,
    unlabeled_summary,
)

from conftest import make_pair

PLAN = BootstrapPlan(replicates=80, seed=21)


def mean_summary(seed=0, plan=PLAN):
    lab, unl = make_pair(n=60, N=240, seed=seed)
    return compute_summary(TaskSpec("mean"), lab, unl, plan)


class TestRoundTrip:
    def test_serialize_parse_bit_exact(self):
        s = mean_summary()
        t = parse_summary(serialize_summary(s))
        np.testing.assert_array_equal(t.theta_L.estimate, s.theta_L.estimate)
        np.testing.assert_array_equal(t.theta_L.variance, s.theta_L.variance)
        np.testing.assert_array_equal(t.eta_U.variance, s.eta_U.variance)
        np.testing.assert_array_equal(t.cov_theta_eta_L, s.cov_theta_eta_L)
        assert t.labels == s.labels
        assert (t.n, t.N, t.bootstrap_replicates) == (s.n, s.N, s.bootstrap_replicates)
        # second serialization is byte-identical
        assert serialize_summary(t) == serialize_summary(s)

    def test_blocks_present_manifest(self):
        lab, unl = make_pair(n=60, N=240, seed=1)
        part_l = labeled_summary(TaskSpec("mean"), lab, PLAN)
        part_u = unlabeled_summary(TaskSpec("mean"), unl, PLAN)
        assert json.loads(serialize_summary(part_l))["blocks_present"] == ["labeled"]
        assert json.loads(serialize_summary(part_u))["blocks_present"] == ["unlabeled"]
        full = merge_summaries([part_l, part_u])
        assert json.loads(serialize_summary(full))["blocks_present"] == [
            "labeled",
            "unlabeled",
        ]

    def test_parse_rejects_garbage(self):
        with pytest.raises(InputError):
            parse_summary("not json at all {")

    def test_parse_rejects_missing_field(self):
        obj = json.loads(serialize_summary(mean_summary()))
        del obj["labels"]
        with pytest.raises(InputError, match="labels"):
            parse_summary(json.dumps(obj))


class TestFederatedMerge:
    def test_split_equals_joint_bit_for_bit(self):
        lab, unl = make_pair(n=60, N=240, seed=2)
        for task in (TaskSpec("mean"), TaskSpec("ols")):
            joint = compute_summary(task, lab, unl, PLAN)
            split = merge_summaries(
                [
                    labeled_summary(task, lab, PLAN),
                    unlabeled_summary(task, unl, PLAN),
                ]
            )
            assert serialize_summary(joint) == serialize_summary(split)

    def test_merge_through_files(self):
        lab, unl = make_pair(n=60, N=240, seed=3)
        task = TaskSpec("ols")
        joint = compute_summary(task, lab, unl, PLAN)
        split = merge_summaries(
            [
                parse_summary(serialize_summary(labeled_summary(task, lab, PLAN))),
                parse_summary(serialize_summary(unlabeled_summary(task, unl, PLAN))),
            ]
        )
        assert serialize_summary(joint) == serialize_summary(split)

    def test_duplicate_side_rejected(self):
        lab, _ = make_pair(seed=4)
        part = labeled_summary(TaskSpec("mean"), lab, PLAN)
        with pytest.raises(InputError, match="twice"):
            merge_summaries([part, part])

    def test_missing_side_rejected(self):
        lab, _ = make_pair(seed=4)
        part = labeled_summary(TaskSpec("mean"), lab, PLAN)
        with pytest.raises(InputError, match="missing"):
            merge_summaries([part])

    def test_task_mismatch_rejected(self):
        lab, unl = make_pair(seed=4)
        part_l = labeled_summary(TaskSpec("mean"), lab, PLAN)
        part_u = unlabeled_summary(TaskSpec("ols"), unl, PLAN)
        with pytest.raises(InputError):
            merge_summaries([part_l, part_u])

    def test_replicate_count_mismatch_rejected(self):
        lab, unl = make_pair(seed=4)
        part_l = labeled_summary(TaskSpec("mean"), lab, PLAN)
        part_u = unlabeled_summary(
            TaskSpec("mean"), unl, BootstrapPlan(replicates=120, seed=21)
        )
        with pytest.raises(InputError):
            merge_summaries([part_l, part_u])


class TestBlocks:
    def test_mean_closed_forms(self):
        lab, unl = make_pair(n=80, N=300, seed=5)
        plan = BootstrapPlan(replicates=80, seed=1, full_bootstrap=False)
        s = compute_summary(TaskSpec("mean"), lab, unl, plan)
        y, f = lab.outcome, lab.prediction
        n, N = lab.n, unl.n
        assert s.theta_L.estimate[0] == pytest.approx(y.mean(), abs=1e-12)
        assert s.theta_L.variance[0, 0] == pytest.approx(np.var(y, ddof=1) / n, rel=1e-9)
        assert s.eta_L.variance[0, 0] == pytest.approx(np.var(f, ddof=1) / n, rel=1e-9)
        assert s.eta_U.variance[0, 0] == pytest.approx(
            np.var(unl.prediction, ddof=1) / N, rel=1e-9
        )
        assert s.cov_theta_eta_L[0, 0] == pytest.approx(
            np.cov(y, f, ddof=1)[0, 1] / n, rel=1e-9
        )

    def test_prediction_equal_outcome_couples_fully(self):
        # With f identically Y the two labeled views are the same statistic,
        # so the joint bootstrap gives C == Var(theta_L) == Var(eta_L).
        lab, unl = make_pair(n=70, N=200, seed=6)
        lab = Dataset(
            features=lab.features,
            feature_names=lab.feature_names,
            outcome=lab.outcome,
            prediction=lab.outcome.copy(),
        )
        s = labeled_summary(TaskSpec("mean"), lab, PLAN)
        np.testing.assert_allclose(s.cov_theta_eta_L, s.theta_L.variance, rtol=1e-12)
        np.testing.assert_allclose(s.eta_L.variance, s.theta_L.variance, rtol=1e-12)
        np.testing.assert_allclose(s.eta_L.estimate, s.theta_L.estimate, rtol=1e-12)

    def test_analytic_coupling_within_correlation_bound(self):
        # The calibrated coupling block keeps every implied correlation in
        # [-1, 1], the property that makes the combined variance nonnegative.
        lab, unl = make_pair(n=60, N=240, seed=7)
        plan = BootstrapPlan(replicates=80, seed=2, full_bootstrap=False)
        s = compute_summary(TaskSpec("ols"), lab, unl, plan)
        vt = np.diag(s.theta_L.variance)
        ve = np.diag(s.eta_L.variance)
        C = s.cov_theta_eta_L
        for i in range(s.K):
            for j in range(s.K):
                assert C[i, j] ** 2 <= ve[i] * vt[j] * (1.0 + 1e-12)

    def test_determinism(self):
        assert serialize_summary(mean_summary(seed=8)) == serialize_summary(
            mean_summary(seed=8)
        )

    def test_seed_changes_bootstrap(self):
        a = mean_summary(seed=8, plan=BootstrapPlan(replicates=80, seed=1))
        b = mean_summary(seed=8, plan=BootstrapPlan(replicates=80, seed=2))
        assert a.theta_L.estimate == b.theta_L.estimate
        assert a.cov_theta_eta_L[0, 0] != b.cov_theta_eta_L[0, 0]


class TestValidation:
    def test_labeled_requires_outcome(self):
        _, unl = make_pair(seed=9)
        with pytest.raises(InputError, match="outcome"):
            labeled_summary(TaskSpec("mean"), unl, PLAN)

    def test_unlabeled_rejects_outcome(self):
        lab, _ = make_pair(seed=9)
        with pytest.raises(InputError, match="swapped"):
            unlabeled_summary(TaskSpec("mean"), lab, PLAN)

    def test_analytic_mode_needs_analytic_variance(self):
        lab, unl = make_pair(seed=9)
        plan = BootstrapPlan(replicates=80, seed=0, full_bootstrap=False)
        with pytest.raises(InputError, match="full_bootstrap"):
            compute_summary(TaskSpec("quantile", quantile_level=0.5), lab, unl, plan)

    @given(q=st.integers(min_value=-3, max_value=49))
    def test_plan_rejects_small_q(self, q):
        with pytest.raises(InputError):
            BootstrapPlan(replicates=q, seed=0)
