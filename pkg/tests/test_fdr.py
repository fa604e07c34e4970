"""Selection procedures against exhaustive oracles and known properties."""

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, strategies as st

from psps.datatypes import Dataset, InputError
from psps.fdr import (
    bh_select,
    classical_bh,
    classical_feature_pvalues,
    imputed_bh,
    knockoff_statistics,
    knockoff_threshold,
    psps_bh,
    psps_knockoff,
)
from psps.summary import BootstrapPlan


def bh_oracle(p, q):
    """Step-up rule by exhaustive scan over candidate counts."""
    p = np.asarray(p, float)
    K = len(p)
    order = np.sort(p)
    best = 0
    for k in range(1, K + 1):
        if order[k - 1] <= q * k / K:
            best = k
    if best == 0:
        return set()
    return set(np.flatnonzero(p <= q * best / K).tolist())


def knockoff_oracle(W, q, plus):
    """Scan every candidate threshold from the magnitudes of W."""
    W = np.asarray(W, float)
    offset = 1.0 if plus else 0.0
    candidates = np.sort(np.unique(np.abs(W[W != 0.0])))
    for t in candidates:
        fdp = (offset + np.sum(W <= -t)) / max(1, int(np.sum(W >= t)))
        if fdp <= q:
            return float(t)
    return np.inf


class TestBhSelect:
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_matches_exhaustive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        K = int(rng.integers(1, 21))
        # Mix uniform nulls with a few strong signals.
        p = rng.uniform(size=K)
        p[: int(rng.integers(0, K + 1))] *= rng.uniform(0.0, 0.01)
        q = float(rng.uniform(0.01, 0.4))
        assert bh_select(p, q).selected == bh_oracle(p, q)

    def test_all_null_selects_nothing(self):
        assert bh_select(np.full(10, 0.9), 0.1).selected == set()

    def test_all_tiny_selects_everything(self):
        assert bh_select(np.full(10, 1e-8), 0.1).selected == set(range(10))

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_monotone_in_pvalues(self, seed):
        # Lowering every p-value never shrinks the rejection set.
        rng = np.random.default_rng(seed)
        p = rng.uniform(size=15)
        smaller = p * rng.uniform(0.0, 1.0, size=15)
        sel_small = bh_select(smaller, 0.2).selected
        sel_orig = bh_select(p, 0.2).selected
        assert len(sel_small) >= len(sel_orig)

    def test_q_out_of_range(self):
        with pytest.raises(InputError):
            bh_select(np.array([0.5]), 0.0)
        with pytest.raises(InputError):
            bh_select(np.array([0.5]), 1.0)

    def test_invalid_pvalues_rejected(self):
        with pytest.raises(InputError):
            bh_select(np.array([0.5, 1.5]), 0.1)


class TestKnockoffThreshold:
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_matches_exhaustive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        K = int(rng.integers(1, 21))
        W = rng.normal(size=K)
        W[rng.uniform(size=K) < 0.2] = 0.0
        q = float(rng.uniform(0.05, 0.4))
        plus = bool(rng.integers(0, 2))
        ds = knockoff_threshold(W, q, plus=plus)
        t = knockoff_oracle(W, q, plus)
        assert ds.threshold == t or (np.isinf(ds.threshold) and np.isinf(t))
        expected = set() if np.isinf(t) else set(np.flatnonzero(W >= t).tolist())
        assert ds.selected == expected

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_threshold_antitone_in_q(self, seed):
        rng = np.random.default_rng(seed)
        W = rng.normal(size=25)
        t_strict = knockoff_threshold(W, 0.05).threshold
        t_loose = knockoff_threshold(W, 0.3).threshold
        assert t_loose <= t_strict

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_plus_never_selects_more(self, seed):
        rng = np.random.default_rng(seed)
        W = rng.normal(size=25)
        plain = knockoff_threshold(W, 0.2).selected
        plus = knockoff_threshold(W, 0.2, plus=True).selected
        assert plus <= plain

    def test_all_negative_selects_nothing(self):
        ds = knockoff_threshold(-np.abs(np.random.default_rng(0).normal(size=10)), 0.2)
        assert ds.selected == set()

    def test_statistics_are_magnitude_differences(self):
        beta = np.array([0.5, -0.2, 0.1, 0.4])
        np.testing.assert_allclose(
            knockoff_statistics(beta), [0.5 - 0.1, 0.2 - 0.4]
        )

    def test_odd_length_rejected(self):
        with pytest.raises(InputError):
            knockoff_statistics(np.ones(5))


class TestClassicalPvalues:
    def test_matches_statsmodels_t_test(self):
        rng = np.random.default_rng(5)
        n, K = 80, 6
        X = rng.normal(size=(n, K))
        y = X[:, 0] * 0.8 + rng.normal(size=n)
        d = Dataset(
            features=X,
            feature_names=[f"x{j + 1}" for j in range(K)],
            outcome=y,
        )
        p, labels = classical_feature_pvalues(d)
        ref = sm.OLS(y, sm.add_constant(X)).fit()
        np.testing.assert_allclose(p, ref.pvalues[1:], rtol=1e-9)
        assert labels == d.feature_names

    def test_requires_outcome(self):
        rng = np.random.default_rng(6)
        d = Dataset(
            features=rng.normal(size=(30, 2)),
            feature_names=["a", "b"],
            prediction=rng.normal(size=30),
        )
        with pytest.raises(InputError):
            classical_feature_pvalues(d)


def planted_pair(seed=0, n=150, N=800, K=12, signal=1.0):
    rng = np.random.default_rng(seed)
    theta = np.zeros(K)
    theta[:3] = signal

    def side(m, labeled):
        X = rng.normal(size=(m, K))
        mean = X @ theta
        f = mean + 0.3 * np.tanh(X[:, 0])
        y = mean + 0.4 * rng.normal(size=m) if labeled else None
        return Dataset(
            features=X,
            feature_names=[f"x{j + 1}" for j in range(K)],
            outcome=y,
            prediction=f,
        )

    return side(n, True), side(N, False)


class TestPipelines:
    def test_psps_bh_selects_planted_signals(self):
        lab, unl = planted_pair(seed=1)
        plan = BootstrapPlan(replicates=120, seed=9)
        ds = psps_bh(lab, unl, plan, 0.1)
        assert {0, 1, 2} <= ds.selected
        assert len(ds.selected) <= 5

    def test_psps_bh_deterministic(self):
        lab, unl = planted_pair(seed=2)
        plan = BootstrapPlan(replicates=120, seed=9)
        a = psps_bh(lab, unl, plan, 0.1)
        b = psps_bh(lab, unl, plan, 0.1)
        assert a.selected == b.selected
        np.testing.assert_array_equal(a.statistics, b.statistics)

    def test_classical_bh_selects_planted_signals(self):
        lab, _ = planted_pair(seed=3)
        ds = classical_bh(lab, 0.1)
        assert {0, 1, 2} <= ds.selected

    def test_imputed_bh_runs_on_predictions(self):
        _, unl = planted_pair(seed=4)
        ds = imputed_bh(unl, 0.1)
        assert {0, 1, 2} <= ds.selected

    def test_psps_knockoff_deterministic_and_finds_signals(self):
        lab, unl = planted_pair(seed=5, n=200, N=900, K=8, signal=1.5)
        plan = BootstrapPlan(replicates=120, seed=4)
        a = psps_knockoff(lab, unl, plan, 0.2, seed=11)
        b = psps_knockoff(lab, unl, plan, 0.2, seed=11)
        assert a.selected == b.selected
        np.testing.assert_array_equal(a.statistics, b.statistics)
        assert {0, 1, 2} <= a.selected

    def test_knockoff_seed_changes_draw(self):
        lab, unl = planted_pair(seed=5, n=200, N=900, K=8, signal=1.5)
        plan = BootstrapPlan(replicates=120, seed=4)
        a = psps_knockoff(lab, unl, plan, 0.2, seed=11)
        c = psps_knockoff(lab, unl, plan, 0.2, seed=12)
        assert not np.array_equal(a.statistics, c.statistics)

    def test_schema_mismatch_rejected(self):
        lab, unl = planted_pair(seed=6)
        renamed = Dataset(
            features=unl.features,
            feature_names=["z" + c for c in unl.feature_names],
            prediction=unl.prediction,
        )
        with pytest.raises(InputError, match="schema"):
            psps_bh(lab, renamed, BootstrapPlan(replicates=120, seed=1), 0.1)
