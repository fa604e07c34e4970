"""Shared fixtures: small synthetic datasets with a nonlinear signal.

The conditional mean is deliberately nonlinear in the features so the
labeled-outcome fit and the labeled-prediction fit co-fluctuate under
design resampling; a linear truth would make the coupling block zero and
the combination step degenerate for regression tasks.
"""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from psps.datatypes import Dataset

settings.register_profile(
    "ci",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


def surface(x1, x2):
    """Nonlinear conditional mean shared by the test DGP."""
    return 1.0 + 2.0 * x1 - x2 + 0.8 * x1 * x1


def predictor(x1, x2):
    """Deterministic imperfect predictor applied to both data sides."""
    return 0.9 * surface(x1, x2) + 0.3 * np.sin(3.0 * x1)


def make_pair(n=160, N=900, seed=0, noise=0.8):
    """A labeled/unlabeled Dataset pair from the shared DGP."""
    rng = np.random.default_rng(seed)

    def side(m, labeled):
        x1 = rng.normal(size=m)
        x2 = rng.normal(size=m)
        f = predictor(x1, x2)
        y = surface(x1, x2) + rng.normal(scale=noise, size=m) if labeled else None
        return Dataset(
            features=np.column_stack([x1, x2]),
            feature_names=["x1", "x2"],
            outcome=y,
            prediction=f,
        )

    return side(n, True), side(N, False)


def random_summary(rng, K, *, q_factor=40):
    """A random valid summary: PSD labeled stacking, PD combiner matrix.

    The labeled (theta, eta) covariance is a Wishart-style G G'/m so the
    stacking is PSD by construction; the unlabeled block gets a small ridge
    so M = Var(eta_L) + Var(eta_U) is PD.
    """
    from psps.datatypes import EstimateWithVariance, TaskSpec
    from psps.summary import SummaryStatistics

    G = rng.normal(size=(2 * K, 2 * K + 2))
    S = G @ G.T / (2 * K + 2)
    var_theta = S[:K, :K]
    var_eta_l = S[K:, K:]
    C = S[K:, :K].copy()
    H = rng.normal(size=(K, K + 2))
    var_eta_u = H @ H.T / (K + 2) + 0.05 * np.eye(K)
    labels = [f"x{j + 1}" for j in range(K)]

    def block(var, n):
        return EstimateWithVariance(
            estimate=rng.normal(size=K), variance=var, n=n, labels=labels
        )

    return SummaryStatistics(
        task=TaskSpec("ols"),
        labels=labels,
        n=100,
        N=1000,
        bootstrap_replicates=q_factor * K,
        mode="independent",
        theta_L=block(var_theta, 100),
        eta_L=block(var_eta_l, 100),
        eta_U=block(var_eta_u, 1000),
        cov_theta_eta_L=C,
    )


@pytest.fixture
def pair():
    return make_pair()


@pytest.fixture
def labeled(pair):
    return pair[0]


@pytest.fixture
def unlabeled(pair):
    return pair[1]
