"""False-discovery-rate control on top of the debiasing pipeline.

Two selection procedures are provided: Benjamini-Hochberg over the combined
regression p-values, and the knockoff filter over combined debiased-Lasso
coefficients with second-order Gaussian knockoffs (equicorrelated
construction, closed-form s). Baseline selectors that skip the unlabeled
data (classical) or trust predictions as outcomes (imputed) share the same
BH core so method comparisons differ only in the p-values fed in.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm
from scipy.stats import t as student_t

from .datatypes import Dataset, EstimationError, InputError, TaskSpec
from .debias import combine
from .rng import substream
from .summary import (
    BootstrapPlan,
    labeled_summary,
    merge_summaries,
    unlabeled_summary,
)

_METHODS = ("psps_bh", "psps_knockoff", "classical_bh", "imputed_bh")
_SHRINKAGE = 0.01
_EXACT_COLLINEAR_TOL = 1e-10


@dataclass
class DiscoverySet:
    """Selected feature indices with the cutoff that produced them."""

    selected: set[int]
    threshold: float
    q: float
    method: str
    statistics: np.ndarray
    labels: list[str] | None = None

    def __post_init__(self):
        if self.method not in _METHODS:
            raise InputError(f"method must be one of {_METHODS}, got {self.method!r}")
        K = len(self.statistics)
        if any(not (0 <= k < K) for k in self.selected):
            raise InputError("selected indices out of range")
        if self.labels is not None and len(self.labels) != K:
            raise InputError("labels length disagrees with statistics")


@dataclass
class KnockoffAugmentation:
    """Original features, their sampled knockoffs, and the s parameters."""

    original: np.ndarray
    knockoff: np.ndarray
    s_vector: np.ndarray

    def __post_init__(self):
        if self.original.shape != self.knockoff.shape:
            raise InputError("knockoff matrix must match the original shape")
        if self.s_vector.shape != (self.original.shape[1],):
            raise InputError("s_vector length must equal the feature count")


def _check_q(q: float):
    if not (0.0 < q < 1.0):
        raise InputError(f"target FDR level must be in (0, 1), got {q}")


def bh_select(
    p_values, q: float, *, method: str = "psps_bh", labels=None
) -> DiscoverySet:
    """Benjamini-Hochberg step-up selection at level q.

    The cutoff is the largest sorted p-value p_(k) with p_(k) <= k q / K;
    selection keeps every coordinate at or below the cutoff. An empty
    selection reports threshold +inf.
    """
    _check_q(q)
    p = np.asarray(p_values, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise InputError("p_values must be a non-empty vector")
    if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise InputError("p-values must lie in [0, 1]")
    K = p.size
    p_sorted = np.sort(p)
    qualifies = np.flatnonzero(p_sorted <= np.arange(1, K + 1) * (q / K))
    if qualifies.size == 0:
        threshold = math.inf
        selected: set[int] = set()
    else:
        threshold = float(p_sorted[qualifies[-1]])
        selected = set(np.flatnonzero(p <= threshold).tolist())
    return DiscoverySet(
        selected=selected,
        threshold=threshold,
        q=float(q),
        method=method,
        statistics=p,
        labels=None if labels is None else list(labels),
    )


# ---------------------------------------------------------------------------
# Second-order Gaussian knockoffs.
# ---------------------------------------------------------------------------


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    if np.any(sd <= 0.0):
        j = int(np.flatnonzero(sd <= 0.0)[0])
        raise EstimationError(f"feature column {j} is constant; cannot build knockoffs")
    return (X - mu) / sd, mu, sd


def _knockoff_model(Xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Shrunken correlation matrix and equicorrelated s from standardized X."""
    n, K = Xs.shape
    Sigma = (Xs.T @ Xs) / n
    lam_min_raw = float(np.min(np.linalg.eigvalsh(0.5 * (Sigma + Sigma.T))))
    if lam_min_raw <= _EXACT_COLLINEAR_TOL:
        raise EstimationError(
            "feature columns are collinear (correlation matrix is singular)"
        )
    Sigma = (1.0 - _SHRINKAGE) * Sigma + _SHRINKAGE * np.eye(K)
    lam_min = float(np.min(np.linalg.eigvalsh(0.5 * (Sigma + Sigma.T))))
    if lam_min <= 0.0:
        raise EstimationError("correlation matrix is singular even after shrinkage")
    s = np.full(K, min(1.0, 2.0 * lam_min))
    return Sigma, s


def _draw_knockoffs(
    Xs: np.ndarray, Sigma: np.ndarray, s: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    K = Xs.shape[1]
    Sinv_S = np.linalg.solve(Sigma, np.diag(s))
    mean = Xs - Xs @ Sinv_S
    cov = 2.0 * np.diag(s) - np.diag(s) @ Sinv_S
    evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
    # s = 2 lambda_min makes the conditional covariance rank deficient;
    # clamp the tiny negative eigenvalues that fall out of eigh.
    factor = evecs * np.sqrt(np.clip(evals, 0.0, None))
    Z = rng.standard_normal(size=Xs.shape)
    return mean + Z @ factor.T


def sample_knockoffs(X, seed: int) -> KnockoffAugmentation:
    """Sample second-order Gaussian knockoffs for a feature matrix.

    Columns are standardized, the empirical correlation is shrunk by 1% to
    the identity, and knockoffs are drawn from the conditional Gaussian of
    the equicorrelated construction with s_j = min(1, 2 lambda_min). The
    draw is deterministic given the seed.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InputError("knockoffs need a 2-d feature matrix with n > 1")
    Xs, mu, sd = _standardize(X)
    Sigma, s = _knockoff_model(Xs)
    draw = _draw_knockoffs(Xs, Sigma, s, substream(seed, "knockoff"))
    return KnockoffAugmentation(original=X, knockoff=draw * sd + mu, s_vector=s)


def knockoff_statistics(beta_augmented) -> np.ndarray:
    """Coefficient-difference statistics W_k = |beta_k| - |beta_{k+K}|."""
    beta = np.asarray(beta_augmented, dtype=np.float64)
    if beta.ndim != 1 or beta.size % 2 != 0 or beta.size == 0:
        raise InputError(
            f"augmented coefficient vector must have even length, got {beta.size}"
        )
    K = beta.size // 2
    return np.abs(beta[:K]) - np.abs(beta[K:])


def knockoff_threshold(
    W, q: float, *, plus: bool = False, method: str = "psps_knockoff", labels=None
) -> DiscoverySet:
    """Knockoff filter cutoff: the smallest candidate t with estimated FDP
    #{W <= -t} / max(#{W >= t}, 1) at most q; select W_k >= t.

    ``plus=True`` uses the knockoff+ numerator #{W <= -t} + 1.
    """
    _check_q(q)
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 1 or W.size == 0:
        raise InputError("W must be a non-empty vector")
    if np.any(~np.isfinite(W)):
        raise InputError("W must be finite")
    offset = 1.0 if plus else 0.0
    threshold = math.inf
    for t in np.unique(np.abs(W[W != 0.0])):
        fdp = (np.sum(W <= -t) + offset) / max(int(np.sum(W >= t)), 1)
        if fdp <= q:
            threshold = float(t)
            break
    selected = (
        set() if math.isinf(threshold) else set(np.flatnonzero(W >= threshold).tolist())
    )
    return DiscoverySet(
        selected=selected,
        threshold=threshold,
        q=float(q),
        method=method,
        statistics=W,
        labels=None if labels is None else list(labels),
    )


# ---------------------------------------------------------------------------
# End-to-end pipelines.
# ---------------------------------------------------------------------------


def classical_feature_pvalues(data: Dataset) -> tuple[np.ndarray, list[str]]:
    """Textbook t-test p-values for every feature of a linear regression.

    Pooled homoskedastic residual variance and exact t quantiles, the
    standard labeled-only analysis the selection baselines represent. The
    per-coordinate robust meat is deliberately not used here: its
    estimation noise fattens far tails enough to break BH-level FDR
    control in wide designs, while the pooled scale shifts all p-values
    together, which BH absorbs.
    """
    y = _test_outcome(data)
    names = [c for c in data.feature_names if data.role(c) == "covariate"]
    if not names:
        raise InputError("selection needs at least one covariate feature")
    X = np.column_stack(
        [np.ones(data.n)] + [data.column(c) for c in names]
    )
    n, p = X.shape
    if n <= p:
        raise InputError(f"classical test needs n > {p} observations, got {n}")
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < p:
        raise EstimationError("singular design in classical test")
    resid = y - X @ beta
    sigma2 = float(resid @ resid) / (n - p)
    XtX_inv = np.linalg.inv(X.T @ X)
    se = np.sqrt(sigma2 * np.diag(XtX_inv))[1:]
    b = beta[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.abs(b) / se
    p_values = np.where(
        se > 0.0,
        2.0 * student_t.sf(stat, n - p),
        np.where(b == 0.0, 1.0, 0.0),
    )
    return p_values, names


def _test_outcome(data: Dataset) -> np.ndarray:
    if data.outcome is None:
        raise InputError("classical test needs an outcome column")
    if data.weights is not None:
        raise InputError("classical test does not support weights")
    return data.outcome


def _ols_target_spec(data: Dataset) -> TaskSpec:
    names = [c for c in data.feature_names if data.role(c) == "covariate"]
    if not names:
        raise InputError("selection needs at least one covariate feature")
    return TaskSpec(task="ols", target_columns=tuple(names))


def _psd_safe_summary(spec, labeled, unlabeled, plan):
    # The labeled blocks always come from one joint bootstrap: with many
    # target coordinates, mixing an analytic Var(theta_L) with a
    # bootstrapped coupling block makes a negative debiased variance likely
    # on at least one coordinate. The plan flag still governs the unlabeled
    # side, where no such consistency is needed.
    lab = labeled_summary(spec, labeled, replace(plan, full_bootstrap=True))
    return merge_summaries([lab, unlabeled_summary(spec, unlabeled, plan)])


def psps_bh(
    labeled: Dataset, unlabeled: Dataset, plan: BootstrapPlan, q: float
) -> DiscoverySet:
    """BH selection over the debiased joint-regression p-values.

    Runs the summary pipeline with an all-feature linear regression,
    combines, and applies BH to the K feature p-values (the intercept never
    enters).
    """
    _check_q(q)
    if labeled.feature_names != unlabeled.feature_names:
        raise InputError(
            "feature schemas differ between labeled and unlabeled data: "
            f"{labeled.feature_names} vs {unlabeled.feature_names}"
        )
    spec = _ols_target_spec(labeled)
    result = combine(_psd_safe_summary(spec, labeled, unlabeled, plan))
    return bh_select(result.p_values, q, method="psps_bh", labels=result.labels)


def classical_bh(labeled: Dataset, q: float) -> DiscoverySet:
    """Baseline: BH over labeled-only regression t-test p-values."""
    _check_q(q)
    p, names = classical_feature_pvalues(labeled)
    return bh_select(p, q, method="classical_bh", labels=names)


def imputed_bh(unlabeled: Dataset, q: float) -> DiscoverySet:
    """Baseline: BH over regression p-values that treat predictions as the
    outcome on the unlabeled data (no bias correction)."""
    _check_q(q)
    if unlabeled.prediction is None:
        raise InputError("imputed selection needs a prediction column")
    p, names = classical_feature_pvalues(unlabeled.with_outcome(unlabeled.prediction))
    return bh_select(p, q, method="imputed_bh", labels=names)


def _augment(data: Dataset, draw: np.ndarray, outcome) -> Dataset:
    names = list(data.feature_names) + [f"{c}_knockoff" for c in data.feature_names]
    return Dataset(
        features=np.hstack([data.features, draw]),
        feature_names=names,
        outcome=outcome,
        prediction=data.prediction,
        column_roles={},
    )


def psps_knockoff_statistics(
    labeled: Dataset,
    unlabeled: Dataset,
    plan: BootstrapPlan,
    seed: int,
) -> np.ndarray:
    """Knockoff W statistics from combined debiased-Lasso coefficients.

    Knockoffs for the labeled and unlabeled feature matrices are drawn with
    independent seed substreams but share one s-vector and standardization
    built from the pooled correlation, so the augmented designs follow one
    distribution. The augmented datasets then run through the summary and
    combine stages with the debiased-Lasso task, and the coefficient
    differences become the W statistics. Separated from the thresholding
    step so one set of statistics can serve several target FDR levels.
    """
    if labeled.feature_names != unlabeled.feature_names:
        raise InputError(
            "feature schemas differ between labeled and unlabeled data: "
            f"{labeled.feature_names} vs {unlabeled.feature_names}"
        )
    pooled = np.vstack([labeled.features, unlabeled.features])
    pooled_s, mu, sd = _standardize(pooled)
    Sigma, s = _knockoff_model(pooled_s)
    draws = {}
    for role, data in (("labeled", labeled), ("unlabeled", unlabeled)):
        Xs = (data.features - mu) / sd
        draws[role] = (
            _draw_knockoffs(Xs, Sigma, s, substream(seed, "knockoff", role)) * sd + mu
        )
    aug_labeled = _augment(labeled, draws["labeled"], labeled.outcome)
    aug_unlabeled = _augment(unlabeled, draws["unlabeled"], None)
    spec = TaskSpec(task="debiased_lasso")
    result = combine(_psd_safe_summary(spec, aug_labeled, aug_unlabeled, plan))
    return knockoff_statistics(result.estimate)


def psps_knockoff(
    labeled: Dataset,
    unlabeled: Dataset,
    plan: BootstrapPlan,
    q: float,
    seed: int,
    *,
    plus: bool = False,
) -> DiscoverySet:
    """Knockoff selection over combined debiased-Lasso coefficients."""
    _check_q(q)
    W = psps_knockoff_statistics(labeled, unlabeled, plan, seed)
    return knockoff_threshold(
        W, q, plus=plus, method="psps_knockoff", labels=list(labeled.feature_names)
    )


# ---------------------------------------------------------------------------
# Serialization.
# ---------------------------------------------------------------------------


def discovery_to_csv(ds: DiscoverySet) -> str:
    """Render a DiscoverySet as a JSON header line followed by CSV rows
    (feature, statistic, selected flag)."""
    header = json.dumps(
        {"method": ds.method, "q": ds.q, "threshold": ds.threshold}
    )
    lines = [header, "feature,statistic,selected"]
    for k, stat in enumerate(ds.statistics):
        name = ds.labels[k] if ds.labels is not None else str(k)
        flag = 1 if k in ds.selected else 0
        lines.append(f"{name},{format(float(stat), '.17g')},{flag}")
    return "\n".join(lines) + "\n"
