"""One-step debiasing: combine summary blocks into estimates and inference.

The combiner treats the labeled fit theta_L as the anchor and removes the
prediction-induced bias via the weighted contrast of the two prediction fits:

    estimate_k = w_k' eta_U - (w_k' eta_L - theta_L_k)

with per-coordinate weight w_k chosen to minimize the resulting variance.
Stacking the weights as columns, the minimizer is W = M^{-1} C where
M = Var(eta_L) + Var(eta_U) and C is the stored cross-covariance block
(rows indexed by eta coordinates, columns by theta coordinates), giving

    Var = Var(theta_L) - C' M^{-1} C.

Every coordinate's variance is then no larger than the classical one, and no
fixed weight matrix can do better; both facts are algebraic identities of
these formulas, not asymptotic approximations.

The matrix weight is only trustworthy when the bootstrap replicate count Q
is much larger than the coordinate count K: the estimated quadratic form
C' M^{-1} C inflates by roughly K/Q of Var(theta_L) in pure noise, which at
K comparable to Q absorbs the whole variance and produces zero-width
intervals. Past K > Q / 20 the combiner therefore falls back to scalar
per-coordinate weights w_k = C_kk / M_kk, which keep the dominance
guarantee (a 2x2 Schur complement per coordinate) at any dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .datatypes import EstimationError, InputError
from .summary import SummaryStatistics

_COND_LIMIT = 1e12
_RIDGE_EPS = 1e-8
_NEG_VAR_TOL = -1e-10
# Minimum bootstrap replicates per coordinate before the full matrix weight
# is used; below that, scalar per-coordinate weights.
_WEIGHT_RESAMPLE_RATIO = 20


@dataclass
class PspsResult:
    """Debiased estimate with inference artifacts for each coordinate."""

    estimate: np.ndarray
    variance: np.ndarray
    std_error: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    p_values: np.ndarray
    weight: np.ndarray
    variance_reduction: np.ndarray
    alpha: float
    null_values: np.ndarray
    labels: list[str]
    ridge_perturbation: float | None = None

    def __eq__(self, other) -> bool:
        if not isinstance(other, PspsResult):
            return NotImplemented
        arrays = (
            "estimate",
            "variance",
            "std_error",
            "ci_lower",
            "ci_upper",
            "p_values",
            "weight",
            "variance_reduction",
            "null_values",
        )
        return (
            all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
            and self.alpha == other.alpha
            and self.labels == other.labels
            and self.ridge_perturbation == other.ridge_perturbation
        )


def _require_complete(s: SummaryStatistics):
    if not s.is_complete:
        missing = [
            side for side in ("labeled", "unlabeled") if side not in s.blocks_present
        ]
        raise InputError(f"summary is missing blocks: {', '.join(missing)}")


def _resolve_nulls(s: SummaryStatistics, null_values) -> np.ndarray:
    K = s.K
    if null_values is not None:
        arr = np.asarray(null_values, dtype=np.float64)
        if arr.shape != (K,):
            raise InputError(f"null_values must have length {K}, got shape {arr.shape}")
        return arr
    if s.theta_L.null_values is not None:
        return s.theta_L.null_values.copy()
    return np.zeros(K)


def _check_alpha(alpha: float):
    if not (0.0 < alpha < 1.0):
        raise InputError(f"alpha must be in (0, 1), got {alpha}")


def _inference(
    s: SummaryStatistics,
    W: np.ndarray,
    V: np.ndarray,
    alpha: float,
    nulls: np.ndarray,
    ridge: float | None,
) -> PspsResult:
    theta = s.theta_L.estimate
    est = W.T @ s.eta_U.estimate - (W.T @ s.eta_L.estimate - theta)
    V = 0.5 * (V + V.T)
    diag = np.diag(V).copy()
    if np.min(diag) < _NEG_VAR_TOL:
        raise EstimationError(
            f"combined variance has negative diagonal entry {np.min(diag):.3e}"
        )
    reduction = np.diag(s.theta_L.variance) - diag
    se = np.sqrt(np.clip(diag, 0.0, None))
    z = norm.ppf(1.0 - alpha / 2.0)
    half = z * se
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.abs(est - nulls) / se
    p = np.where(
        se > 0.0, 2.0 * norm.sf(stat), np.where(est == nulls, 1.0, 0.0)
    )
    return PspsResult(
        estimate=est,
        variance=V,
        std_error=se,
        ci_lower=est - half,
        ci_upper=est + half,
        p_values=p,
        weight=W,
        variance_reduction=reduction,
        alpha=float(alpha),
        null_values=nulls,
        labels=list(s.labels),
        ridge_perturbation=ridge,
    )


def _combiner_matrix(M: np.ndarray, ridge: bool) -> tuple[np.ndarray, float | None]:
    cond = np.linalg.cond(M)
    if np.isfinite(cond) and cond < _COND_LIMIT:
        return M, None
    if not ridge:
        raise EstimationError(
            f"singular combiner matrix (condition number {cond:.3e}); "
            "pass ridge=True to regularize"
        )
    lam = _RIDGE_EPS * float(np.trace(M)) / M.shape[0]
    if lam <= 0.0:
        raise EstimationError("singular combiner matrix: ridge cannot fix a zero matrix")
    return M + lam * np.eye(M.shape[0]), lam


def _one_step(
    s: SummaryStatistics,
    M: np.ndarray,
    numerator: np.ndarray,
    alpha: float,
    null_values,
    ridge: bool,
) -> PspsResult:
    _check_alpha(alpha)
    nulls = _resolve_nulls(s, null_values)
    if s.K * _WEIGHT_RESAMPLE_RATIO > s.bootstrap_replicates:
        # High-dimensional fallback: scalar weight per coordinate. The
        # variance uses the exact quadratic form for the chosen weight,
        # which stays PSD under the joint-bootstrap stacking for any W.
        m_diag = np.diag(M)
        usable = m_diag > 0.0
        w = np.where(usable, np.diag(numerator) / np.where(usable, m_diag, 1.0), 0.0)
        W = np.diag(w)
        V = s.theta_L.variance + W.T @ M @ W - W.T @ numerator - numerator.T @ W
        return _inference(s, W, V, alpha, nulls, None)
    M_used, lam = _combiner_matrix(M, ridge)
    W = np.linalg.solve(M_used, numerator)
    V = s.theta_L.variance - numerator.T @ W
    return _inference(s, W, V, alpha, nulls, lam)


def combine(
    s: SummaryStatistics,
    *,
    alpha: float = 0.05,
    null_values=None,
    ridge: bool = False,
) -> PspsResult:
    """Optimal-weight debiasing for independently sampled unlabeled data.

    Requires a complete summary in independent mode. When the combiner
    matrix M = Var(eta_L) + Var(eta_U) is numerically singular the call
    fails unless ``ridge=True``, which adds a recorded perturbation of
    1e-8 trace(M)/K to its diagonal.
    """
    _require_complete(s)
    if s.mode != "independent":
        raise InputError("summary is in dependent mode; use combine_dependent")
    M = s.eta_L.variance + s.eta_U.variance
    return _one_step(s, M, s.cov_theta_eta_L, alpha, null_values, ridge)


def combine_dependent(
    s: SummaryStatistics,
    *,
    alpha: float = 0.05,
    null_values=None,
    ridge: bool = False,
) -> PspsResult:
    """Debiasing when labeled and unlabeled estimates are correlated.

    Uses the extra covariance blocks cov_eta_L_eta_U (B) and
    cov_theta_L_eta_U (A), both stored with eta rows and theta columns where
    applicable: the combiner matrix becomes M - B - B' and the weight
    numerator C - A. With both blocks zero this reduces, bit for bit, to
    ``combine``.
    """
    _require_complete(s)
    K = s.K
    extras = s.extra_blocks or {}
    B = extras.get("cov_eta_L_eta_U", np.zeros((K, K)))
    A = extras.get("cov_theta_L_eta_U", np.zeros((K, K)))
    M = s.eta_L.variance + s.eta_U.variance - B - B.T
    M = 0.5 * (M + M.T)
    return _one_step(s, M, s.cov_theta_eta_L - A, alpha, null_values, ridge)


def combine_fixed_weight(
    s: SummaryStatistics,
    weight,
    *,
    alpha: float = 0.05,
    null_values=None,
) -> PspsResult:
    """Debiasing with a caller-supplied weight matrix instead of the optimum.

    ``weight`` is K x K with column k holding the weight vector for
    coordinate k (a length-K vector is accepted for K = 1 convenience as a
    diagonal). The reported variance is exact for the given weight:
    Var(theta_L) + W' M W - W' C - C' W.
    """
    _require_complete(s)
    if s.mode != "independent":
        raise InputError("summary is in dependent mode; use combine_dependent")
    _check_alpha(alpha)
    K = s.K
    W = np.asarray(weight, dtype=np.float64)
    if W.ndim == 1:
        if W.shape != (K,):
            raise InputError(f"weight vector must have length {K}")
        W = np.diag(W)
    if W.shape != (K, K):
        raise InputError(f"weight must be {K}x{K}, got {W.shape}")
    nulls = _resolve_nulls(s, null_values)
    M = s.eta_L.variance + s.eta_U.variance
    C = s.cov_theta_eta_L
    V = s.theta_L.variance + W.T @ M @ W - W.T @ C - C.T @ W
    return _inference(s, W, V, alpha, nulls, None)


@dataclass
class SensitivityResult:
    """Per-coordinate agreement check between the two prediction fits."""

    z_scores: np.ndarray
    p_values: np.ndarray
    flagged: np.ndarray
    threshold: float
    labels: list[str]


def sensitivity_test(s: SummaryStatistics, *, threshold: float = 0.1) -> SensitivityResult:
    """Compare eta_L and eta_U coordinate by coordinate.

    Large discrepancies indicate a distribution shift between labeled and
    unlabeled data (the transportability assumption behind the debiasing).
    Coordinates with p below the threshold are flagged. The untransported
    difference uses the conservative variance sum, so this is a screening
    diagnostic, not a calibrated test.
    """
    _require_complete(s)
    if s.mode != "independent":
        raise InputError("sensitivity test requires an independent-mode summary")
    var = np.diag(s.eta_L.variance) + np.diag(s.eta_U.variance)
    if np.any(var <= 0.0):
        raise EstimationError("degenerate sensitivity: zero variance difference")
    z = (s.eta_L.estimate - s.eta_U.estimate) / np.sqrt(var)
    p = 2.0 * norm.sf(np.abs(z))
    return SensitivityResult(
        z_scores=z,
        p_values=p,
        flagged=p < threshold,
        threshold=float(threshold),
        labels=list(s.labels),
    )


def model_selection_metric(s: SummaryStatistics) -> np.ndarray:
    """Per-coordinate variance saved by the optimal weights: diag(C' M^{-1} C).

    Larger is better; use it to pick among candidate predictors without
    refitting the downstream inference.
    """
    _require_complete(s)
    if s.mode != "independent":
        raise InputError("model selection metric requires an independent-mode summary")
    M, _ = _combiner_matrix(s.eta_L.variance + s.eta_U.variance, False)
    C = s.cov_theta_eta_L
    return np.diag(C.T @ np.linalg.solve(M, C)).copy()
