"""Mean, least-squares, and two-stage least-squares estimators.

All variance estimates are heteroskedasticity-robust sandwich forms with
finite-sample conventions chosen so degenerate designs fail loudly rather
than silently.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from ..datatypes import Dataset, EstimateWithVariance, EstimationError, InputError
from .design import INTERCEPT, build_design, outcome_vector, regressor_columns

_F_FLOOR = 1e-6


def _mean_core(y: np.ndarray, w: np.ndarray | None) -> tuple[float, float]:
    n = y.shape[0]
    if n < 2:
        raise InputError("mean estimation requires at least two observations")
    if w is None:
        est = float(np.mean(y))
        var = float(np.var(y, ddof=1) / n)
        return est, var
    total = float(np.sum(w))
    if total <= 0.0:
        raise InputError("weights sum to zero")
    est = float(np.dot(w, y) / total)
    resid = y - est
    # Sandwich variance with the same n/(n-1) correction as the unweighted case.
    var = float(np.dot(w**2, resid**2) / total**2 * (n / (n - 1)))
    return est, var


def fit_mean(data: Dataset) -> EstimateWithVariance:
    """Sample mean with its unbiased sampling variance.

    Constant outcomes report exactly zero variance; weights act as
    inverse-probability style multipliers.
    """
    y = outcome_vector(data)
    est, var = _mean_core(y, data.weights)
    return EstimateWithVariance(
        estimate=np.array([est]), variance=np.array([[var]]), n=data.n, labels=["mean"]
    )


def _sandwich(A_factor, X: np.ndarray, score_sq: np.ndarray) -> np.ndarray:
    meat = (X * score_sq[:, None]).T @ X
    inner = cho_solve(A_factor, meat)
    V = cho_solve(A_factor, inner.T)
    return 0.5 * (V + V.T)


def fit_ols(data: Dataset, *, intercept: bool = True) -> EstimateWithVariance:
    """Least squares with an HC1 sandwich variance.

    The robust meat carries the n/(n - p) degrees-of-freedom scaling:
    without it the squared residuals underestimate the error scale by about
    the leverage fraction p/n, which turns anti-conservative precisely in
    wide designs where many coordinates are tested at once. An
    intercept-only design reduces to ``fit_mean`` (same estimate and
    unbiased variance) so the two entry points agree exactly.
    """
    y = outcome_vector(data)
    cols = regressor_columns(data)
    if not cols:
        if not intercept:
            raise InputError("design has no columns")
        est, var = _mean_core(y, data.weights)
        return EstimateWithVariance(
            estimate=np.array([est]),
            variance=np.array([[var]]),
            n=data.n,
            labels=[INTERCEPT],
        )
    design = build_design(data, intercept=intercept)
    X = design.X
    if data.n <= X.shape[1]:
        raise InputError(
            f"least squares needs n > {X.shape[1]} observations, got {data.n}"
        )
    w = data.weights
    Xw = X if w is None else X * w[:, None]
    A = X.T @ Xw if w is None else Xw.T @ X
    try:
        factor = cho_factor(A)
    except LinAlgError:
        raise EstimationError("singular design") from None
    # Cholesky accepts nearly singular Grams with a tiny positive pivot;
    # the pivot ratio bounds the condition number, so reject it explicitly.
    piv = np.abs(np.diag(factor[0]))
    if piv.min() <= 1e-7 * piv.max():
        raise EstimationError("singular design")
    beta = cho_solve(factor, Xw.T @ y if w is not None else X.T @ y)
    resid = y - X @ beta
    score_sq = resid**2 if w is None else (w * resid) ** 2
    score_sq = score_sq * (data.n / (data.n - X.shape[1]))
    V = _sandwich(factor, X, score_sq)
    return EstimateWithVariance(
        estimate=beta, variance=V, n=data.n, labels=design.labels
    )


def _iv_matrices(data: Dataset, intercept: bool):
    endog = data.columns_with_role("endogenous")
    inst = data.columns_with_role("instrument")
    exog = [c for c in data.feature_names if data.role(c) == "covariate"]
    if not endog or not inst:
        raise InputError("iv2sls requires endogenous and instrument columns")
    if len(inst) < len(endog):
        raise InputError(
            f"iv2sls needs at least as many instruments ({len(inst)}) "
            f"as endogenous columns ({len(endog)})"
        )
    Z = build_design(data, intercept=intercept, columns=inst + exog).X
    d_x = build_design(data, intercept=intercept, columns=endog + exog)
    return Z, d_x.X, d_x.labels, len(inst), len(endog), exog


def fit_iv_2sls(data: Dataset, *, intercept: bool = True) -> EstimateWithVariance:
    """Two-stage least squares with a first-stage strength check.

    Instruments are the ``instrument``-role columns, endogenous regressors the
    ``endogenous``-role columns; plain covariates enter both stages. A
    first-stage F statistic below the 1e-6 floor, or a rank-deficient
    instrument block, raises ``instrument collinear``.
    """
    y = outcome_vector(data)
    if data.weights is not None:
        raise InputError("weights are not supported for task 'iv2sls'")
    Z, X, labels, n_inst, n_endog, exog = _iv_matrices(data, intercept)
    n, d = X.shape
    if n <= max(d, Z.shape[1]):
        raise InputError(f"iv2sls needs n > {max(d, Z.shape[1])} observations")
    try:
        fz = cho_factor(Z.T @ Z)
    except LinAlgError:
        raise EstimationError("instrument collinear: first-stage design is rank deficient") from None
    endog_block = X[:, 1 : 1 + n_endog] if intercept else X[:, :n_endog]
    coef_full = cho_solve(fz, Z.T @ endog_block)
    fitted = Z @ coef_full
    rss_full = np.sum((endog_block - fitted) ** 2, axis=0)

    # Restricted first stage (instruments dropped) for the F statistic.
    restricted_cols = ([np.ones((n, 1))] if intercept else []) + [
        data.column(c)[:, None] for c in exog
    ]
    if restricted_cols:
        Zr = np.hstack(restricted_cols)
        coef_r, *_ = np.linalg.lstsq(Zr, endog_block, rcond=None)
        rss_restricted = np.sum((endog_block - Zr @ coef_r) ** 2, axis=0)
    else:
        rss_restricted = np.sum(endog_block**2, axis=0)
    df_resid = n - Z.shape[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        f_stats = ((rss_restricted - rss_full) / n_inst) / (rss_full / df_resid)
    f_stats = np.where(rss_full <= 1e-30 * np.maximum(rss_restricted, 1.0), np.inf, f_stats)
    if np.any(~np.isfinite(f_stats) & (f_stats != np.inf)) or np.any(f_stats < _F_FLOOR):
        raise EstimationError(
            "instrument collinear: first-stage F statistic "
            f"{np.min(f_stats):.3g} is below {_F_FLOOR:g}"
        )

    Xhat = X.copy()
    if intercept:
        Xhat[:, 1 : 1 + n_endog] = fitted
    else:
        Xhat[:, :n_endog] = fitted
    try:
        fx = cho_factor(Xhat.T @ Xhat)
    except LinAlgError:
        raise EstimationError("instrument collinear: projected design is rank deficient") from None
    beta = cho_solve(fx, Xhat.T @ y)
    resid = y - X @ beta
    V = _sandwich(fx, Xhat, resid**2)
    return EstimateWithVariance(estimate=beta, variance=V, n=data.n, labels=labels)


# ---------------------------------------------------------------------------
# Count-weighted batch kernels used by the bootstrap engine. Each resample is
# encoded as a row of nonnegative integer counts summing to n, which turns Q
# refits into a handful of dense linear-algebra calls.
# ---------------------------------------------------------------------------


def _pair_products(X: np.ndarray) -> np.ndarray:
    n, p = X.shape
    return (X[:, :, None] * X[:, None, :]).reshape(n, p * p)


def _weighted_grams(X: np.ndarray, counts: np.ndarray) -> np.ndarray:
    p = X.shape[1]
    return (counts @ _pair_products(X)).reshape(-1, p, p)


def batch_mean(ys: list[np.ndarray], counts: np.ndarray):
    n = counts.shape[1]
    ests = [(counts @ y)[:, None] / n for y in ys]
    ok = np.ones(counts.shape[0], dtype=bool)
    return ests, ok


def _solve_batch(A: np.ndarray, B: np.ndarray):
    """Solve A_q x_q = B_q for a stack of systems, flagging singular slots."""
    Q = A.shape[0]
    ok = np.ones(Q, dtype=bool)
    try:
        return np.linalg.solve(A, B), ok
    except np.linalg.LinAlgError:
        out = np.zeros_like(B)
        for q in range(Q):
            try:
                out[q] = np.linalg.solve(A[q], B[q])
            except np.linalg.LinAlgError:
                ok[q] = False
        return out, ok


def batch_ols(X: np.ndarray, ys: list[np.ndarray], counts: np.ndarray):
    A = _weighted_grams(X, counts)
    B = np.stack([counts @ (X * y[:, None]) for y in ys], axis=2)
    sol, ok = _solve_batch(A, B)
    return [sol[:, :, j] for j in range(len(ys))], ok


def batch_iv(Z: np.ndarray, X: np.ndarray, ys: list[np.ndarray], counts: np.ndarray):
    """2SLS point estimates from count-weighted cross-moment blocks."""
    Q = counts.shape[0]
    ZZ = _weighted_grams(Z, counts)
    pz, px = Z.shape[1], X.shape[1]
    ZX = (counts @ (Z[:, :, None] * X[:, None, :]).reshape(-1, pz * px)).reshape(
        Q, pz, px
    )
    Zy = np.stack([counts @ (Z * y[:, None]) for y in ys], axis=2)
    P, ok_a = _solve_batch(ZZ, np.concatenate([ZX, Zy], axis=2))
    PX, Py = P[:, :, :px], P[:, :, px:]
    XhX = np.swapaxes(ZX, 1, 2) @ PX
    XhY = np.swapaxes(ZX, 1, 2) @ Py
    sol, ok_b = _solve_batch(XhX, XhY)
    return [sol[:, :, j] for j in range(len(ys))], ok_a & ok_b
