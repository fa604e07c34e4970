"""Debiased lasso for high-dimensional linear coefficients.

Pipeline: standardize columns (population sd) and center the outcome, fit the
lasso by cyclic coordinate descent to a duality-gap tolerance, estimate a
relaxed inverse of the Gram matrix by nodewise lasso regressions, then add the
one-step correction M X'(y - X beta)/n. The reported variance is the
sandwich (sigma^2/n) M G M' mapped back to the original column scale.

Coordinates are the feature columns; the intercept is absorbed by centering
and not reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..datatypes import Dataset, EstimateWithVariance, EstimationError, InputError
from .design import outcome_vector, reject_weights

_GAP_TOL = 1e-7
_MAX_SWEEPS = 20_000


@njit(cache=True)
def _cd_residual(XF, yc, lam, beta, max_sweeps, gap_tol):
    """Cyclic coordinate descent keeping the residual vector updated.

    Returns (duality gap, sweeps, converged). With lam == 0 the stop rule is
    a vanishing coordinate step because the scaled-residual dual certificate
    is vacuous there.
    """
    n, p = XF.shape
    r = yc.copy()
    for j in range(p):
        bj = beta[j]
        if bj != 0.0:
            for i in range(n):
                r[i] -= XF[i, j] * bj
    col_ss = np.empty(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += XF[i, j] * XF[i, j]
        col_ss[j] = s / n
    y_ss_n = 0.0
    for i in range(n):
        y_ss_n += yc[i] * yc[i]
    y_ss_n /= n
    gap = np.inf
    for sweep in range(max_sweeps):
        max_step = 0.0
        for j in range(p):
            if col_ss[j] <= 0.0:
                continue
            rho = 0.0
            for i in range(n):
                rho += XF[i, j] * r[i]
            rho = rho / n + col_ss[j] * beta[j]
            if rho > lam:
                bnew = (rho - lam) / col_ss[j]
            elif rho < -lam:
                bnew = (rho + lam) / col_ss[j]
            else:
                bnew = 0.0
            d = bnew - beta[j]
            if d != 0.0:
                beta[j] = bnew
                for i in range(n):
                    r[i] -= XF[i, j] * d
                if abs(d) > max_step:
                    max_step = abs(d)
        if lam == 0.0:
            if max_step <= 1e-12:
                return 0.0, sweep + 1, True
            continue
        if max_step <= 1e-12 or sweep % 5 == 4:
            rss_n = 0.0
            for i in range(n):
                rss_n += r[i] * r[i]
            rss_n /= n
            sup = 0.0
            cdot = 0.0
            for j in range(p):
                g = 0.0
                for i in range(n):
                    g += XF[i, j] * r[i]
                g /= n
                if abs(g) > sup:
                    sup = abs(g)
                cdot += g * beta[j]
            l1 = 0.0
            for j in range(p):
                l1 += abs(beta[j])
            alpha = 1.0 if sup <= lam else lam / sup
            ry_n = rss_n + cdot
            gap = 0.5 * rss_n + lam * l1 - alpha * ry_n + 0.5 * alpha * alpha * rss_n
            if gap <= gap_tol:
                return gap, sweep + 1, True
    return gap, max_sweeps, False


@njit(cache=True)
def _cd_gram(G, c, y_ss_n, lam, beta, skip, max_sweeps, gap_tol):
    """Coordinate descent on the Gram form (1/2) b'Gb - c'b + lam |b|_1.

    ``skip`` pins one coordinate at zero, which lets nodewise regressions
    reuse the full Gram matrix without slicing copies; pass -1 to use all
    coordinates.
    """
    p = G.shape[0]
    q = G @ beta
    gap = np.inf
    for sweep in range(max_sweeps):
        max_step = 0.0
        for j in range(p):
            if j == skip or G[j, j] <= 0.0:
                continue
            rho = c[j] - q[j] + G[j, j] * beta[j]
            if rho > lam:
                bnew = (rho - lam) / G[j, j]
            elif rho < -lam:
                bnew = (rho + lam) / G[j, j]
            else:
                bnew = 0.0
            d = bnew - beta[j]
            if d != 0.0:
                beta[j] = bnew
                for k in range(p):
                    q[k] += d * G[k, j]
                if abs(d) > max_step:
                    max_step = abs(d)
        if lam == 0.0:
            if max_step <= 1e-12:
                return 0.0, sweep + 1, True
            continue
        if max_step <= 1e-12 or sweep % 5 == 4:
            cb = 0.0
            bq = 0.0
            l1 = 0.0
            sup = 0.0
            for j in range(p):
                if j == skip:
                    continue
                cb += c[j] * beta[j]
                bq += beta[j] * q[j]
                l1 += abs(beta[j])
                g = c[j] - q[j]
                if abs(g) > sup:
                    sup = abs(g)
            rss_n = y_ss_n - 2.0 * cb + bq
            if rss_n < 0.0:
                rss_n = 0.0
            alpha = 1.0 if sup <= lam else lam / sup
            ry_n = y_ss_n - cb
            gap = 0.5 * rss_n + lam * l1 - alpha * ry_n + 0.5 * alpha * alpha * rss_n
            if gap <= gap_tol:
                return gap, sweep + 1, True
    return gap, max_sweeps, False


@dataclass
class LassoContext:
    """Frozen preprocessing reused by bootstrap refits: the column centers
    and scales, the penalty, the nodewise matrix, and a warm-start solution
    (all on the standardized scale)."""

    mu: np.ndarray
    sd: np.ndarray
    lam: float
    M: np.ndarray
    beta_std: np.ndarray
    labels: list[str]


def _standardize(X: np.ndarray):
    mu = X.mean(axis=0)
    sd = np.sqrt(np.mean((X - mu) ** 2, axis=0))
    bad = sd <= 1e-12 * (1.0 + np.abs(mu))
    if np.any(bad):
        raise EstimationError(
            f"zero-variance feature cannot be standardized (column index {int(np.flatnonzero(bad)[0])})"
        )
    return (X - mu) / sd, mu, sd


def _penalty_value(penalty, sigma: float, n: int, p: int) -> float:
    if isinstance(penalty, str):
        if penalty != "auto":
            raise InputError(f"unknown penalty mode {penalty!r}")
        return 1.1 * sigma * np.sqrt(2.0 * np.log(p) / n)
    lam = float(penalty)
    if not np.isfinite(lam) or lam < 0.0:
        raise InputError("penalty must be nonnegative")
    return lam


def _run_gram(G, c, y_ss_n, lam, beta, skip=-1):
    gap, _, converged = _cd_gram(G, c, y_ss_n, lam, beta, skip, _MAX_SWEEPS, _GAP_TOL)
    if not converged:
        raise EstimationError(
            f"lasso coordinate descent did not converge (duality gap {gap:.3e})"
        )
    return beta


def nodewise_matrix(G: np.ndarray, n: int) -> np.ndarray:
    """Relaxed inverse of the Gram matrix via per-column nodewise lasso.

    Row j is C_j / tau_j^2 with C_j the KKT residual coefficients of the
    regression of column j on the others and tau_j^2 = G_jj - c_j' gamma_j.
    The nodewise penalty starts at 1.1 sqrt(2 log p / n) and is refined once
    from the implied residual scale.
    """
    p = G.shape[0]
    M = np.zeros((p, p))
    if p == 1:
        M[0, 0] = 1.0 / G[0, 0]
        return M
    lam0 = 1.1 * np.sqrt(2.0 * np.log(p) / n)
    for j in range(p):
        c = np.ascontiguousarray(G[:, j])
        gamma = np.zeros(p)
        _run_gram(G, c, G[j, j], lam0, gamma, skip=j)
        n_active = int(np.sum(gamma != 0.0)) + 1
        if n_active < n:
            q = G @ gamma
            rss_n = max(G[j, j] - 2.0 * float(c @ gamma) + float(gamma @ q), 0.0)
            sigma_j = np.sqrt(rss_n * n / (n - n_active))
            lam_j = 1.1 * sigma_j * np.sqrt(2.0 * np.log(p) / n)
            _run_gram(G, c, G[j, j], lam_j, gamma, skip=j)
        tau2 = G[j, j] - float(c @ gamma)
        if tau2 <= 0.0:
            raise EstimationError(
                f"nodewise regression produced a nonpositive residual scale at column {j}"
            )
        M[j, :] = -gamma / tau2
        M[j, j] = 1.0 / tau2  # gamma[j] is pinned at zero
    return M


def lasso_coefficients(X: np.ndarray, y: np.ndarray, penalty="auto") -> np.ndarray:
    """Lasso stage only (no debiasing), coefficients on the original scale.

    For a single standardized column this is the soft-threshold rule
    sign(rho) max(|rho| - lam, 0) with rho = x'y/n.
    """
    Xs, _, sd = _standardize(np.asarray(X, dtype=np.float64))
    yc = np.asarray(y, dtype=np.float64) - np.mean(y)
    n, p = Xs.shape
    sigma0 = float(np.std(yc))
    lam = _penalty_value(penalty, sigma0, n, p)
    beta = np.zeros(p)
    XF = np.asfortranarray(Xs)
    gap, _, converged = _cd_residual(XF, yc, lam, beta, _MAX_SWEEPS, _GAP_TOL)
    if not converged:
        raise EstimationError(
            f"lasso coordinate descent did not converge (duality gap {gap:.3e})"
        )
    return beta / sd


def _fit_core(X: np.ndarray, y: np.ndarray, penalty, labels: list[str], need_variance: bool):
    n, p = X.shape
    if n < 3:
        raise InputError("debiased lasso requires at least 3 observations")
    Xs, mu, sd = _standardize(X)
    ybar = float(np.mean(y))
    yc = y - ybar
    y_ss_n = float(yc @ yc) / n
    G = (Xs.T @ Xs) / n
    c = (Xs.T @ yc) / n

    sigma0 = float(np.std(yc))
    if sigma0 <= 0.0:
        raise EstimationError("degenerate outcome: zero variance")
    lam = _penalty_value(penalty, sigma0, n, p)
    beta = np.zeros(p)
    _run_gram(G, c, y_ss_n, lam, beta)
    if isinstance(penalty, str):
        # One refinement pass of the noise-scale plug-in penalty.
        s_hat = int(np.sum(beta != 0.0))
        if s_hat >= n:
            raise EstimationError(
                "lasso support exhausted the residual degrees of freedom"
            )
        q = G @ beta
        rss_n = max(y_ss_n - 2.0 * float(c @ beta) + float(beta @ q), 0.0)
        sigma1 = np.sqrt(rss_n * n / (n - s_hat))
        lam = 1.1 * sigma1 * np.sqrt(2.0 * np.log(p) / n)
        _run_gram(G, c, y_ss_n, lam, beta)

    M = nodewise_matrix(G, n)
    resid = yc - Xs @ beta
    correction = M @ (Xs.T @ resid) / n
    beta_d = beta + correction
    estimate = beta_d / sd

    variance = None
    if need_variance:
        s_hat = int(np.sum(beta != 0.0))
        if s_hat >= n:
            raise EstimationError(
                "lasso support exhausted the residual degrees of freedom"
            )
        sigma2 = float(resid @ resid) / (n - s_hat)
        V_std = (sigma2 / n) * (M @ G @ M.T)
        scale = np.outer(1.0 / sd, 1.0 / sd)
        variance = 0.5 * (V_std + V_std.T) * scale

    ctx = LassoContext(mu=mu, sd=sd, lam=lam, M=M, beta_std=beta, labels=list(labels))
    est = EstimateWithVariance(
        estimate=estimate, variance=variance, n=n, labels=list(labels)
    )
    return est, ctx


def _lasso_columns(data: Dataset) -> list[str]:
    return [
        c
        for c in data.feature_names
        if data.role(c) not in ("instrument", "group-indicator", "predicted-feature")
    ]


def fit_debiased_lasso(data: Dataset, penalty="auto") -> EstimateWithVariance:
    """Debiased lasso coefficients with sandwich variance; see module docs."""
    y = outcome_vector(data)
    reject_weights(data, "debiased_lasso")
    cols = _lasso_columns(data)
    if not cols:
        raise InputError("design has no columns")
    X = np.column_stack([data.column(c) for c in cols])
    est, _ = _fit_core(X, y, penalty, cols, need_variance=True)
    return est


def fit_debiased_lasso_with_context(data: Dataset, penalty="auto"):
    y = outcome_vector(data)
    reject_weights(data, "debiased_lasso")
    cols = _lasso_columns(data)
    if not cols:
        raise InputError("design has no columns")
    X = np.column_stack([data.column(c) for c in cols])
    return _fit_core(X, y, penalty, cols, need_variance=True)


def refit_point_estimate(X: np.ndarray, y: np.ndarray, ctx: LassoContext) -> np.ndarray:
    """Bootstrap refit with frozen centering, penalty, and nodewise matrix."""
    Xs = (X - ctx.mu) / ctx.sd
    yc = y - float(np.mean(y))
    beta = ctx.beta_std.copy()
    XF = np.asfortranarray(Xs)
    gap, _, converged = _cd_residual(XF, yc, ctx.lam, beta, _MAX_SWEEPS, _GAP_TOL)
    if not converged:
        raise EstimationError(
            f"lasso coordinate descent did not converge (duality gap {gap:.3e})"
        )
    resid = yc - Xs @ beta
    beta_d = beta + ctx.M @ (Xs.T @ resid) / X.shape[0]
    return beta_d / ctx.sd


def batch_debiased_lasso(
    X: np.ndarray, ys: list[np.ndarray], indices: np.ndarray, ctx: LassoContext
):
    """Point-estimate refits for row-index resamples (one CD solve per row)."""
    Q = indices.shape[0]
    p = X.shape[1]
    outs = [np.empty((Q, p)) for _ in ys]
    ok = np.ones(Q, dtype=bool)
    for q in range(Q):
        rows = indices[q]
        Xq = X[rows]
        for slot, y in enumerate(ys):
            try:
                outs[slot][q] = refit_point_estimate(Xq, y[rows], ctx)
            except EstimationError:
                ok[q] = False
                break
    return outs, ok
