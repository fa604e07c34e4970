"""Logistic and negative-binomial regression via damped Newton iterations.

Both fits accept fractional outcomes (quasi-likelihood in the logistic case,
continuous counts in the negative-binomial case) so the same estimator can be
applied to model predictions.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.special import digamma, expit, gammaln, polygamma, xlogy

from ..datatypes import Dataset, EstimateWithVariance, EstimationError, InputError
from .design import build_design, outcome_vector, reject_weights

_SEPARATION_NORM = 30.0
_MAX_NEWTON = 100


def _loglik_logistic(eta: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_logistic(data: Dataset, *, intercept: bool = True) -> EstimateWithVariance:
    """Logistic regression with a robust sandwich variance.

    Outcomes may be fractional in [0, 1]. Newton steps use a minimum-norm
    solve so rank-deficient designs (for example a zero-variance feature)
    still converge, with the null-space coordinates pinned at zero. A
    coefficient norm above 30 is reported as separation.
    """
    y = outcome_vector(data)
    reject_weights(data, "logistic")
    if np.min(y) < 0.0 or np.max(y) > 1.0:
        raise InputError("logistic outcome must lie in [0, 1]")
    design = build_design(data, intercept=intercept)
    X = design.X
    n = data.n
    beta = np.zeros(X.shape[1])
    eta = X @ beta
    ll = _loglik_logistic(eta, y)
    for _ in range(_MAX_NEWTON):
        p = expit(eta)
        grad = X.T @ (y - p)
        if np.max(np.abs(grad)) <= 1e-10 * n:
            break
        W = p * (1.0 - p)
        H = (X * W[:, None]).T @ X
        step, *_ = np.linalg.lstsq(H, grad, rcond=None)
        scale = 1.0
        for _ in range(40):
            cand = beta + scale * step
            eta_c = X @ cand
            ll_c = _loglik_logistic(eta_c, y)
            if ll_c >= ll - 1e-12 * (1.0 + abs(ll)):
                break
            scale *= 0.5
        beta, eta, ll = cand, eta_c, ll_c
        if np.linalg.norm(beta) > _SEPARATION_NORM:
            raise EstimationError(
                "separation detected: logistic coefficient norm exceeded "
                f"{_SEPARATION_NORM:g}"
            )
        if np.max(np.abs(scale * step)) <= 1e-12 * (1.0 + np.max(np.abs(beta))):
            break
    else:
        raise EstimationError(
            f"logistic regression did not converge after {_MAX_NEWTON} iterations"
        )
    p = expit(eta)
    W = p * (1.0 - p)
    A = (X * W[:, None]).T @ X
    B = (X * ((y - p) ** 2)[:, None]).T @ X
    Ainv = np.linalg.pinv(A, hermitian=True)
    V = Ainv @ B @ Ainv
    return EstimateWithVariance(
        estimate=beta, variance=0.5 * (V + V.T), n=n, labels=design.labels
    )


def _negbin_loglik(y: np.ndarray, mu: np.ndarray, s: float) -> float:
    return float(
        np.sum(
            gammaln(y + s)
            - gammaln(s)
            - gammaln(y + 1.0)
            + s * np.log(s / (s + mu))
            + xlogy(y, mu / (s + mu))
        )
    )


def _dispersion_grad(y: np.ndarray, mu: np.ndarray, s: float) -> float:
    # d loglik / d log(s)
    g = digamma(y + s) - digamma(s) + np.log(s / (s + mu)) + 1.0 - (s + y) / (s + mu)
    return s * float(np.sum(g))


def _dispersion_step(y: np.ndarray, mu: np.ndarray, s: float) -> float:
    g_u = _dispersion_grad(y, mu, s)
    dg_ds = (
        polygamma(1, y + s)
        - polygamma(1, s)
        + 1.0 / s
        - 2.0 / (s + mu)
        + (s + y) / (s + mu) ** 2
    )
    h_u = g_u + s * s * float(np.sum(dg_ds))
    if h_u < 0.0:
        return -g_u / h_u
    # Fall back to a unit gradient step where the profile is not concave.
    return float(np.sign(g_u))


def _init_dispersion(y: np.ndarray) -> float:
    m = float(np.mean(y))
    v = float(np.var(y))
    excess = v - m
    if excess > 1e-3 * max(m, 1e-12):
        s0 = m * m / excess
    else:
        s0 = 100.0
    return float(np.clip(s0, 1e-2, 1e4))


def fit_negbin(
    data: Dataset, dispersion: str | float = "estimate", *, intercept: bool = True
) -> EstimateWithVariance:
    """Negative-binomial (NB2) regression with a log link.

    The mean coefficients are fit by Fisher scoring and the dispersion (the
    gamma shape ``s`` in Var = mu + mu^2/s) by a safeguarded Newton update on
    log s, alternating until both moves stall. The reported variance is a
    sandwich: expected-information bread at the fitted dispersion around the
    outer product of mean-model scores. The mean score has conditional mean
    zero at the true mean for any dispersion, so this variance stays valid
    when the dispersion model is wrong, where the inverse information does
    not, and the dispersion estimate contributes no first-order term.
    """
    y = outcome_vector(data)
    reject_weights(data, "negbin")
    if np.min(y) < 0.0:
        raise InputError("negbin outcome must be nonnegative")
    if not np.any(y > 0.0):
        raise EstimationError("degenerate counts: all outcomes are zero")
    estimate_s = isinstance(dispersion, str)
    if estimate_s:
        if dispersion != "estimate":
            raise InputError(f"unknown dispersion mode {dispersion!r}")
        s = _init_dispersion(y)
    else:
        s = float(dispersion)
        if not np.isfinite(s) or s <= 0.0:
            raise InputError("dispersion must be a positive number")
    design = build_design(data, intercept=intercept)
    X = design.X
    n = data.n
    beta = np.zeros(X.shape[1])
    if intercept:
        beta[0] = np.log(max(np.mean(y), 1e-12))
    mu = np.exp(np.clip(X @ beta, -500.0, 500.0))
    outer_trace = ""
    for outer in range(100):
        # Mean update: damped Fisher scoring at the current dispersion.
        ll = _negbin_loglik(y, mu, s)
        beta_move = 0.0
        for _ in range(50):
            grad = X.T @ (s * (y - mu) / (s + mu))
            W = s * mu / (s + mu)
            H = (X * W[:, None]).T @ X
            try:
                step = cho_solve(cho_factor(H), grad)
            except LinAlgError:
                step, *_ = np.linalg.lstsq(H, grad, rcond=None)
            scale = 1.0
            for _ in range(40):
                cand = beta + scale * step
                mu_c = np.exp(np.clip(X @ cand, -500.0, 500.0))
                ll_c = _negbin_loglik(y, mu_c, s)
                if ll_c >= ll - 1e-12 * (1.0 + abs(ll)):
                    break
                scale *= 0.5
            beta, mu, ll = cand, mu_c, ll_c
            beta_move = np.max(np.abs(scale * step))
            if beta_move <= 1e-11 * (1.0 + np.max(np.abs(beta))):
                break
        s_move = 0.0
        if estimate_s:
            for _ in range(50):
                du = np.clip(_dispersion_step(y, mu, s), -2.0, 2.0)
                s = float(np.clip(s * np.exp(du), 1e-6, 1e8))
                s_move = abs(du)
                if s_move <= 1e-12 or s in (1e-6, 1e8):
                    break
                if abs(_dispersion_grad(y, mu, s)) <= 1e-9 * n:
                    break
        grad_norm = float(np.max(np.abs(X.T @ (s * (y - mu) / (s + mu)))))
        outer_trace = (
            f"gradient sup-norm {grad_norm:.3e}, last coefficient step "
            f"{beta_move:.3e}, last dispersion step {s_move:.3e}"
        )
        if grad_norm <= 1e-8 * n and (not estimate_s or s_move <= 1e-8):
            break
    else:
        raise EstimationError(
            f"negbin fit did not converge after {outer + 1} alternations ({outer_trace})"
        )
    score = s * (y - mu) / (s + mu)
    A = (X * (s * mu / (s + mu))[:, None]).T @ X
    B = (X * (score * score)[:, None]).T @ X
    try:
        Ainv = cho_solve(cho_factor(A), np.eye(X.shape[1]))
    except LinAlgError:
        raise EstimationError("singular design") from None
    V = Ainv @ B @ Ainv
    return EstimateWithVariance(
        estimate=beta, variance=0.5 * (V + V.T), n=n, labels=design.labels
    )


# ---------------------------------------------------------------------------
# Count-weighted batch kernels.
# ---------------------------------------------------------------------------


def _masked_newton_close(step_max, beta_abs):
    return step_max <= 1e-9 * (1.0 + beta_abs)


def batch_logistic(X: np.ndarray, ys: list[np.ndarray], counts: np.ndarray, beta0s):
    """Per-resample logistic point estimates for count-weighted resamples."""
    Q, n = counts.shape
    p = X.shape[1]
    P2 = (X[:, :, None] * X[:, None, :]).reshape(n, p * p)
    outs, oks = [], []
    for y, b0 in zip(ys, beta0s):
        beta = np.tile(b0, (Q, 1))
        ok = np.ones(Q, dtype=bool)
        active = np.ones(Q, dtype=bool)
        for _ in range(80):
            if not np.any(active):
                break
            eta = beta @ X.T
            pr = expit(eta)
            resid = counts * (y[None, :] - pr)
            grad = resid @ X
            W = counts * pr * (1.0 - pr)
            H = (W @ P2).reshape(Q, p, p)
            idx = np.flatnonzero(active)
            step = np.zeros((Q, p))
            try:
                step[idx] = np.linalg.solve(H[idx], grad[idx][..., None])[..., 0]
            except np.linalg.LinAlgError:
                for q in idx:
                    try:
                        step[q] = np.linalg.solve(H[q], grad[q])
                    except np.linalg.LinAlgError:
                        ok[q] = active[q] = False
            beta = np.where(active[:, None], beta + step, beta)
            norms = np.linalg.norm(beta, axis=1)
            blown = active & (norms > _SEPARATION_NORM)
            ok[blown] = False
            active[blown] = False
            step_max = np.max(np.abs(step), axis=1)
            done = active & (step_max <= 1e-9 * (1.0 + np.max(np.abs(beta), axis=1)))
            active[done] = False
        ok[active] = False
        outs.append(beta)
        oks.append(ok)
    return outs, np.logical_and.reduce(oks)


def batch_negbin(
    X: np.ndarray,
    ys: list[np.ndarray],
    counts: np.ndarray,
    beta0s,
    s0s,
    estimate_s: bool,
):
    """Per-resample negative-binomial point estimates (count weights)."""
    Q, n = counts.shape
    p = X.shape[1]
    P2 = (X[:, :, None] * X[:, None, :]).reshape(n, p * p)
    outs, oks = [], []
    for y, b0, s_init in zip(ys, beta0s, s0s):
        beta = np.tile(b0, (Q, 1))
        s = np.full(Q, s_init)
        ok = np.ones(Q, dtype=bool)
        active = np.ones(Q, dtype=bool)
        for _ in range(120):
            if not np.any(active):
                break
            eta = np.clip(beta @ X.T, -500.0, 500.0)
            mu = np.exp(eta)
            sm = s[:, None] + mu
            grad = (counts * (s[:, None] * (y[None, :] - mu) / sm)) @ X
            W = counts * (s[:, None] * mu / sm)
            H = (W @ P2).reshape(Q, p, p)
            idx = np.flatnonzero(active)
            step = np.zeros((Q, p))
            try:
                step[idx] = np.linalg.solve(H[idx], grad[idx][..., None])[..., 0]
            except np.linalg.LinAlgError:
                for q in idx:
                    try:
                        step[q] = np.linalg.solve(H[q], grad[q])
                    except np.linalg.LinAlgError:
                        ok[q] = active[q] = False
            step = np.clip(step, -5.0, 5.0)
            beta = np.where(active[:, None], beta + step, beta)
            s_move = np.zeros(Q)
            if estimate_s:
                mu = np.exp(np.clip(beta @ X.T, -500.0, 500.0))
                sc = s[:, None]
                g = (
                    digamma(y[None, :] + sc)
                    - digamma(sc)
                    + np.log(sc / (sc + mu))
                    + 1.0
                    - (sc + y[None, :]) / (sc + mu)
                )
                g_u = s * np.sum(counts * g, axis=1)
                dg = (
                    polygamma(1, y[None, :] + sc)
                    - polygamma(1, sc)
                    + 1.0 / sc
                    - 2.0 / (sc + mu)
                    + (sc + y[None, :]) / (sc + mu) ** 2
                )
                h_u = g_u + s * s * np.sum(counts * dg, axis=1)
                du = np.where(h_u < 0.0, -g_u / np.where(h_u < 0.0, h_u, 1.0), np.sign(g_u))
                du = np.clip(du, -2.0, 2.0)
                s_new = np.where(active, np.clip(s * np.exp(du), 1e-6, 1e8), s)
                s_move = np.where(active, np.abs(du), 0.0)
                # A dispersion pinned at a cap is a boundary solution (the
                # Poisson limit on underdispersed resamples); stop counting
                # it as movement, as the single-sample fit does.
                s_move = np.where((s_new >= 1e8) | (s_new <= 1e-6), 0.0, s_move)
                s_move = np.where(np.abs(g_u) <= 1e-9 * n, 0.0, s_move)
                s = s_new
            step_max = np.max(np.abs(step), axis=1)
            done = (
                active
                & (step_max <= 1e-8 * (1.0 + np.max(np.abs(beta), axis=1)))
                & (s_move <= 1e-6)
            )
            active[done] = False
            blown = active & ~np.all(np.isfinite(beta), axis=1)
            ok[blown] = False
            active[blown] = False
        ok[active] = False
        outs.append(beta)
        oks.append(ok)
    return outs, np.logical_and.reduce(oks)
