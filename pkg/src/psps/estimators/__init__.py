"""Task-indexed estimator dispatch.

``fit_task`` runs the estimator named by a ``TaskSpec`` on a ``Dataset`` and
returns an ``EstimateWithVariance``. The bootstrap engine uses the lower
level entry points: ``fit_task_with_context`` keeps warm starts and frozen
preprocessing, ``BatchFitter`` refits many count-weighted resamples at once,
and ``refit_point`` handles single redraws.
"""

from __future__ import annotations

import numpy as np

from ..datatypes import Dataset, EstimateWithVariance, InputError, TaskSpec
from . import glm, lasso, linear, quantile, rank
from .design import build_design, regressor_columns
from .lasso import fit_debiased_lasso, lasso_coefficients
from .linear import fit_iv_2sls, fit_mean, fit_ols
from .glm import fit_logistic, fit_negbin
from .quantile import fit_quantile
from .rank import wilcoxon_estimate

__all__ = [
    "fit_task",
    "fit_task_with_context",
    "refit_point",
    "BatchFitter",
    "fit_mean",
    "fit_ols",
    "fit_iv_2sls",
    "fit_logistic",
    "fit_negbin",
    "fit_quantile",
    "wilcoxon_estimate",
    "fit_debiased_lasso",
    "lasso_coefficients",
]


def _fit_full(spec: TaskSpec, data: Dataset):
    """Full fit returning (unrestricted estimate, refit context)."""
    task = spec.task
    if task == "mean":
        return fit_mean(data), None
    if task == "ols":
        return fit_ols(data, intercept=spec.intercept), None
    if task == "iv2sls":
        return fit_iv_2sls(data, intercept=spec.intercept), None
    if task == "logistic":
        est = fit_logistic(data, intercept=spec.intercept)
        return est, est.estimate.copy()
    if task == "negbin":
        est = fit_negbin(data, spec.dispersion, intercept=spec.intercept)
        s_val = spec.dispersion if not isinstance(spec.dispersion, str) else None
        return est, (est.estimate.copy(), s_val)
    if task == "quantile":
        est = fit_quantile(data, spec.quantile_level, intercept=spec.intercept)
        if regressor_columns(data):
            h = quantile.final_bandwidth(data.outcome)
            return est, (h, est.estimate.copy())
        return est, None
    if task == "wilcoxon":
        return wilcoxon_estimate(data, spec.group_column), None
    if task == "debiased_lasso":
        return lasso.fit_debiased_lasso_with_context(data, spec.penalty)
    raise InputError(f"unknown task {task!r}")


def restrict_indices(spec: TaskSpec, labels: list[str]) -> np.ndarray | None:
    if spec.target_columns is None:
        return None
    missing = [c for c in spec.target_columns if c not in labels]
    if missing:
        raise InputError(f"target columns not in the fitted coordinates: {missing}")
    return np.array([labels.index(c) for c in spec.target_columns])


def fit_task_with_context(spec: TaskSpec, data: Dataset):
    return _fit_full(spec, data)


def fit_task(spec: TaskSpec, data: Dataset) -> EstimateWithVariance:
    est, _ = _fit_full(spec, data)
    if spec.target_columns is not None:
        est = est.restrict(list(spec.target_columns))
    return est


def refit_point(spec: TaskSpec, data: Dataset, context) -> np.ndarray:
    """Point-estimate refit on a resample, reusing frozen context when any."""
    task = spec.task
    if task == "debiased_lasso":
        cols = lasso._lasso_columns(data)
        X = np.column_stack([data.column(c) for c in cols])
        return lasso.refit_point_estimate(X, data.outcome, context)
    if task == "quantile" and context is not None:
        h, beta0 = context
        design = build_design(data, intercept=spec.intercept)
        return quantile.refit_quantile_regression(
            design.X, data.outcome, spec.quantile_level, h, beta0
        )
    est, _ = _fit_full(spec, data)
    return est.estimate


class BatchFitter:
    """Vectorized point-estimate refits over count-weighted resamples.

    Built once per (task, dataset, outcome list); ``estimates`` maps a
    (Q, n) matrix of resample counts (plus the raw row indices, needed by
    the lasso) to per-outcome (Q, K) estimate arrays and a per-resample
    success mask.
    """

    def __init__(self, spec: TaskSpec, data: Dataset, ys: list[np.ndarray], contexts):
        self.spec = spec
        self.data = data
        self.ys = [np.asarray(y, dtype=np.float64) for y in ys]
        self.contexts = contexts
        task = spec.task
        if task in ("ols", "logistic", "negbin") or (
            task == "quantile" and regressor_columns(data)
        ):
            self.X = build_design(data, intercept=spec.intercept).X
        elif task == "iv2sls":
            Z, X, *_ = linear._iv_matrices(data, spec.intercept)
            self.Z, self.X = Z, X
        elif task == "wilcoxon":
            self.g = data.column(rank._group_column(data, spec.group_column))
        elif task == "debiased_lasso":
            cols = lasso._lasso_columns(data)
            self.X = np.column_stack([data.column(c) for c in cols])

    def estimates(self, counts: np.ndarray, indices: np.ndarray):
        spec, ys = self.spec, self.ys
        task = spec.task
        counts = counts.astype(np.float64)
        if task == "mean":
            return linear.batch_mean(ys, counts)
        if task == "ols":
            return linear.batch_ols(self.X, ys, counts)
        if task == "iv2sls":
            return linear.batch_iv(self.Z, self.X, ys, counts)
        if task == "logistic":
            return glm.batch_logistic(self.X, ys, counts, self.contexts)
        if task == "negbin":
            beta0s = [c[0] for c in self.contexts]
            s0s = [c[1] if c[1] is not None else glm._init_dispersion(y) for c, y in zip(self.contexts, ys)]
            estimate_s = isinstance(spec.dispersion, str)
            return glm.batch_negbin(self.X, ys, counts, beta0s, s0s, estimate_s)
        if task == "quantile":
            if self.contexts[0] is None:
                return quantile.batch_quantile_marginal(ys, counts, spec.quantile_level)
            hs = [c[0] for c in self.contexts]
            beta0s = [c[1] for c in self.contexts]
            return quantile.batch_quantile_regression(
                self.X, ys, counts, spec.quantile_level, hs, beta0s
            )
        if task == "wilcoxon":
            return rank.batch_wilcoxon(ys, self.g, counts)
        if task == "debiased_lasso":
            outs, ok = [], np.ones(indices.shape[0], dtype=bool)
            for y, ctx in zip(ys, self.contexts):
                out_y, ok_y = lasso.batch_debiased_lasso(self.X, [y], indices, ctx)
                outs.append(out_y[0])
                ok &= ok_y
            return outs, ok
        raise InputError(f"unknown task {task!r}")
