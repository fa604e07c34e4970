"""Summary-statistics stage: three estimator views plus a paired bootstrap.

A summary holds the labeled-outcome fit theta_L, the labeled-prediction fit
eta_L, the unlabeled-prediction fit eta_U, and the labeled cross-covariance
estimated by refitting both labeled views on the same row resamples. The
labeled and unlabeled halves can be computed in separate processes and merged
later; ``compute_summary`` itself is implemented as that split followed by
``merge_summaries``, so the federated path is identical by construction.

Covariance block orientation: ``cov_theta_eta_L[i][j]`` is the bootstrap
covariance between eta_L coordinate i and theta_L coordinate j. With this
layout the combiner formulas downstream read exactly as written (weight
M^{-1} C, variance reduction C' M^{-1} C).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .datatypes import (
    Dataset,
    EstimateWithVariance,
    EstimationError,
    InputError,
    TaskSpec,
)
from .estimators import BatchFitter, fit_task_with_context, refit_point, restrict_indices
from .rng import substream

SCHEMA_VERSION = 1
_MODES = ("independent", "dependent")
_EXTRA_BLOCK_NAMES = ("cov_eta_L_eta_U", "cov_theta_L_eta_U")


@dataclass(frozen=True)
class BootstrapPlan:
    """Resampling policy: Q replicates, a base seed, and whether the labeled
    and unlabeled variance blocks are bootstrap (default) or analytic."""

    replicates: int = 200
    seed: int = 0
    full_bootstrap: bool = True

    def __post_init__(self):
        if self.replicates < 50:
            raise InputError(
                f"bootstrap needs at least 50 replicates, got {self.replicates}"
            )
        if not (0 <= int(self.seed) < 2**64):
            raise InputError("seed must fit in 64 bits")


@dataclass
class SummaryStatistics:
    """Sufficient statistics for one-step debiasing; may be a partial
    (labeled-only or unlabeled-only) block set in federated workflows."""

    task: TaskSpec
    labels: list[str]
    n: int
    N: int
    bootstrap_replicates: int
    mode: str
    theta_L: EstimateWithVariance | None
    eta_L: EstimateWithVariance | None
    eta_U: EstimateWithVariance | None
    cov_theta_eta_L: np.ndarray | None
    extra_blocks: dict[str, np.ndarray] | None = None

    def __post_init__(self):
        if self.mode not in _MODES:
            raise InputError(f"mode must be one of {_MODES}, got {self.mode!r}")
        K = len(self.labels)
        if K == 0:
            raise InputError("summary needs at least one coordinate label")
        for name, est in (
            ("theta_L", self.theta_L),
            ("eta_L", self.eta_L),
            ("eta_U", self.eta_U),
        ):
            if est is not None and (est.k != K or est.labels != list(self.labels)):
                raise InputError(f"{name} labels disagree with the summary labels")
        if (self.theta_L is None) != (self.eta_L is None):
            raise InputError("theta_L and eta_L must be provided together")
        if (self.theta_L is None) != (self.cov_theta_eta_L is None):
            raise InputError("cov_theta_eta_L must accompany the labeled blocks")
        if self.cov_theta_eta_L is not None:
            self.cov_theta_eta_L = np.asarray(self.cov_theta_eta_L, dtype=np.float64)
            if self.cov_theta_eta_L.shape != (K, K):
                raise InputError(
                    f"cov_theta_eta_L must be {K}x{K}, got {self.cov_theta_eta_L.shape}"
                )
        if self.extra_blocks is not None:
            for name, block in self.extra_blocks.items():
                if name not in _EXTRA_BLOCK_NAMES:
                    raise InputError(f"unknown extra block {name!r}")
                block = np.asarray(block, dtype=np.float64)
                if block.shape != (K, K):
                    raise InputError(f"extra block {name} must be {K}x{K}")
                self.extra_blocks[name] = block
        if self.bootstrap_replicates < 0 or self.n < 0 or self.N < 0:
            raise InputError("counts must be nonnegative")

    @property
    def K(self) -> int:
        return len(self.labels)

    @property
    def blocks_present(self) -> tuple[str, ...]:
        out = []
        if self.theta_L is not None:
            out.append("labeled")
        if self.eta_U is not None:
            out.append("unlabeled")
        return tuple(out)

    @property
    def is_complete(self) -> bool:
        return self.blocks_present == ("labeled", "unlabeled")

    def __eq__(self, other) -> bool:
        if not isinstance(other, SummaryStatistics):
            return NotImplemented

        def arr_eq(a, b):
            if (a is None) != (b is None):
                return False
            return a is None or (a.shape == b.shape and np.array_equal(a, b))

        if self.extra_blocks is None or other.extra_blocks is None:
            extra_ok = (self.extra_blocks or None) == (other.extra_blocks or None)
        else:
            extra_ok = set(self.extra_blocks) == set(other.extra_blocks) and all(
                arr_eq(self.extra_blocks[k], other.extra_blocks[k])
                for k in self.extra_blocks
            )
        return (
            self.task == other.task
            and self.labels == other.labels
            and (self.n, self.N, self.bootstrap_replicates, self.mode)
            == (other.n, other.N, other.bootstrap_replicates, other.mode)
            and self.theta_L == other.theta_L
            and self.eta_L == other.eta_L
            and self.eta_U == other.eta_U
            and arr_eq(self.cov_theta_eta_L, other.cov_theta_eta_L)
            and extra_ok
        )


# ---------------------------------------------------------------------------
# Bootstrap engine.
# ---------------------------------------------------------------------------


def _draw_indices(seed: int, role: str, q: int, attempt: int, n: int) -> np.ndarray:
    return substream(seed, role, q, attempt).integers(0, n, size=n)


def _bootstrap_views(
    task: TaskSpec,
    views: list[tuple[Dataset, object]],
    role: str,
    plan: BootstrapPlan,
    ridx: np.ndarray | None,
) -> list[np.ndarray]:
    """Point-estimate replicates for several dataset views sharing rows.

    Each view is (dataset, refit context); all views are refit on the same
    resample per replicate, which is what makes the cross-covariance blocks
    meaningful. Returns one (Q, K) array per view. Failed replicates are
    redrawn from per-slot substreams up to a 10% budget.
    """
    Q = plan.replicates
    n = views[0][0].n
    for data, _ in views[1:]:
        if data.n != n:
            raise InputError("all views of one side must share the row count")
    indices = np.empty((Q, n), dtype=np.int64)
    for q in range(Q):
        indices[q] = _draw_indices(plan.seed, role, q, 0, n)
    counts = np.stack([np.bincount(indices[q], minlength=n) for q in range(Q)])

    # Group consecutive views that share a feature matrix so one fitter can
    # reuse the per-resample design products for several outcomes.
    outs: list[np.ndarray | None] = [None] * len(views)
    ok = np.ones(Q, dtype=bool)
    i = 0
    while i < len(views):
        j = i
        while (
            j + 1 < len(views) and views[j + 1][0].features is views[i][0].features
        ):
            j += 1
        group = views[i : j + 1]
        fitter = BatchFitter(
            task,
            group[0][0],
            ys=[v[0].outcome for v in group],
            contexts=[v[1] for v in group],
        )
        group_outs, group_ok = fitter.estimates(counts, indices)
        for offset, arr in enumerate(group_outs):
            outs[i + offset] = arr
        ok &= group_ok
        i = j + 1

    budget = Q // 10
    failures = int(np.sum(~ok))
    if failures > budget:
        raise EstimationError(
            f"unstable bootstrap: {failures} of {Q} resamples failed"
        )
    for q in np.flatnonzero(~ok):
        for attempt in range(1, budget + 2):
            idx = _draw_indices(plan.seed, role, q, attempt, n)
            try:
                vals = [refit_point(task, data.take(idx), ctx) for data, ctx in views]
            except EstimationError:
                failures += 1
                if failures > budget:
                    raise EstimationError(
                        f"unstable bootstrap: {failures} of {Q} resample fits failed"
                    ) from None
                continue
            for slot, v in enumerate(vals):
                outs[slot][q] = v
            break
        else:  # unreachable: the budget raise fires before attempts run out
            raise EstimationError(
                f"unstable bootstrap: replicate {q} kept failing after redraws"
            )
    if ridx is not None:
        outs = [o[:, ridx] for o in outs]
    return outs


def _joint_cov(stacks: list[np.ndarray]) -> np.ndarray:
    flat = np.hstack(stacks)
    cov = np.cov(flat, rowvar=False, ddof=1)
    return np.atleast_2d(cov)


# ---------------------------------------------------------------------------
# Summary construction.
# ---------------------------------------------------------------------------


def _restricted(est: EstimateWithVariance, task: TaskSpec) -> EstimateWithVariance:
    if task.target_columns is None:
        return est
    return est.restrict(list(task.target_columns))


def _with_variance(est: EstimateWithVariance, V: np.ndarray) -> EstimateWithVariance:
    return EstimateWithVariance(
        estimate=est.estimate.copy(),
        variance=V,
        n=est.n,
        labels=list(est.labels),
        null_values=None if est.null_values is None else est.null_values.copy(),
    )


def _check_bootstrap_possible(task: TaskSpec, plan: BootstrapPlan, *ests):
    if plan.full_bootstrap:
        return
    if any(e.variance is None for e in ests):
        raise InputError(
            f"task {task.task!r} has no analytic variance; full_bootstrap is required"
        )


def labeled_summary(task: TaskSpec, labeled: Dataset, plan: BootstrapPlan) -> SummaryStatistics:
    """Partial summary from a center holding only labeled data.

    Contains theta_L, eta_L, and their paired-bootstrap covariance block;
    merge with an unlabeled-center summary to obtain the full object.
    """
    if labeled.outcome is None:
        raise InputError("labeled data must include an outcome column")
    if labeled.prediction is None:
        raise InputError("labeled data must include a prediction column")
    theta_view = labeled
    eta_view = labeled.with_outcome(labeled.prediction)
    est_theta, ctx_theta = fit_task_with_context(task, theta_view)
    est_eta, ctx_eta = fit_task_with_context(task, eta_view)
    ridx = restrict_indices(task, est_theta.labels)
    theta_r = _restricted(est_theta, task)
    eta_r = _restricted(est_eta, task)
    K = theta_r.k
    _check_bootstrap_possible(task, plan, theta_r, eta_r)

    if not plan.full_bootstrap and task.task == "mean":
        # Closed-form cross-covariance for the mean: plug-in Cov(Y, f)/n.
        c = np.cov(labeled.outcome, labeled.prediction, ddof=1)[0, 1]
        C_store = np.array([[c / labeled.n]])
        var_theta = theta_r.variance
        var_eta = eta_r.variance
    else:
        theta_b, eta_b = _bootstrap_views(
            task, [(theta_view, ctx_theta), (eta_view, ctx_eta)], "labeled", plan, ridx
        )
        joint = _joint_cov([theta_b, eta_b])
        C_store = joint[K:, :K].copy()
        if plan.full_bootstrap:
            var_theta = joint[:K, :K].copy()
            var_eta = joint[K:, K:].copy()
        else:
            var_theta = theta_r.variance
            var_eta = eta_r.variance
            # Rescale the coupling block to the analytic standard deviations
            # so each implied (theta_j, eta_i) correlation keeps its bootstrap
            # value. Raw bootstrap covariances next to analytic variances can
            # imply a correlation above one at some coordinate, and then the
            # combined variance goes negative.
            C_store = _calibrated_coupling(C_store, joint, var_theta, var_eta, K)
    return SummaryStatistics(
        task=task,
        labels=list(theta_r.labels),
        n=labeled.n,
        N=0,
        bootstrap_replicates=plan.replicates,
        mode="independent",
        theta_L=_with_variance(theta_r, var_theta),
        eta_L=_with_variance(eta_r, var_eta),
        eta_U=None,
        cov_theta_eta_L=C_store,
    )


def _calibrated_coupling(C, joint, var_theta, var_eta, K: int):
    """Map the bootstrap coupling block onto the analytic variance scale.

    Per-coordinate factors sqrt(analytic/bootstrap) applied to the eta rows
    and theta columns; a degenerate bootstrap diagonal keeps factor one.
    """
    boot_theta = np.diag(joint[:K, :K])
    boot_eta = np.diag(joint[K:, K:])
    d_theta = np.ones(K)
    d_eta = np.ones(K)
    ok_t = boot_theta > 0.0
    ok_e = boot_eta > 0.0
    d_theta[ok_t] = np.sqrt(np.diag(var_theta)[ok_t] / boot_theta[ok_t])
    d_eta[ok_e] = np.sqrt(np.diag(var_eta)[ok_e] / boot_eta[ok_e])
    return C * np.outer(d_eta, d_theta)


def _unlabeled_part_from_view(
    task: TaskSpec, eta_view: Dataset, plan: BootstrapPlan
) -> SummaryStatistics:
    est_eta, ctx_eta = fit_task_with_context(task, eta_view)
    ridx = restrict_indices(task, est_eta.labels)
    eta_r = _restricted(est_eta, task)
    _check_bootstrap_possible(task, plan, eta_r)
    if plan.full_bootstrap:
        (eta_b,) = _bootstrap_views(task, [(eta_view, ctx_eta)], "unlabeled", plan, ridx)
        var_eta = _joint_cov([eta_b])
    else:
        var_eta = eta_r.variance
    return SummaryStatistics(
        task=task,
        labels=list(eta_r.labels),
        n=0,
        N=eta_view.n,
        bootstrap_replicates=plan.replicates,
        mode="independent",
        theta_L=None,
        eta_L=None,
        eta_U=_with_variance(eta_r, var_eta),
        cov_theta_eta_L=None,
    )


def unlabeled_summary(
    task: TaskSpec, unlabeled: Dataset, plan: BootstrapPlan
) -> SummaryStatistics:
    """Partial summary from a center holding only unlabeled data."""
    if unlabeled.prediction is None:
        raise InputError("unlabeled data must include a prediction column")
    if unlabeled.outcome is not None:
        raise InputError(
            "unlabeled data must not include an outcome column (swapped datasets?)"
        )
    return _unlabeled_part_from_view(
        task, unlabeled.with_outcome(unlabeled.prediction), plan
    )


def merge_summaries(parts: list[SummaryStatistics]) -> SummaryStatistics:
    """Assemble partial block sets into one complete summary.

    Each block group (labeled, unlabeled) must be provided exactly once,
    and the parts must agree on task, labels, replicate count, and mode.
    """
    if not parts:
        raise InputError("no summaries to merge")
    first = parts[0]
    labeled_part = None
    unlabeled_part = None
    for part in parts:
        if part.task.to_dict() != first.task.to_dict():
            raise InputError("summaries disagree on the task")
        if part.labels != first.labels:
            raise InputError(
                f"incompatible label sets: {part.labels} vs {first.labels}"
            )
        if part.bootstrap_replicates != first.bootstrap_replicates:
            raise InputError("summaries disagree on the bootstrap replicate count")
        if part.mode != first.mode:
            raise InputError("summaries disagree on the sampling mode")
        if part.theta_L is not None:
            if labeled_part is not None:
                raise InputError("conflicting duplicate blocks: labeled side provided twice")
            labeled_part = part
        if part.eta_U is not None:
            if unlabeled_part is not None:
                raise InputError("conflicting duplicate blocks: unlabeled side provided twice")
            unlabeled_part = part
    if labeled_part is None:
        raise InputError("incomplete summary: labeled blocks missing")
    if unlabeled_part is None:
        raise InputError("incomplete summary: unlabeled blocks missing")
    extra = None
    for part in parts:
        if part.extra_blocks:
            extra = dict(part.extra_blocks)
    return SummaryStatistics(
        task=first.task,
        labels=list(first.labels),
        n=labeled_part.n,
        N=unlabeled_part.N,
        bootstrap_replicates=first.bootstrap_replicates,
        mode=first.mode,
        theta_L=labeled_part.theta_L,
        eta_L=labeled_part.eta_L,
        eta_U=unlabeled_part.eta_U,
        cov_theta_eta_L=labeled_part.cov_theta_eta_L,
        extra_blocks=extra,
    )


def _check_schemas(labeled: Dataset, unlabeled: Dataset):
    if labeled.feature_names != unlabeled.feature_names:
        raise InputError(
            "feature schemas differ between labeled and unlabeled data: "
            f"{labeled.feature_names} vs {unlabeled.feature_names}"
        )
    for name in labeled.feature_names:
        if labeled.role(name) != unlabeled.role(name):
            raise InputError(f"column {name!r} has different roles in the two datasets")


def compute_summary(
    task: TaskSpec, labeled: Dataset, unlabeled: Dataset, plan: BootstrapPlan
) -> SummaryStatistics:
    """Fit the three views and the paired labeled bootstrap in one process.

    Equivalent, bit for bit, to computing the labeled and unlabeled partial
    summaries separately and merging them.
    """
    _check_schemas(labeled, unlabeled)
    return merge_summaries(
        [labeled_summary(task, labeled, plan), unlabeled_summary(task, unlabeled, plan)]
    )


def _predicted_feature_views(labeled: Dataset, unlabeled: Dataset):
    predicted = labeled.columns_with_role("predicted-feature")
    if not predicted:
        raise InputError("predicted-feature mode requires predicted-feature role annotations")
    if unlabeled.columns_with_role("predicted-feature") != predicted:
        raise InputError("labeled and unlabeled data disagree on predicted-feature columns")
    observed_only = [c for c in labeled.feature_names if c not in unlabeled.feature_names]
    if len(observed_only) != len(predicted):
        raise InputError(
            f"cannot pair {len(predicted)} predicted-feature columns with "
            f"{len(observed_only)} labeled-only columns"
        )
    pairing = dict(zip(predicted, observed_only))

    def substitute(data: Dataset, with_observed: bool) -> Dataset:
        names, cols, roles = [], [], {}
        for name in data.feature_names:
            if name in pairing:
                continue
            names.append(name)
            cols.append(data.column(name))
            roles[name] = data.role(name)
        for pred, obs in pairing.items():
            names.append(obs)
            cols.append(data.column(obs) if with_observed else data.column(pred))
            roles[obs] = "covariate"
        return Dataset(
            features=np.column_stack(cols) if cols else np.zeros((data.n, 0)),
            feature_names=names,
            outcome=data.outcome,
            column_roles=roles,
        )

    theta_view = substitute(labeled, with_observed=True)
    eta_view_L = substitute(labeled, with_observed=False)
    eta_view_U = substitute(unlabeled, with_observed=False)
    return theta_view, eta_view_L, eta_view_U


def compute_summary_predicted_features(
    task: TaskSpec, labeled: Dataset, unlabeled: Dataset, plan: BootstrapPlan
) -> SummaryStatistics:
    """Summary for the predicted-feature setting.

    Here the outcome is observed everywhere but some features are missing
    from the unlabeled data and replaced by predictions (columns with the
    ``predicted-feature`` role). theta_L uses the observed features; eta_L
    and eta_U use the predicted-feature substitutes, with the same paired
    bootstrap as ``compute_summary``.
    """
    if labeled.outcome is None or unlabeled.outcome is None:
        raise InputError("predicted-feature mode needs outcomes on both datasets")
    theta_view, eta_view_L, eta_view_U = _predicted_feature_views(labeled, unlabeled)
    est_theta, ctx_theta = fit_task_with_context(task, theta_view)
    est_eta, ctx_eta = fit_task_with_context(task, eta_view_L)
    ridx = restrict_indices(task, est_theta.labels)
    theta_r = _restricted(est_theta, task)
    eta_r = _restricted(est_eta, task)
    if est_eta.labels != est_theta.labels:
        raise InputError("predicted-feature views produced different coordinates")
    K = theta_r.k
    _check_bootstrap_possible(task, plan, theta_r, eta_r)
    theta_b, eta_b = _bootstrap_views(
        task, [(theta_view, ctx_theta), (eta_view_L, ctx_eta)], "labeled", plan, ridx
    )
    joint = _joint_cov([theta_b, eta_b])
    labeled_part = SummaryStatistics(
        task=task,
        labels=list(theta_r.labels),
        n=labeled.n,
        N=0,
        bootstrap_replicates=plan.replicates,
        mode="independent",
        theta_L=_with_variance(
            theta_r, joint[:K, :K].copy() if plan.full_bootstrap else theta_r.variance
        ),
        eta_L=_with_variance(
            eta_r, joint[K:, K:].copy() if plan.full_bootstrap else eta_r.variance
        ),
        eta_U=None,
        cov_theta_eta_L=joint[K:, :K].copy(),
    )
    unlabeled_part = _unlabeled_part_from_view(task, eta_view_U, plan)
    return merge_summaries([labeled_part, unlabeled_part])


# ---------------------------------------------------------------------------
# Interchange format: JSON text with reals at 17 significant digits.
# ---------------------------------------------------------------------------


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise InputError("non-finite value cannot be serialized")
    return format(float(x), ".17g")


def _dump(obj, parts: list[str], indent: int):
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            parts.append("{}")
            return
        parts.append("{\n")
        for i, (key, val) in enumerate(obj.items()):
            parts.append(f'{pad}  "{key}": ')
            _dump(val, parts, indent + 1)
            parts.append(",\n" if i < len(obj) - 1 else "\n")
        parts.append(pad + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            parts.append("[]")
            return
        parts.append("[")
        for i, val in enumerate(obj):
            _dump(val, parts, indent)
            if i < len(obj) - 1:
                parts.append(", ")
        parts.append("]")
    elif isinstance(obj, bool):
        parts.append("true" if obj else "false")
    elif isinstance(obj, float):
        parts.append(_fmt_float(obj))
    elif isinstance(obj, (int, np.integer)):
        parts.append(str(int(obj)))
    elif isinstance(obj, str):
        parts.append(json.dumps(obj))
    elif obj is None:
        parts.append("null")
    else:
        raise InputError(f"cannot serialize value of type {type(obj).__name__}")


def _est_to_obj(est: EstimateWithVariance) -> dict:
    obj = {
        "estimate": [float(v) for v in est.estimate],
        "variance": [float(v) for v in est.variance.ravel()],
        "n": int(est.n),
    }
    if est.null_values is not None:
        obj["null_values"] = [float(v) for v in est.null_values]
    return obj


def serialize_summary(s: SummaryStatistics) -> str:
    """Render the summary as interchange JSON (schema version 1).

    Floats are written with 17 significant digits, which round-trips IEEE
    doubles exactly; ``parse_summary(serialize_summary(s)) == s`` holds bit
    for bit.
    """
    obj = {
        "schema_version": SCHEMA_VERSION,
        "task": s.task.to_dict(),
        "labels": list(s.labels),
        "n": s.n,
        "N": s.N,
        "Q": s.bootstrap_replicates,
        "mode": s.mode,
        "blocks_present": list(s.blocks_present),
    }
    if s.theta_L is not None:
        obj["theta_L"] = _est_to_obj(s.theta_L)
        obj["eta_L"] = _est_to_obj(s.eta_L)
        obj["cov_theta_eta_L"] = [float(v) for v in s.cov_theta_eta_L.ravel()]
    if s.eta_U is not None:
        obj["eta_U"] = _est_to_obj(s.eta_U)
    if s.extra_blocks:
        obj["extra_blocks"] = {
            k: [float(v) for v in s.extra_blocks[k].ravel()] for k in sorted(s.extra_blocks)
        }
    parts: list[str] = []
    _dump(obj, parts, 0)
    parts.append("\n")
    return "".join(parts)


class _Reader:
    def __init__(self, obj: dict, path: str):
        if not isinstance(obj, dict):
            raise InputError(f"{path}: expected an object")
        self.obj = obj
        self.path = path

    def get(self, key, kind=None, required=True, default=None):
        if key not in self.obj:
            if required:
                raise InputError(f"{self.path}{key}: missing required field")
            return default
        val = self.obj[key]
        if kind is int and isinstance(val, bool):
            raise InputError(f"{self.path}{key}: expected an integer")
        if kind is not None and not isinstance(val, kind):
            raise InputError(
                f"{self.path}{key}: expected {getattr(kind, '__name__', kind)}"
            )
        return val

    def matrix(self, key, K, required=True):
        val = self.get(key, list, required=required)
        if val is None:
            return None
        if len(val) != K * K:
            raise InputError(
                f"{self.path}{key}: expected {K * K} entries for {K} labels, got {len(val)}"
            )
        arr = np.array([_as_real(v, f"{self.path}{key}[{i}]") for i, v in enumerate(val)])
        return arr.reshape(K, K)

    def vector(self, key, K, required=True):
        val = self.get(key, list, required=required)
        if val is None:
            return None
        if len(val) != K:
            raise InputError(
                f"{self.path}{key}: expected {K} entries, got {len(val)}"
            )
        return np.array([_as_real(v, f"{self.path}{key}[{i}]") for i, v in enumerate(val)])


def _as_real(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise InputError(f"{path}: expected a number")
    out = float(v)
    if not math.isfinite(out):
        raise InputError(f"{path}: non-finite value")
    return out


def _est_from_obj(obj, K, labels, path) -> EstimateWithVariance:
    r = _Reader(obj, path + ".")
    estimate = r.vector("estimate", K)
    variance = r.matrix("variance", K)
    n = r.get("n", int)
    nulls = r.vector("null_values", K, required=False)
    return EstimateWithVariance(
        estimate=estimate, variance=variance, n=n, labels=list(labels), null_values=nulls
    )


def parse_summary(text: str) -> SummaryStatistics:
    """Parse interchange JSON back into a SummaryStatistics.

    Malformed payloads raise ``InputError`` naming the offending field path.
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"summary payload is not valid JSON: {exc}") from None
    r = _Reader(obj, "")
    version = r.get("schema_version", int)
    if version != SCHEMA_VERSION:
        raise InputError(
            f"schema_version: unsupported version {version} (expected {SCHEMA_VERSION})"
        )
    task = TaskSpec.from_dict(r.get("task", dict))
    labels = r.get("labels", list)
    if not labels or not all(isinstance(x, str) for x in labels):
        raise InputError("labels: expected a non-empty array of strings")
    K = len(labels)
    n = r.get("n", int)
    N = r.get("N", int)
    Q = r.get("Q", int)
    mode = r.get("mode", str)
    blocks = r.get("blocks_present", list)
    theta_L = eta_L = eta_U = None
    C = None
    if "labeled" in blocks:
        theta_L = _est_from_obj(r.get("theta_L", dict), K, labels, "theta_L")
        eta_L = _est_from_obj(r.get("eta_L", dict), K, labels, "eta_L")
        C = r.matrix("cov_theta_eta_L", K)
    if "unlabeled" in blocks:
        eta_U = _est_from_obj(r.get("eta_U", dict), K, labels, "eta_U")
    extra = None
    extra_obj = r.get("extra_blocks", dict, required=False)
    if extra_obj:
        extra = {}
        er = _Reader(extra_obj, "extra_blocks.")
        for key in extra_obj:
            if key not in _EXTRA_BLOCK_NAMES:
                raise InputError(f"extra_blocks.{key}: unknown block name")
            extra[key] = er.matrix(key, K)
    return SummaryStatistics(
        task=task,
        labels=list(labels),
        n=n,
        N=N,
        bootstrap_replicates=Q,
        mode=mode,
        theta_L=theta_L,
        eta_L=eta_L,
        eta_U=eta_U,
        cov_theta_eta_L=C,
        extra_blocks=extra,
    )
