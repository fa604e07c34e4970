"""Two-sample Wilcoxon/Mann-Whitney probability estimate.

The estimand is P(Y1 > Y0) + 0.5 P(Y1 = Y0), computed from midranks. The
estimate is written in a complement form (dividing the smaller of U1, U0)
so that swapping the group labels yields exactly 1 minus the original value
in floating point, ties included.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from ..datatypes import Dataset, EstimateWithVariance, EstimationError, InputError
from .design import outcome_vector, reject_weights


def _group_column(data: Dataset, group_column: str | None) -> str:
    if group_column is not None:
        if group_column not in data.feature_names:
            raise InputError(f"group column {group_column!r} not found")
        return group_column
    tagged = data.columns_with_role("group-indicator")
    if not tagged:
        raise InputError("wilcoxon requires a group-indicator column")
    if len(tagged) > 1:
        raise InputError(
            "wilcoxon needs a single group-indicator column, found " + ", ".join(tagged)
        )
    return tagged[0]


def _complement_ratio(u1: float, u0: float, denom: float) -> float:
    # Dividing the smaller U keeps est(swapped) == 1 - est(original) exact.
    if u1 <= u0:
        return u1 / denom
    return 1.0 - u0 / denom


def wilcoxon_estimate(
    data: Dataset, group_column: str | None = None
) -> EstimateWithVariance:
    """Mann-Whitney effect P(Y_g1 > Y_g0) with midrank tie handling."""
    y = outcome_vector(data)
    reject_weights(data, "wilcoxon")
    g = data.column(_group_column(data, group_column))
    if not np.all((g == 0.0) | (g == 1.0)):
        raise InputError("group column must contain only 0 and 1")
    n1 = float(np.sum(g))
    n0 = float(data.n) - n1
    if n1 == 0.0 or n0 == 0.0:
        raise EstimationError("group column has a single level in this sample")
    ranks = rankdata(y)
    r1 = float(np.sum(ranks[g == 1.0]))
    u1 = r1 - n1 * (n1 + 1.0) / 2.0
    denom = n0 * n1
    est = _complement_ratio(u1, denom - u1, denom)
    return EstimateWithVariance(
        estimate=np.array([est]),
        variance=None,
        n=data.n,
        labels=["wilcoxon"],
        null_values=np.array([0.5]),
    )


def batch_wilcoxon(ys: list[np.ndarray], g: np.ndarray, counts: np.ndarray):
    """Count-weighted Mann-Whitney estimates via block midranks.

    For each resample, the midrank of a tie block equals the count of
    smaller values plus (block count + 1)/2; rank sums then follow from a
    segmented reduction over the sorted outcome.
    """
    Q, n = counts.shape
    outs = []
    ok = np.ones(Q, dtype=bool)
    n1_all = counts @ g
    n0_all = counts.sum(axis=1) - n1_all
    ok &= (n1_all > 0) & (n0_all > 0)
    for y in ys:
        order = np.argsort(y, kind="stable")
        y_sorted = y[order]
        g_sorted = g[order]
        cnt_sorted = counts[:, order].astype(np.float64)
        starts = np.flatnonzero(np.r_[True, y_sorted[1:] != y_sorted[:-1]])
        block_of = np.cumsum(np.r_[True, y_sorted[1:] != y_sorted[:-1]]) - 1
        totals = np.add.reduceat(cnt_sorted, starts, axis=1)
        before = np.concatenate(
            [np.zeros((Q, 1)), np.cumsum(totals, axis=1)[:, :-1]], axis=1
        )
        mid = before + (totals + 1.0) / 2.0
        mid_full = mid[:, block_of]
        r1 = np.sum(cnt_sorted * g_sorted[None, :] * mid_full, axis=1)
        n1 = cnt_sorted @ g_sorted
        n0 = cnt_sorted.sum(axis=1) - n1
        u1 = r1 - n1 * (n1 + 1.0) / 2.0
        denom = np.where((n0 > 0) & (n1 > 0), n0 * n1, 1.0)
        u0 = denom - u1
        est = np.where(u1 <= u0, u1 / denom, 1.0 - u0 / denom)
        outs.append(est[:, None])
    return outs, ok
