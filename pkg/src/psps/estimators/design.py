"""Design-matrix assembly shared by the regression estimators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..datatypes import Dataset, InputError

INTERCEPT = "(intercept)"

# Roles that never enter a regression design directly.
_EXCLUDED_ROLES = {"instrument", "group-indicator", "predicted-feature"}


@dataclass
class Design:
    """A realized design matrix with coordinate labels."""

    X: np.ndarray
    labels: list[str]
    has_intercept: bool


def regressor_columns(data: Dataset) -> list[str]:
    """Feature columns that act as regressors (covariate or endogenous role)."""
    return [c for c in data.feature_names if data.role(c) not in _EXCLUDED_ROLES]


def build_design(
    data: Dataset, *, intercept: bool = True, columns: list[str] | None = None
) -> Design:
    """Assemble the design matrix, intercept first when requested."""
    cols = regressor_columns(data) if columns is None else list(columns)
    blocks = [data.column(c)[:, None] for c in cols]
    if intercept:
        blocks.insert(0, np.ones((data.n, 1)))
    if not blocks:
        raise InputError("design has no columns")
    X = np.hstack(blocks)
    labels = ([INTERCEPT] if intercept else []) + cols
    return Design(X=X, labels=labels, has_intercept=intercept)


def outcome_vector(data: Dataset) -> np.ndarray:
    if data.outcome is None or data.outcome.shape[0] == 0:
        raise InputError("empty dataset: outcome vector is missing or empty")
    return data.outcome


def reject_weights(data: Dataset, task: str) -> None:
    if data.weights is not None:
        raise InputError(f"weights are not supported for task {task!r}")
