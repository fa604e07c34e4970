"""Shared containers: datasets, task descriptions, and estimator outputs."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

TASKS = (
    "mean",
    "ols",
    "logistic",
    "quantile",
    "iv2sls",
    "negbin",
    "wilcoxon",
    "debiased_lasso",
)

COLUMN_ROLES = (
    "covariate",
    "instrument",
    "endogenous",
    "group-indicator",
    "predicted-feature",
)


class InputError(ValueError):
    """Malformed data, configuration, or serialized payload (CLI exit 2)."""


class EstimationError(RuntimeError):
    """Numerical or statistical failure inside a routine (CLI exit 3)."""


def _as_float_vector(x: Any, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise InputError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


@dataclass
class Dataset:
    """One rectangular block of observations.

    The outcome vector may hold observed responses or machine predictions;
    ``prediction`` carries the predicted-outcome column alongside the observed
    one on labeled data so both views of Algorithm-1 can be built from a
    single object.  Prediction columns never enter the design matrix.

    Parameters
    ----------
    features : np.ndarray
        (n, p) matrix, one column per named feature.
    feature_names : list of str
        Column names, unique, length p.
    outcome : np.ndarray or None
        Observed or predicted outcome, length n.
    prediction : np.ndarray or None
        Predicted outcome attached to labeled data, length n.
    weights : np.ndarray or None
        Optional nonnegative observation weights.
    column_roles : dict
        Maps column name to one of COLUMN_ROLES; unlisted columns are
        covariates.
    """

    features: np.ndarray
    feature_names: list[str]
    outcome: np.ndarray | None = None
    prediction: np.ndarray | None = None
    weights: np.ndarray | None = None
    column_roles: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise InputError(f"features must be 2-D, got shape {self.features.shape}")
        self.feature_names = [str(c) for c in self.feature_names]
        n, p = self.features.shape
        if len(self.feature_names) != p:
            raise InputError(
                f"{len(self.feature_names)} feature names for {p} feature columns"
            )
        if len(set(self.feature_names)) != p:
            raise InputError("duplicate feature names")
        if not np.all(np.isfinite(self.features)):
            bad = [
                self.feature_names[j]
                for j in range(p)
                if not np.all(np.isfinite(self.features[:, j]))
            ]
            raise InputError(f"non-finite values in feature column(s): {bad}")
        for vec_name in ("outcome", "prediction"):
            vec = getattr(self, vec_name)
            if vec is not None:
                vec = _as_float_vector(vec, vec_name)
                if vec.shape[0] != n:
                    raise InputError(
                        f"{vec_name} has {vec.shape[0]} rows, features have {n}"
                    )
                setattr(self, vec_name, vec)
        if self.weights is not None:
            w = _as_float_vector(self.weights, "weights")
            if w.shape[0] != n:
                raise InputError(f"weights have {w.shape[0]} rows, features have {n}")
            if np.any(w < 0):
                raise InputError("weights must be nonnegative")
            self.weights = w
        for col, role in self.column_roles.items():
            if col not in self.feature_names:
                raise InputError(f"column_roles names unknown column {col!r}")
            if role not in COLUMN_ROLES:
                raise InputError(f"unknown column role {role!r} for column {col!r}")
            if role == "group-indicator":
                vals = self.column(col)
                if not np.all((vals == 0.0) | (vals == 1.0)):
                    raise InputError(
                        f"group-indicator column {col!r} must contain only 0 and 1"
                    )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.feature_names.index(name)
        except ValueError:
            raise InputError(f"no column named {name!r}") from None
        return self.features[:, j]

    def role(self, name: str) -> str:
        return self.column_roles.get(name, "covariate")

    def columns_with_role(self, role: str) -> list[str]:
        return [c for c in self.feature_names if self.role(c) == role]

    def take(self, indices: np.ndarray) -> "Dataset":
        """Row subset/resample; keeps roles, drops nothing."""
        idx = np.asarray(indices)
        return Dataset(
            features=self.features[idx],
            feature_names=list(self.feature_names),
            outcome=None if self.outcome is None else self.outcome[idx],
            prediction=None if self.prediction is None else self.prediction[idx],
            weights=None if self.weights is None else self.weights[idx],
            column_roles=dict(self.column_roles),
        )

    def with_outcome(self, outcome: np.ndarray) -> "Dataset":
        """Same rows with a different outcome vector (prediction dropped)."""
        return Dataset(
            features=self.features,
            feature_names=list(self.feature_names),
            outcome=outcome,
            prediction=None,
            weights=self.weights,
            column_roles=dict(self.column_roles),
        )


@dataclass(frozen=True)
class TaskSpec:
    """Declarative description of which estimation routine to run.

    ``target_columns`` restricts the reported coordinates after fitting (the
    intercept is reported only when no restriction is given or when it is
    listed explicitly as ``"(intercept)"``).
    """

    task: str
    quantile_level: float | None = None
    penalty: float | str = "auto"
    dispersion: float | str = "estimate"
    target_columns: tuple[str, ...] | None = None
    intercept: bool = True
    group_column: str | None = None

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise InputError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.task == "quantile":
            if self.quantile_level is None:
                raise InputError("quantile task requires quantile_level")
            if not 0.0 < float(self.quantile_level) < 1.0:
                raise InputError("quantile_level must lie strictly inside (0, 1)")
        if isinstance(self.penalty, str):
            if self.penalty != "auto":
                raise InputError("penalty must be a nonnegative real or 'auto'")
        elif float(self.penalty) < 0:
            raise InputError("penalty must be nonnegative")
        if isinstance(self.dispersion, str):
            if self.dispersion != "estimate":
                raise InputError("dispersion must be a positive real or 'estimate'")
        elif float(self.dispersion) <= 0:
            raise InputError("dispersion must be positive")
        if self.target_columns is not None:
            object.__setattr__(self, "target_columns", tuple(self.target_columns))

    def null_vector(self, k: int) -> np.ndarray:
        """Default null values for hypothesis tests (1/2 for the rank test)."""
        if self.task == "wilcoxon":
            return np.full(k, 0.5)
        return np.zeros(k)

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task,
            "quantile_level": self.quantile_level,
            "penalty": self.penalty,
            "dispersion": self.dispersion,
            "target_columns": None
            if self.target_columns is None
            else list(self.target_columns),
            "intercept": self.intercept,
            "group_column": self.group_column,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TaskSpec":
        if not isinstance(d, dict) or "task" not in d:
            raise InputError("task description must be a mapping with a 'task' key")
        known = {
            "task",
            "quantile_level",
            "penalty",
            "dispersion",
            "target_columns",
            "intercept",
            "group_column",
        }
        extra = set(d) - known
        if extra:
            raise InputError(f"unknown task fields: {sorted(extra)}")
        kwargs = dict(d)
        if kwargs.get("target_columns") is not None:
            kwargs["target_columns"] = tuple(kwargs["target_columns"])
        return cls(**kwargs)


@dataclass(eq=False)
class EstimateWithVariance:
    """A point estimate with its estimated finite-sample variance.

    ``variance`` is already divided by the relevant sample size.  ``None``
    marks bootstrap-required tasks (quantile, rank test) whose analytic
    variance is deliberately not produced.
    """

    estimate: np.ndarray
    variance: np.ndarray | None
    n: int
    labels: list[str]
    null_values: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.estimate = _as_float_vector(self.estimate, "estimate")
        k = self.estimate.shape[0]
        if len(self.labels) != k:
            raise InputError(f"{len(self.labels)} labels for {k} coordinates")
        if self.variance is not None:
            v = np.asarray(self.variance, dtype=np.float64)
            if v.shape != (k, k):
                raise InputError(f"variance has shape {v.shape}, expected ({k}, {k})")
            if not np.all(np.isfinite(v)):
                raise InputError("variance contains non-finite values")
            scale = np.max(np.abs(v)) or 1.0
            if np.max(np.abs(v - v.T)) > 1e-10 * scale:
                raise InputError("variance matrix is not symmetric")
            v = (v + v.T) / 2.0
            diag = np.diag(v)
            if np.any(diag < -1e-12 * scale):
                raise InputError("variance diagonal has negative entries")
            self.variance = v
        if self.null_values is not None:
            nv = _as_float_vector(self.null_values, "null_values")
            if nv.shape[0] != k:
                raise InputError("null_values length does not match estimate")
            self.null_values = nv
        self.n = int(self.n)

    @property
    def k(self) -> int:
        return self.estimate.shape[0]

    @property
    def requires_bootstrap(self) -> bool:
        return self.variance is None

    def restrict(self, labels: list[str]) -> "EstimateWithVariance":
        """Keep only the named coordinates, in the given order."""
        missing = [c for c in labels if c not in self.labels]
        if missing:
            raise InputError(f"target columns not among fitted coordinates: {missing}")
        idx = np.array([self.labels.index(c) for c in labels])
        return EstimateWithVariance(
            estimate=self.estimate[idx],
            variance=None if self.variance is None else self.variance[np.ix_(idx, idx)],
            n=self.n,
            labels=list(labels),
            null_values=None if self.null_values is None else self.null_values[idx],
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EstimateWithVariance):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and bool(np.all(a == b))

        return (
            same(self.estimate, other.estimate)
            and same(self.variance, other.variance)
            and self.n == other.n
            and self.labels == other.labels
            and same(self.null_values, other.null_values)
        )


__all__ = [
    "TASKS",
    "COLUMN_ROLES",
    "InputError",
    "EstimationError",
    "Dataset",
    "TaskSpec",
    "EstimateWithVariance",
]
