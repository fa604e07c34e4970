"""Stand-in black-box predictors for the experiment suite.

Each kind yields a handle with ``predict(features) -> vector``. The forest
and neighbor models learn from held-out training data; the oracle returns
the true conditional mean plus configurable noise; pure noise ignores the
features entirely (a validity stress test). Oracle and noise draws are
derived from the seed and a content hash of the query features, so
predictions are reproducible regardless of call order or worker scheduling.
"""

from __future__ import annotations

import hashlib

import numpy as np
from sklearn.ensemble import RandomForestRegressor
from sklearn.neighbors import KNeighborsRegressor

from ..datatypes import Dataset, InputError
from ..rng import substream
from .dgps import conditional_mean

PREDICTOR_KINDS = ("forest_lite", "knn", "oracle_noisy", "pure_noise")

_FOREST_TREES = 50
_FOREST_DEPTH = 6
_KNN_NEIGHBORS = 25


def _query_rng(seed: int, features: np.ndarray):
    digest = hashlib.sha256(np.ascontiguousarray(features).tobytes()).hexdigest()
    return substream(seed, "predict", digest)


class _ModelPredictor:
    """Wraps a fitted scikit-learn regressor."""

    def __init__(self, kind: str, model):
        self.kind = kind
        self._model = model

    def predict(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=np.float64)
        return np.asarray(self._model.predict(X), dtype=np.float64)


class _OraclePredictor:
    """True conditional mean of the setting plus optional Gaussian noise."""

    def __init__(self, dgp: str, seed: int, noise_scale: float, options):
        self.kind = "oracle_noisy"
        self._dgp = dgp
        self._seed = seed
        self._noise = float(noise_scale)
        self._options = options

    def predict(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=np.float64)
        out = conditional_mean(self._dgp, X, self._options)
        if self._noise > 0.0:
            out = out + self._noise * _query_rng(self._seed, X).normal(size=len(out))
        return out


class _NoisePredictor:
    """Standard Gaussian draws independent of both features and outcome."""

    def __init__(self, seed: int):
        self.kind = "pure_noise"
        self._seed = seed

    def predict(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=np.float64)
        return _query_rng(self._seed, X).normal(size=X.shape[0])


def fit_predictor(
    kind: str,
    training_data: Dataset | None,
    seed: int,
    *,
    dgp: str | None = None,
    noise_scale: float = 0.0,
    options: dict | None = None,
):
    """Build a predictor handle.

    Parameters
    ----------
    kind : str
        One of ``PREDICTOR_KINDS``.
    training_data : Dataset or None
        Held-out rows with observed outcomes (features are whatever the
        black box is allowed to see). Unused by oracle_noisy and pure_noise.
    seed : int
        Drives tree randomization and the oracle/noise streams.
    dgp : str, optional
        Setting name; required by oracle_noisy to know the conditional mean.
    noise_scale : float
        Gaussian noise added on top of the oracle mean.
    options : dict, optional
        Setting options matching those passed to ``generate``.
    """
    if kind not in PREDICTOR_KINDS:
        raise InputError(f"unknown predictor {kind!r}; expected one of {PREDICTOR_KINDS}")
    if kind == "oracle_noisy":
        if dgp is None:
            raise InputError("oracle_noisy requires the dgp name")
        if noise_scale < 0.0:
            raise InputError("noise_scale must be nonnegative")
        return _OraclePredictor(dgp, seed, noise_scale, dict(options or {}))
    if kind == "pure_noise":
        return _NoisePredictor(seed)
    if training_data is None or training_data.n == 0:
        raise InputError(f"predictor {kind!r} requires a nonempty training set")
    if training_data.outcome is None:
        raise InputError("predictor training data must include outcomes")
    X, y = training_data.features, training_data.outcome
    if kind == "forest_lite":
        model = RandomForestRegressor(
            n_estimators=_FOREST_TREES,
            max_depth=_FOREST_DEPTH,
            max_features="sqrt",
            random_state=int(substream(seed, "forest").integers(0, 2**32)),
            n_jobs=1,
        )
    else:
        if training_data.n < _KNN_NEIGHBORS:
            raise InputError(
                f"knn needs at least {_KNN_NEIGHBORS} training rows, got {training_data.n}"
            )
        model = KNeighborsRegressor(n_neighbors=_KNN_NEIGHBORS)
    model.fit(X, y)
    return _ModelPredictor(kind, model)
