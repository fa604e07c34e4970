"""Synthetic data-generating processes for the experiment suite.

Eight settings share a common shape: an analysis dataset holding only the
columns the estimator consumes, a wider set of predictor inputs for the
black-box model, and a documented truth vector. Calibration constants (the
81% variance-share coefficient, noise scales for unit outcome variance, the
logistic threshold) are solved once per setting by a moment match on a
10^6-sample pilot drawn from a fixed dedicated seed, then cached. Truths
without a closed form are read from a frozen fixture produced by a large
Monte-Carlo oracle (see scripts/compute_truths.py).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.linalg import cholesky, toeplitz

from ..datatypes import Dataset, InputError
from ..rng import substream

DGPS = (
    "mean_lin_quant",
    "logistic",
    "iv",
    "negbin",
    "dlasso",
    "wilcoxon",
    "bh_fdr",
    "knockoff_fdr",
)

# Default unlabeled sizes (the smallest grid point of each setting).
DEFAULT_UNLABELED = {
    "mean_lin_quant": 1000,
    "logistic": 1000,
    "iv": 1000,
    "negbin": 1000,
    "dlasso": 1500,
    "wilcoxon": 1000,
    "bh_fdr": 5000,
    "knockoff_fdr": 1000,
}

_PILOT_SAMPLES = 1_000_000
_PILOT_SEED = 340_417  # dedicated to calibration; never used for experiment data
_SLOPE = np.sqrt(0.08)
_NEGBIN_SLOPE = np.sqrt(0.3)
_NEGBIN_DISPERSION = 2.0
_WILCOXON_SIGNAL = np.sqrt(0.01)
_FDR_K = 150
_FDR_SIGNALS = 15
_FDR_CORR = 0.25
_TRUTHS_FILE = Path(__file__).with_name("truths.json")


@dataclass
class GeneratedData:
    """One replicate of a setting.

    ``labeled``/``unlabeled`` hold only analysis columns (the unlabeled part
    has no outcome). The predictor input matrices are wider: the black-box
    model sees covariates the analysis deliberately omits.
    """

    labeled: Dataset
    unlabeled: Dataset
    truth: np.ndarray
    predictor_labeled: np.ndarray
    predictor_unlabeled: np.ndarray
    predictor_names: list[str]


def _check_dgp(dgp: str) -> None:
    if dgp not in DGPS:
        raise InputError(f"unknown dgp {dgp!r}; expected one of {DGPS}")


@lru_cache(maxsize=None)
def frozen_truths() -> dict[str, float]:
    """Monte-Carlo oracle truths from the versioned fixture file."""
    if not _TRUTHS_FILE.exists():
        raise InputError(
            f"truth fixture {_TRUTHS_FILE} is missing; "
            "run scripts/compute_truths.py to regenerate it"
        )
    payload = json.loads(_TRUTHS_FILE.read_text())
    if payload.get("version") != 1:
        raise InputError(f"unsupported truth fixture version {payload.get('version')!r}")
    return {k: float(v) for k, v in payload["values"].items()}


@lru_cache(maxsize=None)
def calibration(dgp: str) -> dict[str, float]:
    """Pilot-calibrated constants for one setting.

    The pilot stream is fixed and separate from all experiment seeds, so the
    constants are reproducible and shared by every replicate.
    """
    _check_dgp(dgp)
    rng = substream(_PILOT_SEED, "pilot", dgp)
    m = _PILOT_SAMPLES
    if dgp in ("mean_lin_quant", "logistic"):
        x1 = rng.normal(size=m)
        x2 = rng.normal(size=m)
        eps = rng.normal(size=m)
        base = x2 + x1**2 + x2**2
        beta2 = float(np.sqrt(0.81 / np.var(base)))
        tau = float(np.sqrt(1.0 - np.var(_SLOPE * x1 + beta2 * base)))
        out = {"beta2": beta2, "tau_eps": tau}
        if dgp == "logistic":
            ytilde = _SLOPE * x1 + beta2 * base + tau * eps
            out["threshold"] = float(np.median(ytilde))
        return out
    if dgp == "iv":
        z = rng.normal(size=m)
        delta = rng.normal(size=m, scale=np.sqrt(0.84))
        eps = rng.normal(size=m)
        x1 = 0.4 * z + delta
        tau_eps = float(np.sqrt((1.0 - 0.08 * np.var(x1)) / np.var(eps)))
        y = _SLOPE * x1 + tau_eps * eps
        tau_gamma = float(np.sqrt(1.0 - np.var(0.3 * z + 0.8 * y)))
        return {"tau_eps": tau_eps, "tau_gamma": tau_gamma}
    if dgp == "negbin":
        return {"dispersion": _NEGBIN_DISPERSION}
    if dgp == "dlasso":
        theta = _dlasso_theta()
        signal = rng.normal(size=(m, _FDR_SIGNALS)) @ theta[:_FDR_SIGNALS]
        return {"tau_eps": float(np.sqrt(1.0 - np.var(signal)))}
    if dgp == "wilcoxon":
        x1 = rng.binomial(1, 0.5, size=m).astype(np.float64)
        x2 = rng.normal(size=m)
        base = x2 + x2**2
        beta2 = float(np.sqrt(0.81 / np.var(base)))
        explained = np.var(beta2 * base)
        return {
            "beta2": beta2,
            "tau_eps_null": float(np.sqrt(1.0 - explained)),
            "tau_eps_signal": float(
                np.sqrt(1.0 - np.var(_WILCOXON_SIGNAL * x1 + beta2 * base))
            ),
        }
    # bh_fdr / knockoff_fdr: the outcome noise depends on the realized signal
    # support, so it is solved per replicate from the exact Toeplitz quadratic
    # form instead of a pilot (knockoff's unit-variance constraint is
    # infeasible at effect 0.5 and falls back to unit noise).
    return {"tau_gamma": 1.0, "theta": 0.15}


def _dlasso_theta() -> np.ndarray:
    theta = np.zeros(200)
    theta[:15] = 0.9 / np.sqrt(15.0)
    return theta


@lru_cache(maxsize=None)
def _fdr_cov():
    Sigma = toeplitz(_FDR_CORR ** np.arange(_FDR_K))
    return Sigma, cholesky(Sigma, lower=True)


def _iv_projection() -> tuple[float, float]:
    """Coefficients of the population regression of Y on (X1, X2)."""
    b1 = _SLOPE
    cy1 = b1
    cy2 = 0.3 * (0.4 * b1) + 0.8
    c12 = 0.12 + 0.8 * b1
    sol = np.linalg.solve(np.array([[1.0, c12], [c12, 1.0]]), np.array([cy1, cy2]))
    return float(sol[0]), float(sol[1])


def conditional_mean(dgp: str, features: np.ndarray, options: dict | None = None):
    """True E[Y | predictor inputs] for the oracle predictor.

    Not defined for the FDR settings, whose conditional mean depends on the
    signal support drawn inside each replicate.
    """
    _check_dgp(dgp)
    X = np.asarray(features, dtype=np.float64)
    opts = options or {}
    if dgp in ("mean_lin_quant", "logistic"):
        c = calibration(dgp)
        m = _SLOPE * X[:, 0] + c["beta2"] * (X[:, 1] + X[:, 0] ** 2 + X[:, 1] ** 2)
        if dgp == "mean_lin_quant":
            return m
        from scipy.stats import norm

        return norm.cdf((m - c["threshold"]) / c["tau_eps"])
    if dgp == "iv":
        a, b = _iv_projection()
        return a * X[:, 0] + b * X[:, 1]
    if dgp == "negbin":
        return np.exp(_NEGBIN_SLOPE * X[:, 0] + 0.8 * X[:, 1])
    if dgp == "dlasso":
        return X @ _dlasso_theta()
    if dgp == "wilcoxon":
        c = calibration(dgp)
        b1 = _WILCOXON_SIGNAL if opts.get("signal", False) else 0.0
        return b1 * X[:, 0] + c["beta2"] * (X[:, 1] + X[:, 1] ** 2)
    raise InputError(
        f"conditional mean is not defined for dgp {dgp!r}: "
        "the signal support is drawn per replicate"
    )


def _names(prefix: str, k: int) -> list[str]:
    return [f"{prefix}{j + 1}" for j in range(k)]


def generate(
    dgp: str,
    n: int,
    seed: int,
    *,
    n_unlabeled: int | None = None,
    options: dict | None = None,
) -> GeneratedData:
    """Draw one labeled/unlabeled replicate of a setting.

    Parameters
    ----------
    dgp : str
        Setting name, one of ``DGPS``.
    n : int
        Labeled sample size.
    seed : int
        Replicate seed; all draws come from substreams of it.
    n_unlabeled : int, optional
        Unlabeled sample size (per-setting default when omitted).
    options : dict, optional
        Setting-specific switches. ``wilcoxon`` accepts ``signal`` (bool,
        default False): False gives the null effect, True the power effect.
    """
    _check_dgp(dgp)
    if n <= 0:
        raise InputError("labeled sample size must be positive")
    N = DEFAULT_UNLABELED[dgp] if n_unlabeled is None else int(n_unlabeled)
    if N <= 0:
        raise InputError("unlabeled sample size must be positive")
    opts = dict(options or {})
    rng = substream(seed, "data", dgp)
    if dgp in ("mean_lin_quant", "logistic"):
        return _gen_quadratic(dgp, n, N, rng)
    if dgp == "iv":
        return _gen_iv(n, N, rng)
    if dgp == "negbin":
        return _gen_negbin(n, N, rng)
    if dgp == "dlasso":
        return _gen_dlasso(n, N, rng)
    if dgp == "wilcoxon":
        return _gen_wilcoxon(n, N, rng, bool(opts.pop("signal", False)))
    gd = _gen_fdr(dgp, n, N, rng)
    if opts:
        raise InputError(f"unknown options for dgp {dgp!r}: {sorted(opts)}")
    return gd


def _gen_quadratic(dgp: str, n: int, N: int, rng) -> GeneratedData:
    c = calibration(dgp)

    def draw(m):
        x1 = rng.normal(size=m)
        x2 = rng.normal(size=m)
        ytilde = (
            _SLOPE * x1
            + c["beta2"] * (x2 + x1**2 + x2**2)
            + c["tau_eps"] * rng.normal(size=m)
        )
        if dgp == "logistic":
            y = (ytilde > c["threshold"]).astype(np.float64)
        else:
            y = ytilde
        return x1, x2, y

    x1, x2, y = draw(n)
    x1u, x2u, _ = draw(N)
    if dgp == "logistic":
        truth = np.array([frozen_truths()["logistic_slope"]])
    else:
        truth = np.array(
            [2.0 * c["beta2"], _SLOPE, frozen_truths()["quantile_slope"]]
        )
    return GeneratedData(
        labeled=Dataset(features=x1[:, None], feature_names=["x1"], outcome=y),
        unlabeled=Dataset(features=x1u[:, None], feature_names=["x1"]),
        truth=truth,
        predictor_labeled=np.column_stack([x1, x2]),
        predictor_unlabeled=np.column_stack([x1u, x2u]),
        predictor_names=["x1", "x2"],
    )


def _gen_iv(n: int, N: int, rng) -> GeneratedData:
    c = calibration("iv")

    def draw(m):
        z = rng.normal(size=m)
        x1 = 0.4 * z + rng.normal(size=m, scale=np.sqrt(0.84))
        y = _SLOPE * x1 + c["tau_eps"] * rng.normal(size=m)
        x2 = 0.3 * z + 0.8 * y + c["tau_gamma"] * rng.normal(size=m)
        return z, x1, x2, y

    z, x1, x2, y = draw(n)
    zu, x1u, x2u, _ = draw(N)
    roles = {"x1": "endogenous", "z": "instrument"}
    return GeneratedData(
        labeled=Dataset(
            features=np.column_stack([x1, z]),
            feature_names=["x1", "z"],
            outcome=y,
            column_roles=roles,
        ),
        unlabeled=Dataset(
            features=np.column_stack([x1u, zu]),
            feature_names=["x1", "z"],
            column_roles=roles,
        ),
        truth=np.array([_SLOPE]),
        predictor_labeled=np.column_stack([x1, x2]),
        predictor_unlabeled=np.column_stack([x1u, x2u]),
        predictor_names=["x1", "x2"],
    )


def _gen_negbin(n: int, N: int, rng) -> GeneratedData:
    s = _NEGBIN_DISPERSION

    def draw(m):
        x1 = rng.normal(size=m)
        x2 = rng.normal(size=m)
        mu = np.exp(_NEGBIN_SLOPE * x1 + 0.8 * x2)
        y = rng.poisson(rng.gamma(s, mu / s)).astype(np.float64)
        return x1, x2, y

    x1, x2, y = draw(n)
    x1u, x2u, _ = draw(N)
    return GeneratedData(
        labeled=Dataset(features=x1[:, None], feature_names=["x1"], outcome=y),
        unlabeled=Dataset(features=x1u[:, None], feature_names=["x1"]),
        truth=np.array([frozen_truths()["negbin_slope"]]),
        predictor_labeled=np.column_stack([x1, x2]),
        predictor_unlabeled=np.column_stack([x1u, x2u]),
        predictor_names=["x1", "x2"],
    )


def _gen_dlasso(n: int, N: int, rng) -> GeneratedData:
    c = calibration("dlasso")
    theta = _dlasso_theta()
    names = _names("x", 200)

    def draw(m):
        X = rng.normal(size=(m, 200))
        y = X @ theta + c["tau_eps"] * rng.normal(size=m)
        return X, y

    X, y = draw(n)
    Xu, _ = draw(N)
    return GeneratedData(
        labeled=Dataset(features=X, feature_names=names, outcome=y),
        unlabeled=Dataset(features=Xu, feature_names=list(names)),
        truth=theta.copy(),
        predictor_labeled=X,
        predictor_unlabeled=Xu,
        predictor_names=list(names),
    )


def _gen_wilcoxon(n: int, N: int, rng, signal: bool) -> GeneratedData:
    c = calibration("wilcoxon")
    b1 = _WILCOXON_SIGNAL if signal else 0.0
    tau = c["tau_eps_signal"] if signal else c["tau_eps_null"]

    def draw(m):
        x1 = rng.binomial(1, 0.5, size=m).astype(np.float64)
        x2 = rng.normal(size=m)
        y = b1 * x1 + c["beta2"] * (x2 + x2**2) + tau * rng.normal(size=m)
        return x1, x2, y

    x1, x2, y = draw(n)
    x1u, x2u, _ = draw(N)
    truth = frozen_truths()["wilcoxon_effect_signal"] if signal else 0.5
    roles = {"x1": "group-indicator"}
    return GeneratedData(
        labeled=Dataset(
            features=x1[:, None], feature_names=["x1"], outcome=y, column_roles=roles
        ),
        unlabeled=Dataset(features=x1u[:, None], feature_names=["x1"], column_roles=roles),
        truth=np.array([truth]),
        predictor_labeled=np.column_stack([x1, x2]),
        predictor_unlabeled=np.column_stack([x1u, x2u]),
        predictor_names=["x1", "x2"],
    )


def _gen_fdr(dgp: str, n: int, N: int, rng) -> GeneratedData:
    c = calibration(dgp)
    Sigma, L = _fdr_cov()
    effect = 0.15 if dgp == "bh_fdr" else 0.5
    support = np.sort(rng.choice(_FDR_K, size=_FDR_SIGNALS, replace=False))
    beta = np.zeros(_FDR_K)
    beta[support] = effect
    explained = float(beta @ Sigma @ beta)
    # Unit outcome variance where feasible; the 0.5-effect setting exceeds it
    # and runs with unit noise instead.
    tau_eps = np.sqrt(1.0 - explained) if explained < 1.0 else 1.0
    theta = np.full(_FDR_K, c["theta"])
    names = _names("x", _FDR_K)

    def draw(m):
        X = rng.normal(size=(m, _FDR_K)) @ L.T
        y = X @ beta + tau_eps * rng.normal(size=m)
        z = 0.9 * y + X @ theta + c["tau_gamma"] * rng.normal(size=m)
        return X, y, z

    X, y, z = draw(n)
    Xu, _, zu = draw(N)
    return GeneratedData(
        labeled=Dataset(features=X, feature_names=names, outcome=y),
        unlabeled=Dataset(features=Xu, feature_names=list(names)),
        truth=beta,
        predictor_labeled=z[:, None],
        predictor_unlabeled=zu[:, None],
        predictor_names=["z"],
    )
