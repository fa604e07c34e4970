"""Replicated experiment execution and tidy metric reports.

Each replicate draws fresh data from a seed substream, attaches black-box
predictions to both datasets, and runs the requested methods: ``psps`` is
the full summary-then-combine pipeline, ``classical`` reads the
labeled-outcome block of the same summary, ``imputation`` the
unlabeled-prediction block. Metrics aggregate into a long table
(dgp, method, n_unlabeled, metric, value, mc_se) with deterministic row
order; results are identical across runs and worker counts because every
replicate derives its randomness from its own substream.

The FDR settings report per-level metrics named ``empirical_fdr@q...`` and
``power@q...``; one set of per-replicate statistics serves all levels.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import norm

from ..datatypes import Dataset, EstimationError, InputError, TaskSpec
from ..debias import combine
from ..fdr import (
    bh_select,
    classical_feature_pvalues,
    knockoff_threshold,
    psps_knockoff_statistics,
)
from ..rng import substream
from ..summary import BootstrapPlan, labeled_summary, merge_summaries, unlabeled_summary
from .dgps import DGPS, generate
from .predictors import PREDICTOR_KINDS, fit_predictor

METHODS = ("psps", "classical", "imputation")

_HOLDOUT_N = 10_000
_FULL_SCALE_REPLICATES = 1000
_FDR_DGPS = ("bh_fdr", "knockoff_fdr")
# Tasks without an analytic variance bootstrap every block; the rest get
# analytic variances plus a labeled-only bootstrap for the coupling block.
_FULL_BOOTSTRAP_TASKS = ("quantile", "wilcoxon")
_ANALYTIC_TASKS = ("debiased_lasso",)
_SEED_LIMIT = 2**63


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one experiment.

    ``n_unlabeled`` may be a single size or a sequence; every size is
    evaluated against the same labeled data within each replicate (the
    unlabeled draw of the largest size is prefix-sliced). ``dgp_options``
    passes setting switches through to ``generate`` (the rank-sum setting
    uses ``{"signal": true}`` for the power alternative).
    """

    dgp: str
    n_labeled: int
    n_unlabeled: tuple[int, ...] = (1000,)
    replicates: int = 500
    bootstrap_replicates: int = 200
    alpha: float = 0.05
    q_fdr: float = 0.1
    seed: int = 0
    predictor: str = "forest_lite"
    methods: tuple[str, ...] = METHODS
    dgp_options: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.dgp not in DGPS:
            raise InputError(f"unknown dgp {self.dgp!r}; expected one of {DGPS}")
        if self.n_labeled <= 0:
            raise InputError("n_labeled must be positive")
        ns = self.n_unlabeled
        if isinstance(ns, (int, np.integer)):
            ns = (int(ns),)
        else:
            ns = tuple(int(v) for v in ns)
        if not ns or any(v <= 0 for v in ns):
            raise InputError("n_unlabeled sizes must be positive")
        if len(set(ns)) != len(ns):
            raise InputError("n_unlabeled sizes must be distinct")
        object.__setattr__(self, "n_unlabeled", ns)
        if self.replicates <= 0:
            raise InputError("replicates must be positive")
        if self.bootstrap_replicates <= 0:
            raise InputError("bootstrap_replicates must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise InputError("alpha must lie in (0, 1)")
        if not 0.0 < self.q_fdr < 1.0:
            raise InputError("q_fdr must lie in (0, 1)")
        if self.predictor not in PREDICTOR_KINDS:
            raise InputError(
                f"unknown predictor {self.predictor!r}; expected one of {PREDICTOR_KINDS}"
            )
        methods = tuple(self.methods)
        if not methods:
            raise InputError("methods must be nonempty")
        bad = [m for m in methods if m not in METHODS]
        if bad:
            raise InputError(f"unknown methods {bad}; expected a subset of {METHODS}")
        if len(set(methods)) != len(methods):
            raise InputError("methods contains duplicates")
        object.__setattr__(self, "methods", methods)
        if not isinstance(self.dgp_options, dict):
            raise InputError("dgp_options must be a mapping")

    def to_dict(self) -> dict:
        return {
            "dgp": self.dgp,
            "n_labeled": self.n_labeled,
            "n_unlabeled": list(self.n_unlabeled),
            "replicates": self.replicates,
            "bootstrap_replicates": self.bootstrap_replicates,
            "alpha": self.alpha,
            "q_fdr": self.q_fdr,
            "seed": self.seed,
            "predictor": self.predictor,
            "methods": list(self.methods),
            "dgp_options": dict(self.dgp_options),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise InputError("experiment config must be a mapping")
        known = {
            "dgp",
            "n_labeled",
            "n_unlabeled",
            "replicates",
            "bootstrap_replicates",
            "alpha",
            "q_fdr",
            "seed",
            "predictor",
            "methods",
            "dgp_options",
        }
        extra = set(d) - known
        if extra:
            raise InputError(f"unknown config fields: {sorted(extra)}")
        kwargs = dict(d)
        if "n_unlabeled" in kwargs and isinstance(kwargs["n_unlabeled"], list):
            kwargs["n_unlabeled"] = tuple(kwargs["n_unlabeled"])
        if "methods" in kwargs:
            kwargs["methods"] = tuple(kwargs["methods"])
        return cls(**kwargs)


def load_config(path) -> ExperimentConfig:
    """Read an ExperimentConfig from a JSON file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config file {path}: {exc}") from None
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"config file {path} is not valid JSON: {exc}") from None
    return ExperimentConfig.from_dict(payload)


@dataclass
class ExperimentReport:
    """Aggregated metrics plus provenance of failures.

    ``rows`` is the tidy table (dgp, method, n_unlabeled, metric, value,
    mc_se) in a deterministic order. Coverage and rejection rates carry the
    binomial Monte-Carlo standard error sqrt(v(1-v)/R); other metrics the
    sample standard error.
    """

    config: ExperimentConfig
    rows: list[dict]
    replicate_csv_path: str | None
    failures: int
    failed_replicates: tuple[int, ...]


# ---------------------------------------------------------------------------
# Per-replicate work.
# ---------------------------------------------------------------------------


def _task_table(dgp: str):
    """(metric prefix, task, truth coordinate indices or None for all)."""
    if dgp == "mean_lin_quant":
        return [
            ("mean.", TaskSpec(task="mean"), [0]),
            ("ols.", TaskSpec(task="ols", target_columns=("x1",)), [1]),
            (
                "quantile.",
                TaskSpec(task="quantile", quantile_level=0.75, target_columns=("x1",)),
                [2],
            ),
        ]
    if dgp == "logistic":
        return [("", TaskSpec(task="logistic", target_columns=("x1",)), [0])]
    if dgp == "iv":
        return [("", TaskSpec(task="iv2sls", target_columns=("x1",)), [0])]
    if dgp == "negbin":
        return [("", TaskSpec(task="negbin", target_columns=("x1",)), [0])]
    if dgp == "dlasso":
        return [("", TaskSpec(task="debiased_lasso"), None)]
    if dgp == "wilcoxon":
        return [("", TaskSpec(task="wilcoxon", group_column="x1"), [0])]
    raise InputError(f"dgp {dgp!r} has no single-parameter task table")


def _with_prediction(ds: Dataset, prediction: np.ndarray) -> Dataset:
    return Dataset(
        features=ds.features,
        feature_names=list(ds.feature_names),
        outcome=ds.outcome,
        prediction=prediction,
        column_roles=dict(ds.column_roles),
    )


def _interval_metrics(prefix, est, se, truth, nulls, zcrit, alpha, want_rejection):
    lower = est - zcrit * se
    upper = est + zcrit * se
    cover = float(np.mean((lower <= truth) & (truth <= upper)))
    width = float(np.mean(upper - lower))
    out = [
        (prefix + "coverage", cover, "binomial"),
        (prefix + "ci_width", width, "sample"),
    ]
    if want_rejection:
        if se[0] > 0.0:
            p = 2.0 * norm.sf(abs(est[0] - nulls[0]) / se[0])
        else:
            p = 1.0 if est[0] == nulls[0] else 0.0
        out.append((prefix + "rejection_rate", float(p < alpha), "binomial"))
    return out


def _replicate_seeds(config: ExperimentConfig, r: int, count: int) -> np.ndarray:
    return substream(config.seed, config.dgp, r).integers(0, _SEED_LIMIT, size=count)


def _one_inference_replicate(config: ExperimentConfig, r: int, predictor):
    tasks = _task_table(config.dgp)
    seeds = _replicate_seeds(config, r, 1 + len(tasks))
    max_n = max(config.n_unlabeled)
    try:
        gd = generate(
            config.dgp,
            config.n_labeled,
            int(seeds[0]),
            n_unlabeled=max_n,
            options=config.dgp_options,
        )
        f_lab = predictor.predict(gd.predictor_labeled)
        f_unl = predictor.predict(gd.predictor_unlabeled)
        labeled = _with_prediction(gd.labeled, f_lab)
        want_rejection = config.dgp == "wilcoxon"
        zcrit = float(norm.ppf(1.0 - config.alpha / 2.0))
        records = []
        for t, (prefix, spec, tidx) in enumerate(tasks):
            truth = gd.truth if tidx is None else gd.truth[np.asarray(tidx)]
            # Labeled blocks come from one joint bootstrap so the debiased
            # variance stays nonnegative; the unlabeled side uses the
            # analytic variance when the task has one. The debiased lasso is
            # the exception on both sides: its refits freeze the nodewise
            # matrix and penalty, which biases the bootstrap variance low by
            # about ten percent at n=100, while its analytic sandwich is well
            # calibrated. The per-coordinate weight rule keeps the combined
            # variance positive there without the joint-bootstrap guarantee.
            lab_plan = BootstrapPlan(
                replicates=config.bootstrap_replicates,
                seed=int(seeds[1 + t]),
                full_bootstrap=spec.task not in _ANALYTIC_TASKS,
            )
            unl_plan = BootstrapPlan(
                replicates=config.bootstrap_replicates,
                seed=int(seeds[1 + t]),
                full_bootstrap=spec.task in _FULL_BOOTSTRAP_TASKS,
            )
            lab_part = labeled_summary(spec, labeled, lab_plan)
            nulls = spec.null_vector(lab_part.K)
            classical = None
            if "classical" in config.methods:
                block = lab_part.theta_L
                classical = _interval_metrics(
                    prefix,
                    block.estimate,
                    np.sqrt(np.diag(block.variance)),
                    truth,
                    nulls,
                    zcrit,
                    config.alpha,
                    want_rejection,
                )
            for N in config.n_unlabeled:
                unl = _with_prediction(gd.unlabeled.take(np.arange(N)), f_unl[:N])
                s = merge_summaries([lab_part, unlabeled_summary(spec, unl, unl_plan)])
                for method in config.methods:
                    if method == "psps":
                        res = combine(s, alpha=config.alpha)
                        cover = float(
                            np.mean((res.ci_lower <= truth) & (truth <= res.ci_upper))
                        )
                        width = float(np.mean(res.ci_upper - res.ci_lower))
                        metrics = [
                            (prefix + "coverage", cover, "binomial"),
                            (prefix + "ci_width", width, "sample"),
                        ]
                        if want_rejection:
                            metrics.append(
                                (
                                    prefix + "rejection_rate",
                                    float(res.p_values[0] < config.alpha),
                                    "binomial",
                                )
                            )
                    elif method == "classical":
                        metrics = classical
                    else:
                        block = s.eta_U
                        metrics = _interval_metrics(
                            prefix,
                            block.estimate,
                            np.sqrt(np.diag(block.variance)),
                            truth,
                            nulls,
                            zcrit,
                            config.alpha,
                            want_rejection,
                        )
                    for name, value, kind in metrics:
                        records.append((method, N, name, value, kind))
        return ("ok", r, records)
    except EstimationError as exc:
        return ("fail", r, str(exc))


def _selection_metrics(selected: set, support: np.ndarray, q: float, method: str):
    chosen = np.array(sorted(selected), dtype=int)
    truth = set(support.tolist())
    false = sum(1 for k in chosen if k not in truth)
    fdp = false / max(len(chosen), 1)
    power = sum(1 for k in chosen if k in truth) / max(len(truth), 1)
    tag = f"@q{q:g}"
    return [
        (f"empirical_fdr{tag}", float(fdp), "sample"),
        (f"power{tag}", float(power), "sample"),
    ]


def _one_fdr_replicate(config: ExperimentConfig, r: int, predictor, q_values):
    seeds = _replicate_seeds(config, r, 3)
    N = max(config.n_unlabeled)
    try:
        gd = generate(
            config.dgp,
            config.n_labeled,
            int(seeds[0]),
            n_unlabeled=N,
            options=config.dgp_options,
        )
        f_lab = predictor.predict(gd.predictor_labeled)
        f_unl = predictor.predict(gd.predictor_unlabeled)
        labeled = _with_prediction(gd.labeled, f_lab)
        unlabeled = _with_prediction(gd.unlabeled, f_unl)
        support = np.flatnonzero(gd.truth)
        # Labeled side joint-bootstrapped for a nonnegative debiased
        # variance on all coordinates; unlabeled side analytic.
        plan = BootstrapPlan(
            replicates=config.bootstrap_replicates,
            seed=int(seeds[1]),
            full_bootstrap=False,
        )
        lab_plan = BootstrapPlan(
            replicates=config.bootstrap_replicates,
            seed=int(seeds[1]),
            full_bootstrap=True,
        )
        records = []
        if config.dgp == "bh_fdr":
            spec = TaskSpec(task="ols", target_columns=tuple(labeled.feature_names))
            pvals = {}
            for method in config.methods:
                if method == "psps":
                    s = merge_summaries(
                        [
                            labeled_summary(spec, labeled, lab_plan),
                            unlabeled_summary(spec, unlabeled, plan),
                        ]
                    )
                    pvals["psps_bh"] = combine(s).p_values
                elif method == "classical":
                    pvals["classical_bh"] = classical_feature_pvalues(labeled)[0]
                else:
                    imput = unlabeled.with_outcome(unlabeled.prediction)
                    pvals["imputed_bh"] = classical_feature_pvalues(imput)[0]
            for name, p in pvals.items():
                for q in q_values:
                    ds = bh_select(p, q, method=name)
                    records.extend(
                        (name, N, metric, value, kind)
                        for metric, value, kind in _selection_metrics(
                            ds.selected, support, q, name
                        )
                    )
        else:
            if tuple(config.methods) != ("psps",):
                raise InputError(
                    "knockoff_fdr supports only the psps method; got "
                    f"{list(config.methods)}"
                )
            W = psps_knockoff_statistics(labeled, unlabeled, plan, int(seeds[2]))
            for q in q_values:
                ds = knockoff_threshold(W, q, method="psps_knockoff")
                records.extend(
                    ("psps_knockoff", N, metric, value, kind)
                    for metric, value, kind in _selection_metrics(
                        ds.selected, support, q, "psps_knockoff"
                    )
                )
        return ("ok", r, records)
    except EstimationError as exc:
        return ("fail", r, str(exc))


# ---------------------------------------------------------------------------
# Orchestration and aggregation.
# ---------------------------------------------------------------------------


def _trained_predictor(config: ExperimentConfig):
    rng = substream(config.seed, config.dgp, "holdout")
    hold_seed, fit_seed = (int(v) for v in rng.integers(0, _SEED_LIMIT, size=2))
    training = None
    if config.predictor in ("forest_lite", "knn"):
        gd = generate(
            config.dgp,
            _HOLDOUT_N,
            hold_seed,
            n_unlabeled=1,
            options=config.dgp_options,
        )
        training = Dataset(
            features=gd.predictor_labeled,
            feature_names=list(gd.predictor_names),
            outcome=gd.labeled.outcome,
        )
    return fit_predictor(
        config.predictor,
        training,
        fit_seed,
        dgp=config.dgp,
        options=config.dgp_options,
    )


def _aggregate(config: ExperimentConfig, results, R: int, output_dir):
    failures = [(r, msg) for status, r, msg in results if status == "fail"]
    if len(failures) > 0.05 * R:
        r0, msg = failures[0]
        raise EstimationError(
            f"{len(failures)} of {R} replicates failed (limit 5%); "
            f"first failure at replicate {r0}: {msg}"
        )
    ok = [(r, records) for status, r, records in results if status == "ok"]
    if not ok:
        raise EstimationError("all replicates failed")
    key_order = [(m, n, metric) for m, n, metric, _, _ in ok[0][1]]
    kinds = {(m, n, metric): kind for m, n, metric, _, kind in ok[0][1]}
    table: dict[tuple, list[float]] = {k: [] for k in key_order}
    for r, records in ok:
        keys = [(m, n, metric) for m, n, metric, _, _ in records]
        if keys != key_order:
            raise EstimationError(
                f"replicate {r} produced a different metric set; aggregation aborted"
            )
        for m, n, metric, value, _ in records:
            table[(m, n, metric)].append(float(value))
    rows = []
    for key in key_order:
        method, n, metric = key
        vals = np.array(table[key])
        value = float(np.mean(vals))
        if kinds[key] == "binomial":
            if not 0.0 <= value <= 1.0:
                raise EstimationError(f"rate metric {metric} outside [0, 1]: {value}")
            mc_se = float(np.sqrt(value * (1.0 - value) / len(vals)))
        else:
            mc_se = float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
        rows.append(
            {
                "dgp": config.dgp,
                "method": method,
                "n_unlabeled": int(n),
                "metric": metric,
                "value": value,
                "mc_se": mc_se,
            }
        )
    csv_path = None
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = str(out / f"{config.dgp}_replicates.csv")
        lines = ["replicate,method,n_unlabeled,metric,value"]
        for r, records in ok:
            for m, n, metric, value, _ in records:
                lines.append(f"{r},{m},{n},{metric},{format(float(value), '.17g')}")
        _atomic_write(csv_path, "\n".join(lines) + "\n")
    return ExperimentReport(
        config=config,
        rows=rows,
        replicate_csv_path=csv_path,
        failures=len(failures),
        failed_replicates=tuple(r for r, _ in failures),
    )


def run_experiment(
    config: ExperimentConfig,
    *,
    n_jobs: int = 1,
    output_dir=None,
    full_scale: bool = False,
) -> ExperimentReport:
    """Run all replicates of one experiment and aggregate the metrics.

    ``full_scale`` bumps the replicate count to 1000 regardless of the
    config. Results are deterministic in (config, full_scale) and
    independent of ``n_jobs``. More than 5% failed replicates raise; fewer
    are excluded and counted in the report.
    """
    if config.dgp in _FDR_DGPS:
        return run_fdr_grid(
            config,
            (config.q_fdr,),
            n_jobs=n_jobs,
            output_dir=output_dir,
            full_scale=full_scale,
        )
    R = _FULL_SCALE_REPLICATES if full_scale else config.replicates
    predictor = _trained_predictor(config)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_one_inference_replicate)(config, r, predictor) for r in range(R)
    )
    return _aggregate(config, results, R, output_dir)


def run_fdr_grid(
    config: ExperimentConfig,
    q_values,
    *,
    n_jobs: int = 1,
    output_dir=None,
    full_scale: bool = False,
) -> ExperimentReport:
    """Run an FDR setting once, thresholding at every level in q_values."""
    if config.dgp not in _FDR_DGPS:
        raise InputError(f"dgp {config.dgp!r} is not an FDR setting")
    qs = tuple(float(q) for q in q_values)
    if not qs or any(not 0.0 < q < 1.0 for q in qs):
        raise InputError("q_values must be nonempty with entries in (0, 1)")
    if len(set(qs)) != len(qs):
        raise InputError("q_values contains duplicates")
    R = _FULL_SCALE_REPLICATES if full_scale else config.replicates
    predictor = _trained_predictor(config)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_one_fdr_replicate)(config, r, predictor, qs) for r in range(R)
    )
    return _aggregate(config, results, R, output_dir)


# ---------------------------------------------------------------------------
# Report output.
# ---------------------------------------------------------------------------

_CSV_COLUMNS = ("dgp", "method", "n_unlabeled", "metric", "value", "mc_se")


def report_to_csv(report: ExperimentReport, path) -> None:
    """Write the tidy metric table; row order and float text are stable."""
    lines = [",".join(_CSV_COLUMNS)]
    for row in report.rows:
        lines.append(
            ",".join(
                [
                    row["dgp"],
                    row["method"],
                    str(row["n_unlabeled"]),
                    row["metric"],
                    format(row["value"], ".17g"),
                    format(row["mc_se"], ".17g"),
                ]
            )
        )
    _atomic_write(path, "\n".join(lines) + "\n")


def report_to_json(report: ExperimentReport, path) -> None:
    """Write the JSON summary: config, rows, and failure provenance."""
    payload = {
        "config": report.config.to_dict(),
        "rows": report.rows,
        "replicate_csv_path": report.replicate_csv_path,
        "failures": report.failures,
        "failed_replicates": list(report.failed_replicates),
    }
    _atomic_write(path, json.dumps(payload, indent=2) + "\n")


def _atomic_write(path, text: str) -> None:
    # Temp-then-rename so a failed run never leaves a partial report.
    p = Path(path)
    tmp = p.with_name(f".{p.name}.{os.getpid()}.tmp")
    try:
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, p)
    except OSError as exc:
        try:
            tmp.unlink()
        except OSError:
            pass
        raise InputError(f"cannot write report to {path}: {exc}") from None


def plot_data(report: ExperimentReport) -> list[dict]:
    """The tidy rows as plain dictionaries for external plotting."""
    return [dict(row) for row in report.rows]
