"""Command-line front end for the summary-statistics inference pipeline.

Subcommands mirror the federated workflow: ``summarize`` runs at a data
center and emits interchange JSON (complete, or partial when the center
holds only one side), ``combine`` merges summary files and produces the
debiased result, ``infer`` does both in one process, ``sensitivity``
screens a summary for labeled/unlabeled distribution shift, ``fdr`` runs
the selection pipelines, and ``simulate`` executes an experiment config.

Exit codes: 0 on success, 2 for usage or input problems, 3 for numerical
or statistical failures, so scripts can tell user error from degenerate
data. Output files are written atomically (temp file plus rename) after
all computation succeeds; a nonzero exit leaves no partial outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .datatypes import Dataset, EstimationError, InputError, TaskSpec
from .debias import PspsResult, combine, combine_dependent, sensitivity_test
from .fdr import discovery_to_csv, psps_bh, psps_knockoff
from .simlab import load_config, report_to_csv, report_to_json, run_experiment
from .summary import (
    BootstrapPlan,
    SummaryStatistics,
    compute_summary,
    labeled_summary,
    merge_summaries,
    parse_summary,
    serialize_summary,
    unlabeled_summary,
)

_FLOAT_FMT = ".17g"


# ---------------------------------------------------------------------------
# File plumbing.
# ---------------------------------------------------------------------------


def _write_all(outputs: dict) -> None:
    """Write every path -> text pair; all temps land before any rename."""
    temps = []
    try:
        for path, text in outputs.items():
            p = Path(path)
            if p.parent and not p.parent.exists():
                p.parent.mkdir(parents=True, exist_ok=True)
            tmp = p.with_name(f".{p.name}.{os.getpid()}.tmp")
            tmp.write_text(text, encoding="utf-8")
            temps.append((tmp, p))
        for tmp, p in temps:
            os.replace(tmp, p)
    except OSError as exc:
        for tmp, _ in temps:
            try:
                tmp.unlink()
            except OSError:
                pass
        raise InputError(f"cannot write output: {exc}") from None


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None


def _split_columns(value: str | None) -> list[str]:
    if not value:
        return []
    names = [c.strip() for c in value.split(",")]
    if any(not c for c in names):
        raise InputError(f"empty column name in list {value!r}")
    return names


def _load_csv(path) -> tuple[list[str], np.ndarray]:
    text = _read_text(path)
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise InputError(f"{path} is empty")
    header = [c.strip() for c in rows[0]]
    if len(set(header)) != len(header):
        raise InputError(f"{path} has duplicate column names")
    body = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise InputError(
                f"{path} line {i}: expected {len(header)} cells, got {len(row)}"
            )
        for j, cell in enumerate(row):
            try:
                body[i - 2, j] = float(cell)
            except ValueError:
                raise InputError(
                    f"{path} line {i}, column {header[j]!r}: "
                    f"cannot parse {cell.strip()!r} as a number"
                ) from None
    if body.shape[0] == 0:
        raise InputError(f"{path} has a header but no data rows")
    return header, body


def _dataset_from_csv(path, args, *, with_outcome: bool) -> Dataset:
    header, body = _load_csv(path)
    cols = {name: body[:, j] for j, name in enumerate(header)}

    def take(name, flag):
        if name not in cols:
            raise InputError(f"{path} has no column {name!r} (from {flag})")
        return cols.pop(name)

    outcome = None
    if with_outcome:
        if not args.outcome:
            raise InputError("--outcome is required for labeled data")
        outcome = take(args.outcome, "--outcome")
    prediction = None
    if args.prediction:
        prediction = take(args.prediction, "--prediction")
    weights = take(args.weights, "--weights") if getattr(args, "weights", None) else None
    roles = {}
    for flag, role in (
        ("instruments", "instrument"),
        ("endogenous", "endogenous"),
    ):
        for name in _split_columns(getattr(args, flag, None)):
            roles[name] = role
    if getattr(args, "group_column", None):
        roles[args.group_column] = "group-indicator"
    wanted = _split_columns(getattr(args, "features", None)) or list(cols)
    missing = [c for c in wanted if c not in cols]
    if missing:
        raise InputError(f"{path} has no column {missing[0]!r} (from --features)")
    features = np.column_stack([cols[c] for c in wanted])
    return Dataset(
        features=features,
        feature_names=wanted,
        outcome=outcome,
        prediction=prediction,
        weights=weights,
        column_roles={k: v for k, v in roles.items() if k in wanted},
    )


def _task_from_args(args) -> TaskSpec:
    penalty = args.penalty
    if penalty is not None and penalty != "auto":
        try:
            penalty = float(penalty)
        except ValueError:
            raise InputError(f"--penalty must be a number or 'auto', got {penalty!r}") from None
    dispersion = args.dispersion
    if dispersion is not None and dispersion != "estimate":
        try:
            dispersion = float(dispersion)
        except ValueError:
            raise InputError(
                f"--dispersion must be a number or 'estimate', got {dispersion!r}"
            ) from None
    kwargs = {}
    if penalty is not None:
        kwargs["penalty"] = penalty
    if dispersion is not None:
        kwargs["dispersion"] = dispersion
    if args.quantile_level is not None:
        kwargs["quantile_level"] = args.quantile_level
    if args.group_column:
        kwargs["group_column"] = args.group_column
    targets = _split_columns(args.target_columns)
    if targets:
        kwargs["target_columns"] = tuple(targets)
    return TaskSpec(task=args.task, intercept=not args.no_intercept, **kwargs)


def _plan_from_args(args) -> BootstrapPlan:
    return BootstrapPlan(
        replicates=args.bootstrap_replicates,
        seed=args.seed,
        full_bootstrap=not args.analytic_variance,
    )


# ---------------------------------------------------------------------------
# Result rendering.
# ---------------------------------------------------------------------------

_RESULT_COLUMNS = (
    "label",
    "estimate",
    "se",
    "ci_lower",
    "ci_upper",
    "p_value",
    "variance_reduction",
)


def _result_csv(res: PspsResult) -> str:
    lines = [",".join(_RESULT_COLUMNS)]
    for k, label in enumerate(res.labels):
        lines.append(
            ",".join(
                [label]
                + [
                    format(float(v), _FLOAT_FMT)
                    for v in (
                        res.estimate[k],
                        res.std_error[k],
                        res.ci_lower[k],
                        res.ci_upper[k],
                        res.p_values[k],
                        res.variance_reduction[k],
                    )
                ]
            )
        )
    return "\n".join(lines) + "\n"


def _result_json(res: PspsResult) -> str:
    obj = {
        "alpha": res.alpha,
        "labels": list(res.labels),
        "estimate": [float(v) for v in res.estimate],
        "std_error": [float(v) for v in res.std_error],
        "ci_lower": [float(v) for v in res.ci_lower],
        "ci_upper": [float(v) for v in res.ci_upper],
        "p_values": [float(v) for v in res.p_values],
        "null_values": [float(v) for v in res.null_values],
        "variance_reduction": [float(v) for v in res.variance_reduction],
        "weight": [[float(v) for v in row] for row in res.weight],
        "variance": [[float(v) for v in row] for row in res.variance],
    }
    if res.ridge_perturbation is not None:
        obj["ridge_perturbation"] = float(res.ridge_perturbation)
    return json.dumps(obj, indent=2) + "\n"


def _baseline_table(labels, est, var, alpha) -> str:
    from scipy.stats import norm

    z = float(norm.ppf(1.0 - alpha / 2.0))
    se = np.sqrt(np.clip(np.diag(var), 0.0, None))
    lines = ["label,estimate,se,ci_lower,ci_upper"]
    for k, label in enumerate(labels):
        vals = (est[k], se[k], est[k] - z * se[k], est[k] + z * se[k])
        lines.append(",".join([label] + [format(float(v), _FLOAT_FMT) for v in vals]))
    return "\n".join(lines) + "\n"


def _rendered_result(res: PspsResult, out: str, fmt: str) -> dict:
    return {out: _result_csv(res) if fmt == "csv" else _result_json(res)}


def _run_combined(s: SummaryStatistics, args) -> PspsResult:
    nulls = None
    if getattr(args, "null", None):
        nulls = [float(v) for v in args.null.split(",")]
    if s.extra_blocks:
        return combine_dependent(s, alpha=args.alpha, null_values=nulls, ridge=args.ridge)
    return combine(s, alpha=args.alpha, null_values=nulls, ridge=args.ridge)


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------


def _cmd_summarize(args) -> int:
    spec = _task_from_args(args)
    plan = _plan_from_args(args)
    if args.side == "unlabeled":
        if args.unlabeled:
            raise InputError("--unlabeled conflicts with --side unlabeled")
        data = _dataset_from_csv(args.data, args, with_outcome=False)
        if data.prediction is None:
            raise InputError("--prediction is required")
        s = unlabeled_summary(spec, data, plan)
    else:
        labeled = _dataset_from_csv(args.data, args, with_outcome=True)
        if labeled.prediction is None:
            raise InputError("--prediction is required")
        if args.unlabeled:
            unlabeled = _dataset_from_csv(args.unlabeled, args, with_outcome=False)
            s = compute_summary(spec, labeled, unlabeled, plan)
        else:
            s = labeled_summary(spec, labeled, plan)
    _write_all({args.out: serialize_summary(s)})
    return 0


def _cmd_combine(args) -> int:
    parts = [parse_summary(_read_text(path)) for path in args.summaries]
    s = merge_summaries(parts)
    res = _run_combined(s, args)
    _write_all(_rendered_result(res, args.out, args.format))
    return 0


def _cmd_infer(args) -> int:
    spec = _task_from_args(args)
    plan = _plan_from_args(args)
    labeled = _dataset_from_csv(args.labeled, args, with_outcome=True)
    if labeled.prediction is None:
        raise InputError("--prediction is required")
    unlabeled = _dataset_from_csv(args.unlabeled, args, with_outcome=False)
    s = compute_summary(spec, labeled, unlabeled, plan)
    res = _run_combined(s, args)
    outputs = _rendered_result(res, args.out, args.format)
    if args.baselines:
        base = Path(args.out)
        for name, block in (("classical", s.theta_L), ("imputation", s.eta_U)):
            path = base.with_name(f"{base.stem}.{name}{base.suffix or '.csv'}")
            outputs[str(path)] = _baseline_table(
                s.labels, block.estimate, block.variance, args.alpha
            )
    _write_all(outputs)
    return 0


def _cmd_sensitivity(args) -> int:
    s = parse_summary(_read_text(args.summary))
    r = sensitivity_test(s, threshold=args.threshold)
    # The threshold lives in the header so the table is self-describing.
    header = f"label,z,p,flagged_p_below_{format(args.threshold, 'g')}"
    lines = [header]
    for k, label in enumerate(r.labels):
        lines.append(
            ",".join(
                [
                    label,
                    format(float(r.z_scores[k]), _FLOAT_FMT),
                    format(float(r.p_values[k]), _FLOAT_FMT),
                    str(bool(r.flagged[k])).lower(),
                ]
            )
        )
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        _write_all({args.out: text})
    return 0


def _cmd_fdr(args) -> int:
    labeled = _dataset_from_csv(args.labeled, args, with_outcome=True)
    if labeled.prediction is None:
        raise InputError("--prediction is required")
    unlabeled = _dataset_from_csv(args.unlabeled, args, with_outcome=False)
    plan = _plan_from_args(args)
    if args.method == "bh":
        ds = psps_bh(labeled, unlabeled, plan, args.q)
    else:
        ds = psps_knockoff(labeled, unlabeled, plan, args.q, args.seed, plus=args.plus)
    _write_all({args.out: discovery_to_csv(ds)})
    return 0


def _cmd_simulate(args) -> int:
    config = load_config(args.config)
    if args.replicates is not None:
        config = replace(config, replicates=args.replicates)
    out_dir = Path(args.out_dir)
    report = run_experiment(
        config,
        n_jobs=args.jobs,
        output_dir=str(out_dir),
        full_scale=args.full_scale,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    report_to_csv(report, out_dir / "report.csv")
    report_to_json(report, out_dir / "report.json")
    return 0


# ---------------------------------------------------------------------------
# Parser assembly.
# ---------------------------------------------------------------------------


def _add_task_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", required=True, help="analysis task name")
    p.add_argument("--outcome", help="outcome column name")
    p.add_argument("--prediction", help="prediction column name")
    p.add_argument("--features", help="comma-separated feature columns (default: all others)")
    p.add_argument("--weights", help="observation-weight column")
    p.add_argument("--instruments", help="comma-separated instrument columns")
    p.add_argument("--endogenous", help="comma-separated endogenous columns")
    p.add_argument("--group-column", help="group indicator column (rank tests)")
    p.add_argument("--target-columns", help="comma-separated reported coordinates")
    p.add_argument("--quantile-level", type=float, help="quantile level in (0,1)")
    p.add_argument("--penalty", help="lasso penalty value or 'auto'")
    p.add_argument("--dispersion", help="dispersion value or 'estimate'")
    p.add_argument("--no-intercept", action="store_true", help="drop the intercept column")


def _add_plan_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bootstrap-replicates", "-Q", type=int, default=200, metavar="Q")
    p.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    p.add_argument(
        "--analytic-variance",
        action="store_true",
        help="use analytic variance blocks; bootstrap only the coupling block",
    )


def _add_inference_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=0.05, help="two-sided level")
    p.add_argument("--null", help="comma-separated null values per coordinate")
    p.add_argument("--ridge", action="store_true", help="regularize a singular combiner")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psps",
        description="Summary-statistics pipeline for ML-assisted inference",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("summarize", help="emit summary statistics from a data center")
    p.add_argument("data", help="CSV file for this center")
    p.add_argument("--side", choices=("labeled", "unlabeled"), default="labeled")
    p.add_argument("--unlabeled", help="unlabeled CSV for a complete one-process summary")
    _add_task_flags(p)
    _add_plan_flags(p)
    p.add_argument("--out", required=True, help="summary JSON path")
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("combine", help="merge summary files and debias")
    p.add_argument("summaries", nargs="+", help="summary JSON files")
    _add_inference_flags(p)
    p.add_argument("--out", required=True, help="result table path")
    p.set_defaults(func=_cmd_combine)

    p = sub.add_parser("infer", help="summarize and combine in one process")
    p.add_argument("--labeled", required=True, help="labeled CSV")
    p.add_argument("--unlabeled", required=True, help="unlabeled CSV")
    _add_task_flags(p)
    _add_plan_flags(p)
    _add_inference_flags(p)
    p.add_argument(
        "--baselines",
        action="store_true",
        help="also write classical and imputation baseline tables",
    )
    p.add_argument("--out", required=True, help="result table path")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("sensitivity", help="screen a summary for distribution shift")
    p.add_argument("summary", help="summary JSON file")
    p.add_argument("--threshold", type=float, default=0.1, help="flagging p cutoff")
    p.add_argument("--out", help="also write the table to this path")
    p.set_defaults(func=_cmd_sensitivity)

    p = sub.add_parser("fdr", help="run a selection pipeline")
    p.add_argument("--labeled", required=True, help="labeled CSV")
    p.add_argument("--unlabeled", required=True, help="unlabeled CSV")
    p.add_argument("--method", choices=("bh", "knockoff"), required=True)
    p.add_argument("--q", type=float, required=True, help="target FDR level")
    p.add_argument("--plus", action="store_true", help="knockoff+ offset")
    p.add_argument("--outcome", help="outcome column name")
    p.add_argument("--prediction", help="prediction column name")
    p.add_argument("--features", help="comma-separated feature columns")
    p.add_argument("--weights", help=argparse.SUPPRESS)
    _add_plan_flags(p)
    p.add_argument("--out", required=True, help="discovery CSV path")
    p.set_defaults(func=_cmd_fdr)

    p = sub.add_parser("simulate", help="run an experiment config")
    p.add_argument("config", help="experiment config JSON")
    p.add_argument("--out-dir", required=True, help="report output directory")
    p.add_argument("--replicates", type=int, help="override the replicate count")
    p.add_argument(
        "--full-scale", action="store_true", help="run 1000 replicates regardless"
    )
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=_cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
