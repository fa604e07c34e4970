#!/usr/bin/env python3
"""Run the coverage and width panel across all inference settings.

For each bundled config this runs the full replicate loop, writes the
tidy report files under the output directory, and prints a one-line
digest per method with coverage, mean width, and the Monte Carlo band.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from psps.simlab import load_config, report_to_csv, report_to_json, run_experiment

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
PANEL = (
    "mean_lin_quant",
    "logistic",
    "iv",
    "negbin",
    "dlasso",
    "wilcoxon_null",
    "wilcoxon_signal",
)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="panel_out", help="report directory")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes")
    ap.add_argument("--replicates", type=int, help="override replicate count")
    ap.add_argument(
        "--full-scale", action="store_true", help="run 1000 replicates regardless"
    )
    ap.add_argument(
        "--configs",
        nargs="+",
        default=list(PANEL),
        choices=list(PANEL),
        help="subset of panel configs to run",
    )
    args = ap.parse_args(argv)

    out_root = Path(args.out_dir)
    for name in args.configs:
        config = load_config(CONFIG_DIR / f"{name}.json")
        if args.replicates is not None:
            config = replace(config, replicates=args.replicates)
        t0 = time.perf_counter()
        out_dir = out_root / name
        out_dir.mkdir(parents=True, exist_ok=True)
        report = run_experiment(
            config,
            n_jobs=args.jobs,
            output_dir=str(out_dir),
            full_scale=args.full_scale,
        )
        report_to_csv(report, out_dir / "report.csv")
        report_to_json(report, out_dir / "report.json")
        dt = time.perf_counter() - t0
        print(f"[{name}] {dt:.1f}s, {report.failures} failed replicates")
        for row in report.rows:
            metric = row["metric"]
            if metric.endswith(("coverage", "ci_width", "rejection_rate")):
                print(
                    f"  {row['method']:>11s} N={row['n_unlabeled']:>6d} "
                    f"{metric:<22s} {row['value']:.4f} (mc_se {row['mc_se']:.4f})"
                )
    return 0


if __name__ == "__main__":
    sys.exit(main())
