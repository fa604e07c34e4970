"""Desk-scale simulation lab: data generators, stand-in predictors, and
replicated experiment execution with tidy metric reports."""

from .dgps import (
    DGPS,
    GeneratedData,
    calibration,
    conditional_mean,
    frozen_truths,
    generate,
)
from .predictors import PREDICTOR_KINDS, fit_predictor
from .runner import (
    METHODS,
    ExperimentConfig,
    ExperimentReport,
    load_config,
    plot_data,
    report_to_csv,
    report_to_json,
    run_experiment,
    run_fdr_grid,
)

__all__ = [
    "DGPS",
    "GeneratedData",
    "calibration",
    "conditional_mean",
    "frozen_truths",
    "generate",
    "PREDICTOR_KINDS",
    "fit_predictor",
    "METHODS",
    "ExperimentConfig",
    "ExperimentReport",
    "load_config",
    "plot_data",
    "report_to_csv",
    "report_to_json",
    "run_experiment",
    "run_fdr_grid",
]
