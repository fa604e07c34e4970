"""Prediction-powered inference driven by summary statistics.

The package estimates a K-vector of task parameters three ways (labeled
outcomes, predictions on the labeled rows, predictions on the unlabeled
rows), couples them through a paired bootstrap, and combines the pieces into
a debiased, variance-reduced estimator with normal-approximation inference.
Only summary statistics cross module boundaries, so labeled and unlabeled
data may live in different processes or sites.
"""

from .datatypes import (
    COLUMN_ROLES,
    Dataset,
    EstimateWithVariance,
    EstimationError,
    InputError,
    TASKS,
    TaskSpec,
)
from .debias import (
    PspsResult,
    SensitivityResult,
    combine,
    combine_dependent,
    combine_fixed_weight,
    model_selection_metric,
    sensitivity_test,
)
from .estimators import (
    fit_debiased_lasso,
    fit_iv_2sls,
    fit_logistic,
    fit_mean,
    fit_negbin,
    fit_ols,
    fit_quantile,
    fit_task,
    lasso_coefficients,
    wilcoxon_estimate,
)
from .fdr import (
    DiscoverySet,
    bh_select,
    classical_bh,
    imputed_bh,
    knockoff_threshold,
    psps_bh,
    psps_knockoff,
    psps_knockoff_statistics,
)
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

__version__ = "0.1.0"

__all__ = [
    "COLUMN_ROLES",
    "Dataset",
    "EstimateWithVariance",
    "EstimationError",
    "InputError",
    "TASKS",
    "TaskSpec",
    "fit_task",
    "fit_mean",
    "fit_ols",
    "fit_logistic",
    "fit_quantile",
    "fit_iv_2sls",
    "fit_negbin",
    "wilcoxon_estimate",
    "fit_debiased_lasso",
    "lasso_coefficients",
    "BootstrapPlan",
    "SummaryStatistics",
    "labeled_summary",
    "unlabeled_summary",
    "compute_summary",
    "merge_summaries",
    "serialize_summary",
    "parse_summary",
    "PspsResult",
    "SensitivityResult",
    "combine",
    "combine_dependent",
    "combine_fixed_weight",
    "sensitivity_test",
    "model_selection_metric",
    "DiscoverySet",
    "bh_select",
    "knockoff_threshold",
    "psps_bh",
    "psps_knockoff",
    "psps_knockoff_statistics",
    "classical_bh",
    "imputed_bh",
    "__version__",
]
