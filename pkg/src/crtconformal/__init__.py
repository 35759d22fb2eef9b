"""Conformal prediction intervals for treatment effects in cluster
randomized trials, with a Monte Carlo harness for validating coverage."""

from .conformal import (
    ConformalPredictor,
    NestedPredictor,
    PoFit,
    augmented_quantile,
    direct_difference,
    fit_conformal_po,
    fit_nested,
    fit_po_model,
    interval_for_observed_test,
    nonconformity_score,
    split_clusters,
    weighted_augmented_quantile,
    weighted_covariate_shift_quantile,
    WeightedScoreGroups,
)
from .data import (
    Cluster,
    IndividualRecord,
    Interval,
    SubgroupPredicate,
    TrialDataset,
    filter_subgroup,
    read_trial_csv,
    summarize_cluster,
    write_trial_csv,
)
from .dgp import DgpCluster, DgpConfig, estimate_icc, generate_trial, oracle_length
from .evaluation import (
    StudyConfig,
    StudyResult,
    build_intervals,
    coverage,
    fraction_negative,
    make_regressor,
    mean_length,
    run_replicate,
    run_study,
)
from .regressors import ConstantModel, EnsembleModel, ForestModel, OlsModel
from . import errors

__version__ = "0.1.0"

__all__ = [
    "ConformalPredictor",
    "NestedPredictor",
    "PoFit",
    "augmented_quantile",
    "direct_difference",
    "fit_conformal_po",
    "fit_nested",
    "fit_po_model",
    "interval_for_observed_test",
    "nonconformity_score",
    "split_clusters",
    "weighted_augmented_quantile",
    "weighted_covariate_shift_quantile",
    "WeightedScoreGroups",
    "Cluster",
    "IndividualRecord",
    "Interval",
    "SubgroupPredicate",
    "TrialDataset",
    "filter_subgroup",
    "read_trial_csv",
    "summarize_cluster",
    "write_trial_csv",
    "DgpCluster",
    "DgpConfig",
    "estimate_icc",
    "generate_trial",
    "oracle_length",
    "StudyConfig",
    "StudyResult",
    "build_intervals",
    "coverage",
    "fraction_negative",
    "make_regressor",
    "mean_length",
    "run_replicate",
    "run_study",
    "ConstantModel",
    "EnsembleModel",
    "ForestModel",
    "OlsModel",
    "errors",
    "__version__",
]
