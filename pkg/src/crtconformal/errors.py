"""Exception and warning types raised across the package.

Every data/contract violation gets its own class so callers (and the CLI's
exit-code mapping) can dispatch on type rather than message text.
"""

from __future__ import annotations


class CrtConformalError(Exception):
    """Base class for all package errors."""


class ConfigError(CrtConformalError):
    """Invalid or unknown configuration key/value (CLI exit code 2)."""


# --- data-model violations -------------------------------------------------

class DataError(CrtConformalError):
    """Base class for dataset contract violations."""


class DimensionMismatch(DataError):
    """Covariate vector lengths disagree across records or with a fitted model."""


class DuplicateClusterId(DataError):
    """Two clusters share a cluster_id."""


class NonBinaryTreatment(DataError):
    """Treatment value outside {0, 1}."""


class EmptyCluster(DataError):
    """Cluster with zero members."""


class MissingOutcome(DataError):
    """Outcome absent on a record used for training or calibration."""


class ConstantWithinClusterViolation(DataError):
    """A cluster-level CSV column (r_* or treatment) varies within a cluster_id."""


class EmptyResult(DataError):
    """Subgroup filtering removed every cluster."""


# --- regression ------------------------------------------------------------

class EmptyTrainingSet(CrtConformalError):
    """fit called with zero rows."""


class TooFewSamples(CrtConformalError):
    """Training set smaller than the estimator's stated minimum."""


# --- conformal machinery ---------------------------------------------------

class EmptyScores(CrtConformalError):
    """Quantile of an empty score collection requested."""


class TooFewClusters(CrtConformalError):
    """Fewer than two clusters available to split in an arm."""


class NonpositiveWeight(CrtConformalError):
    """Covariate-shift weight <= 0."""


class UnequalClusterSizes(CrtConformalError):
    """Covariate-shift construction requires a common cluster size M."""


# --- dgp / evaluation ------------------------------------------------------

class TooFewEffects(CrtConformalError):
    """oracle_length needs at least two effect values."""


class LengthMismatch(CrtConformalError):
    """Paired sequences (intervals vs truths) differ in length."""


class EmptyInput(CrtConformalError):
    """Metric requested on an empty collection."""


# --- cli / persistence -----------------------------------------------------

class ModelNotFound(CrtConformalError):
    """No persisted model at the given directory."""


class InsufficientCalibration(UserWarning):
    """alpha < 1/(n_calib + 1): the calibrated radius is +inf (trivial interval)."""
