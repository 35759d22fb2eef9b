"""Flat JSON run configuration: schema, defaults, presets, merging.

A config document is a single flat JSON object.  Unknown keys are
rejected; every key has a documented default, printable via the
``config --defaults`` subcommand.  Command-line flags override file
values, which override preset values, which override defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from typing import Optional

from .errors import ConfigError
from .evaluation import StudyConfig

# config key -> (StudyConfig field, type description)
STUDY_KEYS = {
    "m": "m",
    "n_test": "n_test",
    "replicates": "n_replicates",
    "seed": "base_seed",
    "methods": "methods",
    "alphas": "alphas",
    "gamma": "gamma",
    "combos": "combos",
    "subgroup_cluster": "subgroup_cluster",
    "subgroup_individual": "subgroup_individual",
    "regressor": "regressor",
    "train_fraction": "train_fraction",
    "calib_size": "calib_size",
    "cluster_score_models": "cluster_score_models",
    "adversarial_test_assignment": "adversarial_test_assignment",
    "parallelism": "parallelism",
    "n_min": "n_min",
    "n_max": "n_max",
    "gamma_sd": "gamma_sd",
    "noise_sd": "noise_sd",
    "randomization_probability": "randomization_probability",
    "forest_trees": "forest_trees",
    "forest_depth": "forest_depth",
    "forest_min_leaf": "forest_min_leaf",
    "forest_mtry": "forest_mtry",
    "ensemble_folds": "ensemble_folds",
}

OUTPUT_DEFAULTS = {
    "out": None,            # output directory; None = print summary only
    "format": "csv",        # csv | json
    "dump": False,          # simulate: write generated datasets + truth files
    "replicate_rows": False,  # simulate: write per-replicate long-format rows
    "save_model": False,    # analyze: persist fitted predictors
    "splits": 1,            # analyze: number of repeated splits
    "level": "cluster",     # analyze/predict unit level
    "subgroup": "",         # analyze: predicate expression; "" = marginal
    "score_model": "cluster",  # analyze: cluster-level score model
}

KNOWN_KEYS = set(STUDY_KEYS) | set(OUTPUT_DEFAULTS)

_INT_KEYS = {
    "m", "n_test", "replicates", "seed", "calib_size", "parallelism",
    "n_min", "n_max", "forest_trees", "forest_depth", "forest_min_leaf",
    "forest_mtry", "ensemble_folds", "splits",
}
_FLOAT_KEYS = {
    "gamma", "train_fraction", "gamma_sd", "noise_sd",
    "randomization_probability",
}
_BOOL_KEYS = {"adversarial_test_assignment", "dump", "replicate_rows", "save_model"}
_LIST_KEYS = {"methods", "alphas", "combos", "cluster_score_models"}
_OPTIONAL_KEYS = {"calib_size", "forest_mtry", "out"}


@dataclass(frozen=True)
class RunConfig:
    """A validated run: study settings plus command-level options."""

    study: StudyConfig
    out: Optional[str] = None
    format: str = "csv"
    dump: bool = False
    replicate_rows: bool = False
    save_model: bool = False
    splits: int = 1
    level: str = "cluster"
    subgroup: str = ""
    score_model: str = "cluster"

    def __post_init__(self) -> None:
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be 'csv' or 'json', got {self.format!r}")
        if self.splits < 1:
            raise ConfigError(f"splits must be at least 1, got {self.splits}")
        if self.level not in ("cluster", "individual"):
            raise ConfigError(f"level must be 'cluster' or 'individual', got {self.level!r}")


PRESETS = {
    # Coverage/length boxplot study, cluster-level effects, both scopes.
    "fig1": {
        "m": 100,
        "n_test": 500,
        "replicates": 200,
        "methods": ["O", "B-direct", "B-nested"],
        "alphas": [0.1],
        "combos": [["cluster", "marginal"], ["cluster", "local"]],
        "regressor": "ensemble",
    },
    # Same study at the individual level.
    "fig2": {
        "m": 100,
        "n_test": 500,
        "replicates": 200,
        "methods": ["O", "B-direct", "B-nested"],
        "alphas": [0.1],
        "combos": [["individual", "marginal"], ["individual", "local"]],
        "regressor": "ensemble",
    },
    # Small-trial table: m=30, ten calibration clusters per arm.
    "tableD1": {
        "m": 30,
        "n_test": 500,
        "replicates": 500,
        "methods": ["O", "B-direct"],
        "alphas": [0.1, 0.2],
        "combos": [
            ["cluster", "marginal"],
            ["individual", "marginal"],
            ["individual", "local"],
        ],
        "regressor": "ensemble",
        "calib_size": 10,
    },
    # Large-trial variant of the same table.
    "tableD2": {
        "m": 500,
        "n_test": 500,
        "replicates": 200,
        "methods": ["O", "B-direct"],
        "alphas": [0.1, 0.2],
        "combos": [
            ["cluster", "marginal"],
            ["individual", "marginal"],
            ["individual", "local"],
        ],
        "regressor": "ensemble",
    },
    # Small-trial table with the unassisted linear model.
    "tableD3": {
        "m": 30,
        "n_test": 500,
        "replicates": 500,
        "methods": ["O", "B-direct"],
        "alphas": [0.1, 0.2],
        "combos": [
            ["cluster", "marginal"],
            ["individual", "marginal"],
            ["individual", "local"],
        ],
        "regressor": "ols",
        "calib_size": 10,
    },
    # Cluster-score-model comparison: cluster-mean regression vs
    # averaged individual-level predictions as the interval center.
    "figS-comparison": {
        "m": 100,
        "n_test": 500,
        "replicates": 200,
        "methods": ["O"],
        "alphas": [0.1],
        "combos": [["cluster", "marginal"]],
        "regressor": "ensemble",
        "cluster_score_models": ["cluster", "individual_mean"],
    },
}


def default_document() -> dict:
    """Full config document with every key at its default."""
    study_defaults = {}
    by_name = {f.name: f for f in fields(StudyConfig)}
    for key, field_name in STUDY_KEYS.items():
        study_defaults[key] = by_name[field_name].default
    doc = dict(study_defaults)
    doc.update(OUTPUT_DEFAULTS)
    return _normalize(doc)


def _listify(v):
    if isinstance(v, (tuple, list)):
        return [_listify(x) for x in v]
    return v


def _normalize(doc: dict) -> dict:
    return {key: _listify(doc[key]) for key in sorted(doc)}


def _coerce(key: str, value):
    if value is None:
        if key in _OPTIONAL_KEYS:
            return None
        raise ConfigError(f"config key {key!r} must not be null")
    if key in _BOOL_KEYS:
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r} must be a boolean, got {value!r}")
        return value
    if key in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r} must be an integer, got {value!r}")
        return value
    if key in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} must be a number, got {value!r}")
        return float(value)
    if key in _LIST_KEYS:
        if not isinstance(value, list):
            raise ConfigError(f"config key {key!r} must be a list, got {value!r}")
        return value
    if not isinstance(value, str):
        raise ConfigError(f"config key {key!r} must be a string, got {value!r}")
    return value


def validate_document(doc: dict, where: str = "config") -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: document must be a single JSON object")
    unknown = sorted(set(doc) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    return {k: _coerce(k, v) for k, v in doc.items()}


def load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} line {exc.lineno}: {exc.msg}") from exc
    return validate_document(doc, where=path)


def merge_documents(*docs: dict) -> dict:
    """Later documents win key by key; all must be pre-validated."""
    merged = dict(default_document())
    for doc in docs:
        for k, v in doc.items():
            merged[k] = v
    return merged


def preset_document(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return validate_document(dict(PRESETS[name]), where=f"preset {name}")


def build_run_config(doc: dict) -> RunConfig:
    """Turn a merged, validated document into a RunConfig."""
    study_kwargs = {field: doc[key] for key, field in STUDY_KEYS.items()}
    study = StudyConfig(**study_kwargs)
    return RunConfig(
        study=study,
        out=doc["out"],
        format=doc["format"],
        dump=doc["dump"],
        replicate_rows=doc["replicate_rows"],
        save_model=doc["save_model"],
        splits=doc["splits"],
        level=doc["level"],
        subgroup=doc["subgroup"],
        score_model=doc["score_model"],
    )
