"""Metrics and the Monte Carlo study harness.

Every random stream of a replicate derives from (base_seed XOR
replicate_index), so replicates are schedule independent and a study is
reproducible at any parallelism degree.  Within a replicate the arm
predictors are fit once per (level, scope, score model) and shared by
the observed-arm and direct methods across all alphas; only the nested
method refits per alpha because its inner quantile depends on it.
"""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .conformal import (
    CLUSTER_SCORE_MODELS,
    direct_difference,
    fit_nested,
    fit_po_model,
    interval_for_observed_test,
)
from .data import (
    Interval,
    SubgroupPredicate,
    TrialDataset,
    filter_subgroup,
    summarize_cluster,
)
from .dgp import DgpConfig, generate_trial, oracle_length
from .errors import ConfigError, EmptyInput, LengthMismatch, MissingOutcome
from .regressors import ConstantModel, EnsembleModel, ForestModel, OlsModel
from .rng import derive_seed, generator

METHOD_OBSERVED = "O"
METHOD_DIRECT = "B-direct"
METHOD_NESTED = "B-nested"
METHODS = (METHOD_OBSERVED, METHOD_DIRECT, METHOD_NESTED)

LEVELS = ("cluster", "individual")
SCOPES = ("marginal", "local")
METRICS = ("coverage", "mean_length", "fraction_negative", "oracle_length")

REGRESSORS = ("ols", "forest", "ensemble", "zero")


def make_regressor(name: str, seed: int = 0, auto_shrink: bool = True):
    """Prototype regressor for a config name; every fit clones it."""
    if name == "ols":
        return OlsModel()
    if name == "forest":
        return ForestModel(seed=seed, auto_shrink=auto_shrink)
    if name == "ensemble":
        return EnsembleModel(seed=seed, auto_shrink=auto_shrink)
    if name == "zero":
        return ConstantModel(0.0)
    raise ConfigError(f"unknown regressor {name!r}; choose from {REGRESSORS}")


def regressor_from_config(cfg: "StudyConfig", auto_shrink: bool = True):
    """Prototype regressor honoring the config's hyperparameters."""
    if cfg.regressor == "ols":
        return OlsModel()
    if cfg.regressor == "zero":
        return ConstantModel(0.0)
    forest = ForestModel(
        n_trees=cfg.forest_trees,
        max_depth=cfg.forest_depth,
        min_leaf=cfg.forest_min_leaf,
        mtry=cfg.forest_mtry,
        auto_shrink=auto_shrink,
    )
    if cfg.regressor == "forest":
        return forest
    return EnsembleModel(
        members=[OlsModel(), forest],
        k_folds=cfg.ensemble_folds,
        auto_shrink=auto_shrink,
    )


# --- per-replicate metrics ----------------------------------------------------

def coverage(intervals: Sequence[Interval], truths: Sequence[float]) -> float:
    """Fraction of closed intervals containing their truth."""
    if len(intervals) != len(truths):
        raise LengthMismatch(
            f"{len(intervals)} intervals vs {len(truths)} truths"
        )
    if len(intervals) == 0:
        raise EmptyInput("coverage of an empty set is undefined")
    hits = sum(1 for iv, t in zip(intervals, truths) if iv.contains(t))
    return hits / len(intervals)


def mean_length(intervals: Sequence[Interval]) -> float:
    """Mean length over the finite intervals; +inf only when none are."""
    if len(intervals) == 0:
        raise EmptyInput("mean length of an empty set is undefined")
    finite = [iv.length for iv in intervals if math.isfinite(iv.length)]
    if not finite:
        return math.inf
    return sum(finite) / len(finite)


def count_infinite(intervals: Sequence[Interval]) -> int:
    return sum(1 for iv in intervals if not math.isfinite(iv.length))


def fraction_negative(intervals: Sequence[Interval]) -> float:
    """Fraction of intervals strictly below zero (upper < 0)."""
    if len(intervals) == 0:
        raise EmptyInput("fraction_negative of an empty set is undefined")
    return sum(1 for iv in intervals if iv.upper < 0.0) / len(intervals)


# --- study configuration ------------------------------------------------------

def _as_tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return (value,)


@dataclass(frozen=True)
class StudyConfig:
    """Simulation study settings; defaults match the main coverage figure."""

    m: int = 100
    n_test: int = 500
    n_replicates: int = 200
    base_seed: int = 0
    methods: tuple = (METHOD_OBSERVED, METHOD_DIRECT, METHOD_NESTED)
    alphas: tuple = (0.1,)
    gamma: float = 0.5
    combos: tuple = (("cluster", "marginal"),)
    subgroup_cluster: str = "r1>=2,r2=1"
    subgroup_individual: str = "x2>-0.5,x2<0.5"
    regressor: str = "ensemble"
    train_fraction: float = 0.5
    calib_size: Optional[int] = None
    cluster_score_models: tuple = ("cluster",)
    adversarial_test_assignment: bool = False
    parallelism: int = 1
    n_min: int = 10
    n_max: int = 50
    gamma_sd: float = 0.5
    noise_sd: float = 1.0
    randomization_probability: float = 0.5
    forest_trees: int = 100
    forest_depth: int = 8
    forest_min_leaf: int = 5
    forest_mtry: Optional[int] = None
    ensemble_folds: int = 5

    def __post_init__(self) -> None:
        object.__setattr__(self, "methods", _as_tuple(self.methods))
        object.__setattr__(self, "alphas", tuple(float(a) for a in _as_tuple(self.alphas)))
        object.__setattr__(
            self, "combos", tuple(tuple(c) for c in _as_tuple(self.combos))
        )
        object.__setattr__(
            self, "cluster_score_models", _as_tuple(self.cluster_score_models)
        )
        if self.m < 2:
            raise ConfigError(f"m must be at least 2, got {self.m}")
        if self.n_test < 2:
            raise ConfigError(f"n_test must be at least 2, got {self.n_test}")
        if self.n_replicates < 1:
            raise ConfigError(f"n_replicates must be at least 1, got {self.n_replicates}")
        if self.base_seed < 0:
            raise ConfigError(f"base_seed must be nonnegative, got {self.base_seed}")
        if not self.methods or len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must be nonempty and unique")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
        if not self.alphas or len(set(self.alphas)) != len(self.alphas):
            raise ConfigError("alphas must be nonempty and unique")
        for a in self.alphas:
            if not 0.0 < a < 1.0:
                raise ConfigError(f"alpha must be in (0, 1), got {a}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must be in (0, 1), got {self.gamma}")
        if not self.combos or len(set(self.combos)) != len(self.combos):
            raise ConfigError("combos must be nonempty and unique")
        for combo in self.combos:
            if len(combo) != 2 or combo[0] not in LEVELS or combo[1] not in SCOPES:
                raise ConfigError(
                    f"combo must be (level, scope) with level in {LEVELS} and "
                    f"scope in {SCOPES}, got {combo!r}"
                )
        if self.regressor not in REGRESSORS:
            raise ConfigError(
                f"unknown regressor {self.regressor!r}; choose from {REGRESSORS}"
            )
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(
                f"train_fraction must be in (0, 1), got {self.train_fraction}"
            )
        if self.calib_size is not None and self.calib_size < 1:
            raise ConfigError(f"calib_size must be positive, got {self.calib_size}")
        if not self.cluster_score_models or len(set(self.cluster_score_models)) != len(
            self.cluster_score_models
        ):
            raise ConfigError("cluster_score_models must be nonempty and unique")
        for sm in self.cluster_score_models:
            if sm not in CLUSTER_SCORE_MODELS:
                raise ConfigError(
                    f"unknown score model {sm!r}; choose from {CLUSTER_SCORE_MODELS}"
                )
        if self.parallelism < 1:
            raise ConfigError(f"parallelism must be at least 1, got {self.parallelism}")
        if self.forest_trees < 1 or self.forest_depth < 1 or self.forest_min_leaf < 1:
            raise ConfigError("forest hyperparameters must be positive")
        if self.forest_mtry is not None and self.forest_mtry < 1:
            raise ConfigError(f"forest_mtry must be positive, got {self.forest_mtry}")
        if self.ensemble_folds < 2:
            raise ConfigError(f"ensemble_folds must be at least 2, got {self.ensemble_folds}")
        # Eager parse so bad predicate strings fail at config time.
        SubgroupPredicate.parse("cluster", self.subgroup_cluster)
        SubgroupPredicate.parse("individual", self.subgroup_individual)
        # Delegate the DGP range checks.
        self.dgp(0)

    def predicate(self, level: str, scope: str) -> SubgroupPredicate:
        if scope == "marginal":
            return SubgroupPredicate.all_units(level)
        expr = self.subgroup_cluster if level == "cluster" else self.subgroup_individual
        return SubgroupPredicate.parse(level, expr)

    def dgp(self, seed: int) -> DgpConfig:
        return DgpConfig(
            m=self.m,
            n_test=self.n_test,
            seed=seed,
            n_min=self.n_min,
            n_max=self.n_max,
            gamma_sd=self.gamma_sd,
            noise_sd=self.noise_sd,
            randomization_probability=self.randomization_probability,
        )


@dataclass(frozen=True)
class MetricsRow:
    """One replicate's evaluation of one (method, level, scope, alpha)."""

    replicate: int
    seed: int
    method: str
    level: str
    scope: str
    score_model: str
    alpha: float
    gamma: Optional[float]
    coverage: float
    mean_length: float
    fraction_negative: float
    oracle_length: float
    n_units: int
    n_infinite: int


# --- interval construction shared by the harness and the analyze command ------

@dataclass(frozen=True)
class IntervalBundle:
    """Aligned per-unit intervals for every requested (method, alpha).

    ``predictors`` maps (arm, alpha) to the fitted ConformalPredictor and
    ``nested_predictors`` maps alpha to the NestedPredictor, for callers
    that persist models.
    """

    level: str
    unit_ids: tuple[str, ...]
    unit_cluster_ids: tuple[str, ...]
    intervals: dict
    nested_trivial: dict
    nested_crossings: dict
    predictors: dict
    nested_predictors: dict


def build_intervals(
    observed: TrialDataset,
    test: TrialDataset,
    *,
    level: str,
    methods: Sequence[str],
    alphas: Sequence[float],
    regressor,
    omega: Optional[SubgroupPredicate] = None,
    gamma: float = 0.5,
    endpoint_regressor=None,
    train_fraction: float = 0.5,
    calib_size: Optional[int] = None,
    seed: int = 0,
    score_model: str = "cluster",
) -> IntervalBundle:
    """Fit on the observed trial, emit intervals for every eligible test unit.

    The observed-arm method needs test outcomes and treatments; the
    difference methods need covariates only.  Calibration and the test
    units are both restricted to the subgroup.
    """
    if level not in LEVELS:
        raise ConfigError(f"level must be one of {LEVELS}, got {level!r}")
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
    alphas = tuple(float(a) for a in alphas)
    if omega is None:
        omega = SubgroupPredicate.all_units(level)
    eligible = filter_subgroup(test, omega)
    clusters = eligible.clusters
    if level == "cluster":
        unit_ids = tuple(c.cluster_id for c in clusters)
        unit_cluster_ids = unit_ids
        unit_a = tuple(c.treatment for c in clusters)
    else:
        unit_ids = tuple(
            f"{c.cluster_id}:{j}" for c in clusters for j in range(c.n_retained)
        )
        unit_cluster_ids = tuple(
            c.cluster_id for c in clusters for _ in range(c.n_retained)
        )
        unit_a = tuple(c.treatment for c in clusters for _ in range(c.n_retained))
    omega_key = "all" if omega.is_all else omega.serialize()

    intervals: dict = {}
    nested_trivial: dict = {}
    nested_crossings: dict = {}
    preds: dict = {}
    nested_predictors: dict = {}

    if METHOD_OBSERVED in methods or METHOD_DIRECT in methods:
        seed_po = derive_seed(seed, "po", level, score_model, omega_key)
        fits = {
            a: fit_po_model(
                observed,
                a,
                level,
                regressor,
                omega=omega,
                train_fraction=train_fraction,
                seed=seed_po,
                calib_size=calib_size,
                score_model=score_model,
            )
            for a in (0, 1)
        }
        preds.update(
            {(a, alpha): fits[a].at_alpha(alpha) for a in (0, 1) for alpha in alphas}
        )
        centers = {}
        for a in (0, 1):
            probe = preds[(a, alphas[0])]
            centers[a] = (
                probe.centers_for_clusters(clusters)
                if level == "cluster"
                else probe.centers_for_individuals(clusters)
            )
        ys = None
        if METHOD_OBSERVED in methods:
            if level == "cluster":
                ys = [summarize_cluster(c).y_bar for c in clusters]
            else:
                ys = []
                for c in clusters:
                    for r in c.members:
                        if r.outcome is None:
                            raise MissingOutcome(
                                f"test cluster {c.cluster_id!r} lacks outcomes; "
                                f"the observed-arm method needs them"
                            )
                        ys.append(r.outcome)
        n_units = len(unit_ids)
        for alpha in alphas:
            if METHOD_OBSERVED in methods:
                rows = []
                for k in range(n_units):
                    a_k = unit_a[k]
                    other = 1 - a_k
                    q = preds[(other, alpha)].q_hat
                    c_other = Interval(centers[other][k] - q, centers[other][k] + q)
                    rows.append(interval_for_observed_test(c_other, ys[k], a_k))
                intervals[(METHOD_OBSERVED, alpha)] = tuple(rows)
            if METHOD_DIRECT in methods:
                q1 = preds[(1, alpha)].q_hat
                q0 = preds[(0, alpha)].q_hat
                intervals[(METHOD_DIRECT, alpha)] = tuple(
                    direct_difference(
                        Interval(centers[1][k] - q1, centers[1][k] + q1),
                        Interval(centers[0][k] - q0, centers[0][k] + q0),
                    )
                    for k in range(n_units)
                )

    if METHOD_NESTED in methods:
        for alpha in alphas:
            nested = fit_nested(
                observed,
                level,
                alpha,
                gamma,
                regressor,
                endpoint_regressor,
                omega=omega,
                train_fraction=train_fraction,
                seed=derive_seed(seed, "nested", level, score_model, omega_key),
                calib_size=calib_size,
                score_model=score_model,
            )
            intervals[(METHOD_NESTED, alpha)] = tuple(nested.intervals(clusters))
            nested_trivial[alpha] = nested.trivial
            nested_crossings[alpha] = int(nested.crossing_mask(clusters).sum())
            nested_predictors[alpha] = nested

    return IntervalBundle(
        level=level,
        unit_ids=unit_ids,
        unit_cluster_ids=unit_cluster_ids,
        intervals=intervals,
        nested_trivial=nested_trivial,
        nested_crossings=nested_crossings,
        predictors=preds,
        nested_predictors=nested_predictors,
    )


# --- the study ----------------------------------------------------------------

def replicate_data(cfg: StudyConfig, replicate_index: int):
    """Observed dataset, test dataset, and generator records for one replicate.

    The test dataset's treatment column is the harness's test assignment
    (Bernoulli by default, effect-above-median when adversarial), so a
    dumped replicate re-analyzed from CSV sees identical inputs.
    """
    if replicate_index < 0:
        raise ConfigError(f"replicate_index must be nonnegative, got {replicate_index}")
    rep_seed = int(cfg.base_seed) ^ int(replicate_index)
    observed, gens = generate_trial(cfg.dgp(rep_seed))
    effects = np.array([g.effect for g in gens], dtype=float)
    if cfg.adversarial_test_assignment:
        a_test = (effects > np.median(effects)).astype(int)
    else:
        rng = generator(rep_seed, "assign")
        a_test = (rng.random(len(gens)) < cfg.randomization_probability).astype(int)
    test = TrialDataset(
        tuple(
            g.to_cluster(cluster_id=f"t{i}", a=int(a_test[i]))
            for i, g in enumerate(gens)
        ),
        cfg.randomization_probability,
    )
    return rep_seed, observed, test, gens


def run_replicate(cfg: StudyConfig, replicate_index: int) -> list[MetricsRow]:
    """One trial draw, evaluated for every requested combination."""
    rep_seed, observed, test, gens = replicate_data(cfg, replicate_index)
    effect_by_cid = {f"t{i}": float(g.effect) for i, g in enumerate(gens)}
    proto = regressor_from_config(cfg)

    rows: list[MetricsRow] = []
    for level, scope in cfg.combos:
        score_models = cfg.cluster_score_models if level == "cluster" else ("cluster",)
        for sm in score_models:
            omega = cfg.predicate(level, scope)
            bundle = build_intervals(
                observed,
                test,
                level=level,
                methods=cfg.methods,
                alphas=cfg.alphas,
                regressor=proto,
                omega=omega,
                gamma=cfg.gamma,
                train_fraction=cfg.train_fraction,
                calib_size=cfg.calib_size,
                seed=rep_seed,
                score_model=sm,
            )
            truths = [effect_by_cid[cid] for cid in bundle.unit_cluster_ids]
            for alpha in cfg.alphas:
                orc = oracle_length(truths, alpha)
                for method in cfg.methods:
                    ivs = bundle.intervals[(method, alpha)]
                    rows.append(
                        MetricsRow(
                            replicate=replicate_index,
                            seed=rep_seed,
                            method=method,
                            level=level,
                            scope=scope,
                            score_model=sm,
                            alpha=alpha,
                            gamma=cfg.gamma if method == METHOD_NESTED else None,
                            coverage=coverage(ivs, truths),
                            mean_length=mean_length(ivs),
                            fraction_negative=fraction_negative(ivs),
                            oracle_length=orc,
                            n_units=len(ivs),
                            n_infinite=count_infinite(ivs),
                        )
                    )
    return rows


@dataclass(frozen=True)
class AggregateRow:
    """Across-replicate stats of one metric for one method combination.

    Non-finite replicate values (all-trivial mean_length) are dropped
    before the stats; n_used counts what remains and n_infinite_total
    sums the per-replicate infinite-interval counts.
    """

    method: str
    level: str
    scope: str
    score_model: str
    alpha: float
    gamma: Optional[float]
    metric: str
    mean: float
    sd: float
    q25: float
    median: float
    q75: float
    n_replicates: int
    n_used: int
    n_infinite_total: int


def aggregate_rows(rows: Sequence[MetricsRow]) -> list[AggregateRow]:
    groups: dict = {}
    for row in rows:
        key = (row.method, row.level, row.scope, row.score_model, row.alpha, row.gamma)
        groups.setdefault(key, []).append(row)
    out: list[AggregateRow] = []
    for key, members in groups.items():
        method, level, scope, sm, alpha, gamma = key
        n_inf = sum(r.n_infinite for r in members)
        for metric in METRICS:
            vals = np.array([getattr(r, metric) for r in members], dtype=float)
            finite = vals[np.isfinite(vals)]
            if finite.size == 0:
                mean = sd = q25 = median = q75 = math.inf
            else:
                mean = float(finite.mean())
                sd = float(finite.std(ddof=1)) if finite.size > 1 else 0.0
                q25, median, q75 = (float(v) for v in np.percentile(finite, [25, 50, 75]))
            out.append(
                AggregateRow(
                    method=method,
                    level=level,
                    scope=scope,
                    score_model=sm,
                    alpha=alpha,
                    gamma=gamma,
                    metric=metric,
                    mean=mean,
                    sd=sd,
                    q25=q25,
                    median=median,
                    q75=q75,
                    n_replicates=len(members),
                    n_used=int(finite.size),
                    n_infinite_total=n_inf,
                )
            )
    return out


@dataclass(frozen=True)
class StudyResult:
    config: StudyConfig
    rows: tuple
    aggregates: tuple

    def aggregate(
        self,
        method: str,
        metric: str,
        level: str = "cluster",
        scope: str = "marginal",
        alpha: Optional[float] = None,
        score_model: str = "cluster",
    ) -> AggregateRow:
        hits = [
            a
            for a in self.aggregates
            if a.method == method
            and a.metric == metric
            and a.level == level
            and a.scope == scope
            and a.score_model == score_model
            and (alpha is None or a.alpha == alpha)
        ]
        if len(hits) != 1:
            raise KeyError(
                f"{len(hits)} aggregate rows match "
                f"({method}, {metric}, {level}, {scope}, alpha={alpha})"
            )
        return hits[0]

    def replicate_rows(
        self,
        method: str,
        level: str = "cluster",
        scope: str = "marginal",
        alpha: Optional[float] = None,
        score_model: str = "cluster",
    ) -> list[MetricsRow]:
        return [
            r
            for r in self.rows
            if r.method == method
            and r.level == level
            and r.scope == scope
            and r.score_model == score_model
            and (alpha is None or r.alpha == alpha)
        ]


def run_study(cfg: StudyConfig) -> StudyResult:
    """Run every replicate and aggregate; order independent of scheduling."""
    indices = list(range(cfg.n_replicates))
    if cfg.parallelism > 1 and cfg.n_replicates > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(processes=min(cfg.parallelism, cfg.n_replicates)) as pool:
            per_rep = pool.starmap(run_replicate, [(cfg, r) for r in indices])
    else:
        per_rep = [run_replicate(cfg, r) for r in indices]
    rows = [row for rep in per_rep for row in rep]
    return StudyResult(config=cfg, rows=tuple(rows), aggregates=tuple(aggregate_rows(rows)))
