"""Split conformal machinery for potential-outcome intervals.

The quantile routines all share one convention: the augmented empirical
distribution places mass on each calibration score plus a point mass at
+infinity, and the returned quantile is the generalized inverse
inf{s : F_hat(s) >= 1 - alpha}.  Cumulative probabilities are compared to
1 - alpha in double precision, so j/(n+1) >= 1 - alpha behaves the same
whether the mass accumulates one atom at a time or is formed directly as
a ratio.  Weighted variants accumulate exact rational masses and round
only at the comparison, which makes the equal-size reduction to the
unweighted quantile an identity rather than an approximation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .data import (
    Cluster,
    Interval,
    SubgroupPredicate,
    TrialDataset,
    cluster_covariate_summary,
    filter_subgroup,
    individual_feature_matrix,
    summarize_cluster,
    summary_features,
)
from .errors import (
    ConfigError,
    EmptyScores,
    NonBinaryTreatment,
    NonpositiveWeight,
    TooFewClusters,
    UnequalClusterSizes,
    InsufficientCalibration,
)
from .rng import derive_seed, generator

CLUSTER_SCORE_MODELS = ("cluster", "individual_mean")


def nonconformity_score(y: float, center: float) -> float:
    """Absolute-residual nonconformity score |y - center|."""
    return abs(float(y) - float(center))


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    return alpha


def augmented_quantile(scores: Sequence[float], alpha: float) -> float:
    """(1 - alpha) quantile of the calibration scores augmented with +inf.

    Returns the k-th smallest score where k is the smallest j with
    j/(n+1) >= 1 - alpha under double rounding, or +inf when no such j
    exists (k would exceed n).  Scores must be finite; negative scores
    are legitimate (signed slack scores from the nested procedure).
    """
    alpha = _check_alpha(alpha)
    arr = np.asarray(scores, dtype=float).ravel()
    if arr.size == 0:
        raise EmptyScores("augmented_quantile needs at least one score")
    if not np.all(np.isfinite(arr)):
        raise ValueError("scores must be finite")
    n = arr.size
    target = 1.0 - alpha
    levels = np.arange(1, n + 1) / (n + 1.0)
    hits = np.nonzero(levels >= target)[0]
    if hits.size == 0:
        return math.inf
    order = np.sort(arr)
    return float(order[hits[0]])


@dataclass(frozen=True)
class WeightedScoreGroups:
    """Calibration scores grouped by cluster for the weighted quantile.

    Group i holds the scores of the retained members of calibration
    cluster i; the group's total mass 1/(n_c + 1) is split equally among
    its members, and the leftover 1/(n_c + 1) sits at +infinity.
    """

    groups: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if len(self.groups) == 0:
            raise EmptyScores("need at least one calibration cluster")
        for g in self.groups:
            if len(g) == 0:
                raise EmptyScores("every calibration cluster needs a score")

    @property
    def n_clusters(self) -> int:
        return len(self.groups)

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.groups)


def weighted_augmented_quantile(groups, alpha: float) -> float:
    """Cluster-weighted (1 - alpha) quantile with a +inf atom.

    ``groups`` is a WeightedScoreGroups or a sequence of per-cluster
    score sequences.  Atom (i, j) carries exact mass
    1/((n_c + 1) * M_i); masses accumulate as rationals and the running
    total is rounded to double only for the >= 1 - alpha comparison.
    When every M_i = 1 this reproduces augmented_quantile bit for bit.
    """
    alpha = _check_alpha(alpha)
    if not isinstance(groups, WeightedScoreGroups):
        groups = WeightedScoreGroups(tuple(tuple(float(s) for s in g) for g in groups))
    n_c = groups.n_clusters
    atoms: list[tuple[float, Fraction]] = []
    for scores in groups.groups:
        mass = Fraction(1, (n_c + 1) * len(scores))
        for s in scores:
            s = float(s)
            if not math.isfinite(s):
                raise ValueError("scores must be finite")
            atoms.append((s, mass))
    atoms.sort(key=lambda a: a[0])
    target = 1.0 - alpha
    cum = Fraction(0)
    for s, mass in atoms:
        cum += mass
        if float(cum) >= target:
            return s
    return math.inf


def weighted_covariate_shift_quantile(
    cluster_scores: Sequence[tuple[Sequence[float], float]],
    test_weight: float,
    alpha: float,
) -> float:
    """(1 - alpha) quantile under covariate-shift weights, equal sizes.

    ``cluster_scores`` pairs each calibration cluster's M scores with its
    positive weight w(B_i); the test cluster contributes mass
    w(B_test)/sum(w) at +infinity and atom (i, j) carries
    w(B_i)/(M * sum(w)).  All clusters must share the same M.  With equal
    weights and M = 1 this reduces exactly to augmented_quantile.
    """
    alpha = _check_alpha(alpha)
    if len(cluster_scores) == 0:
        raise EmptyScores("need at least one calibration cluster")
    test_weight = float(test_weight)
    if not (math.isfinite(test_weight) and test_weight > 0.0):
        raise NonpositiveWeight(f"test weight must be positive, got {test_weight}")
    sizes = {len(scores) for scores, _ in cluster_scores}
    if len(sizes) != 1:
        raise UnequalClusterSizes(
            f"covariate-shift weighting requires equal cluster sizes, got {sorted(sizes)}"
        )
    m_size = sizes.pop()
    if m_size == 0:
        raise EmptyScores("every calibration cluster needs a score")
    weights = []
    for _, w in cluster_scores:
        w = float(w)
        if not (math.isfinite(w) and w > 0.0):
            raise NonpositiveWeight(f"cluster weights must be positive, got {w}")
        weights.append(Fraction(w))
    total = sum(weights, Fraction(test_weight))
    atoms: list[tuple[float, Fraction]] = []
    for (scores, _), w_frac in zip(cluster_scores, weights):
        mass = w_frac / (m_size * total)
        for s in scores:
            s = float(s)
            if not math.isfinite(s):
                raise ValueError("scores must be finite")
            atoms.append((s, mass))
    atoms.sort(key=lambda a: a[0])
    target = 1.0 - alpha
    cum = Fraction(0)
    for s, mass in atoms:
        cum += mass
        if float(cum) >= target:
            return s
    return math.inf


def split_clusters(
    d: TrialDataset,
    arm: int,
    train_fraction: float = 0.5,
    seed: int = 0,
    calib_size: Optional[int] = None,
) -> tuple[TrialDataset, TrialDataset]:
    """Randomly partition the clusters of one arm into train and calibration.

    The training fold gets ceil(train_fraction * n_a) clusters, or
    n_a - calib_size (at least 1) when ``calib_size`` is given; the rest
    calibrate.  Both folds preserve the original cluster order.
    """
    if arm not in (0, 1):
        raise NonBinaryTreatment(f"arm must be 0 or 1, got {arm}")
    arm_clusters = d.arm(arm)
    n_a = len(arm_clusters)
    if n_a < 2:
        raise TooFewClusters(f"arm {arm} has {n_a} cluster(s), need at least 2 to split")
    if calib_size is not None:
        calib_size = int(calib_size)
        if calib_size < 1:
            raise ConfigError(f"calib_size must be positive, got {calib_size}")
        n_train = max(1, n_a - calib_size)
    else:
        train_fraction = float(train_fraction)
        if not 0.0 < train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")
        n_train = math.ceil(train_fraction * n_a)
    rng = generator(seed, "split", arm)
    perm = rng.permutation(n_a)
    train_idx = set(perm[:n_train].tolist())
    train = tuple(c for i, c in enumerate(arm_clusters) if i in train_idx)
    calib = tuple(c for i, c in enumerate(arm_clusters) if i not in train_idx)
    p = d.randomization_probability
    return TrialDataset(train, p), TrialDataset(calib, p)


def _segment_means(values: np.ndarray, sizes: Sequence[int]) -> np.ndarray:
    out = np.empty(len(sizes), dtype=float)
    start = 0
    for i, m in enumerate(sizes):
        out[i] = values[start:start + m].mean()
        start += m
    return out


def _fit_model(regressor, x: np.ndarray, y: np.ndarray, seed: int, *path):
    from sklearn.base import clone

    model = clone(regressor)
    if "seed" in model.get_params():
        model.set_params(seed=int(derive_seed(seed, *path)))
    return model.fit(x, y)


def _warn_if_alpha_unreachable(alpha: float, n_calib: int, what: str) -> None:
    # q_hat is +inf exactly when even the largest score sits below the
    # 1 - alpha level of the augmented distribution.
    if n_calib == 0 or 1.0 * n_calib / (n_calib + 1.0) < 1.0 - alpha:
        need = math.ceil((1.0 - alpha) / alpha)
        warnings.warn(
            f"{what}: {n_calib} calibration cluster(s) cannot support "
            f"alpha={alpha} (need at least {need} so that n/(n+1) >= 1-alpha); "
            f"intervals will be trivial",
            InsufficientCalibration,
            stacklevel=3,
        )


@dataclass(frozen=True)
class PoFit:
    """Fitted centering model plus raw calibration scores for one arm.

    The split and the model fit do not depend on alpha, so one PoFit can
    mint ConformalPredictor objects at several levels.
    """

    arm: int
    level: str
    score_model: str
    model: object
    scores: tuple[float, ...]
    score_groups: Optional[WeightedScoreGroups]
    n_calibration: int
    omega: SubgroupPredicate

    def at_alpha(self, alpha: float) -> "ConformalPredictor":
        alpha = _check_alpha(alpha)
        where = f"arm {self.arm} ({self.level} level)"
        if self.level == "cluster":
            if self.n_calibration == 0:
                _warn_if_alpha_unreachable(alpha, 0, where)
                q_hat = math.inf
            else:
                q_hat = augmented_quantile(self.scores, alpha)
                if math.isinf(q_hat):
                    _warn_if_alpha_unreachable(alpha, self.n_calibration, where)
        else:
            if self.score_groups is None:
                _warn_if_alpha_unreachable(alpha, 0, where)
                q_hat = math.inf
            else:
                q_hat = weighted_augmented_quantile(self.score_groups, alpha)
                if math.isinf(q_hat):
                    _warn_if_alpha_unreachable(alpha, self.n_calibration, where)
        return ConformalPredictor(
            arm=self.arm,
            level=self.level,
            score_model=self.score_model,
            model=self.model,
            q_hat=float(q_hat),
            alpha=alpha,
            omega=self.omega,
            n_calibration=self.n_calibration,
        )


@dataclass(frozen=True)
class ConformalPredictor:
    """One arm's interval rule: center(B) plus/minus a fixed radius."""

    arm: int
    level: str
    score_model: str
    model: object
    q_hat: float
    alpha: float
    omega: SubgroupPredicate
    n_calibration: int

    @property
    def is_trivial(self) -> bool:
        return math.isinf(self.q_hat)

    def centers_for_clusters(self, clusters: Sequence[Cluster]) -> np.ndarray:
        """Predicted cluster-mean outcome for each cluster."""
        if self.level != "cluster":
            raise ConfigError("centers_for_clusters requires a cluster-level predictor")
        if len(clusters) == 0:
            return np.empty(0, dtype=float)
        if self.score_model == "cluster":
            feats = np.vstack(
                [summary_features(cluster_covariate_summary(c)) for c in clusters]
            )
            return np.asarray(self.model.predict(feats), dtype=float)
        preds = np.asarray(self.model.predict(individual_feature_matrix(clusters)), dtype=float)
        return _segment_means(preds, [c.n_retained for c in clusters])

    def centers_for_individuals(self, clusters: Sequence[Cluster]) -> np.ndarray:
        """Predicted outcome for every retained member, cluster order."""
        if self.level != "individual":
            raise ConfigError("centers_for_individuals requires an individual-level predictor")
        if len(clusters) == 0:
            return np.empty(0, dtype=float)
        return np.asarray(self.model.predict(individual_feature_matrix(clusters)), dtype=float)

    def intervals_from_centers(self, centers: np.ndarray) -> list[Interval]:
        return [Interval(c - self.q_hat, c + self.q_hat) for c in np.asarray(centers, dtype=float)]

    def intervals_for_clusters(self, clusters: Sequence[Cluster]) -> list[Interval]:
        return self.intervals_from_centers(self.centers_for_clusters(clusters))

    def intervals_for_individuals(self, clusters: Sequence[Cluster]) -> list[Interval]:
        return self.intervals_from_centers(self.centers_for_individuals(clusters))


def fit_po_model(
    d: TrialDataset,
    arm: int,
    level: str,
    regressor,
    omega: Optional[SubgroupPredicate] = None,
    train_fraction: float = 0.5,
    seed: int = 0,
    calib_size: Optional[int] = None,
    score_model: str = "cluster",
) -> PoFit:
    """Split one arm, fit the centering model, and bank calibration scores.

    This is the alpha-free half of the conformal fit; PoFit.at_alpha
    turns it into a predictor at any level without resplitting.
    """
    if level not in ("cluster", "individual"):
        raise ConfigError(f"level must be 'cluster' or 'individual', got {level!r}")
    if score_model not in CLUSTER_SCORE_MODELS:
        raise ConfigError(f"score_model must be one of {CLUSTER_SCORE_MODELS}, got {score_model!r}")
    if level == "individual" and score_model != "cluster":
        raise ConfigError("score_model applies only to cluster-level fits")
    if omega is None:
        omega = SubgroupPredicate.all_units(level)
    if omega.level != level and not omega.is_all:
        raise ConfigError(f"predicate level {omega.level!r} does not match fit level {level!r}")
    filtered = filter_subgroup(d, omega)
    train, calib = split_clusters(filtered, arm, train_fraction, seed, calib_size)

    if level == "cluster":
        if score_model == "cluster":
            train_sums = [summarize_cluster(c) for c in train.clusters]
            x = np.vstack([summary_features(s) for s in train_sums])
            y = np.array([s.y_bar for s in train_sums], dtype=float)
        else:
            x = individual_feature_matrix(train.clusters)
            y = np.array(
                [r.outcome for c in train.clusters for r in c.members], dtype=float
            )
        model = _fit_model(regressor, x, y, seed, "model", arm)
        scores: list[float] = []
        if calib.n_clusters:
            calib_sums = [summarize_cluster(c) for c in calib.clusters]
            if score_model == "cluster":
                feats = np.vstack([summary_features(s) for s in calib_sums])
                centers = np.asarray(model.predict(feats), dtype=float)
            else:
                preds = np.asarray(
                    model.predict(individual_feature_matrix(calib.clusters)), dtype=float
                )
                centers = _segment_means(preds, [c.n_retained for c in calib.clusters])
            scores = [
                nonconformity_score(s.y_bar, c) for s, c in zip(calib_sums, centers)
            ]
        return PoFit(
            arm=arm,
            level=level,
            score_model=score_model,
            model=model,
            scores=tuple(scores),
            score_groups=None,
            n_calibration=calib.n_clusters,
            omega=omega,
        )

    x = individual_feature_matrix(train.clusters)
    y = np.array([r.outcome for c in train.clusters for r in c.members], dtype=float)
    model = _fit_model(regressor, x, y, seed, "model", arm)
    groups = None
    if calib.n_clusters:
        group_scores = []
        for c in calib.clusters:
            preds = np.asarray(model.predict(individual_feature_matrix((c,))), dtype=float)
            group_scores.append(
                tuple(
                    nonconformity_score(r.outcome, p)
                    for r, p in zip(c.members, preds)
                )
            )
        groups = WeightedScoreGroups(tuple(group_scores))
    return PoFit(
        arm=arm,
        level=level,
        score_model=score_model,
        model=model,
        scores=(),
        score_groups=groups,
        n_calibration=calib.n_clusters,
        omega=omega,
    )


def fit_conformal_po(
    d: TrialDataset,
    arm: int,
    level: str,
    alpha: float,
    regressor,
    omega: Optional[SubgroupPredicate] = None,
    train_fraction: float = 0.5,
    seed: int = 0,
    calib_size: Optional[int] = None,
    score_model: str = "cluster",
) -> ConformalPredictor:
    """Split conformal predictor for the arm-``arm`` potential outcome."""
    fit = fit_po_model(
        d,
        arm,
        level,
        regressor,
        omega=omega,
        train_fraction=train_fraction,
        seed=seed,
        calib_size=calib_size,
        score_model=score_model,
    )
    return fit.at_alpha(alpha)


def interval_for_observed_test(c_other: Interval, y: float, a: int) -> Interval:
    """Effect interval for a test unit whose outcome under arm ``a`` is seen.

    A treated unit subtracts the control interval from its outcome; a
    control unit subtracts its outcome from the treated interval.
    """
    if a not in (0, 1):
        raise NonBinaryTreatment(f"treatment must be 0 or 1, got {a}")
    y = float(y)
    if a == 1:
        return Interval(y - c_other.upper, y - c_other.lower)
    return Interval(c_other.lower - y, c_other.upper - y)


def direct_difference(c1: Interval, c0: Interval) -> Interval:
    """Minkowski difference [c1.lower - c0.upper, c1.upper - c0.lower]."""
    return Interval(c1.lower - c0.upper, c1.upper - c0.lower)


@dataclass(frozen=True)
class NestedPredictor:
    """Effect interval rule [m_lower(B) - q_star, m_upper(B) + q_star].

    ``trivial`` marks runs where an inner arm quantile was infinite (the
    endpoint targets would be infinite), in which case every interval is
    the whole line.  Crossed raw intervals (lower > upper before the
    conformal correction can never cross; after clamping with a negative
    q_star they can) collapse to their midpoint and are flagged.
    """

    level: str
    m_lower: object
    m_upper: object
    q_star: float
    gamma: float
    alpha: float
    omega: SubgroupPredicate
    trivial: bool
    n_calibration: int

    def _features(self, clusters: Sequence[Cluster]) -> np.ndarray:
        if self.level == "cluster":
            return np.vstack(
                [summary_features(cluster_covariate_summary(c)) for c in clusters]
            )
        return individual_feature_matrix(tuple(clusters))

    def raw_bounds(self, clusters: Sequence[Cluster]) -> tuple[np.ndarray, np.ndarray]:
        feats = self._features(clusters)
        lo = np.asarray(self.m_lower.predict(feats), dtype=float) - self.q_star
        hi = np.asarray(self.m_upper.predict(feats), dtype=float) + self.q_star
        return lo, hi

    def intervals(self, clusters: Sequence[Cluster]) -> list[Interval]:
        if len(clusters) == 0:
            return []
        if self.trivial:
            n = len(clusters) if self.level == "cluster" else sum(
                c.n_retained for c in clusters
            )
            return [Interval(-math.inf, math.inf) for _ in range(n)]
        lo, hi = self.raw_bounds(clusters)
        out = []
        for a, b in zip(lo, hi):
            if a > b:
                mid = 0.5 * (a + b)
                out.append(Interval(mid, mid))
            else:
                out.append(Interval(a, b))
        return out

    def crossing_mask(self, clusters: Sequence[Cluster]) -> np.ndarray:
        if self.trivial or len(clusters) == 0:
            size = 0
            if len(clusters):
                size = len(clusters) if self.level == "cluster" else sum(
                    c.n_retained for c in clusters
                )
            return np.zeros(size, dtype=bool)
        lo, hi = self.raw_bounds(clusters)
        return lo > hi


def fit_nested(
    d: TrialDataset,
    level: str,
    alpha: float,
    gamma: float,
    regressor,
    endpoint_regressor=None,
    omega: Optional[SubgroupPredicate] = None,
    train_fraction: float = 0.5,
    seed: int = 0,
    calib_size: Optional[int] = None,
    score_model: str = "cluster",
) -> NestedPredictor:
    """Nested effect-interval predictor with miscoverage at most alpha + gamma.

    Each arm is split into an outer training and calibration fold.  An
    inner level-alpha conformal predictor for the opposite arm is fit on
    that arm's outer training fold (the inner fit does its own split),
    giving every unit a plug-in effect interval from its own observed
    outcome.  Endpoint regressions m_lower, m_upper are trained on the
    pooled training-fold endpoints, and the pooled calibration fold
    conformalizes the signed slack max(m_lower - C_lower, C_upper -
    m_upper) at level gamma.

    ``train_fraction`` and ``calib_size`` govern the outer split only.
    The inner split reserves ceil(1/alpha) clusters for calibration, one
    above the count where the level-alpha quantile turns finite, and
    trains on the rest: halving an already-halved fold would either
    starve the calibration side below that floor or leave the quantile
    riding the maximum of a large score set while the model trains on
    too few clusters.
    """
    alpha = _check_alpha(alpha)
    gamma = float(gamma)
    if not 0.0 < gamma < 1.0:
        raise ConfigError(f"gamma must be in (0, 1), got {gamma}")
    if level not in ("cluster", "individual"):
        raise ConfigError(f"level must be 'cluster' or 'individual', got {level!r}")
    if endpoint_regressor is None:
        endpoint_regressor = regressor
    if omega is None:
        omega = SubgroupPredicate.all_units(level)
    if omega.level != level and not omega.is_all:
        raise ConfigError(f"predicate level {omega.level!r} does not match fit level {level!r}")
    filtered = filter_subgroup(d, omega)
    none_pred = SubgroupPredicate.all_units(level)

    folds = {}
    inner = {}
    for a in (0, 1):
        train_a, calib_a = split_clusters(
            filtered, a, train_fraction, derive_seed(seed, "outer"), calib_size
        )
        folds[a] = (train_a, calib_a)
        # Inner predictor for arm a, consumed by units of arm 1 - a.
        inner[a] = fit_conformal_po(
            train_a,
            a,
            level,
            alpha,
            regressor,
            omega=none_pred,
            seed=derive_seed(seed, "inner", a),
            calib_size=min(math.ceil(1.0 / alpha), train_a.n_clusters - 1),
            score_model=score_model,
        )

    if inner[0].is_trivial or inner[1].is_trivial:
        warnings.warn(
            "inner conformal quantile is infinite; nested intervals are trivial",
            InsufficientCalibration,
            stacklevel=2,
        )
        return NestedPredictor(
            level=level,
            m_lower=None,
            m_upper=None,
            q_star=math.inf,
            gamma=gamma,
            alpha=alpha,
            omega=omega,
            trivial=True,
            n_calibration=0,
        )

    def endpoint_rows(ds: TrialDataset, a: int):
        # Plug-in effect interval per unit of arm a from the opposite
        # arm's inner predictor, evaluated at the unit's own covariates.
        other = inner[1 - a]
        if level == "cluster":
            feats = np.vstack(
                [summary_features(cluster_covariate_summary(c)) for c in ds.clusters]
            )
            centers = other.centers_for_clusters(ds.clusters)
            ys = np.array([summarize_cluster(c).y_bar for c in ds.clusters], dtype=float)
            sizes = [1] * ds.n_clusters
        else:
            feats = individual_feature_matrix(ds.clusters)
            centers = other.centers_for_individuals(ds.clusters)
            ys = np.array(
                [r.outcome for c in ds.clusters for r in c.members], dtype=float
            )
            sizes = [c.n_retained for c in ds.clusters]
        lows = np.empty_like(ys)
        highs = np.empty_like(ys)
        for i, (y, c) in enumerate(zip(ys, centers)):
            iv = interval_for_observed_test(
                Interval(c - other.q_hat, c + other.q_hat), y, a
            )
            lows[i] = iv.lower
            highs[i] = iv.upper
        return feats, lows, highs, sizes

    train_parts = [endpoint_rows(folds[a][0], a) for a in (0, 1)]
    x_train = np.vstack([p[0] for p in train_parts])
    low_train = np.concatenate([p[1] for p in train_parts])
    high_train = np.concatenate([p[2] for p in train_parts])
    m_lower = _fit_model(endpoint_regressor, x_train, low_train, seed, "endpoint", "lower")
    m_upper = _fit_model(endpoint_regressor, x_train, high_train, seed, "endpoint", "upper")

    calib_parts = [endpoint_rows(folds[a][1], a) for a in (0, 1) if folds[a][1].n_clusters]
    n_calib_clusters = sum(folds[a][1].n_clusters for a in (0, 1))
    if not calib_parts:
        _warn_if_alpha_unreachable(gamma, 0, f"nested ({level} level)")
        q_star = math.inf
    else:
        slack_groups: list[tuple[float, ...]] = []
        flat: list[float] = []
        for feats, lows, highs, sizes in calib_parts:
            pred_low = np.asarray(m_lower.predict(feats), dtype=float)
            pred_high = np.asarray(m_upper.predict(feats), dtype=float)
            slack = np.maximum(pred_low - lows, highs - pred_high)
            flat.extend(float(s) for s in slack)
            start = 0
            for m in sizes:
                slack_groups.append(tuple(float(s) for s in slack[start:start + m]))
                start += m
        if level == "cluster":
            q_star = augmented_quantile(flat, gamma)
        else:
            q_star = weighted_augmented_quantile(WeightedScoreGroups(tuple(slack_groups)), gamma)
        if math.isinf(q_star):
            _warn_if_alpha_unreachable(gamma, n_calib_clusters, f"nested ({level} level)")
    return NestedPredictor(
        level=level,
        m_lower=m_lower,
        m_upper=m_upper,
        q_star=float(q_star),
        gamma=gamma,
        alpha=alpha,
        omega=omega,
        trivial=bool(math.isinf(q_star)),
        n_calibration=n_calib_clusters,
    )
