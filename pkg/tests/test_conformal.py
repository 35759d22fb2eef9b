import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crtconformal.conformal import (
    CLUSTER_SCORE_MODELS,
    WeightedScoreGroups,
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
)
from crtconformal.data import Cluster, IndividualRecord, Interval, SubgroupPredicate, TrialDataset
from crtconformal.errors import (
    ConfigError,
    EmptyScores,
    InsufficientCalibration,
    NonpositiveWeight,
    TooFewClusters,
    UnequalClusterSizes,
)
from crtconformal.regressors import ConstantModel, OlsModel


# --- scan oracles: direct inversion of the augmented CDF ----------------------

def scan_quantile(scores, alpha):
    """Smallest value with augmented CDF mass >= 1 - alpha, by linear scan."""
    order = sorted(scores)
    n = len(order)
    for j, s in enumerate(order, start=1):
        if j / (n + 1) >= 1.0 - alpha:
            return s
    return math.inf


def scan_weighted_quantile(groups, alpha):
    n_c = len(groups)
    atoms = []
    for g in groups:
        for s in g:
            atoms.append((float(s), Fraction(1, (n_c + 1) * len(g))))
    atoms.sort()
    cum = Fraction(0)
    for s, mass in atoms:
        cum += mass
        if float(cum) >= 1.0 - alpha:
            return s
    return math.inf


def test_quantile_worked_example():
    scores = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]
    # n = 9: the smallest j with j/10 >= 0.9 is 9, so the 9th smallest
    assert augmented_quantile(scores, 0.1) == 9.0
    assert augmented_quantile(scores, 0.2) == 8.0
    assert augmented_quantile(scores, 0.05) == math.inf


def test_quantile_edge_cases():
    assert augmented_quantile([5.0], 0.5) == 5.0
    assert augmented_quantile([5.0], 0.49) == math.inf
    assert augmented_quantile([-3.0, -1.0], 0.5) == -1.0  # negative scores fine
    with pytest.raises(EmptyScores):
        augmented_quantile([], 0.1)
    with pytest.raises(ValueError):
        augmented_quantile([1.0, math.inf], 0.1)
    with pytest.raises(ConfigError):
        augmented_quantile([1.0], 0.0)
    with pytest.raises(ConfigError):
        augmented_quantile([1.0], 1.0)


@given(
    st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=40),
    st.floats(0.01, 0.99),
)
def test_quantile_matches_scan_oracle(scores, alpha):
    assert augmented_quantile(scores, alpha) == scan_quantile(scores, alpha)


@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=30))
def test_quantile_monotone_in_alpha(scores):
    qs = [augmented_quantile(scores, a) for a in (0.05, 0.1, 0.2, 0.4, 0.8)]
    assert all(a >= b for a, b in zip(qs, qs[1:]))


@given(
    st.lists(st.floats(-1e5, 1e5, allow_nan=False), min_size=1, max_size=25),
    st.floats(0.02, 0.98),
)
def test_weighted_reduces_to_augmented_when_singleton(scores, alpha):
    groups = tuple((s,) for s in scores)
    assert weighted_augmented_quantile(groups, alpha) == augmented_quantile(scores, alpha)


@given(
    st.lists(
        st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=5),
        min_size=1,
        max_size=10,
    ),
    st.floats(0.05, 0.95),
)
def test_weighted_matches_scan_oracle(groups, alpha):
    assert weighted_augmented_quantile(groups, alpha) == scan_weighted_quantile(groups, alpha)


def test_weighted_hand_example():
    # two clusters, masses: cluster of 2 -> 1/6 each, cluster of 1 -> 1/3
    groups = ((1.0, 2.0), (3.0,))
    # cumulative: 1@1/6, 2@2/6, 3@4/6; +inf holds the last 1/3
    assert weighted_augmented_quantile(groups, 0.5) == 3.0
    assert weighted_augmented_quantile(groups, 0.7) == 2.0
    assert weighted_augmented_quantile(groups, 0.2) == math.inf
    with pytest.raises(EmptyScores):
        WeightedScoreGroups(())
    with pytest.raises(EmptyScores):
        WeightedScoreGroups(((1.0,), ()))


def test_covariate_shift_quantile():
    # equal weights, M=1: same as the unweighted quantile
    scores = [float(v) for v in range(1, 10)]
    pairs = [((s,), 1.0) for s in scores]
    assert weighted_covariate_shift_quantile(pairs, 1.0, 0.1) == 9.0
    # upweighting the test point pushes mass to +inf
    assert weighted_covariate_shift_quantile(pairs, 10.0, 0.1) == math.inf
    # a dominant calibration cluster pulls the quantile to its own score
    pairs2 = [((1.0,), 100.0), ((9.0,), 1.0)]  # mass at 1.0 is 100/102 >= 0.9
    assert weighted_covariate_shift_quantile(pairs2, 1.0, 0.1) == 1.0
    pairs3 = [((1.0,), 1.0), ((9.0,), 100.0)]
    assert weighted_covariate_shift_quantile(pairs3, 1.0, 0.1) == 9.0
    with pytest.raises(UnequalClusterSizes):
        weighted_covariate_shift_quantile([((1.0, 2.0), 1.0), ((3.0,), 1.0)], 1.0, 0.1)
    with pytest.raises(NonpositiveWeight):
        weighted_covariate_shift_quantile([((1.0,), -1.0)], 1.0, 0.1)
    with pytest.raises(NonpositiveWeight):
        weighted_covariate_shift_quantile([((1.0,), 1.0)], 0.0, 0.1)
    with pytest.raises(EmptyScores):
        weighted_covariate_shift_quantile([], 1.0, 0.1)


def test_nonconformity_score():
    assert nonconformity_score(3.0, 1.0) == 2.0
    assert nonconformity_score(1.0, 3.0) == 2.0


# --- split and fit -------------------------------------------------------------

def toy_cluster(cid, a, y_values, r=(1.0,)):
    members = tuple(
        IndividualRecord(cluster_id=cid, outcome=float(y), covariates=(float(k),))
        for k, y in enumerate(y_values)
    )
    return Cluster(cluster_id=cid, treatment=a, covariates_r=r, members=members)


def toy_dataset(n_per_arm=10, members=3, seed=0):
    rng = np.random.default_rng(seed)
    clusters = []
    for i in range(2 * n_per_arm):
        a = i % 2
        ys = rng.normal(loc=2.0 * a, size=members)
        clusters.append(toy_cluster(f"c{i}", a, ys, r=(float(rng.normal()),)))
    return TrialDataset(tuple(clusters))


def test_split_clusters_partitions():
    d = toy_dataset(n_per_arm=7)
    train, calib = split_clusters(d, 1, train_fraction=0.5, seed=3)
    ids = [c.cluster_id for c in train.clusters] + [c.cluster_id for c in calib.clusters]
    assert sorted(ids) == sorted(c.cluster_id for c in d.arm(1))
    assert train.n_clusters == math.ceil(0.5 * 7)
    # folds keep the original relative order
    original = [c.cluster_id for c in d.arm(1)]
    assert [c.cluster_id for c in train.clusters] == [
        i for i in original if i in {c.cluster_id for c in train.clusters}
    ]


def test_split_clusters_modes_and_errors():
    d = toy_dataset(n_per_arm=10)
    train, calib = split_clusters(d, 0, calib_size=7, seed=1)
    assert calib.n_clusters == 7 and train.n_clusters == 3
    # calib_size larger than the arm leaves a single training cluster
    train2, calib2 = split_clusters(d, 0, calib_size=50, seed=1)
    assert train2.n_clusters == 1 and calib2.n_clusters == 9
    a = split_clusters(d, 0, seed=5)
    b = split_clusters(d, 0, seed=5)
    assert [c.cluster_id for c in a[0].clusters] == [c.cluster_id for c in b[0].clusters]
    with pytest.raises(TooFewClusters):
        split_clusters(TrialDataset(d.clusters[:1]), d.clusters[0].treatment)
    with pytest.raises(ConfigError):
        split_clusters(d, 0, train_fraction=1.0)
    with pytest.raises(ConfigError):
        split_clusters(d, 0, calib_size=0)


def test_fit_po_model_cluster_level():
    d = toy_dataset(n_per_arm=12, seed=4)
    fit = fit_po_model(d, 1, "cluster", OlsModel(), seed=2)
    assert fit.n_calibration == 6
    assert len(fit.scores) == 6
    assert all(s >= 0 for s in fit.scores)
    pred = fit.at_alpha(0.5)
    assert not pred.is_trivial
    clusters = d.arm(1)
    ivs = pred.intervals_for_clusters(clusters)
    centers = pred.centers_for_clusters(clusters)
    for iv, c in zip(ivs, centers):
        assert iv.lower == pytest.approx(c - pred.q_hat)
        assert iv.upper == pytest.approx(c + pred.q_hat)


def test_fit_po_model_individual_level_groups():
    d = toy_dataset(n_per_arm=12, members=4, seed=5)
    fit = fit_po_model(d, 0, "individual", OlsModel(), seed=2)
    assert fit.score_groups is not None
    assert fit.score_groups.n_clusters == fit.n_calibration
    assert set(fit.score_groups.counts) == {4}
    pred = fit.at_alpha(0.5)
    ivs = pred.intervals_for_individuals(d.arm(0))
    assert len(ivs) == sum(c.n_retained for c in d.arm(0))


def test_fit_po_model_validation():
    d = toy_dataset()
    with pytest.raises(ConfigError):
        fit_po_model(d, 1, "group", OlsModel())
    with pytest.raises(ConfigError):
        fit_po_model(d, 1, "cluster", OlsModel(), score_model="nope")
    with pytest.raises(ConfigError):
        fit_po_model(d, 1, "individual", OlsModel(), score_model="individual_mean")
    omega = SubgroupPredicate.parse("individual", "x1>=0")
    with pytest.raises(ConfigError):
        fit_po_model(d, 1, "cluster", OlsModel(), omega=omega)


def test_individual_mean_score_model_runs():
    d = toy_dataset(n_per_arm=10, members=5, seed=6)
    assert CLUSTER_SCORE_MODELS == ("cluster", "individual_mean")
    fit = fit_po_model(d, 1, "cluster", OlsModel(), score_model="individual_mean", seed=3)
    pred = fit.at_alpha(0.5)
    ivs = pred.intervals_for_clusters(d.arm(1))
    assert len(ivs) == len(d.arm(1))


def test_insufficient_calibration_warns_and_goes_trivial():
    d = toy_dataset(n_per_arm=4)
    with pytest.warns(InsufficientCalibration, match="need at least 9"):
        pred = fit_conformal_po(d, 1, "cluster", 0.1, OlsModel(), seed=1)
    assert pred.is_trivial
    for iv in pred.intervals_for_clusters(d.arm(1)):
        assert iv.is_trivial


def test_interval_for_observed_test_algebra():
    c0 = Interval(-1.0, 2.0)
    assert interval_for_observed_test(c0, 5.0, 1) == Interval(3.0, 6.0)
    c1 = Interval(1.0, 4.0)
    assert interval_for_observed_test(c1, 2.0, 0) == Interval(-1.0, 2.0)
    with pytest.raises(Exception):
        interval_for_observed_test(c0, 1.0, 2)


def test_direct_difference_minkowski():
    d = direct_difference(Interval(1.0, 4.0), Interval(-1.0, 2.0))
    assert d == Interval(-1.0, 5.0)
    assert direct_difference(Interval(0.0, 1.0), Interval(0.0, 1.0)) == Interval(-1.0, 1.0)


# --- marginal coverage of the split conformal interval --------------------------

@settings(deadline=None, max_examples=10)
@given(st.integers(0, 10_000))
def test_po_interval_coverage_property(seed):
    # with a fresh exchangeable cluster each run, coverage of the cluster
    # mean must be at least 1 - alpha on average; check the exact finite-n
    # level k/(n+1) within binomial noise over 200 repetitions
    rng = np.random.default_rng(seed)
    alpha = 0.2
    hits = 0
    reps = 200
    for _ in range(reps):
        clusters = [
            toy_cluster(f"c{i}", 1, rng.normal(size=3), r=(float(rng.normal()),))
            for i in range(12)
        ]
        test = toy_cluster("t", 1, rng.normal(size=3), r=(float(rng.normal()),))
        d = TrialDataset(tuple(clusters))
        pred = fit_conformal_po(d, 1, "cluster", alpha, ConstantModel(), seed=int(rng.integers(1 << 31)))
        iv = pred.intervals_for_clusters([test])[0]
        truth = float(np.mean([m.outcome for m in test.members]))
        hits += iv.contains(truth)
    # n_calib = 6: guaranteed level is ceil((1-alpha)(n+1))/(n+1) = 6/7
    level = 6.0 / 7.0
    se = math.sqrt(level * (1 - level) / reps)
    assert hits / reps >= level - 4 * se


def test_fit_nested_smoke_and_crossing_clamp():
    d = toy_dataset(n_per_arm=30, members=3, seed=9)
    nested = fit_nested(d, "cluster", alpha=0.5, gamma=0.3, regressor=OlsModel(), seed=4)
    assert not nested.trivial
    ivs = nested.intervals(d.clusters)
    assert len(ivs) == d.n_clusters
    lo, hi = nested.raw_bounds(d.clusters)
    mask = nested.crossing_mask(d.clusters)
    for iv, a, b, crossed in zip(ivs, lo, hi, mask):
        if crossed:
            assert iv.lower == iv.upper == pytest.approx(0.5 * (a + b))
        else:
            assert (iv.lower, iv.upper) == (pytest.approx(a), pytest.approx(b))


def test_fit_nested_trivial_when_inner_starves():
    d = toy_dataset(n_per_arm=6, seed=11)
    with pytest.warns(InsufficientCalibration):
        nested = fit_nested(d, "cluster", alpha=0.1, gamma=0.5, regressor=OlsModel(), seed=2)
    assert nested.trivial
    ivs = nested.intervals(d.clusters)
    assert all(iv.is_trivial for iv in ivs)


def test_fit_nested_individual_level():
    d = toy_dataset(n_per_arm=30, members=4, seed=13)
    nested = fit_nested(d, "individual", alpha=0.4, gamma=0.3, regressor=OlsModel(), seed=6)
    ivs = nested.intervals(d.clusters)
    assert len(ivs) == sum(c.n_retained for c in d.clusters)
