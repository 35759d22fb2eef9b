"""Synthetic cluster randomized trial generator.

Per-cluster draw order is fixed: N, R1, R2, the X1 vector, the X2 noise
vector, gamma, the epsilon vector, A.  X2 depends on the completed X1
mean, so X1 must finish first.  Each cluster owns a counter-addressed
substream of one Philox key, so cluster i is identical no matter how
many clusters are generated or in what order.

Outcome components (the shared base, the treatment term N/50, and the
control shift gamma) are rounded to the 2**-26 grid before assembly.
Sums of grid multiples at these magnitudes are exact in float64, which
makes Y(1) - Y(0) bitwise constant within a cluster instead of constant
up to one ulp; the 1.5e-8 perturbation is far below any statistic
computed from the data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import (
    Cluster,
    IndividualRecord,
    TrialDataset,
    individual_feature_matrix,
    validate_dataset,
)
from .errors import ConfigError, TooFewEffects
from .regressors import OlsModel
from .rng import TAG_OBSERVED, TAG_TEST, cluster_stream

_GRID = 2.0 ** 26


def _snap(values):
    """Round to the 2**-26 grid; multiplication by a power of two is exact."""
    return np.round(np.asarray(values, dtype=float) * _GRID) / _GRID


@dataclass(frozen=True)
class DgpConfig:
    """Trial-generator settings: m observed and n_test held-out clusters."""

    m: int
    n_test: int = 0
    seed: int = 0
    n_min: int = 10
    n_max: int = 50
    gamma_sd: float = 0.5
    noise_sd: float = 1.0
    randomization_probability: float = 0.5

    def __post_init__(self) -> None:
        if self.m < 2:
            raise ConfigError(f"need at least 2 observed clusters, got {self.m}")
        if self.n_test < 0:
            raise ConfigError(f"n_test must be nonnegative, got {self.n_test}")
        if not 1 <= self.n_min <= self.n_max:
            raise ConfigError(
                f"cluster size range must satisfy 1 <= n_min <= n_max, "
                f"got [{self.n_min}, {self.n_max}]"
            )
        if self.gamma_sd < 0 or self.noise_sd < 0:
            raise ConfigError("standard deviations must be nonnegative")
        if not 0.0 < self.randomization_probability < 1.0:
            raise ConfigError(
                f"randomization probability must be in (0, 1), "
                f"got {self.randomization_probability}"
            )


@dataclass(frozen=True)
class DgpCluster:
    """One generated cluster with both potential outcome vectors."""

    index: int
    n: int
    r1: float
    r2: int
    gamma: float
    a: int
    x1: tuple[float, ...]
    x2: tuple[float, ...]
    y0: tuple[float, ...]
    y1: tuple[float, ...]

    @property
    def effect(self) -> float:
        # Exact: y1[j] - y0[j] for every j by the grid construction.
        return self.y1[0] - self.y0[0]

    @property
    def y_bar0(self) -> float:
        return float(np.mean(self.y0))

    @property
    def y_bar1(self) -> float:
        return float(np.mean(self.y1))

    def observed_outcomes(self, a=None) -> tuple[float, ...]:
        a = self.a if a is None else int(a)
        return self.y1 if a == 1 else self.y0

    def to_cluster(self, cluster_id=None, a=None, with_outcomes=True) -> Cluster:
        """Observed-data view: outcomes from one arm only, never both."""
        a = self.a if a is None else int(a)
        cid = f"c{self.index}" if cluster_id is None else str(cluster_id)
        ys = self.observed_outcomes(a) if with_outcomes else None
        members = tuple(
            IndividualRecord(
                cluster_id=cid,
                outcome=None if ys is None else ys[j],
                covariates=(self.x1[j], self.x2[j]),
            )
            for j in range(self.n)
        )
        return Cluster(cluster_id=cid, treatment=a, covariates_r=(self.r1, float(self.r2)), members=members)


def generate_cluster(rng: np.random.Generator, cfg: DgpConfig, index: int = 0) -> DgpCluster:
    """Draw one cluster from its dedicated stream."""
    n = int(rng.integers(cfg.n_min, cfg.n_max + 1))
    r1 = n / 10.0 + rng.standard_normal()
    r2 = int(rng.random() < 1.0 / (1.0 + math.exp(-r1 / 2.0)))
    x1 = (rng.random(n) < 0.3 + 0.4 * r2).astype(float)
    sign = 1.0 if r1 > 0 else -1.0
    x2 = sign * x1.mean() + rng.standard_normal(n)
    gamma = _snap(cfg.gamma_sd * rng.standard_normal())
    eps = cfg.noise_sd * rng.standard_normal(n)
    a = int(rng.random() < cfg.randomization_probability)
    base = _snap(math.sin(r1) * (2 * r2 - 1) + np.abs(x1 * x2) + eps)
    t = _snap(n / 50.0)
    return DgpCluster(
        index=index,
        n=n,
        r1=float(r1),
        r2=r2,
        gamma=float(gamma),
        a=a,
        x1=tuple(x1),
        x2=tuple(float(v) for v in x2),
        y0=tuple(float(v) for v in base + gamma),
        y1=tuple(float(v) for v in base + t),
    )


def generate_trial(cfg: DgpConfig) -> tuple[TrialDataset, list[DgpCluster]]:
    """Observed dataset of m clusters plus n_test held-out test clusters.

    Observed clusters expose only the outcome of their assigned arm; the
    test clusters keep both potential outcome vectors.
    """
    observed = []
    for i in range(cfg.m):
        g = generate_cluster(cluster_stream(cfg.seed, i, TAG_OBSERVED), cfg, index=i)
        observed.append(g.to_cluster())
    test = [
        generate_cluster(cluster_stream(cfg.seed, i, TAG_TEST), cfg, index=i)
        for i in range(cfg.n_test)
    ]
    d = TrialDataset(tuple(observed), cfg.randomization_probability)
    validate_dataset(d)
    return d, test


def oracle_length(effects, alpha: float) -> float:
    """Length of the shortest-coverage oracle interval on the effect sample.

    Empirical (1 - alpha) interval [Q(alpha/2), Q(1 - alpha/2)] with
    Q the generalized inverse of the plain ECDF.
    """
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    arr = np.sort(np.asarray(effects, dtype=float).ravel())
    if arr.size < 2:
        raise TooFewEffects(f"need at least 2 effects, got {arr.size}")
    n = arr.size
    levels = np.arange(1, n + 1) / float(n)

    def q(p):
        return float(arr[np.nonzero(levels >= p)[0][0]])

    return q(1.0 - alpha / 2.0) - q(alpha / 2.0)


def estimate_icc(d: TrialDataset, arm: int = 0, adjust: bool = True) -> float:
    """Residual intracluster correlation in one arm (diagnostic).

    With ``adjust`` the one-way ANOVA runs on residuals of an OLS fit on
    individual covariates, otherwise on raw outcomes.  Uses the unequal
    cluster size correction n0 = (N - sum n_i^2 / N) / (k - 1).
    """
    clusters = d.arm(arm)
    if len(clusters) < 2:
        raise TooFewEffects(f"need at least 2 clusters in arm {arm}")
    ys = []
    sizes = []
    feats = []
    for c in clusters:
        ys.extend(r.outcome for r in c.members)
        sizes.append(c.n_retained)
        feats.append(individual_feature_matrix((c,)))
    y = np.asarray(ys, dtype=float)
    if adjust:
        x = np.vstack(feats)
        y = y - OlsModel().fit(x, y).predict(x)
    total = y.size
    k = len(sizes)
    start = 0
    group_means = np.empty(k)
    ss_within = 0.0
    for i, m in enumerate(sizes):
        seg = y[start:start + m]
        group_means[i] = seg.mean()
        ss_within += float(((seg - group_means[i]) ** 2).sum())
        start += m
    grand = y.mean()
    ss_between = float(
        sum(m * (gm - grand) ** 2 for m, gm in zip(sizes, group_means))
    )
    ms_between = ss_between / (k - 1)
    ms_within = ss_within / max(total - k, 1)
    n0 = (total - sum(m * m for m in sizes) / total) / (k - 1)
    denom = ms_between + (n0 - 1) * ms_within
    if denom <= 0:
        return 0.0
    return (ms_between - ms_within) / denom
