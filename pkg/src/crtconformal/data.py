"""Domain types for cluster randomized trial data.

A trial is a collection of clusters; treatment is assigned per cluster and
every member of a cluster shares its arm. Cluster-level procedures work on
``ClusterSummary`` aggregates (mean outcome, mean covariates, cluster-level
covariates, size); individual-level procedures work on the raw records.

All types are frozen dataclasses holding tuples, so validated datasets are
immutable and safe to share across threads or worker processes.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    ConstantWithinClusterViolation,
    DimensionMismatch,
    DuplicateClusterId,
    EmptyCluster,
    EmptyResult,
    MissingOutcome,
    NonBinaryTreatment,
)


@dataclass(frozen=True)
class IndividualRecord:
    """One individual: outcome (may be absent on prediction-only records) and covariates."""

    cluster_id: str
    outcome: float | None
    covariates: tuple[float, ...]


@dataclass(frozen=True)
class Cluster:
    """One cluster: arm assignment, cluster-level covariates, and members.

    ``size`` is the cluster size covariate N as sampled. It normally equals
    ``len(members)``; after individual-level subgroup filtering the members
    shrink to the retained set while ``size`` keeps the original N, because N
    enters predicates and regression features as a covariate. The retained
    count is ``n_retained``.
    """

    cluster_id: str
    treatment: int
    covariates_r: tuple[float, ...]
    members: tuple[IndividualRecord, ...]
    size: int = field(default=-1)

    def __post_init__(self) -> None:
        if self.size < 0:
            object.__setattr__(self, "size", len(self.members))

    @property
    def n_retained(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class TrialDataset:
    """All clusters of a trial plus the known randomization probability."""

    clusters: tuple[Cluster, ...]
    randomization_probability: float = 0.5

    def arm(self, a: int) -> tuple[Cluster, ...]:
        return tuple(c for c in self.clusters if c.treatment == a)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)


@dataclass(frozen=True)
class ClusterSummary:
    """Per-cluster aggregates: mean outcome and the covariate triple (x_bar, r, size)."""

    cluster_id: str
    treatment: int
    y_bar: float
    x_bar: tuple[float, ...]
    r: tuple[float, ...]
    size: int


@dataclass(frozen=True)
class Interval:
    """Closed interval on the extended reals; ``(-inf, inf)`` is the trivial interval."""

    lower: float
    upper: float

    def __post_init__(self) -> None:
        if math.isnan(self.lower) or math.isnan(self.upper):
            raise ValueError("interval endpoints must not be NaN")
        if self.lower > self.upper:
            raise ValueError(f"interval lower {self.lower} exceeds upper {self.upper}")

    @property
    def length(self) -> float:
        return self.upper - self.lower

    @property
    def is_trivial(self) -> bool:
        return math.isinf(self.lower) and math.isinf(self.upper)

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper


TRIVIAL_INTERVAL = Interval(-math.inf, math.inf)

_OPS = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "=": lambda a, b: a == b,
}

_CLAUSE_RE = re.compile(r"^\s*([a-zA-Z]_?\d*)\s*(<=|>=|==|<|>|=)\s*(-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)\s*$")


@dataclass(frozen=True)
class SubgroupPredicate:
    """Conjunction of threshold comparisons over covariate components.

    Components are named ``x1..xp`` (individual covariates, or their cluster
    means at the cluster level), ``r1..rp`` (cluster-level covariates), and
    ``n`` (the original cluster size). An empty clause tuple is the "all"
    predicate. Restricted to this form so predicates serialize into config
    files; evaluation is pure.
    """

    level: str
    clauses: tuple[tuple[str, str, float], ...] = ()

    def __post_init__(self) -> None:
        if self.level not in ("cluster", "individual"):
            raise ConfigError(f"predicate level must be cluster or individual, got {self.level!r}")
        for comp, op, _ in self.clauses:
            if op not in _OPS:
                raise ConfigError(f"unknown predicate operator {op!r}")
            if not re.fullmatch(r"(x|r)\d+|n", comp):
                raise ConfigError(f"unknown predicate component {comp!r}")

    @classmethod
    def all_units(cls, level: str) -> "SubgroupPredicate":
        return cls(level=level, clauses=())

    @classmethod
    def parse(cls, level: str, expr: str) -> "SubgroupPredicate":
        """Parse ``"r1>=2, r2=1"`` style conjunctions; ``"all"`` accepts everything.

        Clauses are separated by commas or the word ``and``. Components may be
        written ``x2`` or ``x_2``; ``=`` and ``==`` both mean equality.
        """
        text = expr.strip()
        if text.lower() == "all" or text == "":
            return cls.all_units(level)
        clauses = []
        for raw in re.split(r",|\band\b", text):
            if not raw.strip():
                continue
            m = _CLAUSE_RE.match(raw)
            if m is None:
                raise ConfigError(f"cannot parse subgroup clause {raw.strip()!r}")
            comp = m.group(1).lower().replace("_", "")
            op = "=" if m.group(2) == "==" else m.group(2)
            clauses.append((comp, op, float(m.group(3))))
        return cls(level=level, clauses=tuple(clauses))

    def serialize(self) -> str:
        if not self.clauses:
            return "all"
        return ",".join(f"{c}{op}{_format_threshold(t)}" for c, op, t in self.clauses)

    @property
    def is_all(self) -> bool:
        return not self.clauses

    def _evaluate(self, lookup) -> bool:
        for comp, op, threshold in self.clauses:
            if not _OPS[op](lookup(comp), threshold):
                return False
        return True

    def matches_cluster(self, summary: ClusterSummary) -> bool:
        """Evaluate against cluster-level covariates (x_bar, r, original N)."""

        def lookup(comp: str) -> float:
            if comp == "n":
                return float(summary.size)
            k = int(comp[1:]) - 1
            vec = summary.x_bar if comp[0] == "x" else summary.r
            if k < 0 or k >= len(vec):
                raise DimensionMismatch(f"predicate component {comp} out of range for p={len(vec)}")
            return vec[k]

        return self._evaluate(lookup)

    def matches_individual(self, record: IndividualRecord, cluster: Cluster) -> bool:
        """Evaluate against an individual's B = (X, R, N) with the original N."""

        def lookup(comp: str) -> float:
            if comp == "n":
                return float(cluster.size)
            k = int(comp[1:]) - 1
            vec = record.covariates if comp[0] == "x" else cluster.covariates_r
            if k < 0 or k >= len(vec):
                raise DimensionMismatch(f"predicate component {comp} out of range for p={len(vec)}")
            return vec[k]

        return self._evaluate(lookup)


def _format_threshold(t: float) -> str:
    return repr(int(t)) if float(t).is_integer() else repr(t)


def validate_dataset(raw: TrialDataset) -> TrialDataset:
    """Check every type invariant and return the dataset unchanged.

    Raises
    ------
    DuplicateClusterId, NonBinaryTreatment, EmptyCluster, DimensionMismatch
        On the first violated invariant.
    """
    seen: set[str] = set()
    p_x: int | None = None
    p_r: int | None = None
    for cluster in raw.clusters:
        if cluster.cluster_id in seen:
            raise DuplicateClusterId(f"duplicate cluster_id {cluster.cluster_id!r}")
        seen.add(cluster.cluster_id)
        if cluster.treatment not in (0, 1):
            raise NonBinaryTreatment(
                f"cluster {cluster.cluster_id!r} has treatment {cluster.treatment!r}"
            )
        if not cluster.members:
            raise EmptyCluster(f"cluster {cluster.cluster_id!r} has no members")
        if cluster.size != len(cluster.members):
            raise EmptyCluster(
                f"cluster {cluster.cluster_id!r} size {cluster.size} != member count {len(cluster.members)}"
            )
        if p_r is None:
            p_r = len(cluster.covariates_r)
        elif len(cluster.covariates_r) != p_r:
            raise DimensionMismatch(
                f"cluster {cluster.cluster_id!r} has {len(cluster.covariates_r)} r-covariates, expected {p_r}"
            )
        for rec in cluster.members:
            if rec.cluster_id != cluster.cluster_id:
                raise DuplicateClusterId(
                    f"record in cluster {cluster.cluster_id!r} carries cluster_id {rec.cluster_id!r}"
                )
            if p_x is None:
                p_x = len(rec.covariates)
            elif len(rec.covariates) != p_x:
                raise DimensionMismatch(
                    f"record in cluster {cluster.cluster_id!r} has {len(rec.covariates)} covariates, expected {p_x}"
                )
    if not 0.0 < raw.randomization_probability < 1.0:
        raise ConfigError(
            f"randomization_probability must be in (0,1), got {raw.randomization_probability}"
        )
    return raw


def summarize_cluster(c: Cluster) -> ClusterSummary:
    """Aggregate one cluster to (y_bar, x_bar, r, size).

    Raises
    ------
    MissingOutcome
        If any member lacks an outcome.
    EmptyCluster
        If the cluster has no members.
    """
    if not c.members:
        raise EmptyCluster(f"cluster {c.cluster_id!r} has no members")
    outcomes = []
    for rec in c.members:
        if rec.outcome is None:
            raise MissingOutcome(f"cluster {c.cluster_id!r} has a member without outcome")
        outcomes.append(rec.outcome)
    x = np.asarray([rec.covariates for rec in c.members], dtype=float)
    x_bar = tuple(float(v) for v in x.mean(axis=0)) if x.size else ()
    return ClusterSummary(
        cluster_id=c.cluster_id,
        treatment=c.treatment,
        y_bar=float(np.mean(outcomes)),
        x_bar=x_bar,
        r=c.covariates_r,
        size=c.size,
    )


def cluster_covariate_summary(c: Cluster) -> ClusterSummary:
    """Like summarize_cluster but tolerates missing outcomes (y_bar = nan).

    Used to evaluate cluster-level predicates and features on prediction-only
    data, where B_bar = (x_bar, r, N) is defined but outcomes are absent.
    """
    if not c.members:
        raise EmptyCluster(f"cluster {c.cluster_id!r} has no members")
    x = np.asarray([rec.covariates for rec in c.members], dtype=float)
    x_bar = tuple(float(v) for v in x.mean(axis=0)) if x.size else ()
    return ClusterSummary(
        cluster_id=c.cluster_id,
        treatment=c.treatment,
        y_bar=math.nan,
        x_bar=x_bar,
        r=c.covariates_r,
        size=c.size,
    )


def filter_subgroup(d: TrialDataset, omega: SubgroupPredicate) -> TrialDataset:
    """Restrict a dataset to the subgroup, preserving exchangeability structure.

    Cluster-level predicates drop whole clusters whose B_bar falls outside the
    subgroup. Individual-level predicates drop non-matching individuals, then
    drop clusters left empty; retained clusters keep their original ``size``
    covariate while ``members`` shrink to the retained individuals.

    Raises
    ------
    EmptyResult
        If no cluster survives (the subgroup is empty in-sample).
    """
    if omega.is_all:
        return d
    kept: list[Cluster] = []
    if omega.level == "cluster":
        for cluster in d.clusters:
            if omega.matches_cluster(cluster_covariate_summary(cluster)):
                kept.append(cluster)
    else:
        for cluster in d.clusters:
            retained = tuple(
                rec for rec in cluster.members if omega.matches_individual(rec, cluster)
            )
            if retained:
                kept.append(
                    Cluster(
                        cluster_id=cluster.cluster_id,
                        treatment=cluster.treatment,
                        covariates_r=cluster.covariates_r,
                        members=retained,
                        size=cluster.size,
                    )
                )
    if not kept:
        raise EmptyResult(f"no clusters remain after subgroup filter {omega.serialize()!r}")
    return TrialDataset(clusters=tuple(kept), randomization_probability=d.randomization_probability)


# --- feature construction ----------------------------------------------------

def summary_features(summary: ClusterSummary) -> np.ndarray:
    """B_bar feature row: (x_bar, r, N)."""
    return np.asarray([*summary.x_bar, *summary.r, float(summary.size)], dtype=float)


def individual_features(record: IndividualRecord, cluster: Cluster) -> np.ndarray:
    """Individual B feature row: (x, r, N) with the original cluster size."""
    return np.asarray(
        [*record.covariates, *cluster.covariates_r, float(cluster.size)], dtype=float
    )


def individual_feature_matrix(clusters: tuple[Cluster, ...]) -> np.ndarray:
    """Stacked individual feature rows over all members of all clusters."""
    rows = [individual_features(rec, c) for c in clusters for rec in c.members]
    if not rows:
        return np.empty((0, 0), dtype=float)
    return np.vstack(rows)


# --- CSV ingestion ------------------------------------------------------------

def _parse_header(header: list[str]) -> tuple[int, int]:
    if header[:3] != ["cluster_id", "treatment", "outcome"]:
        raise ConfigError(
            "CSV header must start with cluster_id,treatment,outcome; got " + ",".join(header[:3])
        )
    p_x = 0
    idx = 3
    while idx < len(header) and header[idx] == f"x_{p_x + 1}":
        p_x += 1
        idx += 1
    p_r = 0
    while idx < len(header) and header[idx] == f"r_{p_r + 1}":
        p_r += 1
        idx += 1
    if idx != len(header):
        raise ConfigError(f"unexpected CSV column {header[idx]!r}; schema is cluster_id,treatment,outcome,x_1..x_px,r_1..r_pr")
    return p_x, p_r


def read_trial_csv(
    path: str,
    randomization_probability: float = 0.5,
    allow_missing_outcome: bool = False,
) -> TrialDataset:
    """Read the one-row-per-individual trial schema into a validated dataset.

    Schema: ``cluster_id,treatment,outcome,x_1..x_px,r_1..r_pr``. The r_*
    columns and treatment must be constant within each cluster_id. The outcome
    field may be empty only when ``allow_missing_outcome`` (prediction files).

    Raises
    ------
    ConfigError, NonBinaryTreatment, ConstantWithinClusterViolation, MissingOutcome
        On schema violations, with the offending row number in the message.
    """
    order: list[str] = []
    rows_by_cluster: dict[str, list[IndividualRecord]] = {}
    meta: dict[str, tuple[int, tuple[float, ...]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty CSV") from None
        p_x, p_r = _parse_header(header)
        width = 3 + p_x + p_r
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ConfigError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            cid = row[0]
            try:
                treatment = int(float(row[1]))
            except ValueError:
                raise NonBinaryTreatment(f"{path}:{lineno}: treatment {row[1]!r}") from None
            if float(row[1]) != treatment or treatment not in (0, 1):
                raise NonBinaryTreatment(f"{path}:{lineno}: treatment {row[1]!r}")
            if row[2] == "":
                if not allow_missing_outcome:
                    raise MissingOutcome(f"{path}:{lineno}: empty outcome in a training/analysis file")
                outcome: float | None = None
            else:
                outcome = float(row[2])
            x = tuple(float(v) for v in row[3 : 3 + p_x])
            r = tuple(float(v) for v in row[3 + p_x :])
            if cid not in rows_by_cluster:
                order.append(cid)
                rows_by_cluster[cid] = []
                meta[cid] = (treatment, r)
            else:
                prev_a, prev_r = meta[cid]
                if treatment != prev_a:
                    raise ConstantWithinClusterViolation(
                        f"{path}:{lineno}: treatment changes within cluster {cid!r}"
                    )
                if r != prev_r:
                    raise ConstantWithinClusterViolation(
                        f"{path}:{lineno}: r_* columns change within cluster {cid!r}"
                    )
            rows_by_cluster[cid].append(IndividualRecord(cluster_id=cid, outcome=outcome, covariates=x))
    clusters = tuple(
        Cluster(
            cluster_id=cid,
            treatment=meta[cid][0],
            covariates_r=meta[cid][1],
            members=tuple(rows_by_cluster[cid]),
        )
        for cid in order
    )
    return validate_dataset(
        TrialDataset(clusters=clusters, randomization_probability=randomization_probability)
    )


def write_trial_csv(path: str, dataset: TrialDataset) -> None:
    """Write a dataset in the ingestion schema with full-precision floats."""
    p_x = len(dataset.clusters[0].members[0].covariates) if dataset.clusters else 0
    p_r = len(dataset.clusters[0].covariates_r) if dataset.clusters else 0
    header = (
        ["cluster_id", "treatment", "outcome"]
        + [f"x_{k + 1}" for k in range(p_x)]
        + [f"r_{k + 1}" for k in range(p_r)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for cluster in dataset.clusters:
            for rec in cluster.members:
                # float() first: numpy scalars repr as 'np.float64(...)'.
                writer.writerow(
                    [
                        cluster.cluster_id,
                        cluster.treatment,
                        "" if rec.outcome is None else repr(float(rec.outcome)),
                    ]
                    + [repr(float(v)) for v in rec.covariates]
                    + [repr(float(v)) for v in cluster.covariates_r]
                )
