"""Command line front end: simulate, analyze, predict, config.

Output conventions: floats print with 6 significant digits; CSV encodes
infinite endpoints as the literals ``-inf``/``inf``; JSON encodes them
as null plus a companion ``*_infinite`` boolean.  Generated-data dumps
use full-precision repr so a dumped replicate re-analyzed from CSV is
bit-identical to the in-memory run.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import pickle
import sys

from .config import (
    RunConfig,
    build_run_config,
    default_document,
    load_config_file,
    merge_documents,
    preset_document,
    validate_document,
)
from .data import (
    SubgroupPredicate,
    TrialDataset,
    filter_subgroup,
    read_trial_csv,
    write_trial_csv,
)
from .conformal import direct_difference
from .errors import (
    ConfigError,
    CrtConformalError,
    DataError,
    DimensionMismatch,
    ModelNotFound,
)
from .evaluation import (
    METHOD_DIRECT,
    METHOD_NESTED,
    METHOD_OBSERVED,
    StudyResult,
    build_intervals,
    fraction_negative,
    mean_length,
    count_infinite,
    regressor_from_config,
    replicate_data,
    run_study,
)
from .rng import derive_seed

MODEL_FILE = "model.pkl"
MANIFEST_FILE = "manifest.json"


# --- value formatting ----------------------------------------------------------

def _fmt(v) -> str:
    """One CSV/stdout cell: 6 significant digits, inf literals, '' for None."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return f"{v:.6g}"
    return str(v)


def _jnum(v: float):
    """JSON float at the printed precision; caller handles infinities."""
    if isinstance(v, int):
        return v
    return float(f"{v:.6g}")


def _jfield(obj: dict, key: str, v) -> None:
    """Store a possibly-infinite float as value-or-null plus a flag."""
    if v is None:
        obj[key] = None
        obj[key + "_infinite"] = False
    elif math.isinf(v):
        obj[key] = None
        obj[key + "_infinite"] = True
    else:
        obj[key] = _jnum(v)
        obj[key + "_infinite"] = False


def _write_csv(path: str, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: str, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


# --- argument parsing -----------------------------------------------------------

def _alpha_list(text: str) -> list:
    try:
        return [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad alpha list {text!r}")


def _method_list(text: str) -> list:
    return [part.strip() for part in text.split(",") if part.strip() != ""]


def _add_shared_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="JSON config file")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--alpha", type=_alpha_list, metavar="A[,A...]",
                   help="miscoverage level(s)")
    p.add_argument("--gamma", type=float, help="nested-method slack level")
    p.add_argument("--train-fraction", type=float, dest="train_fraction",
                   help="fraction of each arm used for training")
    p.add_argument("--calib-size", type=int, dest="calib_size",
                   help="fixed calibration clusters per arm (overrides fraction)")
    p.add_argument("--regressor", choices=["ols", "forest", "ensemble", "zero"],
                   help="centering model family")
    p.add_argument("--methods", type=_method_list, metavar="M[,M...]",
                   help="subset of O,B-direct,B-nested")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--format", choices=["csv", "json"], help="file format")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crtconformal",
        description="Conformal prediction intervals for treatment effects "
                    "in cluster randomized trials.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo study")
    p_sim.add_argument("--preset", choices=[
        "fig1", "fig2", "tableD1", "tableD2", "tableD3", "figS-comparison",
    ], help="named study configuration")
    _add_shared_flags(p_sim)
    p_sim.add_argument("--replicates", type=int, help="number of replicates")
    p_sim.add_argument("--level", choices=["cluster", "individual"],
                       help="restrict the study to one effect level")
    p_sim.add_argument("--subgroup", metavar="EXPR",
                       help="local-scope predicate, e.g. 'r1>=2,r2=1'")
    p_sim.add_argument("--parallelism", type=int, help="worker processes")
    p_sim.add_argument("--dump", action="store_true", default=None,
                       help="write each replicate's datasets and truths")
    p_sim.add_argument("--replicate-rows", action="store_true", default=None,
                       dest="replicate_rows", help="write per-replicate metric rows")

    p_an = sub.add_parser("analyze", help="conformal intervals for a trial CSV")
    p_an.add_argument("data", metavar="DATA_CSV", help="observed trial data")
    p_an.add_argument("test", metavar="TEST_CSV", help="test units")
    _add_shared_flags(p_an)
    p_an.add_argument("--level", choices=["cluster", "individual"],
                      help="effect level (default cluster)")
    p_an.add_argument("--subgroup", metavar="EXPR",
                      help="restrict calibration and test units to a subgroup")
    p_an.add_argument("--score-model", choices=["cluster", "individual_mean"],
                      dest="score_model", help="cluster-level interval center")
    p_an.add_argument("--splits", type=int, help="repeat with K different splits")
    p_an.add_argument("--save-model", action="store_true", default=None,
                      dest="save_model", help="persist fitted predictors to --out")

    p_pr = sub.add_parser("predict", help="apply saved predictors to new covariates")
    p_pr.add_argument("run_dir", metavar="RUN_DIR",
                      help="directory from analyze --save-model")
    p_pr.add_argument("covariates", metavar="COVARIATES_CSV")
    p_pr.add_argument("--out", metavar="DIR", help="output directory")
    p_pr.add_argument("--format", choices=["csv", "json"], help="file format")

    p_cf = sub.add_parser("config", help="print configuration documents")
    p_cf.add_argument("--defaults", action="store_true",
                      help="print the full default config")
    p_cf.add_argument("--preset", choices=[
        "fig1", "fig2", "tableD1", "tableD2", "tableD3", "figS-comparison",
    ], help="print a preset merged over the defaults")

    return parser


def _flags_document(args, keys: dict) -> dict:
    """Collect explicitly provided flags into a config document."""
    doc = {}
    for attr, key in keys.items():
        v = getattr(args, attr, None)
        if v is not None:
            doc[key] = v
    return validate_document(doc, where="command line")


def _merged_document(args, extra: dict) -> dict:
    docs = []
    preset = getattr(args, "preset", None)
    if preset:
        docs.append(preset_document(preset))
    if getattr(args, "config", None):
        docs.append(load_config_file(args.config))
    docs.append(extra)
    return merge_documents(*docs)


# --- simulate -------------------------------------------------------------------

_SIM_FLAG_KEYS = {
    "seed": "seed",
    "alpha": "alphas",
    "gamma": "gamma",
    "replicates": "replicates",
    "train_fraction": "train_fraction",
    "calib_size": "calib_size",
    "regressor": "regressor",
    "methods": "methods",
    "parallelism": "parallelism",
    "out": "out",
    "format": "format",
    "dump": "dump",
    "replicate_rows": "replicate_rows",
}


def cmd_simulate(args) -> int:
    flag_doc = _flags_document(args, _SIM_FLAG_KEYS)
    if args.level is not None or args.subgroup is not None:
        level = args.level or "cluster"
        combos = [[level, "marginal"]]
        if args.subgroup is not None:
            combos.append([level, "local"])
            key = "subgroup_cluster" if level == "cluster" else "subgroup_individual"
            flag_doc[key] = args.subgroup
        flag_doc["combos"] = combos
    rc = build_run_config(_merged_document(args, flag_doc))
    result = run_study(rc.study)
    _print_study_summary(result)
    if rc.out:
        os.makedirs(rc.out, exist_ok=True)
        _write_aggregates(rc, result)
        if rc.replicate_rows:
            _write_replicate_rows(rc, result)
        if rc.dump:
            _dump_replicates(rc)
        print(f"wrote {rc.out}/", file=sys.stderr)
    return 0


_AGG_HEADER = [
    "method", "level", "scope", "score_model", "alpha", "gamma", "metric",
    "mean", "sd", "q25", "median", "q75", "n_replicates", "n_used",
    "n_infinite_total",
]


def _write_aggregates(rc: RunConfig, result: StudyResult) -> None:
    if rc.format == "csv":
        rows = [
            [_fmt(v) for v in (
                a.method, a.level, a.scope, a.score_model, a.alpha, a.gamma,
                a.metric, a.mean, a.sd, a.q25, a.median, a.q75,
                a.n_replicates, a.n_used, a.n_infinite_total,
            )]
            for a in result.aggregates
        ]
        _write_csv(os.path.join(rc.out, "aggregates.csv"), _AGG_HEADER, rows)
        return
    payload = []
    for a in result.aggregates:
        obj = {
            "method": a.method, "level": a.level, "scope": a.scope,
            "score_model": a.score_model, "alpha": _jnum(a.alpha),
            "gamma": None if a.gamma is None else _jnum(a.gamma),
            "metric": a.metric,
        }
        for key in ("mean", "sd", "q25", "median", "q75"):
            _jfield(obj, key, getattr(a, key))
        obj["n_replicates"] = a.n_replicates
        obj["n_used"] = a.n_used
        obj["n_infinite_total"] = a.n_infinite_total
        payload.append(obj)
    _write_json(os.path.join(rc.out, "aggregates.json"), {"aggregates": payload})


_ROW_HEADER = [
    "replicate", "seed", "method", "level", "scope", "score_model", "alpha",
    "gamma", "coverage", "mean_length", "fraction_negative", "oracle_length",
    "n_units", "n_infinite",
]


def _write_replicate_rows(rc: RunConfig, result: StudyResult) -> None:
    if rc.format == "csv":
        rows = [
            [_fmt(v) for v in (
                r.replicate, r.seed, r.method, r.level, r.scope, r.score_model,
                r.alpha, r.gamma, r.coverage, r.mean_length,
                r.fraction_negative, r.oracle_length, r.n_units, r.n_infinite,
            )]
            for r in result.rows
        ]
        _write_csv(os.path.join(rc.out, "replicates.csv"), _ROW_HEADER, rows)
        return
    payload = []
    for r in result.rows:
        obj = {
            "replicate": r.replicate, "seed": r.seed, "method": r.method,
            "level": r.level, "scope": r.scope, "score_model": r.score_model,
            "alpha": _jnum(r.alpha),
            "gamma": None if r.gamma is None else _jnum(r.gamma),
            "coverage": _jnum(r.coverage),
        }
        _jfield(obj, "mean_length", r.mean_length)
        obj["fraction_negative"] = _jnum(r.fraction_negative)
        obj["oracle_length"] = _jnum(r.oracle_length)
        obj["n_units"] = r.n_units
        obj["n_infinite"] = r.n_infinite
        payload.append(obj)
    _write_json(os.path.join(rc.out, "replicates.json"), {"replicates": payload})


def _dump_replicates(rc: RunConfig) -> None:
    cfg = rc.study
    for r in range(cfg.n_replicates):
        _, observed, test, gens = replicate_data(cfg, r)
        ddir = os.path.join(rc.out, "data", f"replicate_{r:04d}")
        os.makedirs(ddir, exist_ok=True)
        write_trial_csv(os.path.join(ddir, "observed.csv"), observed)
        write_trial_csv(os.path.join(ddir, "test.csv"), test)
        with open(os.path.join(ddir, "truth_clusters.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cluster_id", "y1_bar", "y0_bar", "effect"])
            for i, g in enumerate(gens):
                w.writerow([f"t{i}", repr(float(g.y_bar1)), repr(float(g.y_bar0)),
                            repr(float(g.effect))])
        with open(os.path.join(ddir, "truth_individuals.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cluster_id", "member", "y1", "y0", "effect"])
            for i, g in enumerate(gens):
                for j in range(g.n):
                    w.writerow([f"t{i}", j, repr(float(g.y1[j])), repr(float(g.y0[j])),
                                repr(float(g.effect))])


def _print_study_summary(result: StudyResult) -> None:
    by_group: dict = {}
    for a in result.aggregates:
        key = (a.level, a.scope, a.score_model, a.alpha, a.gamma, a.method)
        by_group.setdefault(key, {})[a.metric] = a
    header = (
        f"{'level':<11}{'scope':<10}{'score_model':<16}{'method':<10}"
        f"{'alpha':<7}{'coverage':<21}{'length':<22}{'frac_neg':<10}"
        f"{'oracle':<10}{'n_inf':<6}"
    )
    print(header)
    print("-" * len(header))
    for key, metrics in by_group.items():
        level, scope, sm, alpha, gamma, method = key
        cov = metrics["coverage"]
        lng = metrics["mean_length"]
        fn = metrics["fraction_negative"]
        orc = metrics["oracle_length"]
        print(
            f"{level:<11}{scope:<10}{sm:<16}{method:<10}"
            f"{_fmt(alpha):<7}"
            f"{_fmt(cov.mean) + '(' + _fmt(cov.sd) + ')':<21}"
            f"{_fmt(lng.mean) + '(' + _fmt(lng.sd) + ')':<22}"
            f"{_fmt(fn.mean):<10}"
            f"{_fmt(orc.mean):<10}"
            f"{lng.n_infinite_total:<6}"
        )


# --- analyze --------------------------------------------------------------------

_AN_FLAG_KEYS = {
    "seed": "seed",
    "alpha": "alphas",
    "gamma": "gamma",
    "train_fraction": "train_fraction",
    "calib_size": "calib_size",
    "regressor": "regressor",
    "methods": "methods",
    "out": "out",
    "format": "format",
    "level": "level",
    "subgroup": "subgroup",
    "score_model": "score_model",
    "splits": "splits",
    "save_model": "save_model",
}


def cmd_analyze(args) -> int:
    flag_doc = _flags_document(args, _AN_FLAG_KEYS)
    rc = build_run_config(_merged_document(args, flag_doc))
    study = rc.study
    data = read_trial_csv(args.data, study.randomization_probability)
    test = read_trial_csv(
        args.test, study.randomization_probability, allow_missing_outcome=True
    )
    if rc.subgroup:
        omega = SubgroupPredicate.parse(rc.level, rc.subgroup)
    else:
        omega = SubgroupPredicate.all_units(rc.level)
    outcomes_present = all(
        rec.outcome is not None for c in test.clusters for rec in c.members
    )
    methods = tuple(study.methods)
    if METHOD_OBSERVED in methods and not outcomes_present:
        methods = tuple(m for m in methods if m != METHOD_OBSERVED)
        if not methods:
            raise ConfigError(
                "the observed-arm method needs test outcomes; the test file "
                "has rows without them and no other method was requested"
            )
    proto = regressor_from_config(study)
    bundles = []
    for k in range(rc.splits):
        seed_k = study.base_seed if k == 0 else derive_seed(study.base_seed, "resplit", k)
        bundles.append(
            build_intervals(
                data,
                test,
                level=rc.level,
                methods=methods,
                alphas=study.alphas,
                regressor=proto,
                omega=omega,
                gamma=study.gamma,
                train_fraction=study.train_fraction,
                calib_size=study.calib_size,
                seed=seed_k,
                score_model=rc.score_model,
            )
        )
    first = bundles[0]
    _print_analysis_summary(rc, methods, bundles)
    if rc.out:
        os.makedirs(rc.out, exist_ok=True)
        _write_intervals(rc, methods, first, "intervals")
        _write_analysis_summary(rc, methods, bundles)
        print(f"wrote {rc.out}/", file=sys.stderr)
    if rc.save_model:
        if not rc.out:
            raise ConfigError("--save-model needs --out")
        _save_model(rc, study, methods, omega, data, first)
    return 0


def _interval_rows(rc: RunConfig, methods, bundle) -> list:
    rows = []
    for method in methods:
        for alpha in rc.study.alphas:
            for uid, iv in zip(bundle.unit_ids, bundle.intervals[(method, alpha)]):
                rows.append((uid, bundle.level, method, alpha, iv.lower, iv.upper))
    return rows


def _write_intervals(rc: RunConfig, methods, bundle, stem: str) -> None:
    rows = _interval_rows(rc, methods, bundle)
    if rc.format == "csv":
        _write_csv(
            os.path.join(rc.out, f"{stem}.csv"),
            ["id", "level", "method", "alpha", "lower", "upper"],
            [[_fmt(v) for v in row] for row in rows],
        )
        return
    payload = []
    for uid, level, method, alpha, lower, upper in rows:
        obj = {"id": uid, "level": level, "method": method, "alpha": _jnum(alpha)}
        _jfield(obj, "lower", lower)
        _jfield(obj, "upper", upper)
        payload.append(obj)
    _write_json(os.path.join(rc.out, f"{stem}.json"), {"intervals": payload})


def _analysis_summary_rows(rc: RunConfig, methods, bundles) -> list:
    rows = []
    for method in methods:
        for alpha in rc.study.alphas:
            lengths = [mean_length(b.intervals[(method, alpha)]) for b in bundles]
            negs = [fraction_negative(b.intervals[(method, alpha)]) for b in bundles]
            finite = [v for v in lengths if math.isfinite(v)]
            if finite:
                l_mean = sum(finite) / len(finite)
                l_sd = _sd(finite)
            else:
                l_mean = math.inf
                l_sd = math.inf
            n_trivial_splits = len(lengths) - len(finite)
            f_mean = sum(negs) / len(negs)
            f_sd = _sd(negs)
            first = bundles[0].intervals[(method, alpha)]
            rows.append({
                "method": method,
                "alpha": alpha,
                "n_units": len(first),
                "n_splits": len(bundles),
                "mean_length": l_mean,
                "sd_length": l_sd,
                "fraction_negative": f_mean,
                "sd_fraction_negative": f_sd,
                "n_infinite": count_infinite(first),
                "n_trivial_splits": n_trivial_splits,
                "crossings": bundles[0].nested_crossings.get(alpha)
                if method == METHOD_NESTED else None,
            })
    return rows


def _sd(values) -> float:
    if len(values) < 2:
        return 0.0
    m = sum(values) / len(values)
    return math.sqrt(sum((v - m) ** 2 for v in values) / (len(values) - 1))


def _print_analysis_summary(rc: RunConfig, methods, bundles) -> None:
    rows = _analysis_summary_rows(rc, methods, bundles)
    header = (
        f"{'method':<10}{'alpha':<7}{'n_units':<9}{'length':<20}"
        f"{'frac_neg':<18}{'n_inf':<7}"
    )
    print(header)
    print("-" * len(header))
    for r in rows:
        print(
            f"{r['method']:<10}{_fmt(r['alpha']):<7}{r['n_units']:<9}"
            f"{_fmt(r['mean_length']) + '(' + _fmt(r['sd_length']) + ')':<20}"
            f"{_fmt(r['fraction_negative']) + '(' + _fmt(r['sd_fraction_negative']) + ')':<18}"
            f"{r['n_infinite']:<7}"
        )


def _write_analysis_summary(rc: RunConfig, methods, bundles) -> None:
    rows = _analysis_summary_rows(rc, methods, bundles)
    if rc.format == "csv":
        header = [
            "method", "alpha", "n_units", "n_splits", "mean_length",
            "sd_length", "fraction_negative", "sd_fraction_negative",
            "n_infinite", "n_trivial_splits", "crossings",
        ]
        _write_csv(
            os.path.join(rc.out, "summary.csv"),
            header,
            [[_fmt(r[k]) for k in header] for r in rows],
        )
        return
    payload = []
    for r in rows:
        obj = {
            "method": r["method"], "alpha": _jnum(r["alpha"]),
            "n_units": r["n_units"], "n_splits": r["n_splits"],
        }
        _jfield(obj, "mean_length", r["mean_length"])
        _jfield(obj, "sd_length", r["sd_length"])
        obj["fraction_negative"] = _jnum(r["fraction_negative"])
        obj["sd_fraction_negative"] = _jnum(r["sd_fraction_negative"])
        obj["n_infinite"] = r["n_infinite"]
        obj["n_trivial_splits"] = r["n_trivial_splits"]
        obj["crossings"] = r["crossings"]
        payload.append(obj)
    _write_json(os.path.join(rc.out, "summary.json"), {"summary": payload})


def _save_model(rc, study, methods, omega, data: TrialDataset, bundle) -> None:
    p_x = len(data.clusters[0].members[0].covariates)
    p_r = len(data.clusters[0].covariates_r)
    manifest = {
        "level": rc.level,
        "score_model": rc.score_model,
        "subgroup": "" if omega.is_all else omega.serialize(),
        "alphas": [_jnum(a) for a in study.alphas],
        "gamma": _jnum(study.gamma),
        "methods": list(methods),
        "seed": study.base_seed,
        "p_x": p_x,
        "p_r": p_r,
        "regressor": study.regressor,
    }
    payload = {
        "manifest": manifest,
        "predictors": bundle.predictors,
        "nested_predictors": bundle.nested_predictors,
    }
    with open(os.path.join(rc.out, MODEL_FILE), "wb") as fh:
        pickle.dump(payload, fh, protocol=4)
    _write_json(os.path.join(rc.out, MANIFEST_FILE), manifest)


# --- predict --------------------------------------------------------------------

def cmd_predict(args) -> int:
    model_path = os.path.join(args.run_dir, MODEL_FILE)
    if not os.path.isfile(model_path):
        raise ModelNotFound(f"no {MODEL_FILE} under {args.run_dir!r}")
    with open(model_path, "rb") as fh:
        payload = pickle.load(fh)
    manifest = payload["manifest"]
    level = manifest["level"]
    cov = read_trial_csv(args.covariates, allow_missing_outcome=True)
    fmt = args.format or "csv"
    out_rows: list = []
    if cov.n_clusters:
        p_x = len(cov.clusters[0].members[0].covariates)
        p_r = len(cov.clusters[0].covariates_r)
        if p_x != manifest["p_x"] or p_r != manifest["p_r"]:
            raise DimensionMismatch(
                f"covariates have p_x={p_x}, p_r={p_r}; the model expects "
                f"p_x={manifest['p_x']}, p_r={manifest['p_r']}"
            )
        if manifest["subgroup"]:
            omega = SubgroupPredicate.parse(level, manifest["subgroup"])
            cov = filter_subgroup(cov, omega)
        clusters = cov.clusters
        if level == "cluster":
            unit_ids = [c.cluster_id for c in clusters]
        else:
            unit_ids = [
                f"{c.cluster_id}:{j}" for c in clusters for j in range(c.n_retained)
            ]
        predictors = payload["predictors"]
        arm_ivs: dict = {}
        for (arm, alpha), pred in sorted(predictors.items()):
            ivs = (
                pred.intervals_for_clusters(clusters)
                if level == "cluster"
                else pred.intervals_for_individuals(clusters)
            )
            arm_ivs[(arm, alpha)] = ivs
            for uid, iv in zip(unit_ids, ivs):
                out_rows.append((uid, level, f"arm{arm}", alpha, iv.lower, iv.upper))
        alphas = sorted({alpha for (_, alpha) in predictors})
        for alpha in alphas:
            if (0, alpha) in arm_ivs and (1, alpha) in arm_ivs:
                for uid, iv1, iv0 in zip(unit_ids, arm_ivs[(1, alpha)], arm_ivs[(0, alpha)]):
                    d = direct_difference(iv1, iv0)
                    out_rows.append((uid, level, METHOD_DIRECT, alpha, d.lower, d.upper))
        for alpha, nested in sorted(payload.get("nested_predictors", {}).items()):
            for uid, iv in zip(unit_ids, nested.intervals(clusters)):
                out_rows.append((uid, level, METHOD_NESTED, alpha, iv.lower, iv.upper))

    header = ["id", "level", "method", "alpha", "lower", "upper"]
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        if fmt == "csv":
            _write_csv(
                os.path.join(args.out, "predictions.csv"),
                header,
                [[_fmt(v) for v in row] for row in out_rows],
            )
        else:
            payload_rows = []
            for uid, lvl, method, alpha, lower, upper in out_rows:
                obj = {"id": uid, "level": lvl, "method": method, "alpha": _jnum(alpha)}
                _jfield(obj, "lower", lower)
                _jfield(obj, "upper", upper)
                payload_rows.append(obj)
            _write_json(os.path.join(args.out, "predictions.json"),
                        {"intervals": payload_rows})
        print(f"wrote {args.out}/", file=sys.stderr)
    else:
        print(",".join(header))
        for row in out_rows:
            print(",".join(_fmt(v) for v in row))
    return 0


# --- config ---------------------------------------------------------------------

def cmd_config(args) -> int:
    if args.preset:
        doc = merge_documents(preset_document(args.preset))
    else:
        doc = default_document()
    print(json.dumps(doc, indent=2))
    return 0


# --- entry point ----------------------------------------------------------------

def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": cmd_simulate,
        "analyze": cmd_analyze,
        "predict": cmd_predict,
        "config": cmd_config,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, DataError, ModelNotFound) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        # Downstream pager/head closed the pipe; not an error of ours.
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CrtConformalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
