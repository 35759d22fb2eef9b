import csv
import json
import math
import subprocess
import sys

import pytest

from crtconformal import cli
from crtconformal.data import read_trial_csv
from crtconformal.errors import InsufficientCalibration
from crtconformal.evaluation import StudyConfig, build_intervals, replicate_data
from crtconformal.regressors import OlsModel


def run_cli(args):
    return cli.main([str(a) for a in args])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


BASE = ["--seed", 11, "--alpha", "0.2", "--regressor", "ols", "--replicates", 2]


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "run"
    code = run_cli(["simulate", *BASE, "--out", out, "--dump", "--replicate-rows"])
    assert code == 0
    return out


def test_config_defaults_and_preset(capsys):
    assert run_cli(["config", "--defaults"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["m"] == 100 and doc["alphas"] == [0.1]
    assert run_cli(["config", "--preset", "tableD1"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["m"] == 30 and doc["calib_size"] == 10


def test_simulate_outputs(sim_dir, capsys):
    rows = read_csv(sim_dir / "aggregates.csv")
    assert rows[0][:7] == ["method", "level", "scope", "score_model", "alpha", "gamma", "metric"]
    methods = {r[0] for r in rows[1:]}
    assert methods == {"O", "B-direct", "B-nested"}
    rep_rows = read_csv(sim_dir / "replicates.csv")
    assert rep_rows[0][0] == "replicate"
    assert len(rep_rows) == 1 + 2 * 3  # 2 replicates x 3 methods
    for r in range(2):
        ddir = sim_dir / "data" / f"replicate_{r:04d}"
        for name in ("observed.csv", "test.csv", "truth_clusters.csv", "truth_individuals.csv"):
            assert (ddir / name).exists()


def test_simulate_json_format(tmp_path, capsys):
    out = tmp_path / "j"
    assert run_cli(["simulate", *BASE, "--out", out, "--format", "json"]) == 0
    payload = json.loads((out / "aggregates.json").read_text())
    aggs = payload["aggregates"]
    assert {a["method"] for a in aggs} == {"O", "B-direct", "B-nested"}
    for a in aggs:
        assert "mean_infinite" in a and isinstance(a["mean_infinite"], bool)


def test_simulate_stdout_summary(tmp_path, capsys):
    assert run_cli(["simulate", *BASE]) == 0
    outp = capsys.readouterr().out
    assert "coverage" in outp and "B-direct" in outp


def test_dump_matches_study_config(sim_dir):
    # the dumped truth file lines up with the dumped test data
    truth = read_csv(sim_dir / "data" / "replicate_0000" / "truth_clusters.csv")
    test = read_trial_csv(
        str(sim_dir / "data" / "replicate_0000" / "test.csv"), allow_missing_outcome=True
    )
    assert truth[0] == ["cluster_id", "y1_bar", "y0_bar", "effect"]
    assert [r[0] for r in truth[1:]] == [c.cluster_id for c in test.clusters]


def test_analyze_round_trip_bit_equal(sim_dir, tmp_path, capsys):
    ddir = sim_dir / "data" / "replicate_0000"
    out = tmp_path / "an"
    code = run_cli([
        "analyze", ddir / "observed.csv", ddir / "test.csv",
        "--seed", 11, "--alpha", "0.2", "--regressor", "ols", "--out", out,
    ])
    assert code == 0
    # reference: the in-memory replicate pipeline at the same seed
    cfg = StudyConfig(m=100, n_test=500, n_replicates=2, base_seed=11,
                      regressor="ols", alphas=(0.2,))
    rep_seed, observed, test, _ = replicate_data(cfg, 0)
    assert rep_seed == 11
    bundle = build_intervals(
        observed, test, level="cluster", methods=("O", "B-direct", "B-nested"),
        alphas=(0.2,), regressor=OlsModel(), gamma=0.5, seed=11,
    )
    got = read_csv(out / "intervals.csv")
    assert got[0] == ["id", "level", "method", "alpha", "lower", "upper"]
    by_key = {(r[0], r[2]): (r[4], r[5]) for r in got[1:]}
    for method in ("O", "B-direct", "B-nested"):
        for uid, iv in zip(bundle.unit_ids, bundle.intervals[(method, 0.2)]):
            want = (f"{iv.lower:.6g}", f"{iv.upper:.6g}")
            assert by_key[(uid, method)] == want
    # and the summary mean length agrees with the recorded replicate row
    rep_rows = read_csv(sim_dir / "replicates.csv")
    head = rep_rows[0]
    recorded = {
        r[head.index("method")]: r[head.index("mean_length")]
        for r in rep_rows[1:]
        if r[head.index("replicate")] == "0"
    }
    summary = read_csv(out / "summary.csv")
    shead = summary[0]
    for r in summary[1:]:
        assert r[shead.index("mean_length")] == recorded[r[shead.index("method")]]


def test_analyze_drops_o_without_outcomes(sim_dir, tmp_path, capsys):
    ddir = sim_dir / "data" / "replicate_0000"
    # blank the outcome column of the test file
    rows = read_csv(ddir / "test.csv")
    cov_path = tmp_path / "cov.csv"
    with open(cov_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(rows[0])
        for r in rows[1:]:
            r[2] = ""
            w.writerow(r)
    out = tmp_path / "an2"
    code = run_cli([
        "analyze", ddir / "observed.csv", cov_path,
        "--seed", 11, "--alpha", "0.2", "--regressor", "ols", "--out", out,
    ])
    assert code == 0
    methods = {r[2] for r in read_csv(out / "intervals.csv")[1:]}
    assert methods == {"B-direct", "B-nested"}  # O silently dropped
    code = run_cli([
        "analyze", ddir / "observed.csv", cov_path,
        "--seed", 11, "--alpha", "0.2", "--regressor", "ols", "--methods", "O",
    ])
    assert code == 2
    assert "test outcomes" in capsys.readouterr().err


def test_analyze_splits(sim_dir, tmp_path, capsys):
    ddir = sim_dir / "data" / "replicate_0000"
    out1 = tmp_path / "s1"
    out3 = tmp_path / "s3"
    common = ["analyze", ddir / "observed.csv", ddir / "test.csv",
              "--seed", 11, "--alpha", "0.2", "--regressor", "ols", "--methods", "O,B-direct"]
    assert run_cli([*common, "--out", out1]) == 0
    assert run_cli([*common, "--splits", 3, "--out", out3]) == 0
    # the intervals file is always the first split, so it is unchanged
    assert (out1 / "intervals.csv").read_bytes() == (out3 / "intervals.csv").read_bytes()
    summary = read_csv(out3 / "summary.csv")
    head = summary[0]
    for r in summary[1:]:
        assert r[head.index("n_splits")] == "3"
        assert float(r[head.index("sd_length")]) > 0.0


def test_analyze_subgroup_filters_units(sim_dir, tmp_path, capsys):
    ddir = sim_dir / "data" / "replicate_0000"
    out = tmp_path / "sub"
    code = run_cli([
        "analyze", ddir / "observed.csv", ddir / "test.csv",
        "--seed", 11, "--alpha", "0.2", "--regressor", "ols",
        "--methods", "O", "--subgroup", "r1>=2,r2=1", "--out", out,
    ])
    assert code == 0
    n_sub = len(read_csv(out / "intervals.csv")) - 1
    n_all = read_trial_csv(str(ddir / "test.csv"), allow_missing_outcome=True).n_clusters
    assert 0 < n_sub < n_all


def test_predict_flow(sim_dir, tmp_path, capsys):
    ddir = sim_dir / "data" / "replicate_0000"
    run_dir = tmp_path / "fit"
    code = run_cli([
        "analyze", ddir / "observed.csv", ddir / "test.csv",
        "--seed", 11, "--alpha", "0.2", "--regressor", "ols",
        "--out", run_dir, "--save-model",
    ])
    assert code == 0
    assert (run_dir / "model.pkl").exists()
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["level"] == "cluster" and manifest["p_x"] == 2
    capsys.readouterr()

    assert run_cli(["predict", run_dir, ddir / "test.csv"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "id,level,method,alpha,lower,upper"
    methods = {line.split(",")[2] for line in lines[1:]}
    assert methods == {"arm0", "arm1", "B-direct", "B-nested"}

    out = tmp_path / "pred"
    assert run_cli(["predict", run_dir, ddir / "test.csv", "--out", out, "--format", "json"]) == 0
    payload = json.loads((out / "predictions.json").read_text())
    assert payload["intervals"][0]["lower_infinite"] is False


def test_predict_empty_and_mismatch(sim_dir, tmp_path, capsys):
    ddir = sim_dir / "data" / "replicate_0000"
    run_dir = tmp_path / "fit"
    run_cli([
        "analyze", ddir / "observed.csv", ddir / "test.csv",
        "--seed", 11, "--alpha", "0.2", "--regressor", "ols",
        "--methods", "O", "--out", run_dir, "--save-model",
    ])
    capsys.readouterr()

    empty = tmp_path / "empty.csv"
    empty.write_text(read_csv(ddir / "test.csv")[0] and ",".join(read_csv(ddir / "test.csv")[0]) + "\n")
    assert run_cli(["predict", run_dir, empty]) == 0
    out_lines = capsys.readouterr().out.strip().splitlines()
    assert out_lines == ["id,level,method,alpha,lower,upper"]

    bad = tmp_path / "bad.csv"
    rows = read_csv(ddir / "test.csv")
    with open(bad, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(rows[0][:4] + rows[0][5:])  # drop x_2
        for r in rows[1:4]:
            w.writerow(r[:4] + r[5:])
    assert run_cli(["predict", run_dir, bad]) == 2
    assert "p_x" in capsys.readouterr().err

    assert run_cli(["predict", tmp_path / "nowhere", empty]) == 2


def test_exit_codes(tmp_path, capsys):
    assert run_cli(["analyze", "missing.csv", "also_missing.csv"]) == 2
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"无效": true}')
    assert run_cli(["simulate", "--config", cfg]) == 2
    cfg.write_text("{broken")
    assert run_cli(["simulate", "--config", cfg]) == 2
    with pytest.raises(SystemExit):
        run_cli(["simulate", "--format", "pdf"])
    capsys.readouterr()


def test_calibration_warning_names_condition(sim_dir, tmp_path):
    ddir = sim_dir / "data" / "replicate_0000"
    # alpha = 0.01 needs 99 calibration clusters; 50 per arm cannot comply
    with pytest.warns(InsufficientCalibration, match="need at least 99"):
        run_cli([
            "analyze", ddir / "observed.csv", ddir / "test.csv",
            "--seed", 11, "--alpha", "0.01", "--regressor", "ols", "--methods", "O",
        ])


def test_cli_determinism_byte_identical(tmp_path):
    args = ["simulate", "--preset", "figS-comparison", "--replicates", 2,
            "--seed", 5, "--regressor", "ols", "--replicate-rows"]
    outs = []
    for name, extra in (("a", []), ("b", []), ("c", ["--parallelism", 2])):
        out = tmp_path / name
        assert run_cli([*args, *extra, "--out", out]) == 0
        outs.append(out)
    for name in ("aggregates.csv", "replicates.csv"):
        ref = (outs[0] / name).read_bytes()
        assert (outs[1] / name).read_bytes() == ref
        assert (outs[2] / name).read_bytes() == ref


def test_console_script_installed():
    proc = subprocess.run(
        ["crtconformal", "config", "--defaults"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["m"] == 100


def test_flag_overrides_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"replicates": 1, "seed": 1, "alphas": [0.5],
                               "regressor": "zero", "m": 10, "n_test": 4}))
    out = tmp_path / "o"
    assert run_cli(["simulate", "--config", cfg, "--seed", 9, "--out", out,
                    "--replicate-rows"]) == 0
    rows = read_csv(out / "replicates.csv")
    head = rows[0]
    assert rows[1][head.index("seed")] == "9"  # flag beats file
    assert rows[1][head.index("alpha")] == "0.5"  # file beats default
