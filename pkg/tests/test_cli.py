import json
import math

import numpy as np
import pytest

from dsglm import cli, experiments, sampling
from dsglm.links import LinkSpec

from conftest import DATA


def run(capsys, *argv):
    rc = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return rc, out, err


def _codes(err):
    return [line for line in err.splitlines() if line.startswith("code=")]


@pytest.mark.parametrize("cmd", [[], *[[c] for c in cli.COMMANDS]])
def test_help_exits_zero(cmd, capsys):
    rc, out, _ = run(capsys, *cmd, "--help")
    assert rc == 0 and "usage" in out


@pytest.mark.parametrize("argv", [
    ["simulate", "--n", "0", "--out", "x.csv"],
    ["simulate", "--bogus"],
    ["fit"],
    ["sweep", "--alphas", "0"],
    ["sweep", "--estimators", "magic"],
    ["efficiency", "--alpha-min", "0.5", "--alpha-max", "0.1"],
    ["nope"],
])
def test_usage_errors_exit_two(argv, capsys):
    rc, _, err = run(capsys, *argv)
    assert rc == 2
    codes = _codes(err)
    assert len(codes) == 1 and codes[0].startswith("code=UsageError")


def test_data_errors_exit_three(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("x,y\n1,0\n2,1\n3,2\n")
    rc, _, err = run(capsys, "fit", "--data", p)
    assert rc == 3 and _codes(err)[0].startswith("code=NonBinaryLabel")
    rc, _, err = run(capsys, "fit", "--data", tmp_path / "missing.csv")
    assert rc == 3 and _codes(err)[0].startswith("code=IOError")
    two = tmp_path / "two.csv"
    two.write_text("x,y\n0.5,1\n0.25,0\n")
    rc, _, err = run(capsys, "sweep", "--mode", "real", "--data", two, "--reps", 2)
    assert rc == 3 and _codes(err) == [_codes(err)[0]] and "DegenerateSplit" in err


def test_numerical_failure_exits_four(capsys):
    # every grid point lies outside the positive-definite region
    rc, _, err = run(capsys, "efficiency", "--alphas", "1e-9,2e-9")
    assert rc == 4 and _codes(err)[0].startswith("code=EmptyGrid")


def test_exact_rejects_high_dimension(tmp_path, capsys):
    rc, _, err = run(capsys, "fit", "--data", tmp_path / "never-read.csv", "--estimator", "exact",
                     "--dim", 5)
    assert rc == 2 and _codes(err)[0].startswith("code=UnsupportedDimension")


def _simulate(capsys, path, *extra):
    rc, out, _ = run(capsys, "simulate", "--n", 2000, "--tau", 2, "--out", path, *extra)
    assert rc == 0
    return json.loads(out)


def test_simulate_is_deterministic(tmp_path, capsys):
    a = _simulate(capsys, tmp_path / "a.csv", "--seed", 7)
    _simulate(capsys, tmp_path / "b.csv", "--seed", 7)
    _simulate(capsys, tmp_path / "c.csv", "--seed", 8)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "c.csv").read_bytes()
    data = experiments.load_csv(tmp_path / "a.csv", "y")
    assert a["n"] == 2000 and a["n_pos"] == data.n_pos
    assert a["config"]["seed"] == 7


def test_seed_precedence(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 11, "n": 500}))
    monkeypatch.setenv("DSGLM_SEED", "13")
    out = lambda *a: _simulate(capsys, tmp_path / "s.csv", *a)["config"]
    assert out()["seed"] == 13
    assert out("--config", cfg)["seed"] == 11
    assert out("--config", cfg, "--seed", 17)["seed"] == 17
    monkeypatch.delenv("DSGLM_SEED")
    assert out()["seed"] == 0
    # --n from the command line still wins over the config file
    assert out("--config", cfg)["n"] == 2000


def test_config_file_errors(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"unknown_key": 1}))
    rc, _, err = run(capsys, "simulate", "--out", tmp_path / "x.csv", "--config", cfg)
    assert rc == 2 and "UsageError" in err
    cfg.write_text(json.dumps({"max-iter": 0}))
    rc, _, _ = run(capsys, "fit", "--data", DATA / "tiny.csv", "--config", cfg)
    assert rc == 2


def test_bad_seed_in_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("DSGLM_SEED", "abc")
    rc, _, err = run(capsys, "simulate", "--out", tmp_path / "x.csv")
    assert rc == 2 and "seed" in err


def test_fit_alpha_one_pseudo_equals_full(tmp_path, capsys):
    _simulate(capsys, tmp_path / "d.csv", "--seed", 7)
    docs = {}
    for est in ("pseudo", "full"):
        rc, out, _ = run(capsys, "fit", "--data", tmp_path / "d.csv", "--tau", 2, "--estimator", est)
        assert rc == 0
        docs[est] = json.loads(out)
    assert abs(docs["pseudo"]["theta_hat"][0] - docs["full"]["theta_hat"][0]) <= 1e-8
    assert docs["pseudo"]["converged"]


def test_fit_on_committed_fixture(capsys):
    doc = json.loads((DATA / "tiny_oracle.json").read_text())
    for est, ref in doc["theta_hat"].items():
        rc, out, _ = run(capsys, "fit", "--data", DATA / "tiny.csv", "--tau", doc["tau"],
                         "--alpha", doc["alpha"], "--estimator", est)
        assert rc == 0
        assert abs(json.loads(out)["theta_hat"][0] - ref) <= 2e-5


def test_fit_tau_auto_undoes_downsampling(capsys):
    rc, out, _ = run(capsys, "fit", "--data", DATA / "tiny.csv", "--alpha", 0.5)
    doc = json.loads(out)
    p1 = 3 / (3 + 5 / 0.5)
    assert rc == 0 and doc["tau_n"] == pytest.approx(math.log(1 / p1 - 1))


def test_sweep_single_replication(capsys):
    rc, out, _ = run(capsys, "sweep", "--reps", 1, "--alphas", "1.0", "--n", 5000, "--tau", 2)
    assert rc == 0
    res = experiments.parse_summary(out)
    mse = [c for c in res.cells if c.metric == "mse"]
    assert sorted(c.estimator for c in mse) == ["conditional", "iw", "pseudo"]
    assert all(c.replications == 1 and c.ci_half_width == 0.0 for c in mse)


def test_sweep_json_and_threads(tmp_path, capsys):
    args = ["sweep", "--reps", 3, "--alphas", "0.5,1", "--alpha-units", "p1", "--n", 5000,
            "--tau", 3, "--seed", 4]
    run(capsys, *args, "--threads", 1, "--out", tmp_path / "a.csv")
    run(capsys, *args, "--threads", 2, "--out", tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rc, out, _ = run(capsys, *args, "--format", "json")
    doc = json.loads(out)
    assert rc == 0 and set(doc) == {"config", "spec", "cells"}
    assert "threads" not in doc["config"]
    p1 = sampling.positive_probability(LinkSpec.logistic(), [0.5], 3.0, sampling.CovariateLaw.uniform_cube(1))
    assert doc["spec"]["alphas"] == pytest.approx([0.5 * p1, p1])


def test_sweep_real_mode(capsys):
    rc, out, _ = run(capsys, "sweep", "--mode", "real", "--data", DATA / "yeast_me2_like.csv",
                     "--reps", 3, "--format", "json")
    doc = json.loads(out)
    assert rc == 0 and doc["spec"]["mode"] == "real"
    assert {c["metric"] for c in doc["cells"]} == {"logloss", "loss_diff_vs_pseudo"}


def test_optimal_alpha_examples(capsys):
    rc, out, _ = run(capsys, "optimal-alpha", "--theta", 0.5, "--tau", 10)
    doc = json.loads(out)
    assert rc == 0 and doc["alpha_star"] == pytest.approx(5.1348e-5, rel=1e-4)
    rc, out, _ = run(capsys, "optimal-alpha", "--theta", -2, "--tau", 0.01)
    doc = json.loads(out)
    assert doc["out_of_regime"] and doc["alpha_star"] == 1.0
    rc, out, _ = run(capsys, "optimal-alpha", "--theta", 0, "--tau", 5)
    assert json.loads(out)["alpha_star"] == pytest.approx(1.5 / (1 + math.exp(5)), rel=1e-10)


def test_optimal_alpha_from_data(capsys):
    rc, out, _ = run(capsys, "optimal-alpha", "--theta", 0.5, "--tau", 10, "--data", DATA / "tiny.csv")
    assert rc == 0 and json.loads(out)["alpha_star"] > 0
    rc, _, err = run(capsys, "optimal-alpha", "--theta", "0.5,0.1", "--dim", 2, "--data", DATA / "tiny.csv")
    assert rc == 2


def test_efficiency_outputs(tmp_path, capsys):
    rc, out, _ = run(capsys, "efficiency", "--grid-points", 50)
    lines = out.splitlines()
    assert rc == 0 and lines[0] == "alpha,cost,surrogate,condition_ok" and len(lines) == 51
    rc, out, _ = run(capsys, "efficiency", "--alphas", "0.001,0.01,1", "--format", "json", "--p1", 0.001)
    doc = json.loads(out)
    assert len(doc["curve"]) == 3 and doc["p1"] == 0.001
    assert doc["grid_argmin"] in (0.001, 0.01, 1.0)
    cost = {r["alpha"]: r["cost"] for r in doc["curve"]}
    assert np.isfinite(cost[1.0])


def test_simulate_example_positive_count(tmp_path, capsys):
    rc, out, _ = run(capsys, "simulate", "--n", 100000, "--dim", 1, "--theta", 0.5, "--tau", 6,
                     "--link", "logistic", "--seed", 7, "--out", tmp_path / "d.csv")
    expected = 100000 * sampling.positive_probability(LinkSpec.logistic(), [0.5], 6.0,
                                                       sampling.CovariateLaw.uniform_cube(1))
    assert rc == 0 and abs(json.loads(out)["n_pos"] - expected) <= 3 * math.sqrt(expected)


README_TAU10 = ["sweep", "--mode", "synthetic", "--tau", "10", "--n", "100000", "--theta", "0.5",
                "--alphas", "0.5,1,2", "--alpha-units", "p1", "--reps", "500", "--seed", "2024"]


def test_readme_tau10_reproduction(tmp_path, capsys):
    out = tmp_path / "tau10.csv"
    rc, _, _ = run(capsys, *README_TAU10, "--out", out)
    assert rc == 0
    diffs = [c for c in experiments.parse_summary(out.read_text()).cells
             if c.estimator == "iw" and c.metric == "loss_diff_vs_pseudo"]
    assert len(diffs) == 3
    # inverse weighting minus pseudo-MLE squared error, positive at the 95% level
    assert all(c.mean - c.ci_half_width > 0 for c in diffs), [(c.mean, c.ci_half_width) for c in diffs]
