import json

import pytest

from dopt_lab.cli import main
from dopt_lab.io import load_policy, read_json


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def workspace(tmp_path, capsys):
    assert run(capsys, "env", "build", "--n", 3, "--seed", 1, "--out", tmp_path / "mdp.json")[0] == 0
    assert run(capsys, "env", "policies", "--mdp", tmp_path / "mdp.json", "--count", 2, "--out", tmp_path / "pols")[0] == 0
    assert run(capsys, "env", "log", "--mdp", tmp_path / "mdp.json", "--episodes", 200, "--out", tmp_path / "log.jsonl")[0] == 0
    return tmp_path


def test_env_commands(workspace, capsys):
    assert (workspace / "pols" / "policy_001.json").is_file()
    code, out, _ = run(capsys, "dump", workspace / "log.jsonl")
    assert code == 0 and json.loads(out)["tuples"] == 600
    code, out, _ = run(capsys, "dump", workspace / "mdp.json")
    assert json.loads(out)["kind"] == "dopt-lab/mdp"


def test_solve_and_evaluate(workspace, capsys):
    target = workspace / "pols" / "policy_000.json"
    code, out, _ = run(capsys, "solve", "--mdp", workspace / "mdp.json", "--target", target, "--out", workspace / "sol")
    assert code == 0
    summary = json.loads(out)
    assert summary["variance_optimal"] <= summary["variance_on_policy"]
    code, out, _ = run(
        capsys, "evaluate", "--mdp", workspace / "mdp.json", "--target", target, "--estimator", "baseline_corrected",
        "--behavior", workspace / "sol" / "mu_star.json", "--baseline", workspace / "sol" / "b_star.json",
        "--episodes", 500, "--csv", workspace / "run.csv",
    )
    assert code == 0
    report = json.loads(out)
    assert report["episodes"] == 500
    assert (workspace / "run.csv").read_text().startswith("episode_index,estimate,running_mean,")
    code, _, err = run(capsys, "evaluate", "--mdp", workspace / "mdp.json", "--target", target, "--estimator", "baseline_corrected")
    assert code == 1 and "--baseline" in err


def test_learn_writes_artifacts(workspace, capsys):
    target = workspace / "pols" / "policy_000.json"
    code, out, _ = run(
        capsys, "learn", "--dataset", workspace / "log.jsonl", "--target", target, "--out", workspace / "art",
        "--defensive", 0.05, "--impute-unvisited", "--nu-shrinkage", 1,
    )
    assert code == 0
    for name in ("mu_hat_star.json", "b_hat_star.json", "diagnostics.json"):
        assert (workspace / "art" / name).is_file()
    load_policy(workspace / "art" / "mu_hat_star.json")
    assert read_json(workspace / "art" / "diagnostics.json")["tuples"] == 600


def test_compare_and_outputs(workspace, capsys):
    cfg = workspace / "exp.cfg"
    cfg.write_text(
        "[experiment]\nepisodes = 20\nruns = 2\nout = results\n"
        "[environment]\nkind = file\npath = mdp.json\n"
        "[targets]\ncount = 2\n[log]\nkind = file\npath = log.jsonl\n"
    )
    code, out, _ = run(capsys, "compare", "--config", cfg, "--seed", 3)
    assert code == 0
    names = sorted(p.name for p in (workspace / "results").iterdir())
    assert names == [
        "curve_dopt.csv", "curve_dr.csv", "curve_odi.csv", "curve_on_policy_mc.csv", "manifest.json", "summary.json"
    ]
    assert read_json(workspace / "results" / "manifest.json")["seeds"]["master"] == 3


def test_compare_missing_config_exits_1(tmp_path, capsys):
    code, _, err = run(capsys, "compare", "--config", tmp_path / "missing.cfg")
    assert code == 1
    assert "file not found" in err and "missing.cfg" in err


def test_infeasible_request_exits_2(tmp_path, capsys):
    cfg = tmp_path / "big.cfg"
    cfg.write_text("[experiment]\nepisodes = 5\nruns = 1\nground_truth = enumeration\n[environment]\nn = 5\n[targets]\ncount = 1\n[log]\nepisodes = 10\n")
    code, _, err = run(capsys, "compare", "--config", cfg, "--out", tmp_path / "o")
    assert code == 2 and "monte_carlo" in err


def test_verify_exits_0(tmp_path, capsys):
    code, out, _ = run(capsys, "verify", "--instances", 50, "--seed", 1, "--out", tmp_path / "v.json")
    assert code == 0
    assert json.loads(out)["max_equality_residual"] < 1e-9
    assert len(read_json(tmp_path / "v.json")["per_instance"]) == 50


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["verify", "--bogus"])
    assert exc.value.code == 1


def test_bad_policy_file_exits_1(workspace, capsys):
    bad = workspace / "bad.json"
    bad.write_text('{"format": "dopt-lab/policy", "dims": {"horizon": 1, "states": 1, "actions": 2}, "probs": [[[0.5, 0.4]]]}')
    code, _, err = run(capsys, "solve", "--mdp", workspace / "mdp.json", "--target", bad, "--out", workspace / "x")
    assert code == 1 and "error" in err
