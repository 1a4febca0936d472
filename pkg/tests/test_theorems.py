import numpy as np
import pytest

from dopt_lab import dp, theorems
from dopt_lab.environments import random_mdp
from dopt_lab.theorems import (
    check_instance,
    gap_vs_dr,
    gap_vs_odi,
    gap_vs_on_policy,
    random_behavior,
    run_theorem_suite,
)
from dopt_lab.mdp import RngSpec

from conftest import deterministic_mdp, small_instances


def test_deterministic_instance_all_zero():
    mdp, pi = deterministic_mdp()
    for report in (gap_vs_on_policy(mdp, pi), gap_vs_odi(mdp, pi), gap_vs_dr(mdp, pi)):
        assert np.all(np.abs(report.lhs) < 1e-12)
        for term in report.terms.values():
            assert np.all(np.abs(term) < 1e-12)
        assert report.holds()


def test_terminal_horizon_specializations():
    mdp, pi = random_mdp((3, 3, 1), seed=3, sparsity=0.0)
    q, v = dp.compute_q_v(mdp, pi)
    var_pi_q = (pi.probs * q**2).sum(-1) - v**2
    r4 = gap_vs_on_policy(mdp, pi)
    assert np.abs(r4.lhs - var_pi_q).max() < 1e-12
    assert not r4.terms["behavior_gap"].any() and not r4.terms["future_gap"].any()
    r6 = gap_vs_dr(mdp, pi)
    assert np.abs(r6.lhs).max() < 1e-12
    r5 = gap_vs_odi(mdp, pi)
    assert not r5.terms["future_gap"].any()
    assert np.abs(r5.lhs - r5.terms["baseline_gap"]).max() < 1e-12


@pytest.mark.parametrize("mdp,pi", small_instances(10, seed=5, max_states=5, max_horizon=4))
def test_identities_on_random_instances(mdp, pi):
    for report in (gap_vs_on_policy(mdp, pi), gap_vs_dr(mdp, pi)):
        assert report.relation == "eq"
        assert np.abs(report.residual).max() < 1e-9
        assert report.delta.min() >= -1e-12
    odi = gap_vs_odi(mdp, pi)
    assert odi.residual.min() >= -1e-9
    assert odi.delta.min() >= -1e-12


def test_check_instance_report_is_json_ready():
    import json

    mdp, pi = random_mdp((3, 2, 3), seed=1)
    rep = check_instance(mdp, pi)
    json.dumps(rep)
    assert rep["ok"] and rep["terminal_u_zero"] and rep["ordering_ok"]
    assert rep["enumeration"]["var_abs_err"] < 1e-9


def test_suite_passes_and_reports_residuals():
    report = run_theorem_suite(instances=15, seed=1)
    assert report["ok"] and report["passed"] == 15
    assert report["max_equality_residual"] < 1e-9
    assert report["min_delta"] >= -1e-12
    assert report["odi_slack"]["min"] >= -1e-9


def test_sign_error_in_delta_is_caught(monkeypatch):
    original = theorems._expected_future_gap

    def flipped(transition, weights, var_a, var_b):
        return -original(transition, weights, var_a, var_b)

    monkeypatch.setattr(theorems, "_expected_future_gap", flipped)
    report = run_theorem_suite(instances=10, seed=0)
    assert not report["ok"]
    assert report["failed"]


def test_random_behavior_sets():
    mdp, pi = random_mdp((4, 3, 3), seed=9)
    u = dp.solve(mdp, pi)[0].u
    for j in range(10):
        minus = random_behavior(pi, None, RngSpec(j))
        assert dp.coverage_check(minus, pi, u).in_lambda_minus
        enlarged = random_behavior(pi, u, RngSpec(j), zero_prob=0.9)
        assert dp.coverage_check(enlarged, pi, u).in_lambda
