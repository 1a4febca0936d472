import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dopt_lab import dp
from dopt_lab.enumeration import enumerate_trajectories, exact_moments
from dopt_lab.environments import random_mdp
from dopt_lab.errors import CoverageError, ValidationError
from dopt_lab.estimators import (
    BASELINE_CORRECTED,
    ON_POLICY_MC,
    PDIS,
    EstimatorSpec,
    EvalRun,
    RunningStats,
    baseline_return,
    pdis_return,
    run_evaluation,
    sample_batch,
)
from dopt_lab import kernels
from dopt_lab.mdp import FiniteMdp, RngSpec, Step, TimedPolicy, Trajectory, ratio_table, sample_trajectory
from dopt_lab.theorems import random_baseline, random_behavior

from conftest import deterministic_mdp


def test_single_step_pdis():
    traj = Trajectory((Step(0, 0, 0, 3.0, 0),))
    pi = TimedPolicy(np.array([[[0.8, 0.2]]]))
    mu = TimedPolicy(np.array([[[0.4, 0.6]]]))
    assert pdis_return(traj, pi, mu) == 6.0


@given(seed=st.integers(0, 10**6))
def test_reductions(seed):
    mdp, pi = random_mdp((3, 2, 3), seed % 500)
    traj = sample_trajectory(mdp, pi, RngSpec(seed))
    assert pdis_return(traj, pi, pi) == traj.total_return()
    mu = random_behavior(pi, None, RngSpec(seed, 1), zero_prob=0.0)
    traj = sample_trajectory(mdp, mu, RngSpec(seed, 2))
    assert baseline_return(traj, pi, mu, dp.Baseline.zeros(pi)) == pdis_return(traj, pi, mu)


def test_scalar_and_batch_returns_agree(small_mdp):
    mdp, pi = small_mdp
    mu = random_behavior(pi, None, RngSpec(1))
    b = random_baseline(pi, RngSpec(2))
    states, actions = sample_batch(mdp, mu, 50, RngSpec(3))
    batch = kernels.returns(states, actions, mdp.reward, ratio_table(pi, mu), b.b, b.b_bar)
    first = sample_trajectory(mdp, mu, RngSpec(3))
    assert first.states == states[0, :-1].tolist()
    assert baseline_return(first, pi, mu, b) == pytest.approx(batch[0], abs=1e-12)


def test_coverage_violation_on_visited_step():
    traj = Trajectory((Step(0, 0, 1, 1.0, 0),))
    pi = TimedPolicy(np.array([[[0.5, 0.5]]]))
    mu = TimedPolicy(np.array([[[1.0, 0.0]]]))
    with pytest.raises(CoverageError):
        pdis_return(traj, pi, mu)


def test_nonfinite_baseline_rejected(small_mdp):
    mdp, pi = small_mdp
    traj = sample_trajectory(mdp, pi, RngSpec(0))
    bad = dp.Baseline(np.full(pi.probs.shape, np.inf), np.zeros(pi.probs.shape[:2]))
    with pytest.raises(ValidationError):
        baseline_return(traj, pi, pi, bad)


def test_t1_optimal_pair_is_constant():
    mdp, pi = random_mdp((3, 3, 1), seed=12, sparsity=0.0)
    _, mu, b_star, _ = dp.solve(mdp, pi)
    _, v = dp.compute_q_v(mdp, pi)
    for traj, _ in enumerate_trajectories(mdp, mu):
        assert baseline_return(traj, pi, mu, b_star) == pytest.approx(v[0, traj.steps[0].state], abs=1e-12)


def test_two_by_two_pdis_unbiased(two_by_two):
    mdp, pi = two_by_two
    mu = random_behavior(pi, None, RngSpec(5))
    mean = sum(p * pdis_return(tr, pi, mu) for tr, p in enumerate_trajectories(mdp, mu))
    assert abs(mean - dp.policy_performance(mdp, pi)) < 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_random_baseline_unbiased(seed):
    mdp, pi = random_mdp((3, 2, 3), seed=40 + seed)
    b = random_baseline(pi, RngSpec(seed, 1))
    mu = random_behavior(pi, dp.compute_u(mdp, pi, b), RngSpec(seed, 2))
    mean = sum(p * baseline_return(tr, pi, mu, b) for tr, p in enumerate_trajectories(mdp, mu))
    assert abs(mean - dp.policy_performance(mdp, pi)) < 1e-10


def test_spec_invariants():
    pi = TimedPolicy.uniform(1, 1, 2)
    with pytest.raises(ValueError):
        EstimatorSpec(BASELINE_CORRECTED, pi)
    with pytest.raises(ValueError):
        EstimatorSpec(PDIS, pi, dp.Baseline.zeros(pi))
    with pytest.raises(ValueError):
        EstimatorSpec("wis", pi)
    mdp = FiniteMdp(np.ones((1, 2, 1)), np.ones((1, 2)), np.ones(1), 1)
    other = TimedPolicy(np.array([[[0.3, 0.7]]]))
    with pytest.raises(ValueError):
        run_evaluation(mdp, pi, EstimatorSpec(ON_POLICY_MC, other), 10, RngSpec(0))
    with pytest.raises(ValueError):
        run_evaluation(mdp, pi, EstimatorSpec.on_policy(pi), 0, RngSpec(0))


def test_deterministic_mc_has_zero_variance():
    mdp, pi = deterministic_mdp()
    run = run_evaluation(mdp, pi, EstimatorSpec.on_policy(pi), 100, RngSpec(0))
    assert np.all(run.samples == run.samples[0])
    assert run.running_variance == 0.0


def test_determinism_and_running_stats(small_mdp):
    mdp, pi = small_mdp
    spec = EstimatorSpec.on_policy(pi)
    a = run_evaluation(mdp, pi, spec, 500, RngSpec(7))
    b = run_evaluation(mdp, pi, spec, 500, RngSpec(7))
    assert np.array_equal(a.samples, b.samples)
    assert a.episodes == len(a.samples) == 500
    assert abs(a.running_mean - a.samples.mean()) < 1e-10
    assert abs(a.running_variance - a.samples.var(ddof=1)) < 1e-10


def test_uncovered_behavior_raises(small_mdp):
    mdp, pi = random_mdp((3, 2, 3), seed=4, sparsity=0.0)
    mu = pi.probs.copy()
    mu[0, :, 0] = 0.0
    mu[0, :, 1] = 1.0
    with pytest.raises(CoverageError):
        run_evaluation(mdp, pi, EstimatorSpec(PDIS, TimedPolicy(mu)), 10, RngSpec(0))


def test_enlarged_set_behavior_accepted():
    mdp, pi = random_mdp((3, 2, 3), seed=21)
    tables, mu, b_star, _ = dp.solve(mdp, pi)
    pi_probs = pi.probs.copy()
    # the last step has u = 0: drop a target action there
    mu_probs = mu.probs.copy()
    mu_probs[-1] = 0.0
    mu_probs[-1, :, 0] = 1.0
    spec = EstimatorSpec(BASELINE_CORRECTED, TimedPolicy(mu_probs), b_star)
    run = run_evaluation(mdp, pi, spec, 200, RngSpec(1))
    assert np.all(np.isfinite(run.samples))
    mean, _ = exact_moments(mdp, pi, TimedPolicy(mu_probs), b_star)
    assert abs(mean - dp.policy_performance(mdp, pi)) < 1e-10
    assert np.array_equal(pi_probs, pi.probs)


def test_sample_variance_within_five_percent_of_exact():
    mdp, pi = random_mdp((3, 2, 3), seed=2)
    _, mu, b_star, _ = dp.solve(mdp, pi)
    run = run_evaluation(mdp, pi, EstimatorSpec(BASELINE_CORRECTED, mu, b_star), 10**5, RngSpec(0))
    exact = dp.exact_estimator_variance(mdp, pi, mu, b_star).total
    assert abs(run.running_variance / exact - 1) < 0.05


def test_sample_variance_error_shrinks():
    mdp, pi = random_mdp((3, 2, 3), seed=2)
    exact = dp.exact_estimator_variance(mdp, pi, pi, dp.Baseline.zeros(pi)).total
    spec = EstimatorSpec.on_policy(pi)
    errs = []
    for n in (10**3, 10**4, 10**5):
        e = [abs(run_evaluation(mdp, pi, spec, n, RngSpec(r, n)).running_variance - exact) for r in range(10)]
        errs.append((np.mean(e), np.std(e, ddof=1) / np.sqrt(len(e))))
    for (m0, s0), (m1, s1) in zip(errs, errs[1:]):
        assert m1 <= m0 + 3 * (s0 + s1)


@given(
    xs=st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=0, max_size=40),
    cut=st.integers(0, 40),
)
def test_running_stats_merge(xs, cut):
    left, right = RunningStats(), RunningStats()
    for x in xs[:cut]:
        left.push(x)
    for x in xs[cut:]:
        right.push(x)
    merged = left.merge(right)
    other = right.merge(left)
    assert merged.count == len(xs)
    if len(xs) > 1:
        scale = max(1.0, float(np.max(np.abs(xs))) ** 2)
        assert merged.variance() == pytest.approx(np.var(xs, ddof=1), abs=1e-9 * scale)
        assert merged.variance() == pytest.approx(other.variance(), abs=1e-9 * scale)
    if xs:
        assert merged.mean == pytest.approx(np.mean(xs), abs=1e-9 * max(1.0, float(np.max(np.abs(xs)))))


def test_evalrun_merge_and_csv(tmp_path):
    a = EvalRun.from_samples([1.0, 2.0, 3.0])
    b = EvalRun.from_samples([4.0])
    m = a.merge(b)
    assert m.episodes == 4 and m.running_mean == 2.5
    assert m.running_variance == pytest.approx(np.var([1, 2, 3, 4], ddof=1))
    m.write_csv(tmp_path / "run.csv", truth=2.0)
    lines = (tmp_path / "run.csv").read_text().splitlines()
    assert lines[0] == "episode_index,estimate,running_mean,running_abs_error_vs_truth"
    assert lines[1] == "1,1.0,1.0,1.0"
    assert lines[4] == "4,4.0,2.5,0.5"
