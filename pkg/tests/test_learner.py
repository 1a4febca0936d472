import numpy as np
import pytest

from dopt_lab import dp
from dopt_lab.enumeration import exact_moments
from dopt_lab.environments import (
    GridworldSpec,
    build_gridworld,
    generate_offline_log,
    random_mdp,
    random_policy,
    random_target_policies,
)
from dopt_lab.errors import ValidationError
from dopt_lab.learner import (
    EmpiricalModel,
    behavior_from_u,
    build_empirical_model,
    construct_nu_targets,
    fit_u,
    fitted_q_evaluation,
    learn_dopt,
    learn_from_model,
    learn_odi,
    shrink_nu,
)
from dopt_lab.mdp import FiniteMdp, RngSpec, TimedPolicy, TupleDataset

from conftest import deterministic_mdp


def exhaustive_log(mdp, copies=1):
    """``copies * p(s'|s,a)`` records per (t, s, a, s'); exact when the products are integers."""
    records = []
    for t in range(mdp.horizon):
        for s in range(mdp.num_states):
            for a in range(mdp.num_actions):
                for s2 in range(mdp.num_states):
                    k = int(round(copies * mdp.transition[s, a, s2]))
                    records += [(t, s, a, float(mdp.reward[s, a]), s2)] * k
    return TupleDataset.from_records(records)


def quarter_mdp(seed=0, num_states=3, num_actions=2, horizon=3):
    """Random MDP whose transition probabilities are multiples of 1/4."""
    gen = np.random.default_rng(seed)
    p = np.zeros((num_states, num_actions, num_states))
    for s in range(num_states):
        for a in range(num_actions):
            np.add.at(p[s, a], gen.integers(num_states, size=4), 0.25)
    return FiniteMdp(p, gen.random((num_states, num_actions)), np.ones(num_states) / num_states, horizon)


def test_exhaustive_deterministic_log_recovers_model():
    mdp, pi = deterministic_mdp()
    model = build_empirical_model(exhaustive_log(mdp), mdp.dims)
    assert np.array_equal(model.p_hat[0], mdp.transition)
    assert np.array_equal(model.r_hat[1], mdp.reward)
    q_hat, v_hat = fitted_q_evaluation(model, pi)
    assert not construct_nu_targets(model, q_hat, v_hat).any()


def test_empty_dataset():
    pi = random_mdp((3, 2, 3), seed=0)[1]
    model = build_empirical_model(TupleDataset.empty(), pi.probs.shape)
    assert model.unvisited_fraction == 1.0 and not model.visited.any()
    learned = learn_dopt(TupleDataset.empty(), pi, pi.probs.shape)
    assert np.array_equal(learned.mu_hat_star.probs, pi.probs)
    assert not learned.b_hat_star.b.any()
    assert learned.diagnostics["unvisited_fraction"] == 1.0


def test_out_of_range_record_rejected():
    ds = TupleDataset.from_records([(0, 0, 0, 1.0, 0), (0, 5, 0, 1.0, 0)])
    with pytest.raises(ValidationError, match="line 2"):
        build_empirical_model(ds, (2, 3, 2))


def test_zero_reward_log_gives_zero_q():
    mdp, pi = random_mdp((3, 2, 3), seed=1)
    log = generate_offline_log(mdp, [random_policy(3, 3, 2, RngSpec(0))], 200, seed=0)
    log = TupleDataset(log.t, log.s, log.a, np.zeros(len(log)), log.s_next)
    q_hat, _ = fitted_q_evaluation(build_empirical_model(log, mdp.dims), pi)
    assert not q_hat.any()


def test_single_tuple_nu_formula():
    ds = TupleDataset.from_records([(0, 0, 0, 0.5, 1), (1, 1, 0, 2.0, 0)])
    pi = TimedPolicy.uniform(2, 2, 1)
    model = build_empirical_model(ds, (2, 2, 1))
    q_hat, v_hat = fitted_q_evaluation(model, pi)
    nu = construct_nu_targets(model, q_hat, v_hat)
    expected = v_hat[1, 1] ** 2 - (q_hat[0, 0, 0] - 0.5) ** 2
    assert nu[0, 0, 0] == max(expected, 0.0)


@pytest.mark.parametrize("seed", range(4))
def test_exact_model_consistency(seed):
    mdp, pi = random_mdp((4, 3, 4), seed=seed)
    learned = learn_from_model(EmpiricalModel.from_mdp(mdp), pi)
    tables, mu, b_star, _ = dp.solve(mdp, pi)
    assert np.abs(learned.q_hat - tables.q).max() < 1e-12
    assert np.abs(learned.nu_hat - tables.nu).max() < 1e-12
    assert np.abs(learned.u_hat - dp.compute_u_bstar_recursive(mdp, pi)).max() < 1e-12
    assert np.abs(learned.b_hat_star.b - b_star.b).max() < 1e-9
    assert np.abs(learned.b_hat_star.b_bar - (pi.probs * learned.q_hat).sum(-1)).max() < 1e-12
    weighted = (pi.probs * tables.u).sum(-1) > 0
    assert np.abs(learned.mu_hat_star.probs[weighted] - mu.probs[weighted]).max() < 1e-9
    # rows with no weight fall back to the target
    assert np.array_equal(learned.mu_hat_star.probs[~weighted], pi.probs[~weighted])


def test_exact_dataset_through_full_pipeline():
    mdp = quarter_mdp(seed=3)
    pi = random_mdp((3, 2, 3), seed=3)[1]
    learned = learn_dopt(exhaustive_log(mdp, copies=4), pi, mdp.dims)
    tables, mu, b_star, _ = dp.solve(mdp, pi)
    weighted = (pi.probs * tables.u).sum(-1) > 0
    assert np.abs(learned.mu_hat_star.probs[weighted] - mu.probs[weighted]).max() < 1e-9
    assert np.abs(learned.b_hat_star.b - b_star.b).max() < 1e-9


def test_fit_u_horizon_one_is_zero():
    mdp, pi = random_mdp((3, 2, 1), seed=0)
    model = EmpiricalModel.from_mdp(mdp)
    q_hat, v_hat = fitted_q_evaluation(model, pi)
    assert not fit_u(model, pi, construct_nu_targets(model, q_hat, v_hat)).any()


def _uniform_log(mdp, tuples, seed):
    return generate_offline_log(mdp, [TimedPolicy.uniform(*mdp.dims)], tuples // mdp.horizon, seed)


def test_large_log_accuracy():
    mdp, pi = random_mdp((3, 2, 3), seed=0, sparsity=0.0)
    model = build_empirical_model(_uniform_log(mdp, 10**5, seed=1), mdp.dims)
    vis = model.visited
    assert np.abs(model.p_hat - mdp.transition)[vis].max() < 0.05
    learned = learn_from_model(model, pi)
    tables = dp.solve(mdp, pi)[0]
    assert np.abs(learned.q_hat - tables.q)[vis].max() < 0.1
    assert np.abs(learned.nu_hat - tables.nu)[vis].max() < 0.1
    u = dp.compute_u_bstar_recursive(mdp, pi)
    assert np.abs(learned.u_hat - u)[vis].max() < 0.15


def test_two_state_q_accuracy():
    mdp, pi = random_mdp((2, 2, 3), seed=4, sparsity=0.0)
    learned = learn_dopt(_uniform_log(mdp, 10**4, seed=2), pi, mdp.dims)
    q = dp.compute_q_v(mdp, pi)[0]
    assert np.abs(learned.q_hat - q).max() < 0.1


def test_learned_estimator_unbiased_with_full_support_rows():
    mdp, pi = random_mdp((3, 2, 3), seed=8)
    log = _uniform_log(mdp, 300, seed=3)
    learned = learn_dopt(log, pi, mdp.dims, defensive=0.1)
    mean, _ = exact_moments(mdp, pi, learned.mu_hat_star, learned.b_hat_star)
    assert abs(mean - dp.policy_performance(mdp, pi)) < 1e-9


def test_safeguards():
    mdp, pi = random_mdp((3, 2, 3), seed=8)
    model = build_empirical_model(_uniform_log(mdp, 30, seed=3), mdp.dims)
    q_hat, v_hat = fitted_q_evaluation(model, pi)
    nu = construct_nu_targets(model, q_hat, v_hat)
    assert np.array_equal(shrink_nu(model, nu, 0.0), nu)
    shrunk = shrink_nu(model, nu, 1e9)
    for t in range(mdp.horizon):
        vis = model.visited[t]
        if vis.any():
            assert np.ptp(shrunk[t][vis]) < 1e-6
    u = fit_u(model, pi, nu, impute_unvisited=True)
    assert np.all(u[:-1][~model.visited[:-1]] > 0)
    mu, fallback = behavior_from_u(pi, np.zeros(pi.probs.shape), defensive=0.2)
    assert fallback.all() and np.allclose(mu.probs, pi.probs)
    with pytest.raises(ValueError):
        behavior_from_u(pi, u, defensive=1.5)


def test_pooled_model_sums_over_time():
    mdp, _ = random_mdp((3, 2, 3), seed=0)
    log = _uniform_log(mdp, 300, seed=0)
    model = build_empirical_model(log, mdp.dims, pool_time=True)
    assert np.all(model.visit_counts[0] == model.visit_counts[2])
    assert model.visit_counts[0].sum() == 300


def test_gridworld_learned_behavior_beats_on_policy():
    mdp = build_gridworld(GridworldSpec(5, reward_seed=3))
    logging = random_target_policies(mdp, 10, seed=11)
    log = generate_offline_log(mdp, logging, 2000, seed=12)
    assert len(log) == 10**4
    for pi in random_target_policies(mdp, 3, seed=13):
        learned = learn_dopt(log, pi, mdp.dims, defensive=0.05, impute_unvisited=True, nu_shrinkage=1.0)
        ours = dp.exact_estimator_variance(mdp, pi, learned.mu_hat_star, learned.b_hat_star).total
        mc = dp.exact_estimator_variance(mdp, pi, pi, dp.Baseline.zeros(pi)).total
        assert ours <= mc


def test_odi_learner_has_zero_baseline():
    mdp, pi = random_mdp((3, 2, 3), seed=8)
    learned = learn_odi(_uniform_log(mdp, 3000, seed=3), pi, mdp.dims)
    assert not learned.b_hat_star.b.any()
    exact = dp.solve_u(mdp, pi, dp.Baseline.zeros(pi))
    assert np.abs(learned.mu_hat_star.probs - exact.mu_star).max() < 0.2


def test_diagnostics_report_residuals():
    mdp, pi = random_mdp((3, 2, 3), seed=8)
    d = learn_dopt(_uniform_log(mdp, 3000, seed=3), pi, mdp.dims).diagnostics
    assert d["tuples"] == 3000
    assert d["q_bellman_residual"] < 1e-12
    assert d["u_recursion_residual"] < 1e-12
    for key in ("unvisited_fraction", "nu_clamped_cells", "fallback_rows"):
        assert key in d
