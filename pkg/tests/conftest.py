"""Shared fixtures and small hand-built MDPs."""
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dopt_lab.environments import random_instance, random_mdp
from dopt_lab.mdp import FiniteMdp, TimedPolicy

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def chain_mdp(horizon=3, reward=1.0):
    """One state, one action, constant reward."""
    return FiniteMdp(np.ones((1, 1, 1)), np.full((1, 1), reward), np.ones(1), horizon)


def deterministic_mdp(num_states=3, num_actions=2, horizon=3, seed=0):
    """Deterministic transitions and a deterministic target policy."""
    gen = np.random.default_rng(seed)
    p = np.zeros((num_states, num_actions, num_states))
    for s in range(num_states):
        for a in range(num_actions):
            p[s, a, gen.integers(num_states)] = 1.0
    reward = gen.random((num_states, num_actions))
    p0 = np.zeros(num_states)
    p0[0] = 1.0
    pi = np.zeros((horizon, num_states, num_actions))
    idx = gen.integers(num_actions, size=(horizon, num_states))
    np.put_along_axis(pi, idx[..., None], 1.0, axis=-1)
    return FiniteMdp(p, reward, p0, horizon), TimedPolicy(pi)


def small_instances(count=20, seed=0, max_states=4, max_actions=3, max_horizon=3):
    return [random_instance(seed * 1000 + i, max_states, max_actions, max_horizon) for i in range(count)]


@pytest.fixture
def small_mdp():
    return random_mdp((3, 2, 3), seed=11)


@pytest.fixture
def two_by_two():
    return random_mdp((2, 2, 2), seed=5, sparsity=0.0)


# -- acceptance report -------------------------------------------------------

ACCEPTANCE_LINES = []


def record(criterion, ok, detail):
    """Store one pass/fail line for the terminal summary and echo it."""
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
