"""Brute-force trajectory enumeration, the exact oracle for small MDPs."""
from __future__ import annotations

from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from . import kernels
from .dp import Baseline
from .errors import EnumerationCapError
from .mdp import FiniteMdp, Step, TimedPolicy, Trajectory, ratio_table, require_valid_policy

DEFAULT_CAP = 10**6


class PathSet(NamedTuple):
    """All positive-probability paths from ``start_t`` as parallel arrays."""

    states: np.ndarray  # (N, T - start_t + 1)
    actions: np.ndarray  # (N, T - start_t)
    prob: np.ndarray  # (N,)
    start_t: int


def enumerate_paths(
    mdp: FiniteMdp,
    behavior: TimedPolicy,
    cap: int = DEFAULT_CAP,
    start_t: int = 0,
    start_state: Optional[int] = None,
) -> PathSet:
    """Expand every path with positive probability under ``behavior``.

    With ``start_state`` the paths start at ``S_{start_t} = start_state``
    (conditional enumeration); otherwise ``S_0 ~ p0``.
    """
    require_valid_policy(behavior, mdp, "behavior")
    steps = mdp.horizon - start_t
    if steps < 1:
        raise ValueError(f"start_t={start_t} leaves no steps for horizon {mdp.horizon}")
    if start_state is None and start_t != 0:
        raise ValueError("start_state is required when start_t > 0")
    worst = (mdp.num_states * mdp.num_actions) ** steps
    if worst > cap:
        raise EnumerationCapError(
            f"enumeration needs up to (S*A)^T = {worst} paths, above the cap of {cap}"
        )

    if start_state is None:
        first = np.nonzero(mdp.initial_dist > 0)[0]
        prob = mdp.initial_dist[first]
    else:
        first = np.array([start_state])
        prob = np.ones(1)
    states = first[:, None].astype(np.int64)
    actions = np.zeros((len(first), 0), dtype=np.int64)

    for t in range(start_t, mdp.horizon):
        s = states[:, -1]
        joint = behavior.probs[t][s][:, :, None] * mdp.transition[s]
        path, a, s_next = np.nonzero(joint > 0)
        prob = prob[path] * joint[path, a, s_next]
        states = np.concatenate([states[path], s_next[:, None]], axis=1)
        actions = np.concatenate([actions[path], a[:, None]], axis=1)
    return PathSet(states, actions, prob, start_t)


def enumerate_trajectories(
    mdp: FiniteMdp, behavior: TimedPolicy, cap: int = DEFAULT_CAP
) -> List[Tuple[Trajectory, float]]:
    """Every complete trajectory with its probability under ``behavior``."""
    paths = enumerate_paths(mdp, behavior, cap)
    out = []
    for states, actions, p in zip(paths.states, paths.actions, paths.prob):
        steps = tuple(
            Step(t, int(states[t]), int(actions[t]), float(mdp.reward[states[t], actions[t]]), int(states[t + 1]))
            for t in range(mdp.horizon)
        )
        out.append((Trajectory(steps), float(p)))
    return out


def path_estimates(
    mdp: FiniteMdp, target: TimedPolicy, behavior: TimedPolicy, baseline: Baseline, paths: PathSet
) -> np.ndarray:
    """Value of ``G^b`` on every enumerated path (uncovered ratios read as 0)."""
    ratio = np.nan_to_num(ratio_table(target, behavior), nan=0.0)
    k = paths.start_t
    return kernels.returns(
        paths.states, paths.actions, mdp.reward, ratio[k:], baseline.b[k:], baseline.b_bar[k:]
    )


def exact_moments(
    mdp: FiniteMdp,
    target: TimedPolicy,
    behavior: TimedPolicy,
    baseline: Optional[Baseline] = None,
    start_t: int = 0,
    start_state: Optional[int] = None,
    cap: int = DEFAULT_CAP,
) -> Tuple[float, float]:
    """Exact mean and variance of ``G^b`` by summing over all paths.

    ``baseline=None`` gives the plain per-decision importance sampling
    estimator. Uncovered (t, s, a) are never on a path, so their ratio is
    irrelevant here; checking coverage is the caller's business.
    """
    if baseline is None:
        baseline = Baseline.zeros(target)
    paths = enumerate_paths(mdp, behavior, cap, start_t, start_state)
    g = path_estimates(mdp, target, behavior, baseline, paths)
    mean = float(paths.prob @ g)
    var = float(paths.prob @ (g - mean) ** 2)
    return mean, var
