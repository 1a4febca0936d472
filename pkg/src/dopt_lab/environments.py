"""Seeded instance generators: the Gridworld family and small random MDPs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .estimators import sample_batch
from .mdp import FiniteMdp, RngSpec, TimedPolicy, TupleDataset

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
ACTION_NAMES = ("up", "down", "left", "right")
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))

# stream ids keep the generators independent under one seed
_REWARD_STREAM = 1
_POLICY_STREAM = 1 << 32
_LOG_STREAM = 2 << 32
_SHUFFLE_STREAM = 3 << 32


@dataclass(frozen=True)
class GridworldSpec:
    """``n x n`` grid with horizon ``n``; ``slip`` mass moves uniformly at random."""

    n: int
    slip: float = 0.1
    reward_seed: int = 0
    policy_seed: int = 0

    def __post_init__(self):
        if int(self.n) < 2:
            raise ValueError(f"gridworld side must be >= 2, got {self.n}")
        if not 0.0 <= float(self.slip) <= 1.0:
            raise ValueError(f"slip must lie in [0, 1], got {self.slip}")


def cell_index(n: int, row: int, col: int) -> int:
    return row * n + col


def _destination(n, s, a):
    row, col = divmod(s, n)
    dr, dc = _MOVES[a]
    r2, c2 = row + dr, col + dc
    if 0 <= r2 < n and 0 <= c2 < n:
        return cell_index(n, r2, c2)
    return s


def build_gridworld(spec: GridworldSpec) -> FiniteMdp:
    """Grid MDP: states are cells in row-major order, start at the top-left cell.

    Blocked moves leave the agent in place. Rewards ``r(s, a)`` are i.i.d.
    uniform on [0, 1] drawn from ``reward_seed``.
    """
    n = spec.n
    n_s = n * n
    p = np.zeros((n_s, 4, n_s))
    for s in range(n_s):
        dest = [_destination(n, s, d) for d in range(4)]
        for a in range(4):
            p[s, a, dest[a]] += 1.0 - spec.slip
            for d in range(4):
                p[s, a, dest[d]] += spec.slip / 4.0
    reward = RngSpec(spec.reward_seed, _REWARD_STREAM).generator().random((n_s, 4))
    p0 = np.zeros(n_s)
    p0[0] = 1.0
    return FiniteMdp(p, reward, p0, horizon=n)


def _dirichlet_rows(gen: np.random.Generator, shape) -> np.ndarray:
    # Dirichlet(1) == normalized i.i.d. exponentials
    x = gen.standard_exponential(shape)
    return x / x.sum(axis=-1, keepdims=True)


def random_policy(horizon: int, num_states: int, num_actions: int, rng: RngSpec) -> TimedPolicy:
    """Full-support policy with Dirichlet(1) rows."""
    return TimedPolicy(_dirichlet_rows(rng.generator(), (horizon, num_states, num_actions)))


def random_target_policies(mdp: FiniteMdp, count: int, seed: int) -> List[TimedPolicy]:
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    return [
        random_policy(mdp.horizon, mdp.num_states, mdp.num_actions, RngSpec(seed, _POLICY_STREAM + i))
        for i in range(count)
    ]


def generate_offline_log(
    mdp: FiniteMdp, logging_policies: Sequence[TimedPolicy], episodes: int, seed: int
) -> TupleDataset:
    """Complete episodes from a rotation of logging policies, flattened and shuffled.

    Episode ``e`` is generated by ``logging_policies[e % k]``.
    """
    if not logging_policies:
        raise ValueError("at least one logging policy is required")
    for pol in logging_policies:
        if np.any(pol.probs <= 0):
            raise ValueError("logging policies must have full support")
    k = len(logging_policies)
    horizon = mdp.horizon
    cols = {name: [] for name in ("t", "s", "a", "r", "s_next")}
    for j, pol in enumerate(logging_policies):
        n_j = len(range(j, episodes, k))
        if n_j == 0:
            continue
        states, actions = sample_batch(mdp, pol, n_j, RngSpec(seed, _LOG_STREAM + j))
        s = states[:, :-1]
        cols["t"].append(np.broadcast_to(np.arange(horizon), s.shape).ravel())
        cols["s"].append(s.ravel())
        cols["a"].append(actions.ravel())
        cols["r"].append(mdp.reward[s, actions].ravel())
        cols["s_next"].append(states[:, 1:].ravel())
    if not cols["t"]:
        return TupleDataset.empty()
    merged = {name: np.concatenate(parts) for name, parts in cols.items()}
    order = RngSpec(seed, _SHUFFLE_STREAM).generator().permutation(len(merged["t"]))
    return TupleDataset(**{name: col[order] for name, col in merged.items()})


def _sparsify(gen, rows, frac):
    """Zero a random nonempty strict subset of entries in about ``frac`` of rows."""
    out = rows.copy()
    flat = out.reshape(-1, out.shape[-1])
    n = flat.shape[-1]
    if n < 2:
        return out
    for i in np.nonzero(gen.random(len(flat)) < frac)[0]:
        keep = gen.integers(1, n)
        zero = gen.permutation(n)[keep:]
        flat[i, zero] = 0.0
        flat[i] /= flat[i].sum()
    return out


def random_mdp(dims: Tuple[int, int, int], seed: int, sparsity: float = 0.25) -> Tuple[FiniteMdp, TimedPolicy]:
    """Random MDP and target policy for property tests.

    ``dims = (num_states, num_actions, horizon)``. Transition and policy rows
    are Dirichlet(1); a ``sparsity`` fraction of rows gets some entries zeroed
    so degenerate supports (including deterministic rows) appear. Rewards are
    uniform on [0, 1].
    """
    n_s, n_a, horizon = (int(d) for d in dims)
    gen = RngSpec(seed, 0).generator()
    p = _sparsify(gen, _dirichlet_rows(gen, (n_s, n_a, n_s)), sparsity)
    reward = gen.random((n_s, n_a))
    p0 = _dirichlet_rows(gen, (n_s,))
    pi = _sparsify(gen, _dirichlet_rows(gen, (horizon, n_s, n_a)), sparsity)
    return FiniteMdp(p, reward, p0, horizon), TimedPolicy(pi)


def random_dims(seed: int, max_states: int = 5, max_actions: int = 3, max_horizon: int = 4):
    """Draw ``(S, A, T)`` with S in [2, max_states], A in [2, max_actions], T in [2, max_horizon]."""
    gen = RngSpec(seed, 7).generator()
    return (
        int(gen.integers(2, max_states + 1)),
        int(gen.integers(2, max_actions + 1)),
        int(gen.integers(2, max_horizon + 1)),
    )


def random_instance(seed: int, max_states: int = 5, max_actions: int = 3, max_horizon: int = 4):
    return random_mdp(random_dims(seed, max_states, max_actions, max_horizon), seed)
