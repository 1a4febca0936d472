"""Offline learning of the optimal behavior policy and baseline from logged tuples.

The log is an unordered bag of ``(t, s, a, r, s')`` records; nothing about the
policy that produced it is assumed. The pipeline is

1. aggregate the log into an empirical model (counts, ``p_hat``, ``r_hat``);
2. tabular fitted Q-evaluation, i.e. backward DP on the empirical model;
3. next-state value variance targets ``nu_hat``;
4. ``u_hat`` by the short backward recursion for the baseline ``b = q``;
5. ``mu_hat* ~ pi sqrt(u_hat)`` and ``b_hat* = q_hat``.

(t, s, a) cells absent from the log get ``q_hat = nu_hat = u_hat = 0`` and are
reported in the diagnostics. Rows of ``mu_hat*`` with no positive weight copy
the target policy, which always covers it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from . import dp
from .errors import ShapeError
from .mdp import FiniteMdp, TimedPolicy, TupleDataset, require_valid_policy


@dataclass(frozen=True, eq=False)
class EmpiricalModel:
    """Aggregated counts with the plug-in model they define.

    Counts are floats so an exact model can be represented with fractional
    weights (see :meth:`from_mdp`).
    """

    visit_counts: np.ndarray  # (T, S, A)
    transition_counts: np.ndarray  # (T, S, A, S)
    reward_sums: np.ndarray  # (T, S, A)

    def __post_init__(self):
        n = self.visit_counts
        if self.transition_counts.shape != n.shape + (n.shape[1],) or self.reward_sums.shape != n.shape:
            raise ShapeError("count tables have inconsistent shapes")

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.visit_counts.shape

    @property
    def visited(self) -> np.ndarray:
        return self.visit_counts > 0

    @property
    def p_hat(self) -> np.ndarray:
        """Normalized transition counts; rows of unvisited cells are all zero."""
        n = self.visit_counts[..., None]
        return np.divide(self.transition_counts, n, out=np.zeros_like(self.transition_counts), where=n > 0)

    @property
    def r_hat(self) -> np.ndarray:
        n = self.visit_counts
        return np.divide(self.reward_sums, n, out=np.zeros_like(self.reward_sums), where=n > 0)

    @property
    def unvisited_fraction(self) -> float:
        return float(1.0 - self.visited.mean())

    @classmethod
    def from_mdp(cls, mdp: FiniteMdp) -> "EmpiricalModel":
        """The model an infinitely large log would give: every cell, exact rows."""
        horizon = mdp.horizon
        n = np.ones((horizon, mdp.num_states, mdp.num_actions))
        p = np.broadcast_to(mdp.transition, (horizon,) + mdp.transition.shape).copy()
        r = np.broadcast_to(mdp.reward, n.shape).copy()
        return cls(n, p, r)

    def pooled(self) -> "EmpiricalModel":
        """Share counts across time steps (valid when the dynamics are stationary)."""
        horizon = self.dims[0]

        def pool(x):
            return np.broadcast_to(x.sum(axis=0), x.shape).copy()

        if horizon == 0:
            return self
        return EmpiricalModel(pool(self.visit_counts), pool(self.transition_counts), pool(self.reward_sums))


@dataclass(eq=False)
class LearnedArtifacts:
    q_hat: np.ndarray
    v_hat: np.ndarray
    nu_hat: np.ndarray
    u_hat: np.ndarray
    mu_hat_star: TimedPolicy
    b_hat_star: dp.Baseline
    diagnostics: dict = field(default_factory=dict)


def build_empirical_model(dataset: TupleDataset, dims, pool_time: bool = False) -> EmpiricalModel:
    """Aggregate a log into counts. ``dims = (T, S, A)``.

    Out-of-range records raise ValidationError with their 1-based line.
    """
    horizon, n_s, n_a = (int(d) for d in dims)
    dataset.check_dims(horizon, n_s, n_a)
    visits = np.zeros((horizon, n_s, n_a))
    trans = np.zeros((horizon, n_s, n_a, n_s))
    rsum = np.zeros((horizon, n_s, n_a))
    idx = (dataset.t, dataset.s, dataset.a)
    np.add.at(visits, idx, 1.0)
    np.add.at(trans, idx + (dataset.s_next,), 1.0)
    np.add.at(rsum, idx, dataset.r)
    model = EmpiricalModel(visits, trans, rsum)
    return model.pooled() if pool_time else model


def _check_target(model: EmpiricalModel, target: TimedPolicy):
    if target.probs.shape != model.dims:
        raise ShapeError(f"target shape {target.probs.shape} != model dims {model.dims}")
    require_valid_policy(target, None, "target")


def fitted_q_evaluation(model: EmpiricalModel, target: TimedPolicy):
    """Backward DP on ``(p_hat, r_hat)``; unvisited cells come out as ``q_hat = 0``."""
    _check_target(model, target)
    return dp.q_v_arrays(model.p_hat, model.r_hat, target.probs)


def construct_nu_targets(model: EmpiricalModel, q_hat: np.ndarray, v_hat: np.ndarray) -> np.ndarray:
    """``nu_hat = mean over logged s' of v_hat[t+1](s')^2, minus (q_hat - r_hat)^2``, clamped at 0.

    The mean over logged successors is the visit-weighted ``p_hat`` average.
    Tabular fitted Q-evaluation makes ``q_hat - r_hat`` exactly that average
    of ``v_hat[t+1]``, so the target equals the variance of ``v_hat[t+1]``
    over the logged successors and is evaluated in that centered form: the
    uncentered difference leaves rounding residue where the true value is 0,
    and ``sqrt(u)`` would magnify it into the behavior policy. ``q_hat`` is
    not needed in this tabular case; it stays in the signature so another
    fitter can be swapped in.
    """
    horizon = model.dims[0]
    p_hat = model.p_hat
    nu = np.zeros(model.dims)
    for t in range(horizon - 1):
        mean = p_hat[t] @ v_hat[t + 1]
        dev = v_hat[t + 1][None, None, :] - mean[:, :, None]
        nu[t] = np.einsum("sak,sak->sa", p_hat[t], dev * dev)
    nu[~model.visited] = 0.0
    return np.maximum(nu, 0.0)


def shrink_nu(model: EmpiricalModel, nu_hat: np.ndarray, kappa: float) -> np.ndarray:
    """Pull ``nu_hat`` toward its visit-weighted mean at the same step.

    ``(n nu_hat + kappa nu_bar_t) / (n + kappa)`` on visited cells. A cell seen
    once always has ``nu_hat = 0``; the pooled mean keeps it from claiming an
    exactly zero weight. ``kappa = 0`` returns ``nu_hat`` unchanged.
    """
    if kappa < 0:
        raise ValueError(f"kappa must be >= 0, got {kappa}")
    if kappa == 0:
        return nu_hat.copy()
    n = model.visit_counts
    out = np.zeros_like(nu_hat)
    for t in range(model.dims[0]):
        total = n[t].sum()
        if total == 0:
            continue
        nu_bar = (n[t] * nu_hat[t]).sum() / total
        out[t] = np.where(n[t] > 0, (n[t] * nu_hat[t] + kappa * nu_bar) / (n[t] + kappa), 0.0)
    return out


def unvisited_weight(model: EmpiricalModel) -> np.ndarray:
    """Plug-in ``u`` for cells absent from the log: ``((T - t) * mean logged reward)^2``.

    The learned baseline is zero at such a cell, so its weight is the
    second moment of the remaining return, estimated from the reward scale.
    """
    horizon = model.dims[0]
    total = model.visit_counts.sum()
    r_mean = model.reward_sums.sum() / total if total > 0 else 0.0
    steps_left = (horizon - np.arange(horizon)).astype(float)
    return np.broadcast_to(((steps_left * r_mean) ** 2)[:, None, None], model.dims).copy()


def _pinned(model: EmpiricalModel, impute_unvisited: bool):
    unvisited = ~model.visited
    values = unvisited_weight(model) if impute_unvisited else np.zeros(model.dims)
    return unvisited, values


def fit_u(model: EmpiricalModel, target: TimedPolicy, nu_hat: np.ndarray, impute_unvisited: bool = False) -> np.ndarray:
    """``u_hat`` for the baseline ``b = q_hat`` by the short backward recursion.

    ``u_hat[T-1] = 0`` and ``u_hat[t] = nu_hat[t] + p_hat[t] @ sum_a' rho pi u_hat[t+1]``
    where ``rho = pi / mu_hat*`` at step ``t+1``. Unvisited cells are 0, or
    :func:`unvisited_weight` with ``impute_unvisited`` (propagated backward).
    """
    _check_target(model, target)
    return dp.u_bstar_recursive_arrays(
        model.p_hat, target.probs, nu_hat, fallback="target", fixed=_pinned(model, impute_unvisited)
    )


def behavior_from_u(target: TimedPolicy, u_hat: np.ndarray, defensive: float = 0.0) -> Tuple[TimedPolicy, np.ndarray]:
    """``mu ~ pi sqrt(u_hat)``; zero-weight rows copy ``pi``.

    ``defensive`` mixes in that fraction of ``pi`` everywhere, which keeps the
    behavior inside the classic coverage set when ``u_hat`` misses some mass.
    Returns the policy and the boolean (T, S) mask of fallback rows.
    """
    if not 0.0 <= defensive <= 1.0:
        raise ValueError(f"defensive must lie in [0, 1], got {defensive}")
    pi = target.probs
    fallback = (pi * np.sqrt(np.maximum(u_hat, 0.0))).sum(axis=-1) == 0
    mu = dp.mu_from_u(pi, u_hat, fallback="target")
    if defensive > 0.0:
        mu = (1.0 - defensive) * mu + defensive * pi
    return TimedPolicy(mu), fallback


def _diagnostics(model, target, q_hat, v_hat, nu_hat, u_hat, fallback, raw_nu):
    visited = model.visited
    p_hat, r_hat = model.p_hat, model.r_hat
    horizon = model.dims[0]
    bellman = q_hat - r_hat
    for t in range(horizon - 1):
        bellman[t] = bellman[t] - p_hat[t] @ v_hat[t + 1]
    pi = target.probs
    mu = dp.mu_from_u(pi, u_hat, fallback="target")
    rho = np.divide(pi, mu, out=np.zeros_like(mu), where=mu > 0)
    u_res = u_hat - nu_hat
    for t in range(horizon - 1):
        u_res[t] = u_res[t] - p_hat[t] @ np.einsum("sa,sa,sa->s", rho[t + 1], pi[t + 1], u_hat[t + 1])
    u_res[~visited] = 0.0

    def vmax(x):
        return float(np.abs(x[visited]).max()) if visited.any() else 0.0

    return {
        "tuples": int(model.visit_counts.sum()),
        "unvisited_fraction": model.unvisited_fraction,
        "unvisited_cells": int((~visited).sum()),
        "unvisited_target_cells": int(((~visited) & (pi > 0)).sum()),
        "q_bellman_residual": vmax(bellman),
        "u_recursion_residual": vmax(u_res),
        "nu_clamped_cells": int((visited & (raw_nu < 0)).sum()),
        "fallback_rows": int(fallback.sum()),
        "fallback_fraction": float(fallback.mean()),
    }


def _raw_nu(model, q_hat, v_hat):
    """The uncentered target; its negative cells are reported as ``nu_clamped_cells``."""
    raw = np.zeros(model.dims)
    for t in range(model.dims[0] - 1):
        raw[t] = model.p_hat[t] @ v_hat[t + 1] ** 2 - (q_hat[t] - model.r_hat[t]) ** 2
    return raw


def learn_from_model(
    model: EmpiricalModel,
    target: TimedPolicy,
    defensive: float = 0.0,
    impute_unvisited: bool = False,
    nu_shrinkage: float = 0.0,
) -> LearnedArtifacts:
    """Learned optimal behavior policy and baseline (the DOpt pair).

    With the defaults this is the plain plug-in pipeline. ``nu_shrinkage``,
    ``impute_unvisited`` and ``defensive`` are small-sample safeguards; see
    :func:`shrink_nu`, :func:`unvisited_weight` and :func:`behavior_from_u`.
    """
    q_hat, v_hat = fitted_q_evaluation(model, target)
    nu_hat = construct_nu_targets(model, q_hat, v_hat)
    u_hat = fit_u(model, target, shrink_nu(model, nu_hat, nu_shrinkage), impute_unvisited)
    mu, fallback = behavior_from_u(target, u_hat, defensive)
    b_hat = dp.derive_b_star(q_hat, target)
    diag = _diagnostics(model, target, q_hat, v_hat, nu_hat, u_hat, fallback, _raw_nu(model, q_hat, v_hat))
    diag["defensive"] = float(defensive)
    diag["impute_unvisited"] = bool(impute_unvisited)
    diag["nu_shrinkage"] = float(nu_shrinkage)
    return LearnedArtifacts(q_hat, v_hat, nu_hat, u_hat, mu, b_hat, diag)


def learn_dopt(
    dataset: TupleDataset,
    target: TimedPolicy,
    dims,
    pool_time: bool = False,
    defensive: float = 0.0,
    impute_unvisited: bool = False,
    nu_shrinkage: float = 0.0,
) -> LearnedArtifacts:
    """Full offline pipeline from a log to ``(mu_hat*, b_hat*)``. ``dims = (T, S, A)``."""
    model = build_empirical_model(dataset, dims, pool_time)
    return learn_from_model(model, target, defensive, impute_unvisited, nu_shrinkage)


def learn_odi_from_model(
    model: EmpiricalModel,
    target: TimedPolicy,
    defensive: float = 0.0,
    impute_unvisited: bool = False,
    nu_shrinkage: float = 0.0,
) -> LearnedArtifacts:
    """Learned optimal behavior policy for plain importance sampling (no baseline).

    ``u_hat`` here is the zero-baseline weight, obtained by the exact
    alternating sweep on the empirical model; ``b_hat_star`` is zero.
    """
    q_hat, v_hat = fitted_q_evaluation(model, target)
    nu_hat = construct_nu_targets(model, q_hat, v_hat)
    zero = dp.Baseline.zeros(target)
    u_hat = dp.u_arrays(
        model.p_hat, target.probs, q_hat, v_hat, shrink_nu(model, nu_hat, nu_shrinkage), zero.b, zero.b_bar,
        fallback="target", fixed=_pinned(model, impute_unvisited),
    ).u
    mu, fallback = behavior_from_u(target, u_hat, defensive)
    diag = {
        "tuples": int(model.visit_counts.sum()),
        "unvisited_fraction": model.unvisited_fraction,
        "fallback_rows": int(fallback.sum()),
        "defensive": float(defensive),
        "impute_unvisited": bool(impute_unvisited),
        "nu_shrinkage": float(nu_shrinkage),
    }
    return LearnedArtifacts(q_hat, v_hat, nu_hat, u_hat, mu, zero, diag)


def learn_odi(
    dataset: TupleDataset,
    target: TimedPolicy,
    dims,
    pool_time: bool = False,
    defensive: float = 0.0,
    impute_unvisited: bool = False,
    nu_shrinkage: float = 0.0,
) -> LearnedArtifacts:
    model = build_empirical_model(dataset, dims, pool_time)
    return learn_odi_from_model(model, target, defensive, impute_unvisited, nu_shrinkage)
