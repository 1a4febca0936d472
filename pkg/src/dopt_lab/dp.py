"""Exact backward dynamic programming on tabular models.

Everything here is a ground-truth oracle: value functions, next-state value
variance, the behavior-policy weight ``u``, the variance-optimal behavior
policy and baseline, coverage sets, and the exact conditional variance of the
baseline-corrected per-decision importance sampling estimator.

The ``*_arrays`` functions work on raw tables so the offline learner can run
them on an empirical model. Transition tables may be stationary, shape
(S, A, S), or time-indexed, shape (T, S, A, S); rewards likewise (S, A) or
(T, S, A). A transition row of all zeros means "no successor information"
and contributes nothing to the backups.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from .errors import CoverageError, ShapeError
from .mdp import FiniteMdp, TimedPolicy, require_valid_policy


def _at(table, t, stationary_ndim):
    return table if table.ndim == stationary_ndim else table[t]


# -- data types --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Baseline:
    """Per-step control variate ``b[t, s, a]`` and its target average ``b_bar[t, s]``."""

    b: np.ndarray
    b_bar: np.ndarray

    @classmethod
    def from_table(cls, b, target: TimedPolicy) -> "Baseline":
        b = np.array(b, dtype=float)
        if b.shape != target.probs.shape:
            raise ShapeError(f"baseline shape {b.shape} != policy shape {target.probs.shape}")
        return cls(b, np.einsum("tsa,tsa->ts", target.probs, b))

    @classmethod
    def zeros(cls, target: TimedPolicy) -> "Baseline":
        return cls.from_table(np.zeros(target.probs.shape), target)


@dataclass(frozen=True, eq=False)
class ValueTables:
    q: np.ndarray
    v: np.ndarray
    nu: np.ndarray
    u: Optional[np.ndarray] = None


@dataclass
class CoverageReport:
    in_lambda_minus: bool
    in_lambda: bool
    violations: List[Tuple[int, int, int]]


class USolution(NamedTuple):
    """Output of the alternating backward sweep for a given baseline."""

    u: np.ndarray
    mu_star: np.ndarray
    variance: np.ndarray  # conditional variance of G^b under mu_star, shape (T, S)


class EstimatorVariance(NamedTuple):
    per_step: np.ndarray  # Var(G^b | S_t = s) under the behavior policy, shape (T, S)
    total: float  # Var(G^b(tau_{0:T-1})) with S_0 ~ p0


# -- array kernels -----------------------------------------------------------


def q_v_arrays(transition, reward, pi):
    """Backward policy evaluation; returns ``q`` (T, S, A) and ``v`` (T, S)."""
    horizon, n_s, n_a = pi.shape
    q = np.zeros((horizon, n_s, n_a))
    v = np.zeros((horizon, n_s))
    for t in range(horizon - 1, -1, -1):
        q[t] = _at(reward, t, 2)
        if t < horizon - 1:
            q[t] = q[t] + _at(transition, t, 3) @ v[t + 1]
        v[t] = np.einsum("sa,sa->s", pi[t], q[t])
    return q, v


def nu_arrays(transition, v):
    """Next-state variance of ``v[t+1]``, zero at the last step.

    Computed in centered form so the result is nonnegative by construction.
    """
    horizon = v.shape[0]
    p_last = _at(transition, 0, 3)
    nu = np.zeros((horizon,) + p_last.shape[:2])
    for t in range(horizon - 1):
        p = _at(transition, t, 3)
        mean = p @ v[t + 1]
        dev = v[t + 1][None, None, :] - mean[:, :, None]
        nu[t] = np.einsum("sak,sak->sa", p, dev * dev)
    return nu


def rho_squared_weights(pi_t, mu_t):
    """``pi^2 / mu`` with zero where ``mu`` is zero (0/0 := 0)."""
    w = np.zeros_like(pi_t)
    pos = mu_t > 0
    w[pos] = pi_t[pos] ** 2 / mu_t[pos]
    return w


def variance_step(pi_t, mu_t, inner_t, v_t, b_bar_t):
    """One step of the recursive variance identity.

    ``Var_t(s) = sum_a pi^2/mu * inner(s, a) - (v(s) - b_bar(s))^2`` where
    ``inner = E[Var_{t+1}(S') | s, a] + nu(s, a) + (q(s, a) - b(s, a))^2``.
    """
    w = rho_squared_weights(pi_t, mu_t)
    return np.einsum("sa,sa->s", w, inner_t) - (v_t - b_bar_t) ** 2


def mu_from_u(pi_t, u_t, fallback="uniform"):
    """Rows proportional to ``pi * sqrt(u)``.

    Rows whose weights are all zero become uniform (``fallback="uniform"``)
    or copy ``pi`` (``fallback="target"``).
    """
    w = pi_t * np.sqrt(np.maximum(u_t, 0.0))
    den = w.sum(axis=-1, keepdims=True)
    zero = den[..., 0] == 0
    out = np.divide(w, den, out=np.zeros_like(w), where=den > 0)
    if fallback == "uniform":
        out[zero] = 1.0 / pi_t.shape[-1]
    elif fallback == "target":
        out[zero] = pi_t[zero]
    else:
        raise ValueError(f"unknown fallback {fallback!r}")
    return out


def variance_arrays(transition, pi, mu, q, v, nu, b, b_bar):
    """Exact ``Var(G^b | S_t = s)`` under ``mu`` for every (t, s)."""
    horizon = pi.shape[0]
    var = np.zeros(pi.shape[:2])
    for t in range(horizon - 1, -1, -1):
        inner = (q[t] - b[t]) ** 2 + nu[t]
        if t < horizon - 1:
            inner = inner + _at(transition, t, 3) @ var[t + 1]
        var[t] = variance_step(pi[t], mu[t], inner, v[t], b_bar[t])
    return var


def _pin(u_t, fixed, t):
    if fixed is not None:
        mask, values = fixed
        u_t[mask[t]] = values[t][mask[t]]


def u_arrays(transition, pi, q, v, nu, b, b_bar, fallback="uniform", fixed=None) -> USolution:
    """Alternating sweep ``u_{T-1}, mu*_{T-1}, u_{T-2}, mu*_{T-2}, ...``.

    The future-variance term of ``u_t`` is the exact conditional variance of
    ``G^b`` under the already-built ``mu*_{t+1:T-1}``, evaluated with
    :func:`variance_step`. ``fixed = (mask, values)`` pins ``u`` on the masked
    cells before each step's policy is formed, so pinned values propagate.
    """
    horizon = pi.shape[0]
    u = np.zeros(pi.shape)
    mu = np.zeros(pi.shape)
    var = np.zeros(pi.shape[:2])
    for t in range(horizon - 1, -1, -1):
        u[t] = (q[t] - b[t]) ** 2 + nu[t]
        if t < horizon - 1:
            u[t] = u[t] + _at(transition, t, 3) @ var[t + 1]
        _pin(u[t], fixed, t)
        mu[t] = mu_from_u(pi[t], u[t], fallback)
        var[t] = variance_step(pi[t], mu[t], u[t], v[t], b_bar[t])
    return USolution(u, mu, var)


def u_bstar_recursive_arrays(transition, pi, nu, fallback="uniform", fixed=None):
    """``u`` for the baseline ``b = q`` via the short recursion.

    ``u_{T-1} = 0`` and ``u_t(s, a) = nu_t(s, a) + sum_{s', a'} p(s'|s, a)
    rho_{t+1}(a'|s') pi_{t+1}(a'|s') u_{t+1}(s', a')`` with
    ``rho_{t+1} = pi_{t+1} / mu*_{t+1}``. No trajectory variance is evaluated.
    ``fixed`` pins cells as in :func:`u_arrays`.
    """
    horizon = pi.shape[0]
    u = np.zeros(pi.shape)
    _pin(u[horizon - 1], fixed, horizon - 1)
    for t in range(horizon - 2, -1, -1):
        mu_next = mu_from_u(pi[t + 1], u[t + 1], fallback)
        rho_next = np.divide(pi[t + 1], mu_next, out=np.zeros_like(mu_next), where=mu_next > 0)
        inner = np.einsum("sa,sa,sa->s", rho_next, pi[t + 1], u[t + 1])
        u[t] = nu[t] + _at(transition, t, 3) @ inner
        _pin(u[t], fixed, t)
    return u


# -- model-level API ---------------------------------------------------------


def _check(mdp: FiniteMdp, *policies: TimedPolicy):
    for i, pol in enumerate(policies):
        require_valid_policy(pol, mdp, name=f"policy argument {i}")


def compute_q_v(mdp: FiniteMdp, target: TimedPolicy):
    _check(mdp, target)
    return q_v_arrays(mdp.transition, mdp.reward, target.probs)


def policy_performance(mdp: FiniteMdp, target: TimedPolicy) -> float:
    """``J(pi) = sum_s p0(s) v_0(s)``."""
    _, v = compute_q_v(mdp, target)
    return float(mdp.initial_dist @ v[0])


def compute_nu(mdp: FiniteMdp, target: TimedPolicy, v: np.ndarray) -> np.ndarray:
    if v.shape != (mdp.horizon, mdp.num_states):
        raise ShapeError(f"v has shape {v.shape}, expected {(mdp.horizon, mdp.num_states)}")
    return nu_arrays(mdp.transition, v)


def solve_u(mdp: FiniteMdp, target: TimedPolicy, baseline: Baseline) -> USolution:
    """``u`` for an arbitrary baseline together with its ``mu*`` and variance."""
    _check(mdp, target)
    q, v = q_v_arrays(mdp.transition, mdp.reward, target.probs)
    nu = nu_arrays(mdp.transition, v)
    return u_arrays(mdp.transition, target.probs, q, v, nu, baseline.b, baseline.b_bar)


def compute_u(mdp: FiniteMdp, target: TimedPolicy, baseline: Baseline) -> np.ndarray:
    return solve_u(mdp, target, baseline).u


def compute_u_bstar_recursive(mdp: FiniteMdp, target: TimedPolicy) -> np.ndarray:
    _check(mdp, target)
    q, v = q_v_arrays(mdp.transition, mdp.reward, target.probs)
    nu = nu_arrays(mdp.transition, v)
    return u_bstar_recursive_arrays(mdp.transition, target.probs, nu)


def derive_mu_star(target: TimedPolicy, u: np.ndarray) -> TimedPolicy:
    """Behavior policy with ``mu*_t(a|s)`` proportional to ``pi_t(a|s) sqrt(u_t(s, a))``.

    Rows where every weight is zero are uniform.
    """
    if u.shape != target.probs.shape:
        raise ShapeError(f"u has shape {u.shape}, policy has {target.probs.shape}")
    return TimedPolicy(mu_from_u(target.probs, u))


def derive_b_star(q: np.ndarray, target: TimedPolicy) -> Baseline:
    """The optimal baseline is the action-value function itself."""
    return Baseline.from_table(q, target)


def coverage_check(behavior: TimedPolicy, target: TimedPolicy, u: np.ndarray) -> CoverageReport:
    """Membership in the classic coverage set and in the enlarged set.

    The enlarged set only forbids ``mu = 0`` where ``pi * u > 0``. Comparisons
    are exact: ``u`` from :func:`compute_u` is exactly zero where it should be.
    """
    mu = behavior.probs
    pi = target.probs
    if not (mu.shape == pi.shape == u.shape):
        raise ShapeError("behavior, target and u must share shape (T, S, A)")
    classic = (mu == 0) & (pi > 0)
    enlarged = (mu == 0) & (pi * u > 0)
    in_minus = not classic.any()
    in_lambda = not enlarged.any()
    failed = enlarged if not in_lambda else classic
    violations = [tuple(int(i) for i in idx) for idx in zip(*np.nonzero(failed))]
    return CoverageReport(in_minus, in_lambda, violations)


def exact_estimator_variance(
    mdp: FiniteMdp, target: TimedPolicy, behavior: TimedPolicy, baseline: Baseline
) -> EstimatorVariance:
    """Exact variance of ``G^b`` under ``behavior`` for every (t, s), and in total.

    Raises CoverageError when ``behavior`` is outside the enlarged coverage
    set for this baseline (the estimator is then biased).
    """
    _check(mdp, target, behavior)
    q, v = q_v_arrays(mdp.transition, mdp.reward, target.probs)
    nu = nu_arrays(mdp.transition, v)
    if np.any((behavior.probs == 0) & (target.probs > 0)):
        sol = u_arrays(mdp.transition, target.probs, q, v, nu, baseline.b, baseline.b_bar)
        report = coverage_check(behavior, target, sol.u)
        if not report.in_lambda:
            raise CoverageError(
                f"behavior not in the enlarged coverage set; first violation {report.violations[0]}",
                location=report.violations[0],
            )
    var = variance_arrays(
        mdp.transition, target.probs, behavior.probs, q, v, nu, baseline.b, baseline.b_bar
    )
    return EstimatorVariance(var, total_variance(mdp, var[0], v[0]))


def total_variance(mdp: FiniteMdp, var0: np.ndarray, v0: np.ndarray) -> float:
    """Law of total variance over ``S_0 ~ p0``."""
    p0 = mdp.initial_dist
    mean = p0 @ v0
    return float(p0 @ var0 + p0 @ (v0 - mean) ** 2)


def solve(mdp: FiniteMdp, target: TimedPolicy):
    """All exact quantities for ``target``: tables, ``mu*``, ``b*`` and ``J``.

    ``tables.u`` is the weight for the optimal baseline.
    """
    _check(mdp, target)
    q, v = q_v_arrays(mdp.transition, mdp.reward, target.probs)
    nu = nu_arrays(mdp.transition, v)
    b_star = derive_b_star(q, target)
    sol = u_arrays(mdp.transition, target.probs, q, v, nu, b_star.b, b_star.b_bar)
    tables = ValueTables(q, v, nu, sol.u)
    return tables, TimedPolicy(sol.mu_star), b_star, float(mdp.initial_dist @ v[0])


def state_occupancy(mdp: FiniteMdp, behavior: TimedPolicy) -> np.ndarray:
    """``P(S_t = s)`` for ``t = 0 .. T`` by forward propagation."""
    _check(mdp, behavior)
    occ = np.zeros((mdp.horizon + 1, mdp.num_states))
    occ[0] = mdp.initial_dist
    for t in range(mdp.horizon):
        sa = occ[t][:, None] * behavior.probs[t]
        occ[t + 1] = np.einsum("sa,sak->k", sa, mdp.transition)
    return occ
