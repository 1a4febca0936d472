"""Exact numeric checks of the variance-gap decompositions.

Each ``gap_vs_*`` function computes, per (t, s), the variance gap between a
reference estimator and DOpt (optimal behavior ``mu*`` with optimal baseline
``b* = q``), the closed-form terms it decomposes into, and the residual.
Every term, including the future-gap term ``delta``, is computed from its own
definition; nothing is inferred as a residual.

Throughout, ``Var^{b, mu}_t(s)`` is the exact conditional variance of the
baseline-corrected estimator from step ``t`` under behavior ``mu``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from . import dp
from .enumeration import DEFAULT_CAP, exact_moments
from .environments import random_instance
from .errors import EnumerationCapError
from .mdp import FiniteMdp, RngSpec, TimedPolicy

RESIDUAL_TOL = 1e-9
DELTA_TOL = 1e-12

EQUALITY = "eq"
INEQUALITY = "ge"


@dataclass
class GapReport:
    """Both sides of one decomposition at every (t, s).

    For ``relation == "eq"`` the claim is ``lhs == sum(terms)``; for ``"ge"``
    it is ``lhs >= sum(terms)``. ``residual = lhs - sum(terms)``.
    """

    name: str
    relation: str
    lhs: np.ndarray
    terms: Dict[str, np.ndarray]
    delta: np.ndarray

    @property
    def rhs(self) -> np.ndarray:
        return sum(self.terms.values())

    @property
    def residual(self) -> np.ndarray:
        return self.lhs - self.rhs

    @property
    def delta_nonnegative(self) -> np.ndarray:
        return self.delta >= -DELTA_TOL

    def holds(self, tol: float = RESIDUAL_TOL) -> bool:
        res = self.residual
        if self.relation == EQUALITY:
            ok = np.all(np.abs(res) <= tol)
        else:
            ok = np.all(res >= -tol)
        return bool(ok and self.delta_nonnegative.all())

    def summary(self) -> dict:
        res = self.residual
        return {
            "name": self.name,
            "relation": self.relation,
            "max_abs_residual": float(np.abs(res).max()),
            "min_residual": float(res.min()),
            "max_residual": float(res.max()),
            "min_delta": float(self.delta.min()),
            "holds": self.holds(),
        }


# -- shared pieces -----------------------------------------------------------


@dataclass
class _Exact:
    mdp: FiniteMdp
    pi: np.ndarray
    q: np.ndarray
    v: np.ndarray
    nu: np.ndarray
    b_star: dp.Baseline
    zero: dp.Baseline
    u_star: np.ndarray
    mu_star: np.ndarray

    def var(self, behavior: np.ndarray, baseline: dp.Baseline) -> np.ndarray:
        return dp.variance_arrays(
            self.mdp.transition, self.pi, behavior, self.q, self.v, self.nu, baseline.b, baseline.b_bar
        )


def _exact(mdp: FiniteMdp, target: TimedPolicy) -> _Exact:
    dp._check(mdp, target)
    pi = target.probs
    q, v = dp.q_v_arrays(mdp.transition, mdp.reward, pi)
    nu = dp.nu_arrays(mdp.transition, v)
    b_star = dp.derive_b_star(q, target)
    sol = dp.u_arrays(mdp.transition, pi, q, v, nu, b_star.b, b_star.b_bar)
    return _Exact(mdp, pi, q, v, nu, b_star, dp.Baseline.zeros(target), sol.u, sol.mu_star)


def _expected_future_gap(transition, weights, var_a, var_b):
    """``delta_t(s) = sum_a weights_t(s, a) sum_s' p(s'|s, a) (var_a - var_b)_{t+1}(s')``.

    Zero at the last step.
    """
    delta = np.zeros(var_a.shape)
    diff = var_a - var_b
    for t in range(var_a.shape[0] - 1):
        delta[t] = np.einsum("sa,sa->s", weights[t], transition @ diff[t + 1])
    return delta


def _pi_variance(pi, x):
    """``Var_{a ~ pi}(x)`` per (t, s), in the form ``E[x^2] - E[x]^2``."""
    mean = np.einsum("tsa,tsa->ts", pi, x)
    return np.einsum("tsa,tsa->ts", pi, x * x) - mean**2


# -- the three decompositions ------------------------------------------------


def gap_vs_on_policy(mdp: FiniteMdp, target: TimedPolicy) -> GapReport:
    """On-policy Monte Carlo (no baseline, behavior ``pi``) versus the optimum.

    ``Var^{0,pi}_t - Var^{b*,mu*}_t = Var_pi(sqrt u) + Var_pi(q) + delta_t`` with
    ``delta_t = E_{pi,p}[Var^{0,pi}_{t+1} - Var^{b*,mu*}_{t+1}]``.
    """
    ex = _exact(mdp, target)
    var_mc = ex.var(ex.pi, ex.zero)
    var_opt = ex.var(ex.mu_star, ex.b_star)
    delta = _expected_future_gap(mdp.transition, ex.pi, var_mc, var_opt)
    terms = {
        "behavior_gap": _pi_variance(ex.pi, np.sqrt(ex.u_star)),
        "baseline_gap": _pi_variance(ex.pi, ex.q),
        "future_gap": delta,
    }
    return GapReport("on_policy", EQUALITY, var_mc - var_opt, terms, delta)


def gap_vs_odi(mdp: FiniteMdp, target: TimedPolicy) -> GapReport:
    """Plain importance sampling under its own optimal behavior versus the optimum.

    With ``mu'`` the optimal behavior for the zero baseline and ``w = pi^2/mu'``:
    ``Var^{0,mu'}_t - Var^{b*,mu*}_t >= Var_{mu'}(rho q) + delta_t`` where
    ``Var_{mu'}(rho q) = sum_a w q^2 - v^2`` and
    ``delta_t = sum_a w sum_s' p (Var^{0,mu'}_{t+1} - Var^{b*,mu*}_{t+1})``.
    The dropped slack is nonnegative (a Jensen gap on ``sqrt u``).
    """
    ex = _exact(mdp, target)
    sol_pdis = dp.u_arrays(mdp.transition, ex.pi, ex.q, ex.v, ex.nu, ex.zero.b, ex.zero.b_bar)
    mu_pdis = sol_pdis.mu_star
    var_pdis = sol_pdis.variance
    var_opt = ex.var(ex.mu_star, ex.b_star)
    w = np.stack([dp.rho_squared_weights(ex.pi[t], mu_pdis[t]) for t in range(mdp.horizon)])
    delta = _expected_future_gap(mdp.transition, w, var_pdis, var_opt)
    terms = {
        "baseline_gap": np.einsum("tsa,tsa->ts", w, ex.q**2) - ex.v**2,
        "future_gap": delta,
    }
    return GapReport("odi", INEQUALITY, var_pdis - var_opt, terms, delta)


def gap_vs_dr(mdp: FiniteMdp, target: TimedPolicy) -> GapReport:
    """Doubly robust (baseline ``b*``, behavior ``pi``) versus the optimum.

    ``Var^{b*,pi}_t - Var^{b*,mu*}_t = Var_pi(sqrt u) + delta_t`` with
    ``delta_t = E_{pi,p}[Var^{b*,pi}_{t+1} - Var^{b*,mu*}_{t+1}]``.
    """
    ex = _exact(mdp, target)
    var_dr = ex.var(ex.pi, ex.b_star)
    var_opt = ex.var(ex.mu_star, ex.b_star)
    delta = _expected_future_gap(mdp.transition, ex.pi, var_dr, var_opt)
    terms = {
        "behavior_gap": _pi_variance(ex.pi, np.sqrt(ex.u_star)),
        "future_gap": delta,
    }
    return GapReport("dr", EQUALITY, var_dr - var_opt, terms, delta)


# -- random challengers ------------------------------------------------------


def random_behavior(target: TimedPolicy, u: Optional[np.ndarray], rng: RngSpec, zero_prob: float = 0.3) -> TimedPolicy:
    """Random behavior policy inside a coverage set.

    With ``u=None`` the result lies in the classic set (it may only drop
    actions that ``pi`` never takes); otherwise in the enlarged set (it may
    also drop actions where ``pi * u == 0``).
    """
    gen = rng.generator()
    pi = target.probs
    droppable = pi == 0 if u is None else pi * u == 0
    weights = gen.standard_exponential(pi.shape)
    weights[droppable & (gen.random(pi.shape) < zero_prob)] = 0.0
    empty = weights.sum(axis=-1) == 0
    weights[empty] = 1.0
    return TimedPolicy(weights / weights.sum(axis=-1, keepdims=True))


def random_baseline(target: TimedPolicy, rng: RngSpec, low: float = -1.0, high: float = 2.0) -> dp.Baseline:
    b = rng.generator().uniform(low, high, target.probs.shape)
    return dp.Baseline.from_table(b, target)


# -- the suite ---------------------------------------------------------------


def instance_seed(seed: int, index: int) -> int:
    return seed * 1_000_003 + index


def check_instance(mdp: FiniteMdp, target: TimedPolicy, cap: int = DEFAULT_CAP) -> dict:
    """All exact invariants for one instance, as a JSON-ready dict."""
    reports = [gap_vs_on_policy(mdp, target), gap_vs_odi(mdp, target), gap_vs_dr(mdp, target)]
    ex = _exact(mdp, target)
    u_rec = dp.u_bstar_recursive_arrays(mdp.transition, ex.pi, ex.nu)
    recursive_err = float(np.abs(u_rec - ex.u_star).max())
    terminal_zero = bool(np.all(ex.u_star[-1] == 0.0))

    def total(behavior, baseline):
        return dp.total_variance(mdp, ex.var(behavior, baseline)[0], ex.v[0])

    zero = ex.zero
    sol_pdis = dp.u_arrays(mdp.transition, ex.pi, ex.q, ex.v, ex.nu, zero.b, zero.b_bar)
    v_opt = total(ex.mu_star, ex.b_star)
    others = {
        "on_policy_mc": total(ex.pi, zero),
        "odi": total(sol_pdis.mu_star, zero),
        "dr": total(ex.pi, ex.b_star),
    }
    ordering_ok = all(v_opt <= x + RESIDUAL_TOL for x in others.values())

    out = {
        "dims": list(mdp.dims),
        "gaps": [r.summary() for r in reports],
        "recursive_u_max_abs_diff": recursive_err,
        "terminal_u_zero": terminal_zero,
        "dopt_total_variance": v_opt,
        "other_total_variance": others,
        "ordering_ok": ordering_ok,
    }
    try:
        mean, var = exact_moments(mdp, target, TimedPolicy(ex.mu_star), ex.b_star, cap=cap)
    except EnumerationCapError:
        out["enumeration"] = None
    else:
        j = float(mdp.initial_dist @ ex.v[0])
        out["enumeration"] = {"mean_abs_err": abs(mean - j), "var_abs_err": abs(var - v_opt)}
    out["ok"] = bool(
        all(r.holds() for r in reports)
        and recursive_err <= RESIDUAL_TOL
        and terminal_zero
        and ordering_ok
        and (
            out["enumeration"] is None
            or max(out["enumeration"].values()) <= RESIDUAL_TOL
        )
    )
    return out


def run_theorem_suite(
    instances: int = 50,
    seed: int = 0,
    max_states: int = 5,
    max_actions: int = 3,
    max_horizon: int = 4,
) -> dict:
    """Run :func:`check_instance` on seeded random instances and aggregate."""
    if instances < 1:
        raise ValueError(f"instances must be >= 1, got {instances}")
    per: List[dict] = []
    slack: List[float] = []
    for i in range(instances):
        mdp, target = random_instance(instance_seed(seed, i), max_states, max_actions, max_horizon)
        rep = check_instance(mdp, target)
        rep["index"] = i
        per.append(rep)
        odi = next(g for g in rep["gaps"] if g["name"] == "odi")
        slack.append((odi["min_residual"], odi["max_residual"]))
    failures = [r["index"] for r in per if not r["ok"]]
    eq = [g["max_abs_residual"] for r in per for g in r["gaps"] if g["relation"] == EQUALITY]
    slack_arr = np.array(slack)
    return {
        "instances": instances,
        "seed": seed,
        "passed": instances - len(failures),
        "failed": failures,
        "ok": not failures,
        "max_equality_residual": float(max(eq)),
        "min_delta": float(min(g["min_delta"] for r in per for g in r["gaps"])),
        "max_recursive_u_diff": float(max(r["recursive_u_max_abs_diff"] for r in per)),
        # the inequality's dropped term, largest entry per instance
        "odi_slack": {
            "min": float(slack_arr[:, 0].min()),
            "median_of_max": float(np.median(slack_arr[:, 1])),
            "max": float(slack_arr[:, 1].max()),
        },
        "per_instance": per,
    }
