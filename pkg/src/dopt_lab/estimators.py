"""Trajectory-functional estimators and batched Monte Carlo evaluation."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .dp import Baseline, coverage_check, nu_arrays, q_v_arrays, u_arrays
from .errors import CoverageError, ShapeError, ValidationError
from .mdp import (
    FiniteMdp,
    RngSpec,
    TimedPolicy,
    Trajectory,
    cdf_table,
    importance_ratio,
    ratio_table,
    require_valid_policy,
    uniforms_for,
)

ON_POLICY_MC = "on_policy_mc"
PDIS = "pdis"
BASELINE_CORRECTED = "baseline_corrected"
KINDS = (ON_POLICY_MC, PDIS, BASELINE_CORRECTED)


@dataclass(frozen=True, eq=False)
class EstimatorSpec:
    kind: str
    behavior: TimedPolicy
    baseline: Optional[Baseline] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}; expected one of {KINDS}")
        if (self.baseline is not None) != (self.kind == BASELINE_CORRECTED):
            raise ValueError("a baseline is required for, and only for, kind='baseline_corrected'")

    @classmethod
    def on_policy(cls, target: TimedPolicy) -> "EstimatorSpec":
        return cls(ON_POLICY_MC, target)


def pdis_return(trajectory: Trajectory, target: TimedPolicy, behavior: TimedPolicy) -> float:
    """Per-decision importance sampling return via its backward recursion."""
    g = 0.0
    for st in reversed(trajectory.steps):
        rho = importance_ratio(target, behavior, st.t, st.state, st.action)
        g = rho * (st.reward + g)
    return g


def baseline_return(
    trajectory: Trajectory, target: TimedPolicy, behavior: TimedPolicy, baseline: Baseline
) -> float:
    """Baseline-corrected return ``rho_t (R_{t+1} + G_{t+1} - b_t) + b_bar_t``."""
    if not (np.all(np.isfinite(baseline.b)) and np.all(np.isfinite(baseline.b_bar))):
        raise ValidationError("baseline must be finite")
    g = 0.0
    for st in reversed(trajectory.steps):
        rho = importance_ratio(target, behavior, st.t, st.state, st.action)
        g = rho * (st.reward + g - baseline.b[st.t, st.state, st.action]) + baseline.b_bar[st.t, st.state]
    return g


# -- running statistics ------------------------------------------------------


@dataclass
class RunningStats:
    """Welford mean/variance with a Kahan-compensated mean accumulator."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    _comp: float = 0.0

    def push(self, x: float) -> None:
        self.count += 1
        delta = x - self.mean
        step = delta / self.count - self._comp
        new_mean = self.mean + step
        self._comp = (new_mean - self.mean) - step
        self.mean = new_mean
        self.m2 += delta * (x - self.mean)

    def variance(self) -> float:
        """Unbiased sample variance (0 for fewer than two samples)."""
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    def merge(self, other: "RunningStats") -> "RunningStats":
        n = self.count + other.count
        if n == 0:
            return RunningStats()
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return RunningStats(n, mean, m2)


@dataclass
class EvalRun:
    samples: np.ndarray
    running_mean: float
    running_variance: float
    episodes: int
    stats: RunningStats = field(repr=False, default_factory=RunningStats)

    @classmethod
    def from_samples(cls, samples) -> "EvalRun":
        samples = np.asarray(samples, dtype=float)
        stats = RunningStats()
        for x in samples.tolist():
            stats.push(x)
        return cls(samples, stats.mean, stats.variance(), len(samples), stats)

    def cumulative_means(self) -> np.ndarray:
        return np.cumsum(self.samples) / np.arange(1, self.episodes + 1)

    def write_csv(self, path, truth: Optional[float] = None) -> None:
        """One row per episode: estimate, running mean and its absolute error vs ``truth``.

        The error column is left empty when ``truth`` is not given.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        means = self.cumulative_means()
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["episode_index", "estimate", "running_mean", "running_abs_error_vs_truth"])
            for i, (x, m) in enumerate(zip(self.samples.tolist(), means.tolist()), start=1):
                err = "" if truth is None else repr(abs(m - float(truth)))
                w.writerow([i, repr(x), repr(m), err])

    def merge(self, other: "EvalRun") -> "EvalRun":
        """Concatenate two runs; statistics combine associatively."""
        stats = self.stats.merge(other.stats)
        return EvalRun(
            np.concatenate([self.samples, other.samples]), stats.mean, stats.variance(), stats.count, stats
        )


# -- batch evaluation --------------------------------------------------------


def _ratio_for(mdp: FiniteMdp, target: TimedPolicy, spec: EstimatorSpec, baseline: Baseline) -> np.ndarray:
    ratio = ratio_table(target, spec.behavior)
    uncovered = np.isnan(ratio)
    if uncovered.any():
        q, v = q_v_arrays(mdp.transition, mdp.reward, target.probs)
        nu = nu_arrays(mdp.transition, v)
        u = u_arrays(mdp.transition, target.probs, q, v, nu, baseline.b, baseline.b_bar).u
        report = coverage_check(spec.behavior, target, u)
        if not report.in_lambda:
            raise CoverageError(
                f"behavior leaves {report.violations[0]} uncovered; the estimator would be biased",
                location=report.violations[0],
            )
        # never sampled, and pi * u = 0 there
        ratio[uncovered] = 0.0
    return ratio


def sample_batch(mdp: FiniteMdp, behavior: TimedPolicy, episodes: int, rng: RngSpec):
    """States (N, T+1) and actions (N, T) for ``episodes`` trajectories."""
    u = uniforms_for(rng, episodes, mdp.horizon)
    return kernels.simulate(
        cdf_table(mdp.initial_dist), cdf_table(behavior.probs), cdf_table(mdp.transition), u
    )


def run_evaluation(
    mdp: FiniteMdp, target: TimedPolicy, spec: EstimatorSpec, episodes: int, rng: RngSpec
) -> EvalRun:
    """Apply the estimator to ``episodes`` trajectories sampled under ``spec.behavior``."""
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    require_valid_policy(target, mdp, "target")
    require_valid_policy(spec.behavior, mdp, "behavior")
    if spec.kind == ON_POLICY_MC and not np.array_equal(spec.behavior.probs, target.probs):
        raise ValueError("on-policy Monte Carlo requires behavior == target")
    baseline = spec.baseline if spec.baseline is not None else Baseline.zeros(target)
    if baseline.b.shape != target.probs.shape:
        raise ShapeError("baseline shape does not match the target policy")

    ratio = _ratio_for(mdp, target, spec, baseline)
    states, actions = sample_batch(mdp, spec.behavior, episodes, rng)
    g = kernels.returns(states, actions, mdp.reward, ratio, baseline.b, baseline.b_bar)
    bad = ~np.isfinite(g)
    if bad.any():
        i = int(np.argmax(bad))
        raise CoverageError(f"non-finite estimate in episode {i}", episode=i)
    return EvalRun.from_samples(g)

