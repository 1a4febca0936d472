"""Finite-horizon tabular MDPs, time-indexed policies, trajectories and sampling.

States and actions are dense integer indices. Rewards are deterministic,
``R_{t+1} = r(S_t, A_t)``, and returns are undiscounted.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from .errors import CoverageError, ShapeError, ValidationError

SIMPLEX_TOL = 1e-12


def _frozen(array, dtype=float) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """Tabular MDP with horizon ``T``.

    Parameters
    ----------
    transition : array of shape (S, A, S)
        ``transition[s, a, s']`` is ``p(s' | s, a)``.
    reward : array of shape (S, A)
    initial_dist : array of shape (S,)
    horizon : int
    """

    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    horizon: int

    def __post_init__(self):
        p = _frozen(self.transition)
        r = _frozen(self.reward)
        p0 = _frozen(self.initial_dist)
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "initial_dist", p0)
        object.__setattr__(self, "horizon", int(self.horizon))

        if p.ndim != 3 or p.shape[0] != p.shape[2] or p.shape[0] < 1 or p.shape[1] < 1:
            raise ShapeError(f"transition must have shape (S, A, S), got {p.shape}")
        if r.shape != p.shape[:2]:
            raise ShapeError(f"reward must have shape {p.shape[:2]}, got {r.shape}")
        if p0.shape != (p.shape[0],):
            raise ShapeError(f"initial_dist must have shape ({p.shape[0]},), got {p0.shape}")
        if self.horizon < 1:
            raise ValidationError(f"horizon must be positive, got {self.horizon}")
        if not np.all(np.isfinite(r)):
            raise ValidationError("rewards must be finite")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValidationError("transition probabilities must be finite and nonnegative")
        resid = np.abs(p.sum(axis=2) - 1.0)
        if np.any(resid > SIMPLEX_TOL):
            s, a = np.unravel_index(np.argmax(resid), resid.shape)
            raise ValidationError(
                f"transition row (s={s}, a={a}) sums to {p[s, a].sum()!r}"
            )
        if not np.all(np.isfinite(p0)) or np.any(p0 < 0) or abs(p0.sum() - 1.0) > SIMPLEX_TOL:
            raise ValidationError("initial_dist must be a probability vector")

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def dims(self) -> Tuple[int, int, int]:
        """``(horizon, num_states, num_actions)``."""
        return self.horizon, self.num_states, self.num_actions


@dataclass(frozen=True, eq=False)
class TimedPolicy:
    """Time-indexed stochastic policy ``probs[t, s, a] = pi_t(a | s)``.

    Construction only checks shape and finiteness so that malformed tables can
    still be passed to :func:`validate_policy`; consumers that sample from or
    divide by a policy call :func:`require_valid_policy` first.
    """

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 3 or 0 in probs.shape:
            raise ShapeError(f"policy must have shape (T, S, A), got {probs.shape}")
        if not np.all(np.isfinite(probs)):
            raise ValidationError("policy probabilities must be finite")
        object.__setattr__(self, "probs", probs)

    @property
    def horizon(self) -> int:
        return self.probs.shape[0]

    @property
    def num_states(self) -> int:
        return self.probs.shape[1]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[2]

    @classmethod
    def uniform(cls, horizon: int, num_states: int, num_actions: int) -> "TimedPolicy":
        return cls(np.full((horizon, num_states, num_actions), 1.0 / num_actions))


class Step(NamedTuple):
    t: int
    state: int
    action: int
    reward: float
    next_state: int


@dataclass(frozen=True)
class Trajectory:
    """Ordered steps ``(t, s, a, r, s')`` for ``t = 0 .. T-1``."""

    steps: Tuple[Step, ...]

    def __post_init__(self):
        steps = tuple(Step(*st) for st in self.steps)
        object.__setattr__(self, "steps", steps)
        for i, st in enumerate(steps):
            if st.t != i:
                raise ValidationError(f"step {i} carries t={st.t}")
            if i + 1 < len(steps) and st.next_state != steps[i + 1].state:
                raise ValidationError(f"steps {i} and {i + 1} do not chain")

    def __len__(self):
        return len(self.steps)

    @property
    def states(self) -> List[int]:
        return [st.state for st in self.steps]

    @property
    def actions(self) -> List[int]:
        return [st.action for st in self.steps]

    @property
    def rewards(self) -> List[float]:
        return [st.reward for st in self.steps]

    def total_return(self) -> float:
        g = 0.0
        for st in reversed(self.steps):
            g = st.reward + g
        return g


@dataclass(frozen=True, eq=False)
class TupleDataset:
    """Unordered log of ``(t, s, a, r, s')`` records, stored column-wise."""

    t: np.ndarray
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray

    def __post_init__(self):
        cols = {}
        for name in ("t", "s", "a", "s_next"):
            cols[name] = _frozen(np.asarray(getattr(self, name)).reshape(-1), dtype=np.int64)
        cols["r"] = _frozen(np.asarray(self.r).reshape(-1), dtype=float)
        n = {len(c) for c in cols.values()}
        if len(n) != 1:
            raise ShapeError("dataset columns have different lengths")
        if not np.all(np.isfinite(cols["r"])):
            raise ValidationError("dataset rewards must be finite")
        for name, col in cols.items():
            object.__setattr__(self, name, col)

    def __len__(self):
        return len(self.t)

    @classmethod
    def empty(cls) -> "TupleDataset":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, np.zeros(0), z)

    @classmethod
    def from_records(cls, records) -> "TupleDataset":
        records = list(records)
        if not records:
            return cls.empty()
        t, s, a, r, s_next = zip(*records)
        return cls(t, s, a, r, s_next)

    def records(self):
        for i in range(len(self)):
            yield (int(self.t[i]), int(self.s[i]), int(self.a[i]), float(self.r[i]), int(self.s_next[i]))

    def check_dims(self, horizon: int, num_states: int, num_actions: int) -> None:
        """Raise ValidationError naming the first out-of-range record (1-based line)."""
        bad = (
            (self.t < 0) | (self.t >= horizon)
            | (self.s < 0) | (self.s >= num_states)
            | (self.s_next < 0) | (self.s_next >= num_states)
            | (self.a < 0) | (self.a >= num_actions)
        )
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ValidationError(
                f"record on line {i + 1} out of range for dims "
                f"(T={horizon}, S={num_states}, A={num_actions}): "
                f"t={self.t[i]} s={self.s[i]} a={self.a[i]} s_next={self.s_next[i]}"
            )

    def visit_counts(self, horizon: int, num_states: int, num_actions: int) -> np.ndarray:
        """Per-(t, s, a) record counts."""
        self.check_dims(horizon, num_states, num_actions)
        counts = np.zeros((horizon, num_states, num_actions), dtype=np.int64)
        np.add.at(counts, (self.t, self.s, self.a), 1)
        return counts


@dataclass(frozen=True)
class RngSpec:
    """Seed plus stream id for the counter-based Philox generator.

    The 128-bit Philox key is ``seed << 64 | stream_id``; distinct stream ids
    give independent streams and identical specs replay bit-for-bit.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = int(getattr(self, name))
            if not 0 <= v < 2**64:
                raise ValueError(f"{name} must fit in 64 unsigned bits, got {v}")
            object.__setattr__(self, name, v)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=(self.seed << 64) | self.stream_id))

    def child(self, stream_id: int) -> "RngSpec":
        return RngSpec(self.seed, stream_id)


# -- validation --------------------------------------------------------------


@dataclass
class PolicyIssue:
    t: int
    s: int
    kind: str  # "sum" or "negative"
    residual: float


@dataclass
class ValidationReport:
    issues: List[PolicyIssue] = field(default_factory=list)
    shape_error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return not self.issues and self.shape_error is None

    def __bool__(self):
        return self.ok

    def summary(self, limit: int = 5) -> str:
        if self.shape_error:
            return self.shape_error
        parts = [f"(t={i.t}, s={i.s}) {i.kind} residual {i.residual:.3g}" for i in self.issues[:limit]]
        more = len(self.issues) - limit
        if more > 0:
            parts.append(f"... {more} more")
        return "; ".join(parts)


def validate_policy(policy: TimedPolicy, mdp: Optional[FiniteMdp] = None) -> ValidationReport:
    """List every (t, s) row violating the simplex invariant.

    Report-only: never raises. ``residual`` is ``1 - row sum`` for sum
    violations and the most negative entry for nonnegativity violations.
    """
    report = ValidationReport()
    probs = policy.probs
    if mdp is not None and probs.shape != mdp.dims:
        report.shape_error = f"policy shape {probs.shape} does not match MDP dims {mdp.dims}"
        return report
    sums = probs.sum(axis=2)
    mins = probs.min(axis=2)
    for t, s in zip(*np.nonzero(mins < 0)):
        report.issues.append(PolicyIssue(int(t), int(s), "negative", float(mins[t, s])))
    for t, s in zip(*np.nonzero(np.abs(sums - 1.0) > SIMPLEX_TOL)):
        report.issues.append(PolicyIssue(int(t), int(s), "sum", float(1.0 - sums[t, s])))
    report.issues.sort(key=lambda i: (i.t, i.s, i.kind))
    return report


def require_valid_policy(policy: TimedPolicy, mdp: Optional[FiniteMdp] = None, name="policy") -> None:
    if mdp is not None and policy.probs.shape != mdp.dims:
        raise ShapeError(f"{name} shape {policy.probs.shape} does not match MDP dims {mdp.dims}")
    report = validate_policy(policy)
    if not report.ok:
        raise ValidationError(f"{name} is not a valid policy: {report.summary()}")


def importance_ratio(target: TimedPolicy, behavior: TimedPolicy, t: int, s: int, a: int) -> float:
    """``pi_t(a|s) / mu_t(a|s)`` with the ``0/0 := 0`` convention."""
    num = float(target.probs[t, s, a])
    den = float(behavior.probs[t, s, a])
    if den > 0:
        return num / den
    if num == 0:
        return 0.0
    raise CoverageError(
        f"target puts mass {num} on (t={t}, s={s}, a={a}) where behavior has none",
        location=(t, s, a),
    )


def ratio_table(target: TimedPolicy, behavior: TimedPolicy) -> np.ndarray:
    """Vectorized :func:`importance_ratio`; uncovered entries are NaN."""
    pi = target.probs
    mu = behavior.probs
    if pi.shape != mu.shape:
        raise ShapeError(f"target shape {pi.shape} != behavior shape {mu.shape}")
    out = np.zeros_like(pi)
    pos = mu > 0
    out[pos] = pi[pos] / mu[pos]
    out[(~pos) & (pi > 0)] = np.nan
    return out


# -- sampling ----------------------------------------------------------------


def cdf_table(probs: np.ndarray) -> np.ndarray:
    """Cumulative sums along the last axis for inverse-CDF sampling.

    Entries from the last positive-probability index onward are set to +inf
    so a uniform draw always lands on a supported outcome despite rounding.
    """
    probs = np.asarray(probs, dtype=float)
    cdf = np.cumsum(probs, axis=-1)
    n = probs.shape[-1]
    positive = probs > 0
    last = n - 1 - np.argmax(positive[..., ::-1], axis=-1)
    idx = np.arange(n)
    cdf[idx >= last[..., None]] = np.inf
    return cdf


def uniforms_for(rng: RngSpec, episodes: int, horizon: int) -> np.ndarray:
    """Uniform draws for ``episodes`` trajectories.

    Row layout: column 0 picks S_0; columns ``1 + 2t`` and ``2 + 2t`` pick
    A_t and S_{t+1}. Row ``i`` depends only on ``(rng, i)``.
    """
    return rng.generator().random((episodes, 2 * horizon + 1))


def _pick(cdf_row: np.ndarray, u: float) -> int:
    for i, c in enumerate(cdf_row):
        if u < c:
            return i
    raise AssertionError("cdf row without +inf tail")


def sample_trajectory(mdp: FiniteMdp, behavior: TimedPolicy, rng: RngSpec) -> Trajectory:
    """Sample one trajectory under ``behavior``.

    Uses the same uniform stream as episode 0 of a batch drawn with ``rng``.
    """
    require_valid_policy(behavior, mdp, "behavior")
    u = uniforms_for(rng, 1, mdp.horizon)[0]
    p0_cdf = cdf_table(mdp.initial_dist)
    pi_cdf = cdf_table(behavior.probs)
    p_cdf = cdf_table(mdp.transition)
    s = _pick(p0_cdf, u[0])
    steps = []
    for t in range(mdp.horizon):
        a = _pick(pi_cdf[t, s], u[1 + 2 * t])
        s_next = _pick(p_cdf[s, a], u[2 + 2 * t])
        steps.append(Step(t, s, a, float(mdp.reward[s, a]), s_next))
        s = s_next
    return Trajectory(tuple(steps))
