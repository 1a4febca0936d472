"""Estimator comparisons: relative-error curves, variance ratios, episode savings.

A comparison fixes an MDP, a set of target policies and an offline log. For
every target it learns the DOpt pair (behavior and baseline) and the plain importance
sampling behavior from the log, then runs each estimator ``runs`` times for
``episodes`` episodes and compares it with on-policy Monte Carlo.

Per run the error curve is ``|cumulative mean after k episodes - J(pi)|``.
Curves are normalized per target by the on-policy error after one episode
(averaged over runs), so on-policy Monte Carlo starts at exactly 1.0.
"""
from __future__ import annotations

import configparser
import errno
import hashlib
import json
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import dp, kernels
from .enumeration import DEFAULT_CAP, exact_moments
from .environments import (
    GridworldSpec,
    build_gridworld,
    generate_offline_log,
    random_policy,
    random_target_policies,
)
from .errors import EnumerationCapError, InfeasibleError, ValidationError
from .estimators import BASELINE_CORRECTED, PDIS, EstimatorSpec, run_evaluation
from .io import load_dataset, load_mdp, load_policy, write_curve_csv, write_json
from .learner import build_empirical_model, learn_from_model, learn_odi_from_model
from .mdp import FiniteMdp, RngSpec, TimedPolicy

ON_POLICY = "on_policy_mc"
ESTIMATORS = (ON_POLICY, "dopt", "odi", "dr")
GROUND_TRUTH = ("exact", "enumeration", "monte_carlo")

# stream ids outside the per-run range
LOG_POLICY_STREAM = 5 << 32
EXECUTION_FIELDS = ("out_dir", "workers")
_TRUTH_STREAM = 6 << 32


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"expected a boolean, got {text!r}")


def _split(text: str) -> List[str]:
    return [x.strip() for x in text.replace("\n", ",").split(",") if x.strip()]


@dataclass
class ExperimentConfig:
    """Everything a comparison needs; see :meth:`from_file` for the file layout."""

    seed: int = 0
    episodes: int = 1000
    runs: int = 30
    estimators: Tuple[str, ...] = ESTIMATORS
    out_dir: str = "results"
    workers: int = 1
    ground_truth: str = "exact"
    truth_episodes: int = 10**6
    reference_budget: Optional[int] = None
    # environment: a gridworld, or an MDP file when mdp_path is set
    mdp_path: Optional[str] = None
    gridworld_n: int = 10
    slip: float = 0.1
    reward_seed: Optional[int] = None
    # targets: random, or the listed policy files
    target_paths: Tuple[str, ...] = ()
    target_count: int = 30
    target_seed: Optional[int] = None
    # offline log: generated by random full-support policies, or read from dataset_path
    dataset_path: Optional[str] = None
    log_episodes: int = 1000
    log_policies: int = 10
    log_seed: Optional[int] = None
    # learner safeguards
    pool_time: bool = False
    defensive: float = 0.05
    impute_unvisited: bool = True
    nu_shrinkage: float = 1.0

    def __post_init__(self):
        self.estimators = tuple(self.estimators)
        self.target_paths = tuple(self.target_paths)
        self.validate()

    def validate(self) -> None:
        if self.episodes < 1:
            raise ValidationError(f"episodes must be >= 1, got {self.episodes}")
        if self.runs < 1:
            raise ValidationError(f"runs must be >= 1, got {self.runs}")
        if self.workers < 1:
            raise ValidationError(f"workers must be >= 1, got {self.workers}")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown:
            raise ValidationError(f"unknown estimators {unknown}; choose from {ESTIMATORS}")
        if ON_POLICY not in self.estimators:
            raise ValidationError(f"{ON_POLICY!r} is required as the reference estimator")
        if len(set(self.estimators)) != len(self.estimators):
            raise ValidationError("estimators are listed more than once")
        if self.ground_truth not in GROUND_TRUTH:
            raise ValidationError(f"ground_truth must be one of {GROUND_TRUTH}")
        if self.reference_budget is not None and not 1 <= self.reference_budget <= self.episodes:
            raise ValidationError("reference_budget must lie in [1, episodes]")
        if not 0.0 <= self.defensive <= 1.0:
            raise ValidationError("defensive must lie in [0, 1]")
        if self.nu_shrinkage < 0:
            raise ValidationError("nu_shrinkage must be >= 0")
        if self.target_count < 1:
            raise ValidationError("target count must be >= 1")
        if self.log_episodes < 0 or self.log_policies < 1:
            raise ValidationError("log episodes must be >= 0 and log policies >= 1")
        for p in (self.mdp_path, self.dataset_path, *self.target_paths):
            if p is not None and not Path(p).is_file():
                raise FileNotFoundError(errno.ENOENT, "referenced file not found", str(p))

    # derived seeds: explicit values win, otherwise offsets of the master seed
    @property
    def resolved_reward_seed(self) -> int:
        return self.seed if self.reward_seed is None else self.reward_seed

    @property
    def resolved_target_seed(self) -> int:
        return self.seed + 1 if self.target_seed is None else self.target_seed

    @property
    def resolved_log_seed(self) -> int:
        return self.seed + 2 if self.log_seed is None else self.log_seed

    def to_dict(self) -> dict:
        """Experiment settings. Where outputs go and how many workers run them
        do not change any result, so they are left out (and out of the digest)."""
        d = asdict(self)
        for key in EXECUTION_FIELDS:
            del d[key]
        d["estimators"] = list(self.estimators)
        d["target_paths"] = list(self.target_paths)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        """Read an INI file. Relative paths resolve against the file's directory.

        Sections and keys (all optional)::

            [experiment]  seed episodes runs estimators out workers
                          ground_truth truth_episodes reference_budget
            [environment] kind = gridworld|file, n, slip, reward_seed, path
            [targets]     kind = random|files, count, seed, paths
            [log]         kind = generate|file, episodes, policies, seed, path
            [learner]     pool_time defensive impute_unvisited nu_shrinkage
        """
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(errno.ENOENT, "config file not found", str(path))
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ValidationError(f"{path}: {exc}") from None
        base = path.parent

        def rel(p):
            p = Path(p)
            return str(p if p.is_absolute() else base / p)

        kw: dict = {}
        try:
            if cp.has_section("experiment"):
                e = cp["experiment"]
                for key in ("seed", "episodes", "runs", "workers", "truth_episodes", "reference_budget"):
                    if key in e:
                        kw[key] = int(e[key])
                if "estimators" in e:
                    kw["estimators"] = tuple(_split(e["estimators"]))
                if "out" in e:
                    kw["out_dir"] = rel(e["out"])
                if "ground_truth" in e:
                    kw["ground_truth"] = e["ground_truth"].strip()
            if cp.has_section("environment"):
                e = cp["environment"]
                kind = e.get("kind", "gridworld").strip()
                if kind == "file":
                    kw["mdp_path"] = rel(e["path"])
                elif kind == "gridworld":
                    if "n" in e:
                        kw["gridworld_n"] = int(e["n"])
                    if "slip" in e:
                        kw["slip"] = float(e["slip"])
                    if "reward_seed" in e:
                        kw["reward_seed"] = int(e["reward_seed"])
                else:
                    raise ValidationError(f"{path}: unknown environment kind {kind!r}")
            if cp.has_section("targets"):
                e = cp["targets"]
                kind = e.get("kind", "random").strip()
                if kind == "files":
                    kw["target_paths"] = tuple(rel(p) for p in _split(e["paths"]))
                elif kind == "random":
                    if "count" in e:
                        kw["target_count"] = int(e["count"])
                    if "seed" in e:
                        kw["target_seed"] = int(e["seed"])
                else:
                    raise ValidationError(f"{path}: unknown targets kind {kind!r}")
            if cp.has_section("log"):
                e = cp["log"]
                kind = e.get("kind", "generate").strip()
                if kind == "file":
                    kw["dataset_path"] = rel(e["path"])
                elif kind == "generate":
                    for key, name in (("episodes", "log_episodes"), ("policies", "log_policies"), ("seed", "log_seed")):
                        if key in e:
                            kw[name] = int(e[key])
                else:
                    raise ValidationError(f"{path}: unknown log kind {kind!r}")
            if cp.has_section("learner"):
                e = cp["learner"]
                for key in ("pool_time", "impute_unvisited"):
                    if key in e:
                        kw[key] = _parse_bool(e[key])
                for key in ("defensive", "nu_shrinkage"):
                    if key in e:
                        kw[key] = float(e[key])
        except KeyError as exc:
            raise ValidationError(f"{path}: missing key {exc}") from None
        except ValueError as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"{path}: {exc}") from None
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


@dataclass
class ComparisonResult:
    """Aggregated outputs of :func:`run_comparison`.

    ``curves[name] = (mean, stderr)`` over all (target, run) pairs;
    ``variance_ratio[name] = (mean over targets, standard error over targets)``.
    """

    estimators: Tuple[str, ...]
    episodes: int
    curves: Dict[str, Tuple[np.ndarray, np.ndarray]]
    variance_ratio: Dict[str, Tuple[float, float]]
    per_target_ratio: Dict[str, np.ndarray]
    exact_variance_ratio: Dict[str, float]
    truth: np.ndarray
    normalizers: np.ndarray
    learner_diagnostics: List[dict] = field(default_factory=list)


# -- setup -------------------------------------------------------------------


def build_environment(config: ExperimentConfig) -> FiniteMdp:
    if config.mdp_path is not None:
        return load_mdp(config.mdp_path)
    return build_gridworld(GridworldSpec(config.gridworld_n, config.slip, config.resolved_reward_seed))


def build_targets(config: ExperimentConfig, mdp: FiniteMdp) -> List[TimedPolicy]:
    if config.target_paths:
        return [load_policy(p, mdp) for p in config.target_paths]
    return random_target_policies(mdp, config.target_count, config.resolved_target_seed)


def build_log(config: ExperimentConfig, mdp: FiniteMdp):
    if config.dataset_path is not None:
        return load_dataset(config.dataset_path, (mdp.horizon, mdp.num_states, mdp.num_actions))
    seed = config.resolved_log_seed
    logging = [
        random_policy(mdp.horizon, mdp.num_states, mdp.num_actions, RngSpec(seed, LOG_POLICY_STREAM + i))
        for i in range(config.log_policies)
    ]
    return generate_offline_log(mdp, logging, config.log_episodes, seed)


def ground_truth(config: ExperimentConfig, mdp: FiniteMdp, target: TimedPolicy, index: int) -> float:
    """``J(pi)`` by the configured method."""
    if config.ground_truth == "exact":
        return dp.policy_performance(mdp, target)
    if config.ground_truth == "enumeration":
        try:
            mean, _ = exact_moments(mdp, target, target, cap=DEFAULT_CAP)
        except EnumerationCapError as exc:
            raise InfeasibleError(
                f"{exc}; use ground_truth = exact (dynamic programming) or "
                f"ground_truth = monte_carlo with truth_episodes set"
            ) from None
        return mean
    run = run_evaluation(
        mdp, target, EstimatorSpec.on_policy(target), config.truth_episodes, RngSpec(config.seed, _TRUTH_STREAM + index)
    )
    return run.running_mean


def estimator_specs(config: ExperimentConfig, mdp: FiniteMdp, target: TimedPolicy, model):
    """Specs for the configured estimators plus the learner diagnostics."""
    specs = {ON_POLICY: EstimatorSpec.on_policy(target)}
    opts = dict(
        defensive=config.defensive, impute_unvisited=config.impute_unvisited, nu_shrinkage=config.nu_shrinkage
    )
    diag = {}
    if "dopt" in config.estimators or "dr" in config.estimators:
        learned = learn_from_model(model, target, **opts)
        diag = learned.diagnostics
        if "dopt" in config.estimators:
            specs["dopt"] = EstimatorSpec(BASELINE_CORRECTED, learned.mu_hat_star, learned.b_hat_star)
        if "dr" in config.estimators:
            specs["dr"] = EstimatorSpec(BASELINE_CORRECTED, target, learned.b_hat_star)
    if "odi" in config.estimators:
        specs["odi"] = EstimatorSpec(PDIS, learn_odi_from_model(model, target, **opts).mu_hat_star)
    return specs, diag


def run_stream(config: ExperimentConfig, target_index: int, run_index: int, estimator: str) -> RngSpec:
    """Independent stream per (target, run, estimator); stable under estimator subsets."""
    e = ESTIMATORS.index(estimator)
    return RngSpec(config.seed, (target_index * config.runs + run_index) * len(ESTIMATORS) + e)


def _exact_variance(mdp, target, spec):
    baseline = spec.baseline if spec.baseline is not None else dp.Baseline.zeros(target)
    return dp.exact_estimator_variance(mdp, target, spec.behavior, baseline).total


def _target_job(args):
    """All runs of every estimator for one target. Returns plain arrays."""
    config, mdp, target, index, model = args
    truth = ground_truth(config, mdp, target, index)
    specs, diag = estimator_specs(config, mdp, target, model)
    samples = {}
    exact_var = {}
    for name in config.estimators:
        spec = specs[name]
        samples[name] = np.stack(
            [
                run_evaluation(mdp, target, spec, config.episodes, run_stream(config, index, j, name)).samples
                for j in range(config.runs)
            ]
        )
        exact_var[name] = _exact_variance(mdp, target, spec)
    return index, truth, samples, exact_var, diag


# -- aggregation -------------------------------------------------------------


def _safe_ratio(num, den):
    """Elementwise ``num / den`` with ``0 / 0 := 0``."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    return np.divide(num, den, out=np.zeros(np.broadcast(num, den).shape), where=den > 0)


def aggregate(config: ExperimentConfig, truth, samples) -> ComparisonResult:
    """Curves and ratios from raw samples ``samples[name]`` of shape (targets, runs, episodes)."""
    truth = np.asarray(truth, dtype=float)
    k = np.arange(1, config.episodes + 1)
    errors = {
        name: np.abs(np.cumsum(x, axis=2) / k - truth[:, None, None]) for name, x in samples.items()
    }
    per_target = {name: e.mean(axis=1) for name, e in errors.items()}  # (targets, episodes)
    normalizers = per_target[ON_POLICY][:, 0].copy()
    curves = {}
    for name, e in errors.items():
        mean = _safe_ratio(per_target[name], normalizers[:, None]).mean(axis=0)
        per_run = _safe_ratio(e, normalizers[:, None, None]).reshape(-1, config.episodes)
        n = per_run.shape[0]
        se = per_run.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(config.episodes)
        curves[name] = (mean, se)

    def pooled_var(x):
        flat = x.reshape(x.shape[0], -1)
        return flat.var(axis=1, ddof=1) if flat.shape[1] > 1 else np.zeros(flat.shape[0])

    ref_var = pooled_var(samples[ON_POLICY])
    per_target_ratio = {}
    ratios = {}
    for name, x in samples.items():
        v = pooled_var(x)
        # a zero reference variance carries no information: ratio 1
        r = np.where(ref_var > 0, _safe_ratio(v, ref_var), 1.0)
        per_target_ratio[name] = r
        m = len(r)
        se = float(r.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0
        ratios[name] = (float(r.mean()), se)
    return ComparisonResult(
        tuple(samples), config.episodes, curves, ratios, per_target_ratio, {}, truth, normalizers
    )


def run_comparison(config: ExperimentConfig) -> ComparisonResult:
    """Run the full comparison described by ``config``."""
    mdp = build_environment(config)
    targets = build_targets(config, mdp)
    dataset = build_log(config, mdp)
    model = build_empirical_model(dataset, (mdp.horizon, mdp.num_states, mdp.num_actions), config.pool_time)
    jobs = [(config, mdp, target, i, model) for i, target in enumerate(targets)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outputs = list(pool.map(_target_job, jobs))
    else:
        outputs = [_target_job(job) for job in jobs]
    outputs.sort(key=lambda o: o[0])  # merge order is independent of completion order

    truth = np.array([o[1] for o in outputs])
    samples = {name: np.stack([o[2][name] for o in outputs]) for name in config.estimators}
    result = aggregate(config, truth, samples)
    exact = {name: np.array([o[3][name] for o in outputs]) for name in config.estimators}
    ref = exact[ON_POLICY]
    result.exact_variance_ratio = {
        name: float(np.where(ref > 0, _safe_ratio(v, ref), 1.0).mean()) for name, v in exact.items()
    }
    result.learner_diagnostics = [o[4] for o in outputs]
    return result


# -- episodes needed ---------------------------------------------------------


def sqrt_law_constant(curve: np.ndarray) -> float:
    """Least-squares ``c`` in ``curve[k-1] ~ c / sqrt(k)``."""
    k = np.arange(1, len(curve) + 1, dtype=float)
    return float((curve / np.sqrt(k)).sum() / (1.0 / k).sum())


def episodes_to_accuracy(
    result: ComparisonResult,
    reference_estimator: str = ON_POLICY,
    reference_budget: Optional[int] = None,
    method: str = "sqrt_law",
) -> Dict[str, Optional[int]]:
    """Episodes each estimator needs to match the reference's error at ``reference_budget``.

    ``method="sqrt_law"`` (default) fits ``c / sqrt(k)`` to each mean curve
    and solves ``c_e / sqrt(n) <= c_ref / sqrt(budget)``, i.e.
    ``n = ceil(budget (c_e / c_ref)^2)``; an estimator identical to the
    reference needs exactly ``budget``. ``method="crossing"`` takes the first
    episode at which the raw mean curve drops to the reference level. Counts
    beyond the simulated episodes are reported as ``None`` (not reached).
    """
    budget = result.episodes if reference_budget is None else int(reference_budget)
    if not 1 <= budget <= result.episodes:
        raise ValueError(f"reference_budget must lie in [1, {result.episodes}]")
    ref_curve = result.curves[reference_estimator][0]
    out: Dict[str, Optional[int]] = {}
    if method == "sqrt_law":
        c_ref = sqrt_law_constant(ref_curve)
        for name in result.estimators:
            c = sqrt_law_constant(result.curves[name][0])
            if c_ref == 0.0:
                n = 1 if c == 0.0 else None
            else:
                n = max(1, math.ceil(round(budget * (c / c_ref) ** 2, 9)))
            out[name] = n if n is not None and n <= result.episodes else None
    elif method == "crossing":
        level = ref_curve[budget - 1]
        for name in result.estimators:
            hit = np.nonzero(result.curves[name][0] <= level)[0]
            out[name] = int(hit[0]) + 1 if len(hit) else None
    else:
        raise ValueError(f"unknown method {method!r}")
    return out


# -- outputs -----------------------------------------------------------------


def summary_dict(config: ExperimentConfig, result: ComparisonResult) -> dict:
    budget = config.reference_budget or config.episodes
    return {
        "estimators": list(result.estimators),
        "episodes": result.episodes,
        "runs": config.runs,
        "targets": int(len(result.truth)),
        "variance_ratio": {k: {"mean": v[0], "stderr": v[1]} for k, v in result.variance_ratio.items()},
        "exact_variance_ratio": result.exact_variance_ratio,
        "final_mean_rel_error": {k: float(v[0][-1]) for k, v in result.curves.items()},
        "episodes_to_accuracy": {
            "reference": ON_POLICY,
            "budget": budget,
            "sqrt_law": episodes_to_accuracy(result, ON_POLICY, budget, "sqrt_law"),
            "crossing": episodes_to_accuracy(result, ON_POLICY, budget, "crossing"),
        },
    }


def manifest_dict(config: ExperimentConfig, result: ComparisonResult) -> dict:
    from . import __version__

    diag = result.learner_diagnostics
    return {
        "config": config.to_dict(),
        "config_sha256": config.digest(),
        "seeds": {
            "master": config.seed,
            "reward": config.resolved_reward_seed,
            "targets": config.resolved_target_seed,
            "log": config.resolved_log_seed,
        },
        "ground_truth": {"method": config.ground_truth, "values": result.truth.tolist()},
        "normalizers": result.normalizers.tolist(),
        "learner": {
            "unvisited_fraction": diag[0].get("unvisited_fraction") if diag else None,
            "fallback_rows": [d.get("fallback_rows") for d in diag],
        },
        "versions": {
            "dopt_lab": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "kernel_backend": kernels.BACKEND,
        },
    }


def write_outputs(config: ExperimentConfig, result: ComparisonResult, out_dir=None) -> Path:
    """One CSV per estimator, ``summary.json`` and ``manifest.json`` under ``out_dir``."""
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, (mean, se) in result.curves.items():
        write_curve_csv(out / f"curve_{name}.csv", mean, se)
    write_json(out / "summary.json", summary_dict(config, result))
    write_json(out / "manifest.json", manifest_dict(config, result))
    return out
