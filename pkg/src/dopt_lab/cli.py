"""Command-line interface: ``dopt-lab <command> [options]``.

Exit status: 0 on success, 1 on invalid input (bad files, arguments or
policies) or a failed verification, 2 when the request is infeasible
(e.g. trajectory enumeration beyond its cap).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__, dp
from .environments import (
    GridworldSpec,
    build_gridworld,
    generate_offline_log,
    random_policy,
    random_target_policies,
)
from .errors import CoverageError, DoptLabError, EnumerationCapError, InfeasibleError
from .estimators import BASELINE_CORRECTED, KINDS, ON_POLICY_MC, EstimatorSpec, run_evaluation
from .harness import LOG_POLICY_STREAM, ExperimentConfig, run_comparison, summary_dict, write_outputs
from .io import (
    load_baseline,
    load_dataset,
    load_mdp,
    load_policy,
    read_json,
    save_baseline,
    save_dataset,
    save_mdp,
    save_policy,
    save_table,
    write_json,
)
from .learner import learn_dopt
from .mdp import RngSpec
from .theorems import run_theorem_suite

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=2))


# -- commands ----------------------------------------------------------------


def cmd_env_build(args) -> int:
    mdp = build_gridworld(GridworldSpec(args.n, args.slip, args.seed))
    save_mdp(args.out, mdp)
    _emit({"wrote": str(args.out), "states": mdp.num_states, "actions": mdp.num_actions, "horizon": mdp.horizon})
    return EXIT_OK


def cmd_env_policies(args) -> int:
    mdp = load_mdp(args.mdp)
    out = Path(args.out)
    paths = []
    for i, pol in enumerate(random_target_policies(mdp, args.count, args.seed)):
        path = out / f"policy_{i:03d}.json"
        save_policy(path, pol)
        paths.append(str(path))
    _emit({"wrote": paths})
    return EXIT_OK


def cmd_env_log(args) -> int:
    mdp = load_mdp(args.mdp)
    logging = [
        random_policy(mdp.horizon, mdp.num_states, mdp.num_actions, RngSpec(args.seed, LOG_POLICY_STREAM + i))
        for i in range(args.policies)
    ]
    dataset = generate_offline_log(mdp, logging, args.episodes, args.seed)
    save_dataset(args.out, dataset)
    _emit({"wrote": str(args.out), "tuples": len(dataset)})
    return EXIT_OK


def cmd_solve(args) -> int:
    mdp = load_mdp(args.mdp)
    target = load_policy(args.target, mdp)
    tables, mu_star, b_star, perf = dp.solve(mdp, target)
    var = dp.exact_estimator_variance(mdp, target, mu_star, b_star)
    on_policy = dp.exact_estimator_variance(mdp, target, target, dp.Baseline.zeros(target))
    out = Path(args.out)
    save_table(out / "q.json", "q", tables.q)
    save_table(out / "v.json", "v", tables.v)
    save_table(out / "nu.json", "nu", tables.nu)
    save_table(out / "u.json", "u", tables.u)
    save_policy(out / "mu_star.json", mu_star)
    save_baseline(out / "b_star.json", b_star)
    summary = {
        "J": perf,
        "variance_optimal": var.total,
        "variance_on_policy": on_policy.total,
    }
    write_json(out / "summary.json", summary)
    _emit(summary)
    return EXIT_OK


def cmd_learn(args) -> int:
    target = load_policy(args.target)
    dims = target.probs.shape
    dataset = load_dataset(args.dataset, dims)
    learned = learn_dopt(
        dataset,
        target,
        dims,
        pool_time=args.pool_time,
        defensive=args.defensive,
        impute_unvisited=args.impute_unvisited,
        nu_shrinkage=args.nu_shrinkage,
    )
    out = Path(args.out)
    save_policy(out / "mu_hat_star.json", learned.mu_hat_star)
    save_baseline(out / "b_hat_star.json", learned.b_hat_star)
    for name in ("q_hat", "v_hat", "nu_hat", "u_hat"):
        save_table(out / f"{name}.json", name, getattr(learned, name))
    write_json(out / "diagnostics.json", learned.diagnostics)
    _emit(learned.diagnostics)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    mdp = load_mdp(args.mdp)
    target = load_policy(args.target, mdp)
    behavior = load_policy(args.behavior, mdp) if args.behavior else target
    baseline = None
    if args.estimator == BASELINE_CORRECTED:
        if not args.baseline:
            raise DoptLabError("--baseline is required for the baseline_corrected estimator")
        baseline = load_baseline(args.baseline, target)
    elif args.baseline:
        raise DoptLabError("--baseline only applies to the baseline_corrected estimator")
    spec = EstimatorSpec(args.estimator, behavior, baseline)
    run = run_evaluation(mdp, target, spec, args.episodes, RngSpec(args.seed))
    exact = dp.exact_estimator_variance(mdp, target, behavior, baseline or dp.Baseline.zeros(target))
    report = {
        "estimator": args.estimator,
        "episodes": run.episodes,
        "mean": run.running_mean,
        "sample_variance": run.running_variance,
        "J": dp.policy_performance(mdp, target),
        "exact_variance": exact.total,
    }
    if args.out:
        write_json(args.out, report)
    if args.csv:
        run.write_csv(args.csv, report["J"])
    _emit(report)
    return EXIT_OK


def cmd_compare(args) -> int:
    config = ExperimentConfig.from_file(args.config, seed=args.seed, out_dir=args.out, workers=args.workers)
    result = run_comparison(config)
    out = write_outputs(config, result)
    summary = summary_dict(config, result)
    _emit({"out": str(out), "variance_ratio": summary["variance_ratio"]})
    return EXIT_OK


def cmd_verify(args) -> int:
    report = run_theorem_suite(args.instances, args.seed)
    if args.out:
        write_json(args.out, report)
    brief = {k: v for k, v in report.items() if k != "per_instance"}
    _emit(brief)
    return EXIT_OK if report["ok"] else EXIT_INVALID


def cmd_dump(args) -> int:
    """Describe an artifact: any JSON document or a JSON-lines log."""
    path = Path(args.file)
    if path.suffix == ".jsonl":
        ds = load_dataset(path)
        info = {"kind": "dataset", "tuples": len(ds)}
        if len(ds):
            info.update(
                {
                    "horizon_seen": int(ds.t.max()) + 1,
                    "states_seen": int(np.unique(np.concatenate([ds.s, ds.s_next])).size),
                    "actions_seen": int(np.unique(ds.a).size),
                    "reward_mean": float(ds.r.mean()),
                }
            )
        _emit(info)
        return EXIT_OK
    doc = read_json(path)
    info = {"kind": doc.get("format", "json") if isinstance(doc, dict) else "json"}
    if isinstance(doc, dict):
        for key, value in sorted(doc.items()):
            if key == "format":
                continue
            if isinstance(value, list) and (np.ndim(value) > 1 or len(value) > 16):
                info[key] = {"shape": list(np.shape(value))}
            else:
                info[key] = value
    _emit(info)
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dopt-lab", description="Tabular policy-evaluation lab.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    env = sub.add_parser("env", help="build environments, target policies and offline logs")
    env_sub = env.add_subparsers(dest="env_command", required=True, parser_class=_Parser)
    b = env_sub.add_parser("build", help="write a gridworld MDP file")
    b.add_argument("--n", type=int, default=10, help="grid side and horizon")
    b.add_argument("--slip", type=float, default=0.1)
    b.add_argument("--seed", type=int, default=0, help="reward seed")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_env_build)
    pol = env_sub.add_parser("policies", help="write random target policies")
    pol.add_argument("--mdp", required=True)
    pol.add_argument("--count", type=int, default=30)
    pol.add_argument("--seed", type=int, default=0)
    pol.add_argument("--out", required=True, help="output directory")
    pol.set_defaults(func=cmd_env_policies)
    lg = env_sub.add_parser("log", help="write an offline log from random logging policies")
    lg.add_argument("--mdp", required=True)
    lg.add_argument("--episodes", type=int, default=1000)
    lg.add_argument("--policies", type=int, default=10)
    lg.add_argument("--seed", type=int, default=0)
    lg.add_argument("--out", required=True)
    lg.set_defaults(func=cmd_env_log)

    s = sub.add_parser("solve", help="exact tables, optimal behavior and baseline for a target")
    s.add_argument("--mdp", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_solve)

    le = sub.add_parser("learn", help="learn the optimal behavior and baseline from a log")
    le.add_argument("--dataset", required=True)
    le.add_argument("--target", required=True)
    le.add_argument("--out", required=True, help="output directory")
    le.add_argument("--pool-time", action="store_true", help="share counts across steps")
    le.add_argument("--defensive", type=float, default=0.0, help="fraction of the target mixed in")
    le.add_argument("--impute-unvisited", action="store_true", help="nonzero weight for unlogged cells")
    le.add_argument("--nu-shrinkage", type=float, default=0.0)
    le.set_defaults(func=cmd_learn)

    ev = sub.add_parser("evaluate", help="run one estimator by simulation")
    ev.add_argument("--mdp", required=True)
    ev.add_argument("--target", required=True)
    ev.add_argument("--estimator", choices=KINDS, default=ON_POLICY_MC)
    ev.add_argument("--behavior", help="behavior policy file (default: the target)")
    ev.add_argument("--baseline", help="baseline file for baseline_corrected")
    ev.add_argument("--episodes", type=int, default=1000)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out", help="write the JSON report here")
    ev.add_argument("--csv", help="write per-episode estimates and running errors here")
    ev.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="run an estimator comparison from a config file")
    c.add_argument("--config", required=True)
    c.add_argument("--seed", type=int, help="override the master seed")
    c.add_argument("--out", help="override the output directory")
    c.add_argument("--workers", type=int, help="worker processes")
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("verify", help="check the variance identities on random instances")
    v.add_argument("--instances", type=int, default=50)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", help="write the full report here")
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("dump", help="describe an artifact file")
    d.add_argument("file")
    d.set_defaults(func=cmd_dump)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InfeasibleError, EnumerationCapError) as exc:
        print(f"dopt-lab: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except FileNotFoundError as exc:
        print(f"dopt-lab: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DoptLabError, CoverageError, ValueError, OSError) as exc:
        print(f"dopt-lab: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
