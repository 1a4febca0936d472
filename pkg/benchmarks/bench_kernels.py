"""Compare the compiled and pure-Python batch kernels.

Times trajectory simulation and return computation on a gridworld batch for
each available backend, checks that both produce identical arrays, and prints
a table (or JSON with ``--json``)::

    python3 benchmarks/bench_kernels.py --n 10 --episodes 30000 --repeat 5
"""
from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from dopt_lab import dp, kernels
from dopt_lab.environments import GridworldSpec, build_gridworld, random_target_policies
from dopt_lab.mdp import RngSpec, cdf_table, ratio_table, uniforms_for


def _best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def available_backends():
    names = ["python"]
    try:
        from dopt_lab import _ckernels  # noqa: F401
    except ImportError:
        pass
    else:
        names.insert(0, "cython")
    return names


def run(n=10, episodes=30000, repeat=5, seed=0):
    mdp = build_gridworld(GridworldSpec(n, reward_seed=seed))
    target = random_target_policies(mdp, 1, seed)[0]
    _, mu, b_star, _ = dp.solve(mdp, target)
    args = (cdf_table(mdp.initial_dist), cdf_table(mu.probs), cdf_table(mdp.transition),
            uniforms_for(RngSpec(seed), episodes, mdp.horizon))
    ratio = ratio_table(target, mu)
    rows = {}
    outputs = {}
    for name in available_backends():
        t_sim, (states, actions) = _best_of(lambda: kernels.simulate(*args, backend=name), repeat)
        t_ret, g = _best_of(
            lambda: kernels.returns(states, actions, mdp.reward, ratio, b_star.b, b_star.b_bar, backend=name),
            repeat,
        )
        rows[name] = {"simulate_s": t_sim, "returns_s": t_ret, "episodes_per_s": episodes / (t_sim + t_ret)}
        outputs[name] = (states, actions, g)
    ref = outputs["python"]
    identical = all(all(np.array_equal(a, b) for a, b in zip(out, ref)) for out in outputs.values())
    return {"n": n, "episodes": episodes, "repeat": repeat, "backends": rows, "identical": identical}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=10, help="gridworld side (and horizon)")
    p.add_argument("--episodes", type=int, default=30000)
    p.add_argument("--repeat", type=int, default=5, help="report the best of this many runs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    args = p.parse_args(argv)
    report = run(args.n, args.episodes, args.repeat, args.seed)
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        print(f"gridworld n={args.n}, {args.episodes} episodes, best of {args.repeat}")
        print(f"{'backend':<8} {'simulate [ms]':>14} {'returns [ms]':>13} {'episodes/s':>12}")
        for name, r in report["backends"].items():
            print(f"{name:<8} {1e3 * r['simulate_s']:>14.2f} {1e3 * r['returns_s']:>13.2f} {r['episodes_per_s']:>12.0f}")
        if "cython" in report["backends"]:
            c, py = report["backends"]["cython"], report["backends"]["python"]
            print(f"speedup  {py['simulate_s'] / c['simulate_s']:>14.1f}x {py['returns_s'] / c['returns_s']:>12.1f}x")
        print(f"identical outputs: {report['identical']}")
    return 0 if report["identical"] else 1


if __name__ == "__main__":
    sys.exit(main())
