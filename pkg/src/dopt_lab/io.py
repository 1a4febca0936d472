"""File formats: JSON for models, policies and tables; JSON lines for logs; CSV for curves.

Every JSON artifact carries a ``format`` tag and its dimensions, and is
re-validated on load. Floats round-trip exactly (``json`` writes ``repr``).
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .dp import Baseline
from .errors import ShapeError, ValidationError
from .mdp import FiniteMdp, TimedPolicy, TupleDataset, require_valid_policy

MDP_FORMAT = "dopt-lab/mdp"
POLICY_FORMAT = "dopt-lab/policy"
TABLE_FORMAT = "dopt-lab/table"
BASELINE_FORMAT = "dopt-lab/baseline"


def write_json(path, obj) -> None:
    """Canonical JSON: sorted keys, two-space indent, trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n")


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _expect(doc: dict, fmt: str, path) -> None:
    if not isinstance(doc, dict) or doc.get("format") != fmt:
        raise ValidationError(f"{path}: expected a {fmt!r} document")


def _array(doc, key, shape, path):
    try:
        arr = np.array(doc[key], dtype=float)
    except KeyError:
        raise ValidationError(f"{path}: missing field {key!r}") from None
    except (TypeError, ValueError):
        raise ValidationError(f"{path}: field {key!r} is not a numeric array") from None
    if arr.shape != tuple(shape):
        raise ShapeError(f"{path}: field {key!r} has shape {arr.shape}, dims say {tuple(shape)}")
    return arr


# -- models and policies -----------------------------------------------------


def mdp_to_dict(mdp: FiniteMdp) -> dict:
    return {
        "format": MDP_FORMAT,
        "dims": {"states": mdp.num_states, "actions": mdp.num_actions, "horizon": mdp.horizon},
        "transition": mdp.transition.tolist(),
        "reward": mdp.reward.tolist(),
        "initial_dist": mdp.initial_dist.tolist(),
    }


def save_mdp(path, mdp: FiniteMdp) -> None:
    write_json(path, mdp_to_dict(mdp))


def load_mdp(path) -> FiniteMdp:
    doc = read_json(path)
    _expect(doc, MDP_FORMAT, path)
    d = doc.get("dims", {})
    try:
        n_s, n_a, horizon = int(d["states"]), int(d["actions"]), int(d["horizon"])
    except (KeyError, TypeError, ValueError):
        raise ValidationError(f"{path}: dims must give integer states, actions, horizon") from None
    p = _array(doc, "transition", (n_s, n_a, n_s), path)
    r = _array(doc, "reward", (n_s, n_a), path)
    p0 = _array(doc, "initial_dist", (n_s,), path)
    return FiniteMdp(p, r, p0, horizon)


def save_policy(path, policy: TimedPolicy) -> None:
    horizon, n_s, n_a = policy.probs.shape
    write_json(
        path,
        {
            "format": POLICY_FORMAT,
            "dims": {"horizon": horizon, "states": n_s, "actions": n_a},
            "probs": policy.probs.tolist(),
        },
    )


def load_policy(path, mdp: Optional[FiniteMdp] = None) -> TimedPolicy:
    doc = read_json(path)
    _expect(doc, POLICY_FORMAT, path)
    d = doc.get("dims", {})
    try:
        shape = (int(d["horizon"]), int(d["states"]), int(d["actions"]))
    except (KeyError, TypeError, ValueError):
        raise ValidationError(f"{path}: dims must give integer horizon, states, actions") from None
    policy = TimedPolicy(_array(doc, "probs", shape, path))
    require_valid_policy(policy, mdp, name=str(path))
    return policy


def save_table(path, name: str, table: np.ndarray) -> None:
    table = np.asarray(table, dtype=float)
    write_json(path, {"format": TABLE_FORMAT, "name": name, "shape": list(table.shape), "data": table.tolist()})


def load_table(path) -> np.ndarray:
    doc = read_json(path)
    _expect(doc, TABLE_FORMAT, path)
    return _array(doc, "data", doc.get("shape", ()), path)


def save_baseline(path, baseline: Baseline) -> None:
    write_json(
        path,
        {
            "format": BASELINE_FORMAT,
            "shape": list(baseline.b.shape),
            "b": baseline.b.tolist(),
            "b_bar": baseline.b_bar.tolist(),
        },
    )


def load_baseline(path, target: TimedPolicy) -> Baseline:
    """Load ``b`` and recompute ``b_bar`` from ``target`` (the stored copy is informational)."""
    doc = read_json(path)
    _expect(doc, BASELINE_FORMAT, path)
    b = _array(doc, "b", target.probs.shape, path)
    if not np.all(np.isfinite(b)):
        raise ValidationError(f"{path}: baseline must be finite")
    return Baseline.from_table(b, target)


# -- datasets ----------------------------------------------------------------

_FIELDS = ("t", "s", "a", "r", "s_next")


def save_dataset(path, dataset: TupleDataset) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for t, s, a, r, s_next in dataset.records():
            fh.write(json.dumps({"t": t, "s": s, "a": a, "r": r, "s_next": s_next}, sort_keys=True) + "\n")


def load_dataset(path, dims: Optional[Sequence[int]] = None) -> TupleDataset:
    """Read a JSON-lines log; errors name the offending 1-based line.

    Blank lines are skipped. With ``dims = (T, S, A)`` indices are range-checked.
    """
    records = []
    lines = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                row = (int(rec["t"]), int(rec["s"]), int(rec["a"]), float(rec["r"]), int(rec["s_next"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise ValidationError(
                    f"{path}: line {lineno}: expected an object with fields {', '.join(_FIELDS)}"
                ) from None
            if not np.isfinite(row[3]):
                raise ValidationError(f"{path}: line {lineno}: reward must be finite")
            records.append(row)
            lines.append(lineno)
    dataset = TupleDataset.from_records(records)
    if dims is not None:
        try:
            dataset.check_dims(*dims)
        except ValidationError:
            horizon, n_s, n_a = dims
            bad = (
                (dataset.t < 0) | (dataset.t >= horizon) | (dataset.s < 0) | (dataset.s >= n_s)
                | (dataset.s_next < 0) | (dataset.s_next >= n_s) | (dataset.a < 0) | (dataset.a >= n_a)
            )
            i = int(np.argmax(bad))
            raise ValidationError(
                f"{path}: line {lines[i]}: record out of range for dims (T={horizon}, S={n_s}, A={n_a})"
            ) from None
    return dataset


# -- curves ------------------------------------------------------------------


def write_curve_csv(path, mean: Iterable[float], stderr: Iterable[float]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "mean_rel_error", "stderr"])
        for k, (m, se) in enumerate(zip(mean, stderr), start=1):
            w.writerow([k, repr(float(m)), repr(float(se))])


def read_curve_csv(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return (
        np.array([int(r["episode"]) for r in rows]),
        np.array([float(r["mean_rel_error"]) for r in rows]),
        np.array([float(r["stderr"]) for r in rows]),
    )
