import json

import numpy as np
import pytest

from dopt_lab import dp
from dopt_lab.environments import random_mdp
from dopt_lab.errors import ShapeError, ValidationError
from dopt_lab.io import (
    load_baseline,
    load_dataset,
    load_mdp,
    load_policy,
    load_table,
    read_curve_csv,
    read_json,
    save_baseline,
    save_dataset,
    save_mdp,
    save_policy,
    save_table,
    write_curve_csv,
)
from dopt_lab.mdp import TimedPolicy, TupleDataset


def test_round_trips_are_exact(tmp_path, small_mdp):
    mdp, pi = small_mdp
    save_mdp(tmp_path / "m.json", mdp)
    back = load_mdp(tmp_path / "m.json")
    assert np.array_equal(back.transition, mdp.transition) and back.horizon == mdp.horizon
    save_policy(tmp_path / "p.json", pi)
    assert np.array_equal(load_policy(tmp_path / "p.json", mdp).probs, pi.probs)
    q = dp.compute_q_v(mdp, pi)[0]
    save_table(tmp_path / "q.json", "q", q)
    assert np.array_equal(load_table(tmp_path / "q.json"), q)
    b = dp.derive_b_star(q, pi)
    save_baseline(tmp_path / "b.json", b)
    b2 = load_baseline(tmp_path / "b.json", pi)
    assert np.array_equal(b2.b, b.b) and np.array_equal(b2.b_bar, b.b_bar)


def test_policy_validation_on_load(tmp_path, small_mdp):
    mdp, pi = small_mdp
    probs = pi.probs.copy()
    probs[1, 2] = [0.7, 0.2]
    save_policy(tmp_path / "bad.json", TimedPolicy(probs))
    with pytest.raises(ValidationError, match=r"t=1, s=2"):
        load_policy(tmp_path / "bad.json")
    save_policy(tmp_path / "small.json", TimedPolicy.uniform(2, 2, 2))
    with pytest.raises(ShapeError):
        load_policy(tmp_path / "small.json", mdp)


def test_wrong_format_and_bad_json(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(ValidationError):
        load_mdp(tmp_path / "x.json")
    (tmp_path / "y.json").write_text("{\n  nope")
    with pytest.raises(ValidationError, match="line 2"):
        read_json(tmp_path / "y.json")


def test_dataset_round_trip_and_line_numbers(tmp_path):
    ds = TupleDataset.from_records([(0, 1, 0, 0.25, 2), (1, 2, 1, 1.0, 0)])
    save_dataset(tmp_path / "d.jsonl", ds)
    back = load_dataset(tmp_path / "d.jsonl", (2, 3, 2))
    assert list(back.records()) == list(ds.records())
    text = (tmp_path / "d.jsonl").read_text()
    (tmp_path / "gap.jsonl").write_text(text.replace("\n", "\n\n", 1) + '{"t": 0}\n')
    with pytest.raises(ValidationError, match="line 4"):
        load_dataset(tmp_path / "gap.jsonl")
    (tmp_path / "range.jsonl").write_text(text + json.dumps({"t": 0, "s": 9, "a": 0, "r": 0, "s_next": 0}) + "\n")
    with pytest.raises(ValidationError, match="line 3"):
        load_dataset(tmp_path / "range.jsonl", (2, 3, 2))


def test_curve_csv(tmp_path):
    write_curve_csv(tmp_path / "c.csv", [1.0, 0.5], [0.0, 0.1])
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "episode,mean_rel_error,stderr"
    k, m, se = read_curve_csv(tmp_path / "c.csv")
    assert k.tolist() == [1, 2] and m.tolist() == [1.0, 0.5] and se.tolist() == [0.0, 0.1]
