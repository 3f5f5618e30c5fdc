import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualalloc.data import (
    DataError,
    Dataset,
    LoggedTransition,
    load_dataset,
    split_dataset,
    validate_dataset,
    write_dataset,
)
from dualalloc.synthetic import toy_fixture


def _record(ep, t, s, a, r=1.0, c=1.0, p=0.5, ns=None):
    return {
        "episode_id": ep, "t": t, "state": s, "action": a, "propensity": p,
        "reward": r, "cost": c, "next_state": ns, "done": ns is None,
    }


def _write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


def _three_step(ep):
    return [_record(ep, 0, 0, 1, ns=1), _record(ep, 1, 1, 0, ns=2), _record(ep, 2, 2, 1)]


def test_two_three_step_episodes(tmp_path):
    path = _write_jsonl(tmp_path / "d.jsonl", _three_step("a") + _three_step("b"))
    d = load_dataset(path)
    assert len(d) == 6
    assert d.n_episodes == 2
    assert d.horizon == 3


def test_zero_propensity_names_line(tmp_path):
    recs = _three_step("a")
    recs[1]["propensity"] = 0.0
    path = _write_jsonl(tmp_path / "d.jsonl", recs)
    with pytest.raises(DataError, match=r"propensity must be in \(0,1\]") as err:
        load_dataset(path)
    assert "d.jsonl:2" in str(err.value)


def test_missing_file_names_path(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.jsonl"):
        load_dataset(tmp_path / "nope.jsonl")


def test_toy_fixture_round_trip(tmp_path):
    _, d = toy_fixture()
    for name in ("toy.jsonl", "toy.csv"):
        back = load_dataset(write_dataset(d, tmp_path / name))
        assert (back.n_states, back.n_actions, back.horizon) == (3, 2, 2)
        assert back.n_episodes == 12
        assert back.equals(d)


def test_schema_mapping(tmp_path):
    recs = [{("p" if k == "propensity" else k): v for k, v in r.items()} for r in _three_step("a")]
    d = load_dataset(_write_jsonl(tmp_path / "d.jsonl", recs), schema={"propensity": "p"})
    assert np.all(d.propensity == 0.5)


def test_done_requires_missing_next_state():
    with pytest.raises(DataError, match="done"):
        LoggedTransition("e", 0, 0, 0, 0.5, 1.0, 1.0, next_state=1, done=True)


def test_negative_cost_rejected():
    with pytest.raises(DataError, match="cost"):
        LoggedTransition("e", 0, 0, 0, 0.5, 1.0, -0.1, next_state=None, done=True)


def test_gap_in_steps_rejected(tmp_path):
    recs = _three_step("a")
    del recs[1]
    with pytest.raises(DataError, match="non-consecutive"):
        load_dataset(_write_jsonl(tmp_path / "d.jsonl", recs))


def test_episode_longer_than_horizon(tmp_path):
    with pytest.raises(DataError, match="horizon"):
        load_dataset(_write_jsonl(tmp_path / "d.jsonl", _three_step("a")), horizon=2)


def test_rows_are_grouped_and_sorted():
    recs = _three_step("b")[::-1] + _three_step("a")
    d = Dataset.from_transitions([LoggedTransition(**r) for r in recs])
    assert d.episode_ids == ["b", "a"]
    assert d.t.tolist() == [0, 1, 2, 0, 1, 2]


def test_validate_uniform_toy_visits_every_pair():
    _, d = toy_fixture(n_episodes=200)
    rep = validate_dataset(d)
    assert rep.unvisited_pairs == []
    assert rep.visit_counts.sum() == len(d)


def test_validate_empty():
    d = Dataset.from_transitions([], n_states=3, n_actions=2, horizon=2)
    rep = validate_dataset(d)
    assert rep.visit_counts.shape == (3, 2)
    assert rep.visit_counts.sum() == 0


def test_validate_flags_missing_action():
    recs = [LoggedTransition(f"e{i}", 0, i % 3, 0, 0.5, 1.0, 1.0, None, True) for i in range(9)]
    d = Dataset.from_transitions(recs, n_states=3, n_actions=2)
    rep = validate_dataset(d)
    assert sorted(rep.unvisited_pairs) == [(0, 1), (1, 1), (2, 1)]


def test_split_sizes_and_determinism():
    _, d = toy_fixture(n_episodes=10)
    a = split_dataset(d, 0.3, 7)
    b = split_dataset(d, 0.3, 7)
    assert (a.train.n_episodes, a.val.n_episodes) == (7, 3)
    assert a.train.equals(b.train) and a.val.equals(b.val)


def test_split_halves_disjoint():
    _, d = toy_fixture(n_episodes=100)
    sp = split_dataset(d, 0.5, 3)
    assert not set(sp.train.episode_ids) & set(sp.val.episode_ids)
    assert sp.train.n_episodes + sp.val.n_episodes == 100


@pytest.mark.parametrize("frac", [0.0, 1.0, -0.2])
def test_split_fraction_out_of_range(frac):
    _, d = toy_fixture()
    with pytest.raises(ValueError):
        split_dataset(d, frac, 0)


@settings(max_examples=40, deadline=None)
@given(
    lengths=st.lists(st.integers(1, 4), min_size=1, max_size=12),
    seed=st.integers(0, 2**32 - 1),
)
def test_padding_matches_episode_returns(lengths, seed):
    rng = np.random.default_rng(seed)
    recs = []
    for e, n in enumerate(lengths):
        for t in range(n):
            last = t == n - 1
            recs.append(LoggedTransition(
                f"e{e}", t, int(rng.integers(3)), int(rng.integers(2)), 0.5,
                float(rng.normal()), float(rng.random()), None if last else int(rng.integers(3)), last,
            ))
    d = Dataset.from_transitions(recs)
    assert d.step_mask.sum() == len(d)
    np.testing.assert_allclose(d.padded("reward").sum(axis=1), d.episode_returns("reward"))
    assert d.episode_lengths.tolist() == lengths
