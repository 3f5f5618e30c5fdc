import math

import numpy as np
import pytest

from dualalloc.data import Dataset, LoggedTransition, split_dataset
from dualalloc.synthetic import SyntheticConfig, gen_synthetic, toy_fixture
from dualalloc.world_model import (
    ModelError,
    WorldModel,
    fit_models,
    model_report,
    predict,
    transition_log_loss,
)


def test_toy_exact_fit(toy):
    _, _, m = toy
    assert m.r_hat[2, 1] == 3.0
    np.testing.assert_array_equal(m.t_hat[0, 1], [0.0, 0.0, 1.0])
    succ, term, r, c, seen = predict(m, 0, 0)
    np.testing.assert_array_equal(succ, [0.0, 1.0, 0.0])
    assert (term, r, c, seen) == (0.0, 1.0, 1.0, True)


def test_rows_plus_terminal_sum_to_one(toy, synthetic):
    for m in (toy[2], synthetic[2]):
        np.testing.assert_allclose(m.t_hat.sum(axis=2) + m.terminal, 1.0, atol=1e-12)


def test_visit_counts_match_data(toy):
    _, d, m = toy
    brute = np.zeros((3, 2), dtype=int)
    for tr in d.transitions:
        brute[tr.state, tr.action] += 1
    np.testing.assert_array_equal(m.visit_counts, brute)


def test_unvisited_pair_falls_back_to_action_mean():
    _, d = toy_fixture(n_episodes=400, seed=2)
    keep = ~((d.state == 2) & (d.action == 1))
    # drop (2,1) by rebuilding without those rows
    sub = Dataset.from_arrays(
        episode_id=d.episode_id[keep], t=d.t[keep], state=d.state[keep], action=d.action[keep],
        propensity=d.propensity[keep], reward=d.reward[keep], cost=d.cost[keep],
        next_state=d.next_state[keep], done=d.done[keep], n_states=3, n_actions=2, horizon=2,
    )
    m = fit_models(sub, smoothing=0.1)
    assert m.visit_counts[2, 1] == 0
    assert m.r_hat[2, 1] == pytest.approx(sub.reward[sub.action == 1].mean(), abs=1e-12)
    *_, seen = predict(m, 2, 1)
    assert not seen


def test_add_alpha_single_successor():
    k = 7
    recs = []
    for e in range(k):
        recs += [
            LoggedTransition(f"e{e}", 0, 0, 0, 1.0, 1.0, 1.0, 2, False),
            LoggedTransition(f"e{e}", 1, 2, 0, 1.0, 1.0, 1.0, None, True),
        ]
    d = Dataset.from_transitions(recs, n_states=4, n_actions=1)
    m = fit_models(d, smoothing=1.0)
    assert m.t_hat[0, 0, 2] == pytest.approx((k + 1) / (k + 4), abs=1e-15)


def test_predict_range():
    _, d = toy_fixture()
    m = fit_models(d)
    with pytest.raises(IndexError):
        predict(m, 3, 0)
    with pytest.raises(IndexError):
        predict(m, 0, 2)


def test_empty_dataset_rejected():
    d = Dataset.from_transitions([], n_states=3, n_actions=2, horizon=2)
    with pytest.raises(ModelError):
        fit_models(d)


def test_deterministic_toy_mae_zero(toy):
    _, d, m = toy
    rep = model_report(m, d)
    assert rep.reward_mae == 0.0 and rep.cost_mae == 0.0
    assert rep.coverage == 1.0


def test_gaussian_mae_identity():
    v = 0.3
    spec, d = gen_synthetic(SyntheticConfig(reward_noise_std=v, n_episodes=50_000, seed=4))
    sp = split_dataset(d, 0.5, 0)
    rep = model_report(fit_models(sp.train), sp.val)
    target = v * math.sqrt(2 / math.pi)
    assert abs(rep.reward_mae - target) < 0.1 * target


def test_mle_minimizes_training_log_loss():
    _, d = toy_fixture(n_episodes=60, seed=5)
    m = fit_models(d, smoothing=0.0)
    base = transition_log_loss(m.t_hat, m.terminal, d)
    rng = np.random.default_rng(0)
    for _ in range(50):
        # random perturbation that keeps rows + terminal normalized
        raw = rng.dirichlet(np.ones(4), size=(3, 2))
        other_t, other_term = raw[..., :3], raw[..., 3]
        mix = 0.5
        t = (1 - mix) * m.t_hat + mix * other_t
        term = (1 - mix) * m.terminal + mix * other_term
        assert transition_log_loss(t, term, d) >= base - 1e-12


def test_save_load_round_trip(tmp_path, synthetic):
    m = synthetic[2]
    back = WorldModel.load(m.save(tmp_path / "m.json"))
    assert back.fingerprint() == m.fingerprint()
    assert (back.gamma, back.horizon, back.smoothing) == (m.gamma, m.horizon, m.smoothing)


def test_load_rejects_other_format(tmp_path, toy):
    path = toy[2].save(tmp_path / "m.json")
    text = path.read_text().replace('"format_version": 1', '"format_version": 99')
    path.write_text(text)
    with pytest.raises(ModelError, match="format"):
        WorldModel.load(path)


def test_load_missing(tmp_path):
    with pytest.raises(FileNotFoundError, match="absent.json"):
        WorldModel.load(tmp_path / "absent.json")
