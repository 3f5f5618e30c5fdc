import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualalloc.cpe import (
    CPEError,
    doubly_robust,
    dr_estimate,
    evaluate_policy,
    is_estimate,
    policy_values,
    snips_estimate,
)
from dualalloc.data import Dataset, LoggedTransition
from dualalloc.synthetic import toy_fixture, uniform_probs
from dualalloc.world_model import fit_models

from conftest import greedy

GREEDY = greedy([1, 0, 1])


def _forward_is(d, probs, cap, column):
    """Per-decision IS by a plain loop over episodes."""
    totals = []
    for ep in d.episode_ids:
        rows = [tr for tr in d.transitions if tr.episode_id == ep]
        w, total = 1.0, 0.0
        for tr in sorted(rows, key=lambda x: x.t):
            w *= min(probs[tr.state, tr.action] / tr.propensity, cap)
            total += d.gamma ** tr.t * w * getattr(tr, column)
        totals.append(total)
    return float(np.mean(totals))


def _forward_dr(d, probs, q, v, column):
    """DR in its additive form: sum_t w_t y_t - (w_t Q - w_{t-1} V)."""
    H = d.horizon
    totals = []
    for ep in d.episode_ids:
        rows = sorted((tr for tr in d.transitions if tr.episode_id == ep), key=lambda x: x.t)
        w_prev, total = 1.0, 0.0
        for tr in rows:
            w = w_prev * probs[tr.state, tr.action] / tr.propensity
            k = H - tr.t
            total += w * getattr(tr, column) - (w * q[k, tr.state, tr.action] - w_prev * v[k, tr.state])
            w_prev = w
        totals.append(total)
    return float(np.mean(totals))


def test_behavior_policy_is_empirical_mean(toy):
    _, d, _ = toy
    est = is_estimate(d, uniform_probs(3, 2), weight_cap=np.inf)
    assert est.j_reward == pytest.approx(d.episode_returns("reward").mean(), abs=1e-12)
    assert est.ess == pytest.approx(d.n_episodes)
    assert not est.caps_hit


def test_is_recovers_greedy_cost(toy):
    _, d, _ = toy
    est = is_estimate(d, GREEDY)
    assert abs(est.j_cost - 4.0) < 3 * est.stderr_cost


def test_is_matches_forward_loop():
    _, d = toy_fixture(n_episodes=300, seed=9)
    probs = np.array([[0.2, 0.8], [0.6, 0.4], [0.1, 0.9]])
    for cap in (np.inf, 1.5):
        est = is_estimate(d, probs, weight_cap=cap)
        assert est.j_reward == pytest.approx(_forward_is(d, probs, cap, "reward"), abs=1e-12)
        assert est.j_cost == pytest.approx(_forward_is(d, probs, cap, "cost"), abs=1e-12)


def test_cap_binds_and_flags():
    _, d = toy_fixture(n_episodes=200, seed=4)
    est = is_estimate(d, GREEDY, weight_cap=1.0)
    assert est.caps_hit
    assert est.j_cost == pytest.approx(_forward_is(d, GREEDY, 1.0, "cost"), abs=1e-12)


def test_snips_behavior_and_single_episode(toy):
    _, d, _ = toy
    est = snips_estimate(d, uniform_probs(3, 2))
    assert est.j_reward == pytest.approx(d.episode_returns("reward").mean(), abs=1e-12)
    one = d.select_episodes(np.array([3]))
    probs = np.array([[0.9, 0.1], [0.3, 0.7], [0.5, 0.5]])
    assert snips_estimate(one, probs).j_reward == pytest.approx(one.episode_returns("reward")[0], abs=1e-12)


def test_snips_greedy_cost(toy):
    _, d, _ = toy
    # every supported episode pays 2 + 2, so the normalized estimate is exact
    est = snips_estimate(d, GREEDY)
    assert est.j_cost == pytest.approx(4.0, abs=1e-12)


def test_dr_with_zero_tables_is_is(toy):
    _, d, _ = toy
    z = np.zeros(d.step_mask.shape)
    a = doubly_robust(d, GREEDY, z, z, z, z)
    b = is_estimate(d, GREEDY)
    assert (a.j_reward, a.j_cost, a.stderr_cost) == (b.j_reward, b.j_cost, b.stderr_cost)


def test_dr_exact_model(toy):
    spec, d, m = toy
    est = dr_estimate(d, uniform_probs(3, 2), m)
    assert abs(est.j_cost - 3.0) < 3 * est.stderr_cost + 1e-12
    # deterministic environment and exact model: no residual left
    est = dr_estimate(d, GREEDY, m)
    assert est.j_cost == pytest.approx(4.0, abs=1e-12)
    assert est.j_reward == pytest.approx(5.0, abs=1e-12)


def test_dr_matches_additive_form():
    _, d = toy_fixture(n_episodes=300, seed=12)
    noisy = d.select_episodes(np.arange(150))
    model = fit_models(noisy, smoothing=0.5)
    probs = np.array([[0.3, 0.7], [0.5, 0.5], [0.2, 0.8]])
    est = dr_estimate(d, probs, model)
    q_r, v_r, q_c, v_c = policy_values(model, probs, d.horizon)
    assert est.j_reward == pytest.approx(_forward_dr(d, probs, q_r, v_r, "reward"), abs=1e-12)
    assert est.j_cost == pytest.approx(_forward_dr(d, probs, q_c, v_c, "cost"), abs=1e-12)


def test_no_overlap_raises():
    recs = [LoggedTransition(f"e{i}", 0, 0, 0, 1.0, 1.0, 1.0, None, True) for i in range(5)]
    d = Dataset.from_transitions(recs, n_states=1, n_actions=2)
    with pytest.raises(CPEError, match="overlap"):
        is_estimate(d, np.array([[0.0, 1.0]]))


def test_dispatch(toy):
    spec, d, m = toy
    assert evaluate_policy(GREEDY, "exact", spec=spec).j_cost == 4.0
    assert evaluate_policy(GREEDY, "DR", val=d, model=m).estimator == "DR"
    with pytest.raises(CPEError, match="spec"):
        evaluate_policy(GREEDY, "exact")
    with pytest.raises(CPEError, match="model"):
        evaluate_policy(GREEDY, "dr", val=d)
    with pytest.raises(CPEError, match="unknown"):
        evaluate_policy(GREEDY, "wis", val=d)


def test_mismatched_spaces(toy):
    _, d, _ = toy
    with pytest.raises(CPEError):
        is_estimate(d, np.full((2, 2), 0.5))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), cap=st.floats(1.0, 50.0))
def test_zero_model_collapse_property(seed, cap):
    _, d = toy_fixture(n_episodes=40, seed=seed)
    probs = np.random.default_rng(seed).dirichlet([1.0, 1.0], size=3)
    z = np.zeros(d.step_mask.shape)
    a = doubly_robust(d, probs, z, z, z, z, weight_cap=cap)
    b = is_estimate(d, probs, weight_cap=cap)
    assert a.j_reward == b.j_reward and a.j_cost == b.j_cost
