import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dualalloc.data import Dataset, LoggedTransition
from dualalloc.soft_q import (
    ConvergenceError,
    Policy,
    SoftQConfig,
    extract_policy,
    fitted_q_from_logs,
    reshape_reward,
    soft_max_value,
    soft_value_iteration,
)
from dualalloc.synthetic import TOY_COST, TOY_REWARD, exact_value


def test_reshape_scalars():
    assert reshape_reward(2.0, 1.0, 0.0) == 2.0
    assert reshape_reward(2.0, 2.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        reshape_reward(1.0, 1.0, -0.1)


def test_reshape_toy_table():
    rc = reshape_reward(TOY_REWARD, TOY_COST, 2.0)
    np.testing.assert_array_equal(rc[2], [-0.5, -1.0])


def test_greedy_at_zero(toy):
    spec, _, _ = toy
    pol = soft_value_iteration(spec, 0.0, SoftQConfig(rho=0.0))
    assert pol.greedy_actions()[[0, 2]].tolist() == [1, 1]
    assert exact_value(spec, pol) == (5.0, 4.0)


def test_greedy_at_two(toy):
    spec, _, _ = toy
    pol = soft_value_iteration(spec, 2.0, SoftQConfig(rho=0.0))
    # by hand: V(1) = -1, V(2) = -0.5, Q(0,.) = [-1 + -1, -2 + -0.5]
    np.testing.assert_allclose(pol.q_values[0], [-2.0, -2.5])
    assert pol.greedy_actions()[[0, 1]].tolist() == [0, 0]
    assert exact_value(spec, pol)[1] == 2.0


def test_high_temperature_is_uniform(synthetic):
    pol = soft_value_iteration(synthetic[2], 1.0, SoftQConfig(rho=1e6))
    assert np.max(np.abs(pol.probs - 0.25)) < 1e-4


@pytest.mark.parametrize("rho", [0.1, 1.0, 3.0])
def test_policy_matches_soft_bellman(toy, rho):
    pol = soft_value_iteration(toy[0], 0.7, SoftQConfig(rho=rho))
    v = rho * np.log(np.exp(pol.q_values / rho).sum(axis=1))
    np.testing.assert_allclose(pol.v_values, v, atol=1e-12)
    np.testing.assert_allclose(pol.probs, np.exp((pol.q_values - v[:, None]) / rho), atol=1e-9)


def test_infinite_horizon_needs_discount(toy):
    with pytest.raises(ConvergenceError):
        soft_value_iteration(toy[0], 0.0, SoftQConfig(horizon=math.inf))
    pol = soft_value_iteration(toy[0], 0.0, SoftQConfig(horizon=math.inf, gamma=0.9))
    # state 0 leads to terminal states in one step; the fixed point is 2 steps deep
    assert pol.v_values[0] == pytest.approx(2.0 + 0.9 * 3.0)


def test_fitted_q_matches_model(toy):
    spec, d, _ = toy
    vi = soft_value_iteration(spec, 0.0, SoftQConfig())
    fq = fitted_q_from_logs(d, 0.0, SoftQConfig())
    np.testing.assert_array_equal(fq.greedy_actions(), vi.greedy_actions())
    vi = soft_value_iteration(spec, 0.5, SoftQConfig())
    fq = fitted_q_from_logs(d, 0.5, SoftQConfig())
    np.testing.assert_allclose(fq.q_values, vi.q_values, atol=1e-9)


def test_fitted_q_flags_unlogged_action():
    recs = [LoggedTransition(f"e{i}", 0, i % 3, 0, 0.5, 1.0, 1.0, None, True) for i in range(30)]
    pol = fitted_q_from_logs(Dataset.from_transitions(recs, n_actions=2), 0.0, SoftQConfig())
    assert pol.estimated[:, 0].all()
    assert not pol.estimated[:, 1].any()


def test_extract_examples():
    np.testing.assert_allclose(extract_policy(np.array([[0.0, 0.0]]), 1.0).probs, [[0.5, 0.5]])
    np.testing.assert_allclose(
        extract_policy(np.array([[math.log(2), 0.0]]), 1.0).probs, [[2 / 3, 1 / 3]], atol=1e-12
    )
    pol = extract_policy(np.array([[1.0, 1.0]]), 0.0, "lowest_cost", costs=np.array([[2.0, 1.0]]))
    np.testing.assert_array_equal(pol.probs, [[0.0, 1.0]])
    pol = extract_policy(np.array([[1.0, 1.0]]), 0.0, "lowest_action_id", costs=np.array([[2.0, 1.0]]))
    np.testing.assert_array_equal(pol.probs, [[1.0, 0.0]])


def test_extract_rejects_nan():
    with pytest.raises(ValueError, match="NaN"):
        extract_policy(np.array([[np.nan, 0.0]]), 1.0)


def test_policy_json_round_trip(tmp_path):
    for pol in (Policy.uniform(3, 2), extract_policy(np.array([[0.3, -1.0], [2.0, 2.5]]), 0.4)):
        back = Policy.load(pol.save(tmp_path / "p.json"))
        np.testing.assert_array_equal(back.probs, pol.probs)
        assert back.rho == pol.rho


def test_uniform_policy_serializes_infinite_rho(tmp_path):
    path = Policy.uniform(2, 2).save(tmp_path / "u.json")
    assert "Infinity" not in path.read_text()
    assert Policy.load(path).rho == math.inf


@settings(max_examples=60, deadline=None)
@given(
    q=arrays(np.float64, (4, 3), elements=st.floats(-50, 50)),
    rho=st.floats(1e-3, 100.0),
)
def test_soft_value_bounds_and_normalization(q, rho):
    v = soft_max_value(q, rho)
    m = q.max(axis=1)
    assert np.all(v >= m - 1e-9)
    assert np.all(v <= m + rho * math.log(3) + 1e-9)
    pol = extract_policy(q, rho)
    np.testing.assert_allclose(pol.probs.sum(axis=1), 1.0, atol=1e-9)
