"""Counterfactual evaluation of reward and cost from logged trajectories.

All three estimators are per-decision (step-wise) importance-sampling
estimators over whole episodes:

* ``is_estimate``     -- sum_t gamma^t w_t y_t with w_t the cumulative ratio
* ``snips_estimate``  -- the same with every step normalised by mean(w_t)
* ``dr_estimate``     -- the sequential doubly-robust recursion
  ``DR_t = V(s_t) + rho_t (y_t + gamma DR_{t+1} - Q(s_t, a_t))``

Every per-step ratio ``pi(a|s) / p`` is capped at ``weight_cap``; the
returned estimate says whether any cap was active. Episodes shorter than
the longest one are padded with ratio 1 and zero outcome, which leaves all
three estimators unchanged.
"""
from __future__ import annotations

import logging
import math
from typing import Optional

import numpy as np

from .data import Dataset
from .estimate import EvalEstimate
from .synthetic import simulate_policy

logger = logging.getLogger(__name__)

DEFAULT_WEIGHT_CAP = 100.0


class CPEError(ValueError):
    pass


def _probs(policy) -> np.ndarray:
    return np.asarray(getattr(policy, "probs", policy), dtype=float)


def _ratios(val: Dataset, policy, weight_cap: float):
    if val.n_episodes == 0:
        raise CPEError("validation dataset has no episodes")
    probs = _probs(policy)
    if val.state.max() >= probs.shape[0] or val.action.max() >= probs.shape[1]:
        raise CPEError(
            f"logged state/action outside the policy table of shape {probs.shape}"
        )
    if np.any(val.propensity <= 0):
        raise CPEError("zero propensity in logged data")
    raw = probs[val.state, val.action] / val.propensity
    capped = np.minimum(raw, weight_cap)
    caps_hit = bool(np.any(raw > weight_cap))
    ratios = np.ones(val.step_mask.shape)
    ratios[val.episode_index, val.t] = capped
    return ratios, caps_hit


def _ess(final_w: np.ndarray) -> float:
    total = final_w.sum()
    if total <= 0:
        raise CPEError("no overlap: every episode has zero importance weight")
    return float(total ** 2 / np.sum(final_w ** 2))


def _recursion(ratios, y, q_logged, v_state, gamma) -> np.ndarray:
    dr = np.zeros(ratios.shape[0])
    for t in range(ratios.shape[1] - 1, -1, -1):
        dr = v_state[:, t] + ratios[:, t] * (y[:, t] + gamma * dr - q_logged[:, t])
    return dr


def _stderr(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0


def doubly_robust(
    val: Dataset,
    policy,
    q_reward: np.ndarray,
    v_reward: np.ndarray,
    q_cost: np.ndarray,
    v_cost: np.ndarray,
    weight_cap: float = DEFAULT_WEIGHT_CAP,
    estimator: str = "DR",
) -> EvalEstimate:
    """Sequential DR with value tables given per logged step.

    The four tables are ``(n_episodes, max_length)`` arrays holding
    ``Q(s_t, a_t)`` and ``V(s_t)`` for every logged step (padding = 0).
    All-zero tables give exactly the importance-sampling estimate.
    """
    ratios, caps_hit = _ratios(val, policy, weight_cap)
    ess = _ess(np.prod(ratios, axis=1))
    y_r = val.padded("reward", 0.0)
    y_c = val.padded("cost", 0.0)
    per_r = _recursion(ratios, y_r, q_reward, v_reward, val.gamma)
    per_c = _recursion(ratios, y_c, q_cost, v_cost, val.gamma)
    return EvalEstimate(
        j_reward=float(per_r.mean()),
        j_cost=float(per_c.mean()),
        stderr_reward=_stderr(per_r),
        stderr_cost=_stderr(per_c),
        estimator=estimator,
        ess=ess,
        n_episodes=val.n_episodes,
        caps_hit=caps_hit,
    )


def is_estimate(val: Dataset, policy, weight_cap: float = DEFAULT_WEIGHT_CAP) -> EvalEstimate:
    """Per-decision importance sampling.

    Parameters
    ----------
    val : Dataset
        Logged evaluation episodes with behavior propensities.
    policy : Policy or array of shape (n_states, n_actions)
        Target policy.
    weight_cap : float
        Upper bound applied to every per-step ratio before multiplying.

    Returns
    -------
    EvalEstimate
        Mean over episodes of ``sum_t gamma^t w_t y_t`` for reward and cost.
    """
    zeros = np.zeros(val.step_mask.shape)
    return doubly_robust(val, policy, zeros, zeros, zeros, zeros, weight_cap, estimator="IS")


def snips_estimate(val: Dataset, policy, weight_cap: float = DEFAULT_WEIGHT_CAP) -> EvalEstimate:
    """Per-decision self-normalized importance sampling.

    Step t is normalised by the mean cumulative weight at t. Standard errors
    use the delta method; steps where every weight is 0 contribute nothing.
    """
    ratios, caps_hit = _ratios(val, policy, weight_cap)
    w = np.cumprod(ratios, axis=1)
    if not np.any(w[:, 0] > 0):
        raise CPEError("no overlap: total importance weight is 0")
    ess = _ess(w[:, -1])
    disc = val.gamma ** np.arange(w.shape[1])
    norm = w.mean(axis=0)
    live = norm > 0
    if not live.all():
        logger.warning("SNIPS: %d step(s) without support are skipped", int((~live).sum()))
    safe = np.where(live, norm, 1.0)

    out = {}
    for name in ("reward", "cost"):
        num = w * disc * val.padded(name, 0.0)
        ratio = np.where(live, num.mean(axis=0) / safe, 0.0)
        influence = np.where(live, (num - ratio * w) / safe, 0.0).sum(axis=1)
        out[name] = (float(ratio.sum()), _stderr(influence))
    return EvalEstimate(
        j_reward=out["reward"][0],
        j_cost=out["cost"][0],
        stderr_reward=out["reward"][1],
        stderr_cost=out["cost"][1],
        estimator="SNIPS",
        ess=ess,
        n_episodes=val.n_episodes,
        caps_hit=caps_hit,
    )


def policy_values(model, probs: np.ndarray, horizon: int, gamma: Optional[float] = None):
    """Model-based Q/V of a fixed policy for every number of remaining steps.

    Returns ``(q_r, v_r, q_c, v_c)`` stacked so that index ``k`` holds the
    values with ``k`` steps to go (index 0 is all zeros).
    """
    r, c, trans = model.tables()
    gamma = model.gamma if gamma is None else gamma
    S, A = r.shape
    q_r = np.zeros((horizon + 1, S, A))
    q_c = np.zeros((horizon + 1, S, A))
    v_r = np.zeros((horizon + 1, S))
    v_c = np.zeros((horizon + 1, S))
    for k in range(1, horizon + 1):
        q_r[k] = r + gamma * trans @ v_r[k - 1]
        q_c[k] = c + gamma * trans @ v_c[k - 1]
        v_r[k] = (probs * q_r[k]).sum(axis=1)
        v_c[k] = (probs * q_c[k]).sum(axis=1)
    return q_r, v_r, q_c, v_c


def dr_estimate(val: Dataset, policy, model, weight_cap: float = DEFAULT_WEIGHT_CAP) -> EvalEstimate:
    """Doubly-robust estimate with the value model built from ``model``.

    ``model`` must be fitted on data disjoint from ``val``. Its Q/V tables
    are those of the evaluated policy itself (policy evaluation on the
    model), indexed by the steps remaining in the validation horizon.
    """
    probs = _probs(policy)
    if (model.n_states, model.n_actions) != (val.n_states, val.n_actions):
        raise CPEError(
            f"model spaces ({model.n_states}, {model.n_actions}) do not match "
            f"validation data ({val.n_states}, {val.n_actions})"
        )
    if probs.shape != (model.n_states, model.n_actions):
        raise CPEError(f"policy shape {probs.shape} does not match the model")
    H = val.horizon
    q_r, v_r, q_c, v_c = policy_values(model, probs, H, gamma=val.gamma)
    shape = val.step_mask.shape
    rem = H - val.t
    idx = (val.episode_index, val.t)
    tables = []
    for q, v in ((q_r, v_r), (q_c, v_c)):
        qt = np.zeros(shape)
        vt = np.zeros(shape)
        qt[idx] = q[rem, val.state, val.action]
        vt[idx] = v[rem, val.state]
        tables += [qt, vt]
    return doubly_robust(val, policy, *tables, weight_cap=weight_cap, estimator="DR")


def evaluate_policy(
    policy,
    estimator: str,
    val: Optional[Dataset] = None,
    model=None,
    spec=None,
    weight_cap: float = DEFAULT_WEIGHT_CAP,
) -> EvalEstimate:
    """Dispatch on an estimator tag: ``is``, ``snips``, ``dr`` or ``exact``."""
    tag = estimator.lower()
    if tag == "exact":
        if spec is None:
            raise CPEError("exact evaluation needs the ground-truth spec")
        return simulate_policy(spec, policy, n_rollouts=0)
    if val is None:
        raise CPEError(f"{estimator} evaluation needs validation data")
    if tag == "is":
        return is_estimate(val, policy, weight_cap)
    if tag == "snips":
        return snips_estimate(val, policy, weight_cap)
    if tag == "dr":
        if model is None:
            raise CPEError("DR evaluation needs a fitted world model")
        return dr_estimate(val, policy, model, weight_cap)
    raise CPEError(f"unknown estimator {estimator!r}; expected is, snips, dr or exact")
