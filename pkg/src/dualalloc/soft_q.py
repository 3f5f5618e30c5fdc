"""Lagrangian-reshaped, entropy-regularized Q-learning on tabular problems.

Rewards are reshaped to ``rc = r - lam * c`` and the soft Bellman fixed point

    Q(s, a) = rc(s, a) + gamma * E[V(s')]
    V(s)    = rho * log sum_a exp(Q(s, a) / rho)
    pi(a|s) = exp((Q(s, a) - V(s)) / rho)

is solved either on a model (``soft_value_iteration``) or directly from
logged transitions (``fitted_q_from_logs``). ``rho == 0`` is the hard-max
limit with an explicit tie-break. The neural learner of the production
setting would replace ``fitted_q_from_logs``; its contract is the same fixed
point.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .data import Dataset

TIE_BREAKS = ("lowest_action_id", "lowest_cost")


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SoftQConfig:
    rho: float = 0.0
    gamma: Optional[float] = None  # None: take the model's discount
    horizon: Optional[Union[int, float]] = None  # None: model's; math.inf: until tol
    max_sweeps: int = 10_000
    tol: float = 1e-10
    tie_break: str = "lowest_cost"

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError(f"rho must be >= 0, got {self.rho}")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.tie_break not in TIE_BREAKS:
            raise ValueError(f"tie_break must be one of {TIE_BREAKS}")
        if self.gamma is not None and not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0,1]")


@dataclass(eq=False)
class Policy:
    """Tabular stochastic policy with the Q/V tables it was extracted from.

    ``estimated`` marks (state, action) cells whose Q value is backed by
    data or by the model; ``q_cost`` is the expected discounted cost-to-go
    of each action under this policy, when known.
    """

    probs: np.ndarray
    q_values: np.ndarray
    v_values: np.ndarray
    lambda_used: float = 0.0
    rho: float = 0.0
    tie_break: str = "lowest_cost"
    estimated: Optional[np.ndarray] = None
    q_cost: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 2:
            raise ValueError("probs must be a (n_states, n_actions) table")
        if np.any(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("policy rows must sum to 1")

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def greedy_actions(self) -> np.ndarray:
        return self.probs.argmax(axis=1)

    def to_dict(self) -> dict:
        return {
            "probs": self.probs.tolist(),
            "q_values": np.asarray(self.q_values).tolist(),
            "v_values": np.asarray(self.v_values).tolist(),
            "lambda_used": self.lambda_used,
            "rho": None if math.isinf(self.rho) else self.rho,  # JSON has no infinity
            "tie_break": self.tie_break,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        return cls(
            probs=np.asarray(d["probs"], dtype=float),
            q_values=np.asarray(d["q_values"], dtype=float),
            v_values=np.asarray(d["v_values"], dtype=float),
            lambda_used=float(d.get("lambda_used", 0.0)),
            rho=math.inf if d.get("rho", 0.0) is None else float(d["rho"]),
            tie_break=d.get("tie_break", "lowest_cost"),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict()))
        return path

    @classmethod
    def load(cls, path) -> "Policy":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"policy file not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(
            probs=np.full((n_states, n_actions), 1.0 / n_actions),
            q_values=np.zeros((n_states, n_actions)),
            v_values=np.zeros(n_states),
            rho=math.inf,
        )


def reshape_reward(r, c, lam: float):
    """Lagrangian reward ``r - lam * c``."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    return r - lam * c


def soft_max_value(q: np.ndarray, rho: float) -> np.ndarray:
    """Row-wise ``rho * logsumexp(q / rho)``; the plain max when ``rho == 0``."""
    q = np.asarray(q, dtype=float)
    m = q.max(axis=-1)
    if rho == 0:
        return m
    return m + rho * np.log(np.exp((q - m[..., None]) / rho).sum(axis=-1))


def _tie_mask(q: np.ndarray) -> np.ndarray:
    m = q.max(axis=1, keepdims=True)
    return q >= m - 1e-12 * np.maximum(1.0, np.abs(m))


def _greedy_probs(q: np.ndarray, tie_break: str, costs: Optional[np.ndarray]) -> np.ndarray:
    ties = _tie_mask(q)
    if tie_break == "lowest_cost" and costs is not None:
        masked = np.where(ties, costs, np.inf)
        cmin = masked.min(axis=1, keepdims=True)
        ties = ties & (masked <= cmin + 1e-12 * np.maximum(1.0, np.abs(cmin)))
    choice = ties.argmax(axis=1)  # first True = lowest action id
    probs = np.zeros_like(q)
    probs[np.arange(q.shape[0]), choice] = 1.0
    return probs


def _soft_probs(q: np.ndarray, rho: float, tie_break: str, costs) -> tuple[np.ndarray, np.ndarray]:
    if rho == 0:
        probs = _greedy_probs(q, tie_break, costs)
        return probs, q.max(axis=1)
    v = soft_max_value(q, rho)
    probs = np.exp((q - v[:, None]) / rho)
    # exp((Q - V) / rho) already sums to 1 up to rounding; renormalize the residue
    probs /= probs.sum(axis=1, keepdims=True)
    return probs, v


def extract_policy(
    q: np.ndarray,
    rho: float,
    tie_break: str = "lowest_cost",
    costs: Optional[np.ndarray] = None,
    lambda_used: float = 0.0,
) -> Policy:
    """Softmax policy of ``q`` at temperature ``rho``.

    With ``rho == 0`` the policy is a point mass on the argmax. Exact ties
    go to the action with the smallest ``costs`` entry (``lowest_cost``) or
    the smallest action id; ``lowest_cost`` without ``costs`` falls back to
    the smallest action id.
    """
    q = np.asarray(q, dtype=float)
    if np.isnan(q).any():
        raise ValueError("Q table contains NaN")
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if tie_break not in TIE_BREAKS:
        raise ValueError(f"tie_break must be one of {TIE_BREAKS}")
    probs, v = _soft_probs(q, rho, tie_break, costs)
    return Policy(
        probs=probs, q_values=q, v_values=v, lambda_used=lambda_used,
        rho=rho, tie_break=tie_break,
        q_cost=None if costs is None else np.asarray(costs, dtype=float),
    )


def _resolve(model, cfg: SoftQConfig):
    gamma = model.gamma if cfg.gamma is None else cfg.gamma
    horizon = model.horizon if cfg.horizon is None else cfg.horizon
    if math.isinf(horizon) and gamma >= 1.0:
        raise ConvergenceError("infinite horizon with gamma = 1 does not converge")
    if not math.isinf(horizon) and horizon < 1:
        raise ValueError("horizon must be >= 1")
    return gamma, horizon


def soft_value_iteration(model, lam: float, cfg: SoftQConfig = SoftQConfig()) -> Policy:
    """Backward induction of the soft Bellman equation on a tabular model.

    ``model`` is a :class:`~dualalloc.world_model.WorldModel` or an
    :class:`~dualalloc.synthetic.MdpSpec`; anything exposing ``tables()``,
    ``gamma`` and ``horizon`` works. With a finite horizon H the result is
    the H-step value, stopping early once a sweep changes V by < ``tol``.
    """
    gamma, horizon = _resolve(model, cfg)
    r, c, trans = model.tables()
    rc = reshape_reward(r, c, lam)
    S = rc.shape[0]
    limit = cfg.max_sweeps if math.isinf(horizon) else int(horizon)
    v = np.zeros(S)
    v_cost = np.zeros(S)
    converged = False
    for _ in range(limit):
        q = rc + gamma * trans @ v
        q_cost = c + gamma * trans @ v_cost
        probs, v_new = _soft_probs(q, cfg.rho, cfg.tie_break, q_cost)
        v_cost_new = (probs * q_cost).sum(axis=1)
        delta = max(np.max(np.abs(v_new - v)), np.max(np.abs(v_cost_new - v_cost)))
        v, v_cost = v_new, v_cost_new
        if delta < cfg.tol:
            converged = True
            break
    if math.isinf(horizon) and not converged:
        raise ConvergenceError(f"soft value iteration did not converge in {limit} sweeps")
    return Policy(
        probs=probs, q_values=q, v_values=v, lambda_used=lam, rho=cfg.rho,
        tie_break=cfg.tie_break, estimated=np.ones_like(q, dtype=bool), q_cost=q_cost,
    )


def fitted_q_from_logs(train: Dataset, lam: float, cfg: SoftQConfig = SoftQConfig()) -> Policy:
    """Batch fitted soft-Q sweeps straight on logged transitions.

    Each sweep regresses Q(s, a) onto the mean target ``rc + gamma * V(s')``
    over the logged transitions of (s, a); for a tabular regressor that is
    the cell average. Pairs never logged keep the action's average reshaped
    reward with no continuation and are marked in ``Policy.estimated``.
    """
    if len(train) == 0:
        raise ValueError("cannot learn from an empty dataset")
    gamma, horizon = _resolve(train, cfg)
    S, A = train.n_states, train.n_actions
    s, a = train.state, train.action
    cell = s * A + a
    counts = np.bincount(cell, minlength=S * A).reshape(S, A)
    logged = counts > 0
    safe = np.maximum(counts, 1)
    rc_obs = reshape_reward(train.reward, train.cost, lam)
    cont = (~train.done).astype(float)
    nxt = np.maximum(train.next_state, 0)

    act_n = np.maximum(np.bincount(a, minlength=A), 1)
    fallback_q = np.bincount(a, weights=rc_obs, minlength=A) / act_n
    fallback_c = np.bincount(a, weights=train.cost, minlength=A) / act_n

    limit = cfg.max_sweeps if math.isinf(horizon) else int(horizon)
    v = np.zeros(S)
    v_cost = np.zeros(S)
    converged = False
    for _ in range(limit):
        target = rc_obs + gamma * cont * v[nxt]
        target_c = train.cost + gamma * cont * v_cost[nxt]
        q = np.bincount(cell, weights=target, minlength=S * A).reshape(S, A) / safe
        q_cost = np.bincount(cell, weights=target_c, minlength=S * A).reshape(S, A) / safe
        q = np.where(logged, q, fallback_q[None, :])
        q_cost = np.where(logged, q_cost, fallback_c[None, :])
        probs, v_new = _soft_probs(q, cfg.rho, cfg.tie_break, q_cost)
        v_cost_new = (probs * q_cost).sum(axis=1)
        delta = max(np.max(np.abs(v_new - v)), np.max(np.abs(v_cost_new - v_cost)))
        v, v_cost = v_new, v_cost_new
        if delta < cfg.tol:
            converged = True
            break
    if math.isinf(horizon) and not converged:
        raise ConvergenceError(f"fitted Q iteration did not converge in {limit} sweeps")
    return Policy(
        probs=probs, q_values=q, v_values=v, lambda_used=lam, rho=cfg.rho,
        tie_break=cfg.tie_break, estimated=logged, q_cost=q_cost,
    )
