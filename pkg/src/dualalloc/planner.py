"""Finite-horizon tree-search planning on a fitted world model.

For every root state the successor tree is expanded ``horizon_h`` levels
deep and the soft Bellman backup is applied bottom-up with the reshaped
reward of the requested dual variable; leaves contribute 0. Nodes are keyed
by ``(remaining depth, state)`` so repeated states collapse into a layered
DAG. The model is only read, so one fitted model serves every dual value.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import Dataset
from .soft_q import Policy, TIE_BREAKS, _soft_probs, reshape_reward

logger = logging.getLogger(__name__)


class PlanTruncated(RuntimeError):
    """The search tree needed more nodes than the configured budget."""


@dataclass(frozen=True)
class PlanConfig:
    horizon_h: int = 2
    rho: float = 0.0
    lam: float = 0.0
    gamma: Optional[float] = None  # None: the model's discount
    tie_break: str = "lowest_cost"
    node_budget: int = 1_000_000

    def __post_init__(self):
        if self.horizon_h < 1:
            raise ValueError(f"planning depth must be >= 1, got {self.horizon_h}")
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.tie_break not in TIE_BREAKS:
            raise ValueError(f"tie_break must be one of {TIE_BREAKS}")

    def with_lambda(self, lam: float) -> "PlanConfig":
        return replace(self, lam=float(lam))


@dataclass(frozen=True)
class SweepPoint:
    lam: float
    j_reward: float
    j_cost: float
    stderr_reward: float = 0.0
    stderr_cost: float = 0.0


def plan(model, cfg: PlanConfig, initial_states: Optional[Iterable[int]] = None) -> Policy:
    """Plan a policy for every root in ``initial_states`` (default: all states).

    States that are not roots keep a uniform row and are marked unestimated.
    Raises :class:`PlanTruncated` when more than ``cfg.node_budget`` distinct
    nodes would be expanded.
    """
    r, c, trans = model.tables()
    gamma = model.gamma if cfg.gamma is None else cfg.gamma
    rc = reshape_reward(r, c, cfg.lam)
    S, A = rc.shape
    roots = range(S) if initial_states is None else sorted(set(int(s) for s in initial_states))
    for s in roots:
        if not 0 <= s < S:
            raise IndexError(f"initial state {s} out of range [0, {S})")

    succ = [[np.flatnonzero(trans[s, a]) for a in range(A)] for s in range(S)]
    # node -> (V, cost-to-go, Q row, cost Q row)
    memo: dict = {}

    def expand(depth: int, s: int):
        key = (depth, s)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if len(memo) >= cfg.node_budget:
            raise PlanTruncated(
                f"search tree exceeded node budget {cfg.node_budget} at depth {depth}"
            )
        q = rc[s].copy()
        q_cost = c[s].copy()
        if depth > 1:
            for a in range(A):
                for s2 in succ[s][a]:
                    v2, vc2, _, _ = expand(depth - 1, int(s2))
                    p = trans[s, a, s2]
                    q[a] += gamma * p * v2
                    q_cost[a] += gamma * p * vc2
        probs, v = _soft_probs(q[None, :], cfg.rho, cfg.tie_break, q_cost[None, :])
        out = (float(v[0]), float(probs[0] @ q_cost), q, q_cost)
        memo[key] = out
        return out

    q_table = np.zeros((S, A))
    q_cost_table = np.zeros((S, A))
    planned = np.zeros(S, dtype=bool)
    for s in roots:
        _, _, q, q_cost = expand(cfg.horizon_h, s)
        q_table[s] = q
        q_cost_table[s] = q_cost
        planned[s] = True

    probs, v = _soft_probs(q_table, cfg.rho, cfg.tie_break, q_cost_table)
    probs[~planned] = 1.0 / A
    v[~planned] = 0.0
    estimated = np.repeat(planned[:, None], A, axis=1)
    if hasattr(model, "visit_counts"):
        estimated &= model.visit_counts > 0
    return Policy(
        probs=probs, q_values=q_table, v_values=v, lambda_used=cfg.lam, rho=cfg.rho,
        tie_break=cfg.tie_break, estimated=estimated, q_cost=q_cost_table,
    )


def lambda_sweep(
    model,
    lambdas: Sequence[float],
    cfg: PlanConfig,
    target,
    estimator: str = "dr",
    eval_model=None,
    weight_cap: float = 100.0,
) -> list[SweepPoint]:
    """Plan and evaluate one policy per dual value.

    ``target`` is an :class:`~dualalloc.synthetic.MdpSpec` (exact
    evaluation) or a validation :class:`~dualalloc.data.Dataset`
    (counterfactual evaluation with ``estimator``; DR uses ``eval_model``,
    defaulting to ``model``).
    """
    from .cpe import evaluate_policy

    lambdas = [float(x) for x in lambdas]
    if not lambdas:
        raise ValueError("lambdas must be non-empty")
    if any(b < a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambdas must be sorted ascending")
    points = []
    for lam in lambdas:
        policy = plan(model, cfg.with_lambda(lam))
        if isinstance(target, Dataset):
            est = evaluate_policy(
                policy, estimator, val=target,
                model=model if eval_model is None else eval_model, weight_cap=weight_cap,
            )
        else:
            est = evaluate_policy(policy, "exact", spec=target)
        points.append(SweepPoint(lam, est.j_reward, est.j_cost, est.stderr_reward, est.stderr_cost))
    return points
