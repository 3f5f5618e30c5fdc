from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

ESTIMATORS = ("IS", "SNIPS", "DR", "EXACT", "MC")


@dataclass(frozen=True)
class EvalEstimate:
    """Estimated discounted reward and cost of a policy.

    ``ess`` is the effective sample size of the final cumulative importance
    weights; it is ``None`` for exact evaluation and equals the rollout count
    for Monte-Carlo simulation.
    """

    j_reward: float
    j_cost: float
    stderr_reward: float
    stderr_cost: float
    estimator: str
    ess: Optional[float]
    n_episodes: int = 0
    caps_hit: bool = False

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator tag {self.estimator!r}")
        if self.stderr_reward < 0 or self.stderr_cost < 0:
            raise ValueError("standard errors must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)
