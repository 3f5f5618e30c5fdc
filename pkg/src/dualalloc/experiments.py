"""Baselines and the summary comparison of allocation strategies.

The comparison has three rows at one shared budget: the uniform logging
policy, a one-step (myopic) constrained bandit and the full-horizon
constrained MDP. Both constrained rows come out of the same bisection
search; only the planning depth differs.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .cpe import evaluate_policy
from .data import DatasetSplit
from .dual_solver import LambdaBracket, SolverReport, bisection_solve
from .planner import PlanConfig, SweepPoint
from .synthetic import MdpSpec, exact_value, uniform_probs

ROW_NAMES = ("Random", "Constrained bandit (H=1)", "Constrained MDP")


def constrained_bandit_baseline(
    split: Optional[DatasetSplit],
    model,
    budget: float,
    delta: Optional[float] = None,
    bracket: Optional[LambdaBracket] = None,
    plan_cfg: PlanConfig = PlanConfig(),
    **kwargs,
) -> SolverReport:
    """Bisection search with a one-step planner.

    The policy at every state maximizes the immediate reshaped reward
    ``r - lam * c`` and ignores what follows. Remaining keyword arguments go
    to :func:`~dualalloc.dual_solver.bisection_solve`.
    """
    cfg = replace(plan_cfg, horizon_h=1)
    return bisection_solve(split, model, budget, delta=delta, bracket=bracket, plan_cfg=cfg, **kwargs)


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    cost: float
    reward: float
    lift: float
    lambda_star: Optional[float] = None
    feasible: bool = True


@dataclass
class Comparison:
    """Rows of the strategy comparison at a common budget.

    ``lift`` is ``(J - J_random) / J_random`` on the reward column.
    """

    rows: list
    budget: float
    evaluation: str
    reports: dict = field(default_factory=dict, repr=False)

    def row(self, name: str) -> ComparisonRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "evaluation": self.evaluation,
            "rows": [
                {"name": r.name, "cost": r.cost, "reward": r.reward, "lift": r.lift,
                 "lambda_star": r.lambda_star, "feasible": r.feasible}
                for r in self.rows
            ],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "cost", "reward", "lift"])
        for r in self.rows:
            w.writerow([r.name, repr(r.cost), repr(r.reward), repr(r.lift)])
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = ["| method | cost | reward | lift |", "|---|---:|---:|---:|"]
        for r in self.rows:
            lines.append(f"| {r.name} | {r.cost:.4f} | {r.reward:.4f} | {100 * r.lift:+.2f}% |")
        return "\n".join(lines) + "\n"


def relative_lift(j: float, j_random: float) -> float:
    if j_random == 0:
        raise ZeroDivisionError("random reward is 0; lift undefined")
    return (j - j_random) / j_random


def compare_strategies(
    spec: Optional[MdpSpec],
    split: DatasetSplit,
    model,
    budget: Optional[float] = None,
    delta: Optional[float] = None,
    plan_cfg: PlanConfig = PlanConfig(rho=0.05),
    estimator: str = "dr",
    weight_cap: float = 100.0,
) -> Comparison:
    """Random vs constrained bandit vs constrained MDP at one budget.

    Parameters
    ----------
    spec : MdpSpec or None
        Ground truth. When given, the random row and the final values of
        both constrained policies are computed exactly; otherwise the random
        row is the logged return and the others use ``estimator``.
    split, model
        Validation split for the search and the fitted world model.
    budget : float, optional
        Defaults to the random policy's cost.
    delta : float, optional
        Termination band of both searches; defaults to ``0.002 * budget``.
    plan_cfg : PlanConfig
        Temperature and tie-break; the CMDP row plans over the data horizon
        and the bandit row over one step.
    """
    val = split.val
    if spec is not None:
        j_rand, c_rand = exact_value(spec, uniform_probs(spec.n_states, spec.n_actions))
        evaluation = "exact"
    else:
        j_rand = float(val.episode_returns("reward").mean())
        c_rand = float(val.episode_returns("cost").mean())
        evaluation = estimator
    budget = c_rand if budget is None else float(budget)
    delta = 0.002 * budget if delta is None else delta

    common = dict(estimator=estimator, spec=spec, weight_cap=weight_cap)
    horizon = spec.horizon if spec is not None else val.horizon
    reports = {
        ROW_NAMES[1]: constrained_bandit_baseline(split, model, budget, delta, plan_cfg=plan_cfg, **common),
        ROW_NAMES[2]: bisection_solve(
            split, model, budget, delta, plan_cfg=replace(plan_cfg, horizon_h=horizon), **common
        ),
    }
    rows = [ComparisonRow(ROW_NAMES[0], c_rand, j_rand, 0.0)]
    for name in ROW_NAMES[1:]:
        rep = reports[name]
        if spec is not None:
            j, jc = exact_value(spec, rep.policy)
        else:
            est = evaluate_policy(rep.policy, estimator, val=val, model=model, weight_cap=weight_cap)
            j, jc = est.j_reward, est.j_cost
        rows.append(ComparisonRow(name, jc, j, relative_lift(j, j_rand), rep.lambda_star, jc <= budget))
    return Comparison(rows, budget, evaluation, reports)


def parse_lambda_grid(text: str) -> np.ndarray:
    """``"a:b:n"`` -> ``n`` evenly spaced values from ``a`` to ``b``."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"lambda grid must look like 'a:b:n', got {text!r}")
    try:
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise ValueError(f"bad lambda grid {text!r}: {exc}") from None
    if n < 1 or a < 0 or b < a or not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError(f"lambda grid needs 0 <= a <= b and n >= 1, got {text!r}")
    return np.linspace(a, b, n)


def monotonicity_violations(points: Sequence[SweepPoint], n_se: float = 3.0) -> list:
    """Adjacent pairs whose cost rises by more than ``n_se`` standard errors.

    With ``n_se == 0`` and exact points this is the strict check.
    """
    bad = []
    for p, q in zip(points, points[1:]):
        band = n_se * math.hypot(p.stderr_cost, q.stderr_cost)
        if q.j_cost > p.j_cost + band:
            bad.append((p.lam, q.lam, p.j_cost, q.j_cost))
    return bad


def sweep_table(points: Sequence[SweepPoint], label: str = "") -> list:
    return [
        {"label": label, "lambda": p.lam, "j_reward": p.j_reward, "j_cost": p.j_cost,
         "stderr_reward": p.stderr_reward, "stderr_cost": p.stderr_cost}
        for p in points
    ]

