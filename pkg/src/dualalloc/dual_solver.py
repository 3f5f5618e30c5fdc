"""Lagrangian dual search over the budget multiplier.

The cost of the Lagrangian-optimal policy is non-increasing in the
multiplier, so the multiplier that meets the budget can be bracketed and
bisected. Each probe plans a policy at the midpoint and evaluates its cost
counterfactually on the validation split; the sign of ``J_C - b`` picks the
half to keep. A projected subgradient (dual ascent) loop is included as the
slow baseline.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .cpe import DEFAULT_WEIGHT_CAP, evaluate_policy
from .data import DataError, Dataset, DatasetSplit
from .estimate import EvalEstimate
from .planner import PlanConfig, plan
from .soft_q import Policy

logger = logging.getLogger(__name__)


class InfeasibleBudgetError(RuntimeError):
    """Even the upper end of the bracket overspends the budget."""


@dataclass(frozen=True)
class LambdaBracket:
    lambda_l: float
    lambda_u: float

    def __post_init__(self):
        if self.lambda_l < 0:
            raise ValueError(f"lambda_l must be >= 0, got {self.lambda_l}")
        if not self.lambda_u > self.lambda_l:
            raise ValueError(
                f"lambda_u ({self.lambda_u}) must exceed lambda_l ({self.lambda_l})"
            )

    @property
    def width(self) -> float:
        return self.lambda_u - self.lambda_l


@dataclass(frozen=True)
class IterationRecord:
    lam: float
    j_reward: float
    j_cost: float
    stderr_cost: float
    direction: str
    dual_value: float
    kind: str = "midpoint"

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "j_reward": self.j_reward,
            "j_cost": self.j_cost,
            "stderr_cost": self.stderr_cost,
            "direction": self.direction,
            "dual_value": self.dual_value,
            "kind": self.kind,
        }


@dataclass
class SolverReport:
    iterations: list
    lambda_star: float
    policy: Policy
    estimate: EvalEstimate
    dual_value: float
    feasible: bool
    budget: float
    tolerance: float
    converged: bool = False
    duality_gap_boundary: bool = False
    constraint_inactive: bool = False
    monotonicity_warnings: int = 0
    method: str = "bisection"
    bracket: Optional[LambdaBracket] = None
    flags: list = field(default_factory=list)

    @property
    def n_evaluations(self) -> int:
        return len(self.iterations)

    def to_dict(self, include_policy: bool = True) -> dict:
        out = {
            "method": self.method,
            "lambda_star": self.lambda_star,
            "dual_value": self.dual_value,
            "j_reward": self.estimate.j_reward,
            "j_cost": self.estimate.j_cost,
            "stderr_reward": self.estimate.stderr_reward,
            "stderr_cost": self.estimate.stderr_cost,
            "estimator": self.estimate.estimator,
            "feasible": self.feasible,
            "budget": self.budget,
            "tolerance": self.tolerance,
            "converged": self.converged,
            "duality_gap_boundary": self.duality_gap_boundary,
            "constraint_inactive": self.constraint_inactive,
            "monotonicity_warnings": self.monotonicity_warnings,
            "n_evaluations": self.n_evaluations,
            "bracket": None if self.bracket is None else [self.bracket.lambda_l, self.bracket.lambda_u],
            "flags": list(self.flags),
            "iterations": [it.to_dict() for it in self.iterations],
        }
        if include_policy:
            out["policy"] = self.policy.to_dict()
        return out


def dual_value(policy, lam: float, j: float, j_c: float, b: float) -> float:
    """Lagrangian ``-J + lam * (J_C - b)`` of an evaluated policy."""
    return -j + lam * (j_c - b)


def action_means(val: Dataset, weighting: str = "cell"):
    """Per-action mean reward and cost of the logged data.

    ``"cell"`` (default) first averages each (state, action) cell and then
    weights the visited cells of an action equally, so the bound does not
    depend on how often the logging policy reached each state.
    ``"transition"`` averages over logged transitions. Returns ``(actions, mean_reward, mean_cost)``.
    """
    if weighting == "transition":
        n = np.bincount(val.action, minlength=val.n_actions)
        r = np.bincount(val.action, weights=val.reward, minlength=val.n_actions)
        c = np.bincount(val.action, weights=val.cost, minlength=val.n_actions)
        present = np.flatnonzero(n)
        return present, r[present] / n[present], c[present] / n[present]
    if weighting == "cell":
        S, A = val.n_states, val.n_actions
        n = np.zeros((S, A))
        r = np.zeros((S, A))
        c = np.zeros((S, A))
        np.add.at(n, (val.state, val.action), 1.0)
        np.add.at(r, (val.state, val.action), val.reward)
        np.add.at(c, (val.state, val.action), val.cost)
        seen = n > 0
        safe = np.maximum(n, 1.0)
        cells = seen.sum(axis=0)
        present = np.flatnonzero(cells)
        mr = np.where(seen, r / safe, 0.0).sum(axis=0)[present] / cells[present]
        mc = np.where(seen, c / safe, 0.0).sum(axis=0)[present] / cells[present]
        return present, mr, mc
    raise ValueError(f"unknown weighting {weighting!r}")


def lambda_upper_bound(val: Dataset, margin: float = 1.0, weighting: str = "cell") -> float:
    """Multiplier above which the cheapest action wins on average.

    Actions are ordered by mean cost; with ``(r_0, c_0)`` the cheapest
    action, the bound is ``max_i (r_0 - r_i) / (c_0 - c_i) + margin``.
    """
    actions, r, c = action_means(val, weighting)
    if len(actions) < 2:
        raise DataError("lambda upper bound needs at least 2 distinct logged actions")
    order = np.argsort(c, kind="stable")
    r, c = r[order], c[order]
    if np.any(np.diff(c) <= 0):
        raise DataError("degenerate cost ordering: two actions share the same mean cost")
    if np.any(np.diff(r) <= 0):
        logger.warning("mean rewards do not increase with mean cost; bound may be loose")
    ratios = (r[0] - r[1:]) / (c[0] - c[1:])
    return float(max(ratios.max(), 0.0) + margin)


def _validation(split) -> Optional[Dataset]:
    # a bare Dataset is taken as the validation half
    if split is None or isinstance(split, Dataset):
        return split
    return split.val


def _default_learner(model, plan_cfg: PlanConfig) -> Callable[[float], Policy]:
    return lambda lam: plan(model, plan_cfg.with_lambda(lam))


class _Probe:
    """Plans and evaluates policies, tracking the monotone order of costs."""

    def __init__(self, learner, estimator, split, model, spec, weight_cap, budget):
        self.learner = learner
        self.estimator = estimator
        self.split = split
        self.model = model
        self.spec = spec
        self.weight_cap = weight_cap
        self.budget = budget
        self.history: list[tuple[float, float, float]] = []
        self.warnings = 0

    def __call__(self, lam: float):
        policy = self.learner(lam)
        est = evaluate_policy(
            policy, self.estimator,
            val=_validation(self.split),
            model=self.model, spec=self.spec, weight_cap=self.weight_cap,
        )
        logger.debug("lambda=%.6g J=%.6g J_C=%.6g", lam, est.j_reward, est.j_cost)
        self._check_order(lam, est)
        return policy, est

    def _check_order(self, lam, est):
        for lam2, jc2, se2 in self.history:
            # rounding slack so exact evaluation does not flag float noise
            band = 3.0 * math.hypot(se2, est.stderr_cost) + 1e-9 * (1.0 + abs(jc2))
            if (lam2 < lam and est.j_cost > jc2 + band) or (lam2 > lam and est.j_cost < jc2 - band):
                self.warnings += 1
                logger.warning(
                    "cost at lambda=%.6g (%.6g) contradicts the monotone order "
                    "against lambda=%.6g (%.6g)", lam, est.j_cost, lam2, jc2,
                )
                break
        self.history.append((lam, est.j_cost, est.stderr_cost))


def bisection_solve(
    split: Optional[DatasetSplit],
    model,
    budget: float,
    delta: Optional[float] = None,
    bracket: Optional[LambdaBracket] = None,
    plan_cfg: PlanConfig = PlanConfig(),
    estimator: str = "dr",
    lambda_resolution: Optional[float] = None,
    spec=None,
    weight_cap: float = DEFAULT_WEIGHT_CAP,
    learner: Optional[Callable[[float], Policy]] = None,
) -> SolverReport:
    """Bisection search for the budget multiplier.

    Parameters
    ----------
    split : DatasetSplit, Dataset or None
        ``split.val`` (or the Dataset itself) is used for counterfactual evaluation and for the
        default bracket. May be None with ``estimator="exact"`` and an
        explicit bracket.
    model : WorldModel or MdpSpec
        Fitted on ``split.train``; planned on and used as the DR value model.
    budget : float
        Budget ``b`` on the expected discounted cost.
    delta : float, optional
        Termination band; defaults to ``0.02 * budget``.
    bracket : LambdaBracket, optional
        Defaults to ``[0, lambda_upper_bound(split.val)]``.
    lambda_resolution : float, optional
        Minimum bracket width; defaults to ``1e-4`` of the initial width.
    learner : callable, optional
        ``lam -> Policy``; defaults to planning on ``model`` with ``plan_cfg``.

    Returns
    -------
    SolverReport
        Every evaluated multiplier is recorded. The lower end is probed first:
        if it already meets the budget the constraint is inactive and it is
        returned. The upper end is only probed when no midpoint was feasible,
        and an infeasible upper end raises :class:`InfeasibleBudgetError`.
        When the bracket shrinks below the resolution without a probe inside
        the band, the upper (feasible) side is returned and flagged as a
        duality-gap boundary.
    """
    if not budget > 0:
        raise ValueError("budget must be > 0")
    delta = 0.02 * budget if delta is None else delta
    if not delta > 0:
        raise ValueError("delta must be > 0")
    if bracket is None:
        if split is None:
            raise ValueError("a bracket is required when no validation split is given")
        bracket = LambdaBracket(0.0, lambda_upper_bound(_validation(split)))
    resolution = 1e-4 * bracket.width if lambda_resolution is None else lambda_resolution
    if not resolution > 0:
        raise ValueError("lambda_resolution must be > 0")
    learner = learner or _default_learner(model, plan_cfg)
    probe = _Probe(learner, estimator, split, model, spec, weight_cap, budget)
    iterations = []

    def record(lam, est, direction, kind):
        g = dual_value(None, lam, est.j_reward, est.j_cost, budget)
        iterations.append(IterationRecord(lam, est.j_reward, est.j_cost, est.stderr_cost, direction, g, kind))

    def report(lam, policy, est, **kw):
        return SolverReport(
            iterations=iterations, lambda_star=lam, policy=policy, estimate=est,
            dual_value=dual_value(policy, lam, est.j_reward, est.j_cost, budget),
            feasible=est.j_cost <= budget, budget=budget, tolerance=delta,
            monotonicity_warnings=probe.warnings, bracket=bracket, **kw,
        )

    lo, hi = bracket.lambda_l, bracket.lambda_u
    policy, est = probe(lo)
    if est.j_cost <= budget:
        record(lo, est, "stop", "lower_bound")
        logger.warning(
            "Assumption 2 violated: constraint inactive (J_C=%.6g <= b=%.6g at lambda=%.6g)",
            est.j_cost, budget, lo,
        )
        return report(lo, policy, est, converged=True, constraint_inactive=True,
                      flags=["constraint_inactive"])
    record(lo, est, "raise_lambda", "lower_bound")

    upper = None  # (policy, estimate) at the current upper end, once probed
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        policy, est = probe(mid)
        if est.j_cost <= budget and abs(est.j_cost - budget) < delta:
            record(mid, est, "stop", "midpoint")
            return report(mid, policy, est, converged=True)
        if est.j_cost < budget:
            hi = mid
            upper = (policy, est)
            record(mid, est, "lower_lambda", "midpoint")
        else:
            lo = mid
            record(mid, est, "raise_lambda", "midpoint")

    if upper is None:
        policy, est = probe(hi)
        if est.j_cost > budget:
            record(hi, est, "abort", "upper_bound")
            raise InfeasibleBudgetError(
                f"Assumption 1 violated: the policy at lambda_u={hi:.6g} costs "
                f"{est.j_cost:.6g} > b={budget:.6g}; no strictly feasible policy in the bracket"
            )
        record(hi, est, "stop", "upper_bound")
        upper = (policy, est)
        if abs(est.j_cost - budget) < delta:
            return report(hi, policy, est, converged=True)
    policy, est = upper
    logger.info("bisection stopped at the duality-gap boundary, lambda=%.6g", hi)
    return report(hi, policy, est, converged=False, duality_gap_boundary=True,
                  flags=["duality_gap_boundary"])


def dual_ascent_solve(
    split: Optional[DatasetSplit],
    model,
    budget: float,
    step_size: float,
    max_iters: int = 200,
    plan_cfg: PlanConfig = PlanConfig(),
    delta: Optional[float] = None,
    estimator: str = "dr",
    spec=None,
    lambda0: float = 0.0,
    weight_cap: float = DEFAULT_WEIGHT_CAP,
    learner: Optional[Callable[[float], Policy]] = None,
) -> SolverReport:
    """Projected subgradient ascent ``lam <- max(0, lam + step * (J_C - b))``.

    Stops once a probe is feasible and within ``delta`` of the budget, or is
    feasible at ``lam == 0`` (inactive constraint). The last probe is
    returned either way; ``converged`` tells which.
    """
    if step_size < 0:
        raise ValueError("step_size must be >= 0")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    delta = 0.02 * budget if delta is None else delta
    learner = learner or _default_learner(model, plan_cfg)
    probe = _Probe(learner, estimator, split, model, spec, weight_cap, budget)
    iterations = []
    lam = float(lambda0)
    policy = est = None
    converged = inactive = False
    for _ in range(max_iters):
        policy, est = probe(lam)
        g = dual_value(policy, lam, est.j_reward, est.j_cost, budget)
        if est.j_cost <= budget and (abs(est.j_cost - budget) < delta or lam == 0.0):
            iterations.append(IterationRecord(lam, est.j_reward, est.j_cost, est.stderr_cost, "stop", g, "ascent"))
            converged = True
            inactive = lam == 0.0 and abs(est.j_cost - budget) >= delta
            break
        new = max(0.0, lam + step_size * (est.j_cost - budget))
        direction = "raise_lambda" if new > lam else "lower_lambda" if new < lam else "hold"
        iterations.append(IterationRecord(lam, est.j_reward, est.j_cost, est.stderr_cost, direction, g, "ascent"))
        lam_final = lam
        lam = new
    else:
        lam = lam_final
    if not converged:
        logger.warning("dual ascent did not converge in %d iterations", max_iters)
    return SolverReport(
        iterations=iterations, lambda_star=lam, policy=policy, estimate=est,
        dual_value=dual_value(policy, lam, est.j_reward, est.j_cost, budget),
        feasible=est.j_cost <= budget, budget=budget, tolerance=delta,
        converged=converged, constraint_inactive=inactive,
        monotonicity_warnings=probe.warnings, method="dual_ascent",
        flags=[] if converged else ["not_converged"],
    )
