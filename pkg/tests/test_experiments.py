import csv
import io

import numpy as np
import pytest

from dualalloc.dual_solver import LambdaBracket
from dualalloc.experiments import (
    ROW_NAMES,
    compare_strategies,
    constrained_bandit_baseline,
    monotonicity_violations,
    parse_lambda_grid,
    relative_lift,
)
from dualalloc.planner import PlanConfig, SweepPoint


def test_bandit_plans_one_step(toy):
    spec, d, m = toy
    rep = constrained_bandit_baseline(d, m, 3.0, bracket=LambdaBracket(0.0, 13 / 6),
                                      estimator="exact", spec=spec)
    rc = m.r_hat[0] - rep.lambda_star * m.c_hat[0]
    assert rep.policy.greedy_actions()[0] == int(np.argmax(rc))
    assert rep.feasible


def test_loose_budget_both_feasible(toy):
    spec, d, m = toy
    kw = dict(bracket=LambdaBracket(0.0, 13 / 6), estimator="exact", spec=spec)
    from dualalloc.dual_solver import bisection_solve

    bandit = constrained_bandit_baseline(d, m, 5.0, **kw)
    cmdp = bisection_solve(d, m, 5.0, **kw)
    assert bandit.feasible and cmdp.feasible
    assert bandit.lambda_star == cmdp.lambda_star == 0.0


def test_toy_comparison_random_row(toy_split):
    spec, split, m = toy_split
    table = compare_strategies(spec, split, m, budget=3.0)
    rand = table.row("Random")
    assert (rand.reward, rand.cost) == (pytest.approx(3.375, abs=1e-12), pytest.approx(3.0, abs=1e-12))
    assert [r.name for r in table.rows] == list(ROW_NAMES)


def test_lift_recomputes_from_rows(toy_split):
    spec, split, m = toy_split
    table = compare_strategies(spec, split, m)
    rows = list(csv.DictReader(io.StringIO(table.to_csv())))
    j_rand = float(rows[0]["reward"])
    for r in rows:
        assert abs(float(r["lift"]) - (float(r["reward"]) - j_rand) / j_rand) < 1e-9


def test_comparison_without_spec(toy_split):
    _, split, m = toy_split
    table = compare_strategies(None, split, m, estimator="dr")
    assert table.evaluation == "dr"
    assert table.row("Random").cost == pytest.approx(split.val.episode_returns("cost").mean())


def test_relative_lift():
    assert relative_lift(4.4, 4.0) == pytest.approx(0.1)
    with pytest.raises(ZeroDivisionError):
        relative_lift(1.0, 0.0)


def test_lambda_grid():
    np.testing.assert_allclose(parse_lambda_grid("0:2:5"), [0, 0.5, 1, 1.5, 2])
    for bad in ("0:2", "a:b:3", "2:1:3", "0:1:0", "-1:1:3"):
        with pytest.raises(ValueError):
            parse_lambda_grid(bad)


def test_monotonicity_violations():
    pts = [SweepPoint(0.0, 5, 4.0, 0, 0.1), SweepPoint(1.0, 4, 4.2, 0, 0.1), SweepPoint(2.0, 3, 4.6, 0, 0.0)]
    assert monotonicity_violations(pts, n_se=3.0) == [(1.0, 2.0, 4.2, 4.6)]
    assert len(monotonicity_violations(pts, n_se=0.0)) == 2
