"""Command-line entry point: ``dualalloc <command> [options]``.

Commands
--------
gen     generate a logged dataset and its ground-truth spec
fit     fit the tabular world model on a training log
solve   bisection search for the budget multiplier
eval    counterfactual value of a saved policy
sweep   reward/cost curves over a grid of multipliers
report  strategy comparison table plus figures for a ``gen`` directory

Exit status is 0 on success, 1 on bad input (missing file, invalid config
or data) and 3 when ``solve`` ends with an infeasible policy. Set
``DUALALLOC_LOG_LEVEL`` (DEBUG, INFO, WARNING, ...) for log verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ESTIMATOR_TAGS, ConfigError, RunConfig, load_config
from .cpe import CPEError, evaluate_policy
from .data import DataError, Dataset, DatasetSplit, load_dataset, split_dataset, write_dataset
from .dual_solver import InfeasibleBudgetError, bisection_solve
from .experiments import compare_strategies, parse_lambda_grid, sweep_table
from .planner import PlanConfig, lambda_sweep
from .soft_q import Policy
from .synthetic import MdpSpec, gen_synthetic, toy_fixture
from .world_model import ModelError, WorldModel, fit_models, model_report

logger = logging.getLogger("dualalloc")

LOG_ENV = "DUALALLOC_LOG_LEVEL"
FIXED_CLOCK = "1970-01-01T00:00:00+00:00"
EXIT_INPUT = 1
EXIT_INFEASIBLE = 3


class CliError(Exception):
    pass


def _clean(obj):
    """Make a structure JSON-safe: numpy scalars to Python, non-finite to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dumps(obj))
    logger.info("wrote %s", path)
    return path


def _stamp(args) -> str:
    if args.fixed_clock:
        return FIXED_CLOCK
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _require(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _config(args, fallback_dir: Optional[Path] = None) -> RunConfig:
    if args.config is not None:
        return load_config(args.config)
    if fallback_dir is not None and (fallback_dir / "config.json").exists():
        return load_config(fallback_dir / "config.json")
    return RunConfig()


def _gamma(cfg: RunConfig, default: float = 1.0) -> float:
    return default if cfg.gamma is None else cfg.gamma


def _load_model(path) -> WorldModel:
    return WorldModel.load(_require(path, "model file"))


def _load_for_model(path, model: WorldModel, cfg: RunConfig) -> Dataset:
    return load_dataset(
        _require(path, "data file"), n_states=model.n_states, n_actions=model.n_actions,
        horizon=model.horizon, gamma=_gamma(cfg, model.gamma),
    )


def _plan_cfg(cfg: RunConfig, horizon: int) -> PlanConfig:
    return PlanConfig(
        horizon_h=cfg.horizon_h or horizon, rho=cfg.rho, gamma=cfg.gamma, tie_break=cfg.tie_break,
    )


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    if cfg.environment == "toy":
        spec, data = toy_fixture(n_episodes=cfg.toy_episodes, seed=cfg.split_seed)
        if cfg.budget is not None:
            spec = spec.with_budget(cfg.budget)
    else:
        spec, data = gen_synthetic(cfg.synthetic_config(), budget=cfg.budget)
    split = split_dataset(data, cfg.val_fraction, cfg.split_seed)
    files = {
        "spec": spec.save(out / "spec.json"),
        "data": write_dataset(data, out / "data.jsonl"),
        "train": write_dataset(split.train, out / "train.jsonl"),
        "val": write_dataset(split.val, out / "val.jsonl"),
        "config": _write_json(out / "config.json", cfg.to_dict()),
    }
    manifest = {
        "generated_at": _stamp(args),
        "environment": cfg.environment,
        "n_episodes": data.n_episodes,
        "n_train": split.train.n_episodes,
        "n_val": split.val.n_episodes,
        "budget": spec.budget,
        "files": {k: v.name for k, v in files.items()},
    }
    _write_json(out / "manifest.json", manifest)
    sys.stdout.write(_dumps(manifest))
    return 0


def cmd_fit(args) -> int:
    cfg = _config(args)
    train = load_dataset(_require(args.data, "data file"), gamma=_gamma(cfg))
    model = fit_models(train, smoothing=cfg.smoothing)
    model.save(args.out)
    held = train
    if args.val is not None:
        held = _load_for_model(args.val, model, cfg)
    rep = model_report(model, held)
    doc = {
        "generated_at": _stamp(args),
        "model": str(args.out),
        "fingerprint": model.fingerprint(),
        "evaluated_on": str(args.val if args.val is not None else args.data),
        **rep.to_dict(),
    }
    sys.stdout.write(_dumps(doc))
    return 0


def cmd_solve(args) -> int:
    model = _load_model(args.model)
    cfg = _config(args)
    val = _load_for_model(args.data, model, cfg)
    spec = MdpSpec.load(_require(args.spec, "spec file")) if args.spec else None
    estimator = args.estimator or cfg.estimator
    if estimator == "exact" and spec is None:
        raise CliError("estimator 'exact' needs --spec")
    budget = args.budget if args.budget is not None else cfg.budget
    if budget is None:
        if spec is None:
            raise CliError("no budget: pass --budget, set 'budget' in the config or give --spec")
        budget = spec.budget
    delta = args.delta if args.delta is not None else cfg.delta
    try:
        rep = bisection_solve(
            val, model, budget, delta=delta, plan_cfg=_plan_cfg(cfg, model.horizon),
            estimator=estimator, spec=spec, weight_cap=cfg.weight_cap,
        )
    except InfeasibleBudgetError as exc:
        logger.error("%s", exc)
        sys.stdout.write(_dumps({"generated_at": _stamp(args), "feasible": False, "error": str(exc)}))
        return EXIT_INFEASIBLE
    out_dir = Path(args.model).parent
    policy_path = Path(args.policy_out) if args.policy_out else out_dir / "policy.json"
    report_path = Path(args.out) if args.out else out_dir / "solve_report.json"
    logger.info("lambda*=%.6g after %d evaluations, J_C=%.6g, b=%.6g",
                rep.lambda_star, rep.n_evaluations, rep.estimate.j_cost, budget)
    rep.policy.save(policy_path)
    doc = {"generated_at": _stamp(args), "policy_file": str(policy_path), **rep.to_dict(include_policy=False)}
    _write_json(report_path, {**doc, "policy": rep.policy.to_dict()})
    sys.stdout.write(_dumps(doc))
    if not rep.feasible:
        logger.error("returned policy is infeasible: J_C=%.6g > b=%.6g", rep.estimate.j_cost, budget)
        return EXIT_INFEASIBLE
    return 0


def cmd_eval(args) -> int:
    model = _load_model(args.model)
    cfg = _config(args)
    val = _load_for_model(args.data, model, cfg)
    policy = Policy.load(_require(args.policy, "policy file"))
    spec = MdpSpec.load(_require(args.spec, "spec file")) if args.spec else None
    tag = args.estimator or cfg.estimator
    est = evaluate_policy(policy, tag, val=val, model=model, spec=spec, weight_cap=cfg.weight_cap)
    doc = {
        "estimator": tag,
        "j_reward": est.j_reward,
        "j_cost": est.j_cost,
        "stderr_reward": est.stderr_reward,
        "stderr_cost": est.stderr_cost,
        "ess": est.ess,
        "caps_hit": est.caps_hit,
    }
    sys.stdout.write(_dumps(doc))
    return 0


def _workspace(directory: Path, cfg: RunConfig):
    """Spec, split and model of a ``gen`` directory; fits the model if absent."""
    spec_path = directory / "spec.json"
    spec = MdpSpec.load(spec_path) if spec_path.exists() else None
    gamma = _gamma(cfg, spec.gamma if spec is not None else 1.0)
    model_path = directory / "model.json"
    if model_path.exists():
        model = WorldModel.load(model_path)
    else:
        train = load_dataset(_require(directory / "train.jsonl", "training data"), gamma=gamma)
        model = fit_models(train, smoothing=cfg.smoothing)
        model.save(model_path)
    dims = dict(n_states=model.n_states, n_actions=model.n_actions, horizon=model.horizon, gamma=gamma)
    train = load_dataset(_require(directory / "train.jsonl", "training data"), **dims)
    val = load_dataset(_require(directory / "val.jsonl", "validation data"), **dims)
    return spec, DatasetSplit(train=train, val=val, seed=cfg.split_seed), model


def _sweep_rows(model, val, spec, cfg: RunConfig, lambdas, estimator: str) -> tuple[list, dict]:
    target = spec if estimator == "exact" else val
    curves = {}
    for label, depth in (("CMDP", cfg.horizon_h or model.horizon), ("bandit", 1)):
        pcfg = replace(_plan_cfg(cfg, model.horizon), horizon_h=depth)
        curves[label] = lambda_sweep(model, lambdas, pcfg, target, estimator=estimator, weight_cap=cfg.weight_cap)
    rows = []
    for label, pts in curves.items():
        rows += sweep_table(pts, label)
    return rows, curves


def _csv(rows: list, columns: list) -> str:
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in columns))
    return "\n".join(lines) + "\n"


SWEEP_COLUMNS = ["label", "lambda", "j_reward", "j_cost", "stderr_reward", "stderr_cost"]


def cmd_sweep(args) -> int:
    directory = Path(args.dir) if args.dir else None
    cfg = _config(args, directory)
    lambdas = parse_lambda_grid(args.lambdas or cfg.lambdas)
    estimator = args.estimator or cfg.estimator
    if directory is not None:
        spec, split, model = _workspace(directory, cfg)
        val = split.val
    elif args.data and args.model:
        model = _load_model(args.model)
        val = _load_for_model(args.data, model, cfg)
        spec = MdpSpec.load(_require(args.spec, "spec file")) if args.spec else None
    else:
        raise CliError("sweep needs --dir, or both --data and --model")
    if estimator == "exact" and spec is None:
        raise CliError("estimator 'exact' needs a spec (--spec or spec.json in --dir)")
    rows, curves = _sweep_rows(model, val, spec, cfg, lambdas, estimator)
    text = _csv(rows, SWEEP_COLUMNS)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        from .plotting import plot_sweep

        budget = spec.budget if spec is not None else float(val.episode_returns("cost").mean())
        plot_sweep(curves, budget, out.with_suffix(".png"))
    sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    from .plotting import plot_model_accuracy, plot_sweep

    directory = _require(args.dir, "report directory")
    cfg = _config(args, directory)
    spec, split, model = _workspace(directory, cfg)
    out = directory / "report"
    horizon = spec.horizon if spec is not None else split.val.horizon
    pcfg = _plan_cfg(cfg, horizon)
    table = compare_strategies(
        spec, split, model, budget=cfg.budget, delta=cfg.report_delta, plan_cfg=pcfg,
        estimator=cfg.estimator, weight_cap=cfg.weight_cap,
    )
    csv_text = table.to_csv()
    (out).mkdir(parents=True, exist_ok=True)
    (out / "comparison.csv").write_text(csv_text)
    (out / "comparison.md").write_text(table.to_markdown())
    _write_json(out / "comparison.json", {"generated_at": _stamp(args), **table.to_dict()})

    sweep_est = "exact" if spec is not None else cfg.estimator
    rows, curves = _sweep_rows(model, split.val, spec, cfg, parse_lambda_grid(cfg.lambdas), sweep_est)
    (out / "sweep.csv").write_text(_csv(rows, SWEEP_COLUMNS))
    plot_sweep(curves, table.budget, out / "fig_sweep.png")
    plot_model_accuracy(model, split.val, out / "fig_model_accuracy.png")
    _write_json(out / "model_report.json", model_report(model, split.val).to_dict())
    sys.stdout.write(csv_text)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualalloc", description="Budget-constrained sequential allocation.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON file (unknown keys are rejected)")
    common.add_argument("--fixed-clock", action="store_true", help="stamp outputs with a fixed time")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate logged data")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", parents=[common], help="fit the world model")
    f.add_argument("--data", required=True, help="training log (JSONL or CSV)")
    f.add_argument("--out", required=True, help="model file to write")
    f.add_argument("--val", help="held-out log for the accuracy report")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("solve", parents=[common], help="search the budget multiplier")
    s.add_argument("--data", required=True, help="validation log")
    s.add_argument("--model", required=True, help="fitted model file")
    s.add_argument("--budget", type=float, help="cost budget b")
    s.add_argument("--delta", type=float, help="termination band (default 0.02*b)")
    s.add_argument("--estimator", choices=ESTIMATOR_TAGS)
    s.add_argument("--spec", help="ground-truth spec (needed for 'exact')")
    s.add_argument("--out", help="report file (default: solve_report.json next to the model)")
    s.add_argument("--policy-out", help="policy file (default: policy.json next to the model)")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("eval", parents=[common], help="evaluate a saved policy")
    e.add_argument("--data", required=True, help="validation log")
    e.add_argument("--policy", required=True, help="policy file")
    e.add_argument("--model", required=True, help="fitted model file")
    e.add_argument("--estimator", choices=ESTIMATOR_TAGS)
    e.add_argument("--spec", help="ground-truth spec (needed for 'exact')")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", parents=[common], help="cost/reward curves over a multiplier grid")
    w.add_argument("--lambdas", help="grid 'a:b:n'")
    w.add_argument("--dir", help="directory written by gen")
    w.add_argument("--data", help="validation log")
    w.add_argument("--model", help="fitted model file")
    w.add_argument("--spec", help="ground-truth spec")
    w.add_argument("--estimator", choices=ESTIMATOR_TAGS)
    w.add_argument("--out", help="CSV file; a .png figure is written beside it")
    w.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", parents=[common], help="comparison table and figures")
    r.add_argument("--dir", required=True, help="directory written by gen")
    r.set_defaults(func=cmd_report)
    return p


def _setup_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ConfigError, DataError, ModelError, CPEError, CliError, ValueError) as exc:
        sys.stderr.write(f"dualalloc {args.command}: error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
