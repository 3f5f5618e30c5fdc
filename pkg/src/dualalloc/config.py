"""Run configuration shared by every command-line subcommand.

A configuration is one JSON object. Missing keys take the defaults listed in
``FIELD_DOCS``; unknown keys and out-of-range numbers are rejected when the
document is parsed, and the error names the offending field.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .cpe import DEFAULT_WEIGHT_CAP
from .soft_q import TIE_BREAKS
from .synthetic import SyntheticConfig

ENVIRONMENTS = ("synthetic", "toy")
ESTIMATOR_TAGS = ("is", "snips", "dr", "exact")

FIELD_DOCS = {
    "environment": "'synthetic' (default) or 'toy' (3-state, 2-action fixture)",
    "synthetic": "SyntheticConfig fields for the synthetic environment; defaults as in SyntheticConfig",
    "toy_episodes": "episodes logged for the toy fixture (default 2000)",
    "val_fraction": "share of episodes held out for evaluation (default 0.5)",
    "split_seed": "seed of the train/validation split (default 0)",
    "smoothing": "add-alpha smoothing of the successor counts (default 0.1)",
    "budget": "cost budget b; null means the uniform policy's exact cost (default null)",
    "delta": "termination band of the solve search; null means 0.02*b (default null)",
    "report_delta": "termination band of the report searches; null means 0.002*b (default null)",
    "rho": "entropy temperature of the planner (default 0.05)",
    "gamma": "discount; null means the value stored with the data or model (default null)",
    "horizon_h": "planning depth; null means the data horizon (default null)",
    "estimator": "counterfactual estimator: is, snips, dr or exact (default 'dr')",
    "tie_break": "greedy tie rule: lowest_cost or lowest_action_id (default 'lowest_cost')",
    "weight_cap": "cap on every per-step importance ratio (default 100)",
    "lambdas": "sweep grid as 'a:b:n' (default '0:3:31')",
}


class ConfigError(ValueError):
    """A configuration field is unknown or out of range."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field {field_name!r}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class RunConfig:
    environment: str = "synthetic"
    synthetic: dict = field(default_factory=dict)
    toy_episodes: int = 2000
    val_fraction: float = 0.5
    split_seed: int = 0
    smoothing: float = 0.1
    budget: Optional[float] = None
    delta: Optional[float] = None
    report_delta: Optional[float] = None
    rho: float = 0.05
    gamma: Optional[float] = None
    horizon_h: Optional[int] = None
    estimator: str = "dr"
    tie_break: str = "lowest_cost"
    weight_cap: float = DEFAULT_WEIGHT_CAP
    lambdas: str = "0:3:31"

    def __post_init__(self):
        _check(self.environment in ENVIRONMENTS, "environment", f"must be one of {ENVIRONMENTS}")
        _check(isinstance(self.synthetic, dict), "synthetic", "must be an object")
        known = {f.name for f in fields(SyntheticConfig)}
        for key in self.synthetic:
            _check(key in known, f"synthetic.{key}", "unknown key")
        try:
            SyntheticConfig(**self.synthetic)
        except (TypeError, ValueError) as exc:
            raise ConfigError("synthetic", str(exc)) from None
        _check(_is_int(self.toy_episodes) and self.toy_episodes >= 2, "toy_episodes", "must be an integer >= 2")
        _check(_is_num(self.val_fraction) and 0 < self.val_fraction < 1, "val_fraction", "must be in (0, 1)")
        _check(_is_int(self.split_seed) and self.split_seed >= 0, "split_seed", "must be a non-negative integer")
        _check(_is_num(self.smoothing) and self.smoothing >= 0, "smoothing", "must be >= 0")
        for name in ("budget", "delta", "report_delta"):
            v = getattr(self, name)
            _check(v is None or (_is_num(v) and v > 0), name, "must be null or > 0")
        _check(_is_num(self.rho) and self.rho >= 0, "rho", "must be >= 0")
        _check(self.gamma is None or (_is_num(self.gamma) and 0 <= self.gamma <= 1), "gamma", "must be null or in [0, 1]")
        _check(self.horizon_h is None or (_is_int(self.horizon_h) and self.horizon_h >= 1), "horizon_h", "must be null or an integer >= 1")
        _check(self.estimator in ESTIMATOR_TAGS, "estimator", f"must be one of {ESTIMATOR_TAGS}")
        _check(self.tie_break in TIE_BREAKS, "tie_break", f"must be one of {TIE_BREAKS}")
        _check(_is_num(self.weight_cap) and self.weight_cap >= 1, "weight_cap", "must be >= 1")
        from .experiments import parse_lambda_grid

        try:
            parse_lambda_grid(self.lambdas)
        except (ValueError, AttributeError) as exc:
            raise ConfigError("lambdas", str(exc)) from None

    def synthetic_config(self) -> SyntheticConfig:
        return SyntheticConfig(**self.synthetic)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        names = {f.name for f in fields(cls)}
        for key in d:
            _check(key in names, key, "unknown key")
        return cls(**d)


def load_config(path) -> RunConfig:
    """Parse a JSON configuration file; ``None`` gives all defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"{path} is not valid JSON: {exc}") from None
    return RunConfig.from_dict(doc)


def _check(ok: bool, name: str, message: str):
    if not ok:
        raise ConfigError(name, message)


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)
