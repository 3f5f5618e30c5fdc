"""Synthetic environments with known dynamics.

Two generators live here: the two-step sequential contextual bandit used for
the experiments (``gen_synthetic``) and a tiny deterministic 3-state,
2-action instance (``toy_fixture``) whose values can be enumerated by hand.
Both return the ground-truth :class:`MdpSpec` together with a uniformly
logged :class:`~dualalloc.data.Dataset`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import Dataset
from .estimate import EvalEstimate


@dataclass(frozen=True)
class SyntheticConfig:
    n_actions: int = 4
    # concave row 0: a myopic allocator gains over uniform at equal cost
    base_rewards: tuple = (1.0, 2.0, 2.5, 2.75)
    beta_r: float = 0.5
    beta_c: float = 0.4
    reward_noise_std: float = 0.3
    cost_noise_std: float = 0.1
    n_episodes: int = 50_000
    seed: int = 0
    base_costs: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "base_rewards", tuple(float(x) for x in self.base_rewards))
        if self.base_costs is not None:
            object.__setattr__(self, "base_costs", tuple(float(x) for x in self.base_costs))
        if self.n_actions < 2:
            raise ValueError("n_actions must be >= 2")
        if len(self.base_rewards) != self.n_actions:
            raise ValueError(
                f"base_rewards must have n_actions={self.n_actions} entries, "
                f"got {len(self.base_rewards)}"
            )
        if self.base_costs is not None and len(self.base_costs) != self.n_actions:
            raise ValueError("base_costs must have n_actions entries")
        if np.any(np.diff(self.base_rewards) <= 0):
            raise ValueError("base_rewards must be strictly ascending")
        if self.base_costs is not None and np.any(np.diff(self.base_costs) <= 0):
            raise ValueError("base_costs must be strictly ascending")
        if not (self.beta_r > 0 and self.beta_c > 0):
            raise ValueError("beta_r and beta_c must be positive")
        if self.reward_noise_std < 0 or self.cost_noise_std < 0:
            raise ValueError("noise std must be non-negative")
        if self.n_episodes < 1:
            raise ValueError("n_episodes must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(eq=False)
class MdpSpec:
    """Finite CMDP with known mean tables.

    ``transition[s, a]`` is the sub-stochastic successor distribution; the
    missing mass ``terminal[s, a]`` is the probability the episode ends after
    taking ``a`` in ``s``. Episodes are also cut after ``horizon`` steps.
    """

    n_states: int
    n_actions: int
    horizon: int
    gamma: float
    mean_reward: np.ndarray
    mean_cost: np.ndarray
    transition: np.ndarray
    initial_state_dist: np.ndarray
    budget: float
    terminal: np.ndarray = field(default=None)

    def __post_init__(self):
        S, A = self.n_states, self.n_actions
        self.mean_reward = np.asarray(self.mean_reward, dtype=float).reshape(S, A)
        self.mean_cost = np.asarray(self.mean_cost, dtype=float).reshape(S, A)
        self.transition = np.asarray(self.transition, dtype=float).reshape(S, A, S)
        if self.terminal is None:
            self.terminal = np.zeros((S, A))
        self.terminal = np.asarray(self.terminal, dtype=float).reshape(S, A)
        self.initial_state_dist = np.asarray(self.initial_state_dist, dtype=float).reshape(S)
        row = self.transition.sum(axis=2) + self.terminal
        if np.any(np.abs(row - 1.0) > 1e-12):
            raise ValueError("transition rows plus terminal probability must sum to 1")
        if np.any(self.transition < 0) or np.any(self.terminal < 0):
            raise ValueError("negative transition probability")
        if abs(self.initial_state_dist.sum() - 1.0) > 1e-12:
            raise ValueError("initial_state_dist must sum to 1")
        if not self.budget > 0:
            raise ValueError("budget must be > 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0,1]")

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "horizon": self.horizon,
            "gamma": self.gamma,
            "budget": self.budget,
            "mean_reward": self.mean_reward.tolist(),
            "mean_cost": self.mean_cost.tolist(),
            "transition": self.transition.tolist(),
            "terminal": self.terminal.tolist(),
            "initial_state_dist": self.initial_state_dist.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MdpSpec":
        return cls(**{k: d[k] for k in (
            "n_states", "n_actions", "horizon", "gamma", "mean_reward", "mean_cost",
            "transition", "initial_state_dist", "budget", "terminal",
        )})

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "MdpSpec":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"spec file not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))

    def tables(self):
        return self.mean_reward, self.mean_cost, self.transition

    def with_budget(self, budget: float) -> "MdpSpec":
        d = self.to_dict()
        d["budget"] = budget
        return MdpSpec.from_dict(d)


def _base_value(base: Sequence[float], j: int, slope: float) -> float:
    # indices past the given base vector follow the same recurrence from r[0,0]
    if j < len(base):
        return base[j]
    return base[-1] + (j - len(base) + 1) * slope


def mean_tables(cfg: SyntheticConfig) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free reward and cost tables of the two-step environment.

    Row 0 of the reward table is ``base_rewards``. Row 0 of the cost table is
    ``base_costs`` when given, else ``r[0, 0] + i * beta_c``. Every later
    state follows ``r[s, i] = r[0, s] + (i - s) * beta_r`` and
    ``c[s, i] = c0[s] + (i - s) * beta_c`` with ``c0`` the reward base unless
    ``base_costs`` overrides it. Base entries past the last action are
    extended linearly with the matching slope.
    """
    n = cfg.n_actions
    S = n + 1
    r = np.empty((S, n))
    c = np.empty((S, n))
    r[0] = cfg.base_rewards
    if cfg.base_costs is None:
        c[0] = cfg.base_rewards[0] + np.arange(n) * cfg.beta_c
    else:
        c[0] = cfg.base_costs
    for s in range(1, S):
        r0 = _base_value(cfg.base_rewards, s, cfg.beta_r)
        if cfg.base_costs is None:
            c0 = r0
        else:
            c0 = _base_value(cfg.base_costs, s, cfg.beta_c)
        for i in range(n):
            r[s, i] = r0 + (i - s) * cfg.beta_r
            c[s, i] = c0 + (i - s) * cfg.beta_c
    return r, c


def two_step_spec(mean_reward, mean_cost, budget: float = 1.0) -> MdpSpec:
    """Layered two-step MDP: start in state 0, action ``i`` leads to ``i+1``."""
    mean_reward = np.asarray(mean_reward, dtype=float)
    S, n = mean_reward.shape
    transition = np.zeros((S, n, S))
    terminal = np.ones((S, n))
    for i in range(n):
        transition[0, i, i + 1] = 1.0
        terminal[0, i] = 0.0
    init = np.zeros(S)
    init[0] = 1.0
    return MdpSpec(
        n_states=S, n_actions=n, horizon=2, gamma=1.0,
        mean_reward=mean_reward, mean_cost=mean_cost,
        transition=transition, initial_state_dist=init,
        budget=budget, terminal=terminal,
    )


def uniform_probs(n_states: int, n_actions: int) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)


def _policy_probs(policy) -> np.ndarray:
    probs = np.asarray(getattr(policy, "probs", policy), dtype=float)
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-9) or np.any(probs < 0):
        raise ValueError("policy rows must be normalized probability vectors")
    return probs


def sample_dataset(
    spec: MdpSpec,
    behavior_probs: np.ndarray,
    n_episodes: int,
    rng: np.random.Generator,
    reward_noise_std: float = 0.0,
    cost_noise_std: float = 0.0,
) -> Dataset:
    """Roll out ``behavior_probs`` in ``spec`` and log every step."""
    S, A, H = spec.n_states, spec.n_actions, spec.horizon
    behavior_probs = _policy_probs(behavior_probs)
    cdf_pi = np.cumsum(behavior_probs, axis=1)
    cdf_pi[:, -1] = 1.0
    cont = spec.transition / np.maximum(1.0 - spec.terminal, 1e-300)[..., None]
    cdf_next = np.cumsum(cont, axis=2)

    states = rng.choice(S, size=n_episodes, p=spec.initial_state_dist)
    alive = np.ones(n_episodes, dtype=bool)
    cols = {k: [] for k in ("ep", "t", "s", "a", "p", "r", "c", "ns", "done")}
    for t in range(H):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        s = states[idx]
        u = rng.random(idx.size)
        a = np.minimum((u[:, None] > cdf_pi[s]).sum(axis=1), A - 1)
        p = behavior_probs[s, a]
        r = spec.mean_reward[s, a] + reward_noise_std * rng.standard_normal(idx.size)
        c = spec.mean_cost[s, a] + cost_noise_std * rng.standard_normal(idx.size)
        c = np.maximum(c, 0.0)
        done = (rng.random(idx.size) < spec.terminal[s, a]) | (t == H - 1)
        un = rng.random(idx.size)
        ns = np.minimum((un[:, None] > cdf_next[s, a]).sum(axis=1), S - 1)
        ns = np.where(done, -1, ns)
        for key, val in zip(cols, (idx, np.full(idx.size, t), s, a, p, r, c, ns, done)):
            cols[key].append(val)
        states[idx] = np.where(done, states[idx], ns)
        alive[idx] = ~done

    cat = {k: np.concatenate(v) if v else np.zeros(0) for k, v in cols.items()}
    width = len(str(max(n_episodes - 1, 0)))
    ep_names = np.array([f"ep{i:0{width}d}" for i in range(n_episodes)], dtype=object)
    return Dataset.from_arrays(
        episode_id=ep_names[cat["ep"].astype(np.int64)],
        t=cat["t"], state=cat["s"], action=cat["a"], propensity=cat["p"],
        reward=cat["r"], cost=cat["c"], next_state=cat["ns"], done=cat["done"],
        n_states=S, n_actions=A, horizon=H, gamma=spec.gamma,
    )


def gen_synthetic(cfg: SyntheticConfig = SyntheticConfig(), budget: Optional[float] = None):
    """Generate the two-step environment and a uniformly logged dataset.

    The spec budget defaults to the uniform policy's exact expected cost.
    """
    r, c = mean_tables(cfg)
    spec = two_step_spec(r, c)
    if budget is None:
        budget = exact_value(spec, uniform_probs(spec.n_states, spec.n_actions))[1]
    spec = spec.with_budget(budget)
    rng = np.random.default_rng(cfg.seed)
    data = sample_dataset(
        spec,
        uniform_probs(spec.n_states, spec.n_actions),
        cfg.n_episodes,
        rng,
        reward_noise_std=cfg.reward_noise_std,
        cost_noise_std=cfg.cost_noise_std,
    )
    return spec, data


TOY_REWARD = np.array([[1.0, 2.0], [1.0, 2.0], [1.5, 3.0]])
TOY_COST = np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]])


def toy_fixture(n_episodes: int = 12, seed: int = 0, budget: float = 3.0):
    """Deterministic 3-state, 2-action instance with a uniform-logged dataset.

    Reachable deterministic policies have (reward, cost) in
    ``{(2, 2), (3, 3), (3.5, 3), (5, 4)}``.
    """
    spec = two_step_spec(TOY_REWARD, TOY_COST, budget=budget)
    data = sample_dataset(
        spec, uniform_probs(3, 2), n_episodes, np.random.default_rng(seed)
    )
    return spec, data


def exact_value(spec: MdpSpec, policy) -> tuple[float, float]:
    """Expected discounted (reward, cost) of ``policy`` by backward induction."""
    probs = _policy_probs(policy)
    if probs.shape != (spec.n_states, spec.n_actions):
        raise ValueError(
            f"policy shape {probs.shape} does not match spec "
            f"({spec.n_states}, {spec.n_actions})"
        )
    v_r = np.zeros(spec.n_states)
    v_c = np.zeros(spec.n_states)
    for _ in range(spec.horizon):
        q_r = spec.mean_reward + spec.gamma * spec.transition @ v_r
        q_c = spec.mean_cost + spec.gamma * spec.transition @ v_c
        v_r = (probs * q_r).sum(axis=1)
        v_c = (probs * q_c).sum(axis=1)
    return float(spec.initial_state_dist @ v_r), float(spec.initial_state_dist @ v_c)


def simulate_policy(spec: MdpSpec, policy, n_rollouts: int = 0, seed: int = 0) -> EvalEstimate:
    """Ground-truth value of ``policy`` on ``spec``.

    ``n_rollouts == 0`` evaluates the expectation exactly. Otherwise the mean
    of ``n_rollouts`` noise-free rollouts is returned; rollouts are split into
    blocks whose generators are spawned from ``seed`` with
    :class:`numpy.random.SeedSequence`, so results do not depend on how the
    blocks are scheduled.
    """
    probs = _policy_probs(policy)
    if n_rollouts == 0:
        j, jc = exact_value(spec, probs)
        return EvalEstimate(j, jc, 0.0, 0.0, "EXACT", None, 0)
    if n_rollouts < 0:
        raise ValueError("n_rollouts must be >= 0")

    block = 50_000
    n_blocks = math.ceil(n_rollouts / block)
    children = np.random.SeedSequence(seed).spawn(n_blocks)
    rets, costs = [], []
    for b, child in enumerate(children):
        size = min(block, n_rollouts - b * block)
        d = sample_dataset(spec, probs, size, np.random.default_rng(child))
        rets.append(d.episode_returns("reward"))
        costs.append(d.episode_returns("cost"))
    rets = np.concatenate(rets)
    costs = np.concatenate(costs)
    n = len(rets)
    return EvalEstimate(
        j_reward=float(rets.mean()),
        j_cost=float(costs.mean()),
        stderr_reward=float(rets.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        stderr_cost=float(costs.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        estimator="MC",
        ess=float(n),
        n_episodes=n,
    )
