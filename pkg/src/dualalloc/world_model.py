"""Count-based tabular world model: transition, reward and cost tables.

The fitted tables sit behind a small interface (``tables()``, ``predict``,
``terminal``) that the planner and the value-iteration code consume, so a
learned regressor can replace the counts without touching the callers.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset

FORMAT_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass(eq=False)
class WorldModel:
    t_hat: np.ndarray  # (S, A, S), continuation mass only
    r_hat: np.ndarray
    c_hat: np.ndarray
    visit_counts: np.ndarray
    terminal_mask: np.ndarray  # (S, A) probability the episode ends
    smoothing: float = 0.0
    gamma: float = 1.0
    horizon: int = 1

    @property
    def n_states(self) -> int:
        return self.r_hat.shape[0]

    @property
    def n_actions(self) -> int:
        return self.r_hat.shape[1]

    @property
    def terminal(self) -> np.ndarray:
        return self.terminal_mask

    def tables(self):
        return self.r_hat, self.c_hat, self.t_hat

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.t_hat, self.r_hat, self.c_hat, self.visit_counts, self.terminal_mask):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr((self.smoothing, self.gamma, self.horizon)).encode())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "smoothing": self.smoothing,
            "gamma": self.gamma,
            "horizon": self.horizon,
            "t_hat": self.t_hat.tolist(),
            "r_hat": self.r_hat.tolist(),
            "c_hat": self.c_hat.tolist(),
            "visit_counts": self.visit_counts.tolist(),
            "terminal_mask": self.terminal_mask.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise ModelError(
                f"unsupported model format_version {d.get('format_version')!r}, "
                f"expected {FORMAT_VERSION}"
            )
        return cls(
            t_hat=np.asarray(d["t_hat"], dtype=float),
            r_hat=np.asarray(d["r_hat"], dtype=float),
            c_hat=np.asarray(d["c_hat"], dtype=float),
            visit_counts=np.asarray(d["visit_counts"], dtype=np.int64),
            terminal_mask=np.asarray(d["terminal_mask"], dtype=float),
            smoothing=float(d["smoothing"]),
            gamma=float(d["gamma"]),
            horizon=int(d["horizon"]),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict()))
        return path

    @classmethod
    def load(cls, path) -> "WorldModel":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"model file not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))


@dataclass(frozen=True)
class ModelReport:
    reward_mae: float
    cost_mae: float
    transition_log_loss: float
    coverage: float

    def to_dict(self) -> dict:
        return {
            "reward_mae": self.reward_mae,
            "cost_mae": self.cost_mae,
            "transition_log_loss": self.transition_log_loss,
            "coverage": self.coverage,
        }


def fit_models(train: Dataset, smoothing: float = 0.1) -> WorldModel:
    """Fit tables by counting.

    Successors are add-``smoothing`` over all states, scaled by the observed
    continuation rate. Unvisited pairs get the action's dataset-wide mean
    reward/cost, a uniform successor, the state's termination rate (or the
    action's when the state was never seen) and a visit count of 0.
    """
    if len(train) == 0:
        raise ModelError("cannot fit a world model on an empty dataset")
    if smoothing < 0:
        raise ModelError("smoothing must be >= 0")
    S, A = train.n_states, train.n_actions
    s, a = train.state, train.action

    counts = np.zeros((S, A), dtype=np.int64)
    np.add.at(counts, (s, a), 1)
    r_sum = np.zeros((S, A))
    c_sum = np.zeros((S, A))
    np.add.at(r_sum, (s, a), train.reward)
    np.add.at(c_sum, (s, a), train.cost)
    term = np.zeros((S, A))
    np.add.at(term, (s, a), train.done.astype(float))
    succ = np.zeros((S, A, S))
    cont = ~train.done
    np.add.at(succ, (s[cont], a[cont], train.next_state[cont]), 1.0)

    visited = counts > 0
    act_n = counts.sum(axis=0)
    act_r = np.divide(r_sum.sum(axis=0), act_n, out=np.zeros(A), where=act_n > 0)
    act_c = np.divide(c_sum.sum(axis=0), act_n, out=np.zeros(A), where=act_n > 0)
    act_term = np.divide(term.sum(axis=0), act_n, out=np.ones(A), where=act_n > 0)
    state_n = counts.sum(axis=1)
    state_term = np.divide(term.sum(axis=1), state_n, out=np.full(S, np.nan), where=state_n > 0)

    safe = np.maximum(counts, 1)
    r_hat = np.where(visited, r_sum / safe, act_r[None, :])
    c_hat = np.where(visited, c_sum / safe, act_c[None, :])

    fallback_term = np.where(np.isnan(state_term)[:, None], act_term[None, :], state_term[:, None])
    p_term = np.where(visited, term / safe, fallback_term)

    n_cont = succ.sum(axis=2, keepdims=True)
    smoothed = (succ + smoothing) / np.maximum(n_cont + smoothing * S, 1e-300)
    uniform = np.full(S, 1.0 / S)
    dist = np.where((n_cont > 0) | (smoothing > 0), smoothed, uniform)
    dist = np.where(visited[..., None], dist, uniform)
    t_hat = dist * (1.0 - p_term)[..., None]

    return WorldModel(
        t_hat=t_hat, r_hat=r_hat, c_hat=c_hat, visit_counts=counts,
        terminal_mask=p_term, smoothing=float(smoothing),
        gamma=train.gamma, horizon=train.horizon,
    )


def predict(model: WorldModel, s: int, a: int):
    """Return ``(successor_dist, terminal_prob, r_hat, c_hat, visited)``."""
    if not 0 <= s < model.n_states:
        raise IndexError(f"state {s} out of range [0, {model.n_states})")
    if not 0 <= a < model.n_actions:
        raise IndexError(f"action {a} out of range [0, {model.n_actions})")
    return (
        model.t_hat[s, a].copy(),
        float(model.terminal_mask[s, a]),
        float(model.r_hat[s, a]),
        float(model.c_hat[s, a]),
        bool(model.visit_counts[s, a] > 0),
    )


def model_report(model: WorldModel, val: Dataset, eps: float = 1e-15) -> ModelReport:
    """Holdout accuracy of a fitted model.

    The transition log-loss treats "episode ended" as one more outcome next
    to the successor states; probabilities are floored at ``eps``.
    """
    if len(val) == 0:
        raise ModelError("validation dataset is empty")
    s, a = val.state, val.action
    reward_mae = float(np.mean(np.abs(model.r_hat[s, a] - val.reward)))
    cost_mae = float(np.mean(np.abs(model.c_hat[s, a] - val.cost)))
    log_loss = transition_log_loss(model.t_hat, model.terminal_mask, val, eps)
    coverage = float(np.mean(model.visit_counts > 0))
    return ModelReport(reward_mae, cost_mae, max(log_loss, 0.0), coverage)


def transition_log_loss(t_hat: np.ndarray, terminal: np.ndarray, d: Dataset, eps: float = 1e-15) -> float:
    """Categorical log-loss of arbitrary transition tables on ``d``."""
    s, a = d.state, d.action
    p = np.where(d.done, terminal[s, a], t_hat[s, a, np.maximum(d.next_state, 0)])
    return float(np.mean(-np.log(np.maximum(p, eps))))

