"""Logged transition data: types, file I/O, validation and splitting.

A logged record is the six-element tuple ``(s, a, p, r, c, s')`` plus the
bookkeeping needed to rebuild trajectories (episode id, step index, done
flag). Internally a :class:`Dataset` stores the records column-wise as numpy
arrays, grouped by episode and sorted by step.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np

FIELDS = (
    "episode_id",
    "t",
    "state",
    "action",
    "propensity",
    "reward",
    "cost",
    "next_state",
    "done",
)


class DataError(ValueError):
    """Raised for malformed or inconsistent logged data."""


@dataclass(frozen=True)
class LoggedTransition:
    episode_id: str
    t: int
    state: int
    action: int
    propensity: float
    reward: float
    cost: float
    next_state: Optional[int]
    done: bool

    def __post_init__(self):
        if not (0.0 < self.propensity <= 1.0):
            raise DataError(
                f"propensity must be in (0,1], got {self.propensity!r} "
                f"(episode {self.episode_id}, t={self.t})"
            )
        if self.done != (self.next_state is None):
            raise DataError(
                f"done must be true exactly when next_state is absent "
                f"(episode {self.episode_id}, t={self.t})"
            )
        if self.t < 0 or self.state < 0 or self.action < 0:
            raise DataError(
                f"negative t/state/action (episode {self.episode_id}, t={self.t})"
            )
        if self.cost < 0:
            raise DataError(
                f"cost must be >= 0, got {self.cost!r} "
                f"(episode {self.episode_id}, t={self.t})"
            )

    def to_record(self) -> dict:
        return {name: getattr(self, name) for name in FIELDS}


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-wise logged data grouped by episode.

    Rows are ordered by episode (first appearance) and then by step index.
    ``next_state`` holds ``-1`` on rows where ``done`` is true; use
    :attr:`transitions` for the record view where it is ``None``.
    """

    episode_id: np.ndarray  # object array of str
    t: np.ndarray
    state: np.ndarray
    action: np.ndarray
    propensity: np.ndarray
    reward: np.ndarray
    cost: np.ndarray
    next_state: np.ndarray
    done: np.ndarray
    n_states: int
    n_actions: int
    horizon: int
    gamma: float = 1.0
    _episode_starts: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_transitions(
        cls,
        transitions: Sequence[LoggedTransition],
        n_states: Optional[int] = None,
        n_actions: Optional[int] = None,
        horizon: Optional[int] = None,
        gamma: float = 1.0,
    ) -> "Dataset":
        cols = {
            "episode_id": np.array([tr.episode_id for tr in transitions], dtype=object),
            "t": np.array([tr.t for tr in transitions], dtype=np.int64),
            "state": np.array([tr.state for tr in transitions], dtype=np.int64),
            "action": np.array([tr.action for tr in transitions], dtype=np.int64),
            "propensity": np.array([tr.propensity for tr in transitions], dtype=float),
            "reward": np.array([tr.reward for tr in transitions], dtype=float),
            "cost": np.array([tr.cost for tr in transitions], dtype=float),
            "next_state": np.array(
                [-1 if tr.next_state is None else tr.next_state for tr in transitions],
                dtype=np.int64,
            ),
            "done": np.array([tr.done for tr in transitions], dtype=bool),
        }
        return cls.from_arrays(
            **cols, n_states=n_states, n_actions=n_actions, horizon=horizon, gamma=gamma
        )

    @classmethod
    def from_arrays(
        cls,
        *,
        episode_id,
        t,
        state,
        action,
        propensity,
        reward,
        cost,
        next_state,
        done,
        n_states: Optional[int] = None,
        n_actions: Optional[int] = None,
        horizon: Optional[int] = None,
        gamma: float = 1.0,
    ) -> "Dataset":
        """Build a dataset from parallel columns, grouping and validating them."""
        episode_id = np.asarray(episode_id, dtype=object)
        t = np.asarray(t, dtype=np.int64)
        state = np.asarray(state, dtype=np.int64)
        action = np.asarray(action, dtype=np.int64)
        propensity = np.asarray(propensity, dtype=float)
        reward = np.asarray(reward, dtype=float)
        cost = np.asarray(cost, dtype=float)
        done = np.asarray(done, dtype=bool)
        next_state = np.where(done, -1, np.asarray(next_state, dtype=np.int64))
        n = len(t)
        for name, col in (
            ("episode_id", episode_id), ("state", state), ("action", action),
            ("propensity", propensity), ("reward", reward), ("cost", cost),
            ("next_state", next_state), ("done", done),
        ):
            if len(col) != n:
                raise DataError(f"column {name} has length {len(col)}, expected {n}")
        if not 0.0 <= gamma <= 1.0:
            raise DataError(f"gamma must be in [0,1], got {gamma}")

        bad = np.flatnonzero(~((propensity > 0.0) & (propensity <= 1.0)))
        if bad.size:
            i = bad[0]
            raise DataError(
                f"propensity must be in (0,1], got {propensity[i]!r} "
                f"(episode {episode_id[i]}, t={t[i]})"
            )
        if n and (state.min() < 0 or action.min() < 0 or t.min() < 0):
            raise DataError("state, action and t must be non-negative")
        if n and cost.min() < 0:
            raise DataError("cost must be >= 0")
        if np.any(~done & (next_state < 0)):
            raise DataError("next_state must be present when done is false")

        # group by episode in order of first appearance, then sort by t
        uniq, first_idx, inverse = np.unique(
            episode_id.astype(str), return_index=True, return_inverse=True
        )
        rank = np.empty(len(uniq), dtype=np.int64)
        rank[np.argsort(first_idx, kind="stable")] = np.arange(len(uniq))
        ep_rank = rank[inverse.reshape(-1)] if n else np.zeros(0, dtype=np.int64)
        order = np.lexsort((t, ep_rank))
        cols = [c[order] for c in (episode_id, t, state, action, propensity, reward, cost, next_state, done)]
        episode_id, t, state, action, propensity, reward, cost, next_state, done = cols
        ep_rank = ep_rank[order]

        starts = np.flatnonzero(np.r_[True, ep_rank[1:] != ep_rank[:-1]]) if n else np.zeros(0, dtype=np.int64)
        lengths = np.diff(np.r_[starts, n])
        expected_t = np.arange(n) - np.repeat(starts, lengths)
        bad = np.flatnonzero(t != expected_t)
        if bad.size:
            i = bad[0]
            raise DataError(
                f"non-consecutive step indices in episode {episode_id[i]}: "
                f"expected t={expected_t[i]}, got t={t[i]}"
            )
        ends = starts + lengths - 1
        mid_done = done.copy()
        mid_done[ends] = False
        if mid_done.any():
            i = np.flatnonzero(mid_done)[0]
            raise DataError(f"done=true before the last step of episode {episode_id[i]}")

        inferred_states = int(max(state.max(initial=-1), next_state.max(initial=-1)) + 1)
        inferred_actions = int(action.max(initial=-1) + 1)
        inferred_horizon = int(lengths.max(initial=0))
        if n_states is None:
            n_states = inferred_states
        elif inferred_states > n_states:
            raise DataError(f"state id {inferred_states - 1} >= n_states={n_states}")
        if n_actions is None:
            n_actions = inferred_actions
        elif inferred_actions > n_actions:
            raise DataError(f"action id {inferred_actions - 1} >= n_actions={n_actions}")
        if horizon is None:
            horizon = inferred_horizon
        elif inferred_horizon > horizon:
            raise DataError(f"episode of length {inferred_horizon} exceeds horizon={horizon}")

        return cls(
            episode_id=episode_id, t=t, state=state, action=action,
            propensity=propensity, reward=reward, cost=cost,
            next_state=next_state, done=done,
            n_states=int(n_states), n_actions=int(n_actions), horizon=int(horizon),
            gamma=float(gamma), _episode_starts=starts,
        )

    def __len__(self) -> int:
        return len(self.t)

    @property
    def n_episodes(self) -> int:
        return len(self._episode_starts)

    @cached_property
    def episode_lengths(self) -> np.ndarray:
        return np.diff(np.r_[self._episode_starts, len(self)])

    @property
    def episode_ids(self) -> list:
        return [str(e) for e in self.episode_id[self._episode_starts]]

    @cached_property
    def episode_index(self) -> np.ndarray:
        """Episode number (0-based) of every row."""
        return np.repeat(np.arange(self.n_episodes), self.episode_lengths)

    @property
    def transitions(self) -> Iterator[LoggedTransition]:
        for i in range(len(self)):
            yield LoggedTransition(
                episode_id=str(self.episode_id[i]),
                t=int(self.t[i]),
                state=int(self.state[i]),
                action=int(self.action[i]),
                propensity=float(self.propensity[i]),
                reward=float(self.reward[i]),
                cost=float(self.cost[i]),
                next_state=None if self.done[i] else int(self.next_state[i]),
                done=bool(self.done[i]),
            )

    def padded(self, column: str, fill=0) -> np.ndarray:
        """Return ``column`` as an ``(n_episodes, max_length)`` array."""
        width = int(self.episode_lengths.max(initial=0))
        values = getattr(self, column)
        out = np.full((self.n_episodes, width), fill, dtype=values.dtype)
        out[self.episode_index, self.t] = values
        return out

    @cached_property
    def step_mask(self) -> np.ndarray:
        """Boolean ``(n_episodes, max_length)`` mask of observed steps."""
        width = int(self.episode_lengths.max(initial=0))
        mask = np.zeros((self.n_episodes, width), dtype=bool)
        mask[self.episode_index, self.t] = True
        return mask

    def select_episodes(self, episodes: np.ndarray) -> "Dataset":
        """Sub-dataset made of the given episode numbers, in the given order."""
        episodes = np.asarray(episodes, dtype=np.int64)
        starts = self._episode_starts[episodes]
        lengths = self.episode_lengths[episodes]
        rows = np.concatenate(
            [np.arange(s, s + k) for s, k in zip(starts, lengths)]
        ) if len(episodes) else np.zeros(0, dtype=np.int64)
        return Dataset.from_arrays(
            episode_id=self.episode_id[rows], t=self.t[rows], state=self.state[rows],
            action=self.action[rows], propensity=self.propensity[rows],
            reward=self.reward[rows], cost=self.cost[rows],
            next_state=self.next_state[rows], done=self.done[rows],
            n_states=self.n_states, n_actions=self.n_actions,
            horizon=self.horizon, gamma=self.gamma,
        )

    def episode_returns(self, column: str = "reward") -> np.ndarray:
        """Discounted per-episode sum of ``reward`` or ``cost``."""
        values = getattr(self, column) * self.gamma ** self.t
        return np.bincount(self.episode_index, weights=values, minlength=self.n_episodes)

    def equals(self, other: "Dataset") -> bool:
        if not isinstance(other, Dataset):
            return False
        scalars = ("n_states", "n_actions", "horizon", "gamma")
        if any(getattr(self, k) != getattr(other, k) for k in scalars):
            return False
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in FIELDS)


@dataclass(frozen=True)
class DatasetSplit:
    train: Dataset
    val: Dataset
    seed: int


@dataclass
class ValidationReport:
    visit_counts: np.ndarray
    min_propensity: float
    max_propensity: float
    n_episodes: int
    unterminated_episodes: list
    unvisited_pairs: list

    def to_dict(self) -> dict:
        return {
            "visit_counts": self.visit_counts.tolist(),
            "min_propensity": self.min_propensity,
            "max_propensity": self.max_propensity,
            "n_episodes": self.n_episodes,
            "unterminated_episodes": list(self.unterminated_episodes),
            "unvisited_pairs": [list(p) for p in self.unvisited_pairs],
        }


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("true", "1", "yes"):
        return True
    if text in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _parse_next_state(value) -> Optional[int]:
    if value is None:
        return None
    if isinstance(value, str) and value.strip().lower() in ("", "null", "none"):
        return None
    return int(value)


def _iter_records(path: Path) -> Iterator[tuple[int, dict]]:
    if path.suffix.lower() == ".csv":
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            for lineno, row in enumerate(reader, start=2):
                yield lineno, row
    else:
        with path.open() as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
                if not isinstance(obj, dict):
                    raise DataError(f"{path}:{lineno}: malformed record (not an object)")
                yield lineno, obj


def load_dataset(
    path,
    schema: Optional[Mapping[str, str]] = None,
    n_states: Optional[int] = None,
    n_actions: Optional[int] = None,
    horizon: Optional[int] = None,
    gamma: float = 1.0,
) -> Dataset:
    """Read a newline-delimited JSON (or ``.csv``) log file.

    ``schema`` maps the canonical field names to the names used in the file,
    e.g. ``{"propensity": "p"}``. Spaces/horizon are inferred unless given.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    names = {f: f for f in FIELDS}
    if schema:
        unknown = set(schema) - set(FIELDS)
        if unknown:
            raise DataError(f"unknown schema fields: {sorted(unknown)}")
        names.update(schema)

    transitions = []
    for lineno, rec in _iter_records(path):
        missing = [f for f in FIELDS if names[f] not in rec]
        if missing:
            raise DataError(f"{path}:{lineno}: malformed record, missing {missing}")
        try:
            tr = LoggedTransition(
                episode_id=str(rec[names["episode_id"]]),
                t=int(rec[names["t"]]),
                state=int(rec[names["state"]]),
                action=int(rec[names["action"]]),
                propensity=float(rec[names["propensity"]]),
                reward=float(rec[names["reward"]]),
                cost=float(rec[names["cost"]]),
                next_state=_parse_next_state(rec[names["next_state"]]),
                done=_parse_bool(rec[names["done"]]),
            )
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: malformed record ({exc})") from None
        transitions.append(tr)
    return Dataset.from_transitions(
        transitions, n_states=n_states, n_actions=n_actions, horizon=horizon, gamma=gamma
    )


def write_dataset(d: Dataset, path) -> Path:
    """Write ``d`` as JSON lines, or CSV when the suffix is ``.csv``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".csv":
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=FIELDS)
            writer.writeheader()
            for tr in d.transitions:
                rec = tr.to_record()
                rec["reward"] = repr(rec["reward"])
                rec["cost"] = repr(rec["cost"])
                rec["propensity"] = repr(rec["propensity"])
                rec["next_state"] = "" if rec["next_state"] is None else rec["next_state"]
                rec["done"] = "true" if rec["done"] else "false"
                writer.writerow(rec)
    else:
        with path.open("w") as fh:
            for tr in d.transitions:
                fh.write(json.dumps(tr.to_record()) + "\n")
    return path


def validate_dataset(d: Dataset) -> ValidationReport:
    counts = np.zeros((d.n_states, d.n_actions), dtype=np.int64)
    np.add.at(counts, (d.state, d.action), 1)
    if len(d):
        last = d._episode_starts + d.episode_lengths - 1
        unterminated = [str(d.episode_id[i]) for i in last if not d.done[i]]
        pmin, pmax = float(d.propensity.min()), float(d.propensity.max())
    else:
        unterminated, pmin, pmax = [], math.nan, math.nan
    unvisited = [tuple(map(int, p)) for p in np.argwhere(counts == 0)] if len(d) else []
    return ValidationReport(
        visit_counts=counts,
        min_propensity=pmin,
        max_propensity=pmax,
        n_episodes=d.n_episodes,
        unterminated_episodes=unterminated,
        unvisited_pairs=unvisited,
    )


def split_dataset(d: Dataset, val_fraction: float, seed: int) -> DatasetSplit:
    """Random episode-level train/validation split, deterministic in ``seed``."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0,1), got {val_fraction}")
    n = d.n_episodes
    if n < 2:
        raise DataError(f"need at least 2 episodes to split, got {n}")
    n_val = int(math.floor(val_fraction * n + 0.5))
    n_val = min(max(n_val, 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    val_eps = np.sort(perm[:n_val])
    train_eps = np.sort(perm[n_val:])
    return DatasetSplit(train=d.select_episodes(train_eps), val=d.select_episodes(val_eps), seed=seed)
