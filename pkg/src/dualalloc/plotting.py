"""Figures written next to the report tables.

Uses the non-interactive Agg backend and strips the PNG software tag, so the
same inputs give byte-identical files.
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data import Dataset  # noqa: E402
from .planner import SweepPoint  # noqa: E402

_METADATA = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, metadata=_METADATA)
    plt.close(fig)
    return path


def plot_sweep(curves: Mapping[str, Sequence[SweepPoint]], budget: float, path) -> Path:
    """Cost against lambda (left) and reward against cost (right) per curve."""
    fig, (ax_c, ax_f) = plt.subplots(1, 2, figsize=(9, 3.6))
    for label, pts in curves.items():
        lam = np.array([p.lam for p in pts])
        jr = np.array([p.j_reward for p in pts])
        jc = np.array([p.j_cost for p in pts])
        se = np.array([p.stderr_cost for p in pts])
        line, = ax_c.plot(lam, jc, marker="o", ms=3, label=label)
        if np.any(se > 0):
            ax_c.fill_between(lam, jc - 3 * se, jc + 3 * se, color=line.get_color(), alpha=0.2)
        ax_f.plot(jc, jr, marker="o", ms=3, color=line.get_color(), label=label)
    ax_c.axhline(budget, color="k", ls="--", lw=1, label="budget")
    ax_f.axvline(budget, color="k", ls="--", lw=1)
    ax_c.set_xlabel(r"$\lambda$")
    ax_c.set_ylabel("expected cost")
    ax_f.set_xlabel("expected cost")
    ax_f.set_ylabel("expected reward")
    ax_c.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def cell_means(val: Dataset, column: str) -> tuple[np.ndarray, np.ndarray]:
    """Per (state, action) mean of a logged column and its visit count."""
    S, A = val.n_states, val.n_actions
    cell = val.state * A + val.action
    n = np.bincount(cell, minlength=S * A)
    tot = np.bincount(cell, weights=getattr(val, column), minlength=S * A)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(n > 0, tot / np.maximum(n, 1), np.nan)
    return mean.reshape(S, A), n.reshape(S, A)


def plot_model_accuracy(model, val: Dataset, path) -> Path:
    """Held-out average reward and cost per visited cell against the model."""
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.8))
    for ax, column, pred in zip(axes, ("reward", "cost"), (model.r_hat, model.c_hat)):
        true, n = cell_means(val, column)
        seen = n > 0
        ax.scatter(true[seen], np.asarray(pred)[seen], s=14)
        lo = float(min(np.nanmin(true[seen]), np.min(np.asarray(pred)[seen])))
        hi = float(max(np.nanmax(true[seen]), np.max(np.asarray(pred)[seen])))
        ax.plot([lo, hi], [lo, hi], color="k", lw=1, ls="--")
        ax.set_xlabel(f"held-out average {column}")
        ax.set_ylabel(f"predicted {column}")
    fig.tight_layout()
    return _save(fig, path)
