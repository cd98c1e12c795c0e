"""Figures for run reports, drawn on bare ``Figure`` objects (no pyplot state)."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from matplotlib.figure import Figure

from .evaluation import DEGREE_BUCKETS

FIGSIZE = (6.0, 3.6)
DPI = 120


def _new_figure(size=FIGSIZE) -> Figure:
    fig = Figure(figsize=size, dpi=DPI, layout="constrained")
    return fig


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    return path


def _eval_points(history: Sequence[dict], key: str = "dev_hits1"):
    pts = [(r["epoch"], r[key]) for r in history if r.get(key) is not None]
    if not pts:
        return np.zeros(0), np.zeros(0)
    ep, val = zip(*pts)
    return np.asarray(ep), np.asarray(val, dtype=float)


def plot_training_curves(history: Sequence[dict], path, title: str = "training") -> Path:
    """Loss per epoch (left axis) and dev Hits@1 at evaluations (right axis)."""
    fig = _new_figure()
    ax = fig.add_subplot(1, 1, 1)
    epochs = np.array([r["epoch"] for r in history])
    loss = np.array([r["loss"] for r in history], dtype=float)
    ax.plot(epochs, loss, color="tab:blue", lw=1.2, label="loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss per positive", color="tab:blue")
    ax.set_title(title)
    ep, hits = _eval_points(history)
    if len(ep):
        ax2 = ax.twinx()
        ax2.plot(ep, hits, "o-", color="tab:red", ms=3, lw=1.0, label="dev Hits@1")
        ax2.set_ylim(-0.02, 1.02)
        ax2.set_ylabel("dev Hits@1", color="tab:red")
    pool_ep, pool = _eval_points(history, "pseudo_pairs")
    if len(pool_ep):
        ax.text(0.02, 0.95, f"pseudo pairs: {int(pool[-1])}", transform=ax.transAxes, va="top")
    return _save(fig, path)


def plot_degree_hits(degree_hits: Dict[str, Optional[float]], degree_counts: Dict[str, int], path,
                     title: str = "Hits@1 by source degree") -> Path:
    """Bar per degree bucket; empty buckets are drawn as gaps."""
    fig = _new_figure((5.0, 3.2))
    ax = fig.add_subplot(1, 1, 1)
    x = np.arange(len(DEGREE_BUCKETS))
    vals = [degree_hits.get(b) for b in DEGREE_BUCKETS]
    heights = [v if v is not None else 0.0 for v in vals]
    bars = ax.bar(x, heights, color="tab:gray", edgecolor="black", lw=0.6)
    for bar, b, v in zip(bars, DEGREE_BUCKETS, vals):
        label = "n/a" if v is None else f"n={degree_counts.get(b, 0)}"
        ax.text(bar.get_x() + bar.get_width() / 2, bar.get_height() + 0.02, label, ha="center", fontsize=7)
    ax.set_xticks(x, DEGREE_BUCKETS)
    ax.set_xlabel("degree")
    ax.set_ylabel("Hits@1")
    ax.set_ylim(0, 1.1)
    ax.set_title(title)
    return _save(fig, path)


def plot_ablation_curves(histories: Dict[str, List[dict]], path, threshold: Optional[float] = None) -> Path:
    """Dev Hits@1 against epoch, one line per variant."""
    fig = _new_figure()
    ax = fig.add_subplot(1, 1, 1)
    for name, hist in histories.items():
        ep, hits = _eval_points(hist)
        if len(ep):
            ax.plot(ep, hits, marker=".", lw=1.0, label=name)
    if threshold is not None:
        ax.axhline(threshold, color="black", ls=":", lw=0.8)
    ax.set_xlabel("epoch")
    ax.set_ylabel("dev Hits@1")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="lower right", frameon=False)
    return _save(fig, path)
