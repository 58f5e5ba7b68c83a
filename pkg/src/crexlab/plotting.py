"""Figures rendered next to the CSV reports.

The CSV/JSON files are the contract; these PNGs are for reading runs at a
glance. Everything draws on the Agg backend so no display is needed.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_traces(traces: dict, path) -> Path:
    """Loss, margin and intra-negative cosine against step, one line per run."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(10, 3))
        for name, trace in traces.items():
            steps = [r.step for r in trace.records]
            axes[0].plot(steps, [r.loss for r in trace.records], label=name)
            axes[1].plot(steps, [r.margin for r in trace.records], label=name)
            axes[2].plot(steps, [r.intra_negative for r in trace.records], label=name)
        for ax, title in zip(axes, ("loss", "margin (intra - cross)", "intra-negative cosine")):
            ax.set_title(title)
            ax.set_xlabel("step")
        axes[0].legend()
        return _save(fig, path)


def plot_selection_ablation(rows: Sequence[dict], path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        labels = [r["strategy"] for r in rows]
        ax.bar(labels, [r["final_topn_f1"] for r in rows], color="tab:blue", alpha=0.8)
        ax.set_ylabel("final top-N F1")
        ax.set_ylim(0, 1.05)
        return _save(fig, path)


def plot_sweep(rows: Sequence[dict], axis: str, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        xs = [float(r["value"]) for r in rows]
        ax.plot(xs, [r["initial_selection_accuracy"] for r in rows], "o-", label="initial accuracy")
        ax.plot(xs, [r["final_selection_accuracy"] for r in rows], "s-", label="final accuracy")
        ax.plot(xs, [r["final_margin"] for r in rows], "^--", label="final margin")
        ax.set_xlabel(axis)
        ax.legend()
        return _save(fig, path)


def plot_counts(rows: Sequence[dict], path) -> Path:
    """Predicted against ground-truth count per query."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 4))
        gt = [r["ground_truth"] for r in rows]
        pred = [r["predicted"] for r in rows]
        ax.scatter(gt, pred, s=18)
        hi = max(gt + pred + [1])
        ax.plot([0, hi], [0, hi], color="0.5", lw=0.8)
        ax.set_xlabel("ground-truth count")
        ax.set_ylabel("predicted count")
        return _save(fig, path)
