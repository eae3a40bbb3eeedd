"""Figures written next to the CSV/JSON outputs of each command."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SAVE_KW = dict(dpi=120, metadata={"Software": None})


def _finish(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def plot_search_curves(metrics: list[dict], path) -> Path:
    """Loss and accuracy per epoch on both splits, with tau on a twin axis."""
    if not metrics:
        raise ValueError("no metrics to plot")
    fig, (ax_l, ax_a) = plt.subplots(1, 2, figsize=(9, 3.5))
    for split, style in (("train", "-"), ("val", "--")):
        rows = [m for m in metrics if m["split"] == split]
        ep = [m["epoch"] for m in rows]
        ax_l.plot(ep, [m["loss"] for m in rows], style, label=f"{split} loss")
        ax_a.plot(ep, [m["accuracy"] for m in rows], style, label=f"{split} acc")
    rows = [m for m in metrics if m["split"] == "train"]
    tw = ax_l.twinx()
    tw.plot([m["epoch"] for m in rows], [m["tau"] for m in rows], ":", color="gray")
    tw.set_ylabel("tau")
    ax_l.set_xlabel("epoch")
    ax_l.set_ylabel("NLL")
    ax_a.set_xlabel("epoch")
    ax_a.set_ylabel("accuracy")
    ax_l.legend(loc="upper center", frameon=False)
    ax_a.legend(loc="lower right", frameon=False)
    return _finish(fig, path)


def plot_edge_probabilities(snapshots: list[dict], path, cell_type: str = "normal") -> Path:
    """One panel per edge: candidate probabilities over epochs."""
    if not snapshots:
        raise ValueError("no snapshots to plot")
    ops = snapshots[0]["ops"]
    edges = list(snapshots[0]["cells"][cell_type])
    cols = min(len(edges), 4)
    rows = int(np.ceil(len(edges) / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(3 * cols, 2.4 * rows), squeeze=False, sharey=True)
    epochs = [s["epoch"] for s in snapshots]
    for ax, edge in zip(axes.flat, edges):
        probs = np.array([s["cells"][cell_type][edge]["probs"] for s in snapshots])
        for k, op in enumerate(ops):
            ax.plot(epochs, probs[:, k], label=op)
        ax.set_title(f"edge {edge}", fontsize=9)
        ax.set_xlabel("epoch", fontsize=8)
    for ax in list(axes.flat)[len(edges):]:
        ax.axis("off")
    axes.flat[0].set_ylabel("probability")
    axes.flat[0].legend(fontsize=7, frameon=False)
    return _finish(fig, path)


def plot_ranking(entries, path, highlight=None) -> Path:
    """Validation loss of every enumerated cell in rank order; ``highlight`` marks given ranks."""
    if not entries:
        raise ValueError("no ranking entries to plot")
    fig, ax = plt.subplots(figsize=(7, 3.2))
    ranks = [e.rank for e in entries]
    losses = [e.val_loss for e in entries]
    ax.bar(ranks, losses, color="0.7")
    for r in highlight or ():
        ax.bar([r], [losses[r - 1]], color="C3")
    q = len(entries) / 4
    ax.axvline(q + 0.5, color="k", ls=":", lw=1)
    ax.set_xlabel("rank")
    ax.set_ylabel("validation NLL")
    return _finish(fig, path)


def plot_train_curve(history: list[dict], path) -> Path:
    if not history:
        raise ValueError("no training history to plot")
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ep = [h["epoch"] for h in history]
    ax.plot(ep, [h["train_loss"] for h in history], label="train")
    if all("eval_loss" in h for h in history):
        ax.plot(ep, [h["eval_loss"] for h in history], "--", label="test")
    ax.set_xlabel("epoch")
    ax.set_ylabel("NLL")
    ax.legend(frameon=False)
    return _finish(fig, path)
