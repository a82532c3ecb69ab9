"""Report figures rendered to files with the non-interactive Agg backend."""

from __future__ import annotations

from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_loss_history(rows: Sequence, path) -> None:
    """Train/dev loss per epoch (log scale) with the learning rate on a twin axis."""
    epochs = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    ax.plot(epochs, [r[1] for r in rows], marker="o", ms=3, label="train loss")
    dev = [(r[0], r[2]) for r in rows if r[2] is not None]
    if dev:
        ax.plot(*zip(*dev), marker="s", ms=3, label="dev loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if all(r[1] > 0 for r in rows):
        ax.set_yscale("log")
    lr_ax = ax.twinx()
    lr_ax.step(epochs, [r[3] for r in rows], where="post", color="0.6", lw=1, label="lr")
    lr_ax.set_ylabel("learning rate")
    handles = ax.get_legend_handles_labels()
    extra = lr_ax.get_legend_handles_labels()
    ax.legend(handles[0] + extra[0], handles[1] + extra[1], loc="upper right")
    ax.set_title("convergence")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_confusion(confusion: np.ndarray, path, class_names: Optional[Sequence[str]] = None) -> None:
    """Row-normalised confusion matrix (rows = true class)."""
    confusion = np.asarray(confusion, dtype=np.float64)
    rows = confusion.sum(axis=1, keepdims=True)
    norm = np.divide(confusion, rows, out=np.zeros_like(confusion), where=rows > 0)
    n = confusion.shape[0]
    names = list(class_names) if class_names is not None else [str(i) for i in range(n)]
    side = max(4.0, 0.45 * n + 2)
    fig, ax = plt.subplots(figsize=(side, side), dpi=100)
    im = ax.imshow(norm, vmin=0, vmax=1, cmap="Blues")
    ax.set_xticks(range(n), names, rotation=90, fontsize=7)
    ax.set_yticks(range(n), names, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
