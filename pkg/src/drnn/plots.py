"""Figure rendering for the report files the command line tool emits.

Each helper draws one figure and writes it to a file next to the delimited
text output, using the Agg backend so no display is needed. The text files
stay the authoritative record; the figures are the same data made glanceable.
Output is always PNG regardless of the target name, because atomic writers
render to a temporary name before the final one exists.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curve_figure(losses, path) -> None:
    """Mean training loss per epoch as a line plot."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    epochs = np.arange(1, len(losses) + 1)
    ax.plot(epochs, losses, marker="o", markersize=3, linewidth=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    ax.set_title("training loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150, format="png")
    plt.close(fig)


def save_dos_trace_figure(v_norms, a_norms, path) -> None:
    """State velocity and acceleration norms per frame for one sequence."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    frames = np.arange(len(v_norms))
    ax.plot(frames, v_norms, label="|velocity|", linewidth=1.4)
    ax.plot(frames, a_norms, label="|acceleration|", linewidth=1.4, linestyle="--")
    ax.set_xlabel("frame")
    ax.set_ylabel("L2 norm")
    ax.set_title("state derivative magnitudes")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150, format="png")
    plt.close(fig)


def save_confusion_figure(matrix, path, normalized: bool = False) -> None:
    """Confusion matrix heatmap with per-cell annotations."""
    matrix = np.asarray(matrix)
    k = matrix.shape[0]
    fig, ax = plt.subplots(figsize=(0.7 * k + 2.5, 0.7 * k + 2.0))
    image = ax.imshow(matrix, cmap="Blues")
    fig.colorbar(image, ax=ax, fraction=0.046)
    ticks = np.arange(k)
    ax.set_xticks(ticks, [str(c + 1) for c in ticks])
    ax.set_yticks(ticks, [str(c + 1) for c in ticks])
    ax.set_xlabel("predicted class")
    ax.set_ylabel("true class")
    ax.set_title("mean confusion (row normalized)" if normalized else "confusion counts")
    threshold = matrix.max() / 2.0 if matrix.size else 0.0
    for r in range(k):
        for c in range(k):
            value = f"{matrix[r, c]:.2f}" if normalized else f"{int(matrix[r, c])}"
            ax.text(c, r, value, ha="center", va="center",
                    color="white" if matrix[r, c] > threshold else "black",
                    fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150, format="png")
    plt.close(fig)
