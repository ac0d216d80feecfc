"""Figure rendering for the report paths of the CLI.

Figures are written next to the delimited outputs they visualize:
training curves beside metrics.txt, a confusion heatmap beside
confusion.txt. PNG metadata is pinned so reruns are byte-identical.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_PNG_METADATA = {"Software": "angkit"}


def save_training_curves(history: list[dict], path: str | Path) -> None:
    """Loss and accuracy per epoch on twin axes."""
    epochs = [h["epoch"] for h in history]
    fig, ax_loss = plt.subplots(figsize=(6.0, 3.6))
    ax_loss.plot(epochs, [h["loss"] for h in history], color="tab:red", label="loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("mean loss", color="tab:red")
    ax_loss.tick_params(axis="y", labelcolor="tab:red")
    ax_acc = ax_loss.twinx()
    ax_acc.plot(epochs, [h["accuracy"] for h in history],
                color="tab:blue", label="accuracy")
    ax_acc.set_ylabel("train accuracy", color="tab:blue")
    ax_acc.set_ylim(0.0, 1.05)
    ax_acc.tick_params(axis="y", labelcolor="tab:blue")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)


def save_confusion_heatmap(
    confusion: np.ndarray, path: str | Path, class_names: list[str] | None = None
) -> None:
    """Count-annotated heatmap of a [true, predicted] confusion matrix."""
    n = confusion.shape[0]
    names = class_names if class_names is not None else [str(i) for i in range(n)]
    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * n, 0.8 + 0.6 * n))
    image = ax.imshow(confusion, cmap="Blues")
    threshold = confusion.max() / 2 if confusion.max() > 0 else 0.5
    for i in range(n):
        for j in range(n):
            ax.text(j, i, str(int(confusion[i, j])), ha="center", va="center",
                    color="white" if confusion[i, j] > threshold else "black")
    ax.set_xticks(range(n), names, rotation=45, ha="right")
    ax.set_yticks(range(n), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.colorbar(image, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)
