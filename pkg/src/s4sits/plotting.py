"""Static PNG figures: loss curves and cloud-bin bar charts."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_loss_curves(history: list[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    epochs = [h["epoch"] for h in history]
    for key in ("loss_joint", "loss_c", "loss_r", "loss_ce"):
        if history and key in history[0]:
            ax.plot(epochs, [h[key] for h in history], label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_cloud_bins(bins: list[dict], path) -> Path:
    labels = [f"{b['ratio_lo']:.2f}-{b['ratio_hi']:.2f}" for b in bins]
    values = [b["miou"] if b["miou"] is not None else 0.0 for b in bins]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    bars = ax.bar(labels, values, color="tab:blue")
    for bar, b in zip(bars, bins):
        ax.annotate(f"n={b['n_samples']}", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=8)
    ax.set_xlabel("cloud cover ratio")
    ax.set_ylabel("mIoU")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_per_class(per_class_iou: list, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar([str(i) for i in range(len(per_class_iou))], [v or 0.0 for v in per_class_iou])
    ax.set_xlabel("class")
    ax.set_ylabel("IoU")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
