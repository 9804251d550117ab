"""Figure rendering for run artifacts.

Every command that writes delimited output also drops a rendered figure
next to it: loss curves beside the metrics CSV, a bar chart beside the
ablation summary, and a heatmap beside an exported spectrogram.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _atomic_savefig(fig, path) -> None:
    path = os.fspath(path)
    tmp = path + ".part"
    try:
        fig.savefig(tmp, format="png", dpi=120)
        os.replace(tmp, path)
    finally:
        plt.close(fig)
        if os.path.exists(tmp):
            os.unlink(tmp)


def save_metrics_figure(records, path) -> None:
    """Loss curves and gradient norm per epoch."""
    epochs = [r.epoch for r in records]
    fig, (ax_loss, ax_grad) = plt.subplots(1, 2, figsize=(10, 4))
    ax_loss.plot(epochs, [r.total for r in records], label="total", lw=2)
    ax_loss.plot(epochs, [r.cgra for r in records], label="alignment", alpha=0.8)
    ax_loss.plot(epochs, [r.selfcl_v for r in records], label="contrastive (v)", alpha=0.8)
    ax_loss.plot(epochs, [r.selfcl_a for r in records], label="contrastive (a)", alpha=0.8)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(frameon=False)
    ax_grad.plot(epochs, [r.grad_norm for r in records], color="tab:red")
    ax_grad.set_xlabel("epoch")
    ax_grad.set_ylabel("gradient norm")
    fig.tight_layout()
    _atomic_savefig(fig, path)


def save_ablation_figure(summary, path) -> None:
    """Mean accuracy per variant with +/- 1 sd error bars."""
    names = [s[0] for s in summary]
    means = [s[1] for s in summary]
    sds = [s[2] for s in summary]
    fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(names)), 4))
    xs = np.arange(len(names))
    ax.bar(xs, means, yerr=sds, capsize=4, color="tab:blue", alpha=0.85)
    ax.set_xticks(xs)
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("probe accuracy")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    _atomic_savefig(fig, path)


def save_spectrogram_figure(values: np.ndarray, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(values, origin="lower", aspect="auto", cmap="magma")
    ax.set_xlabel("time frame")
    ax.set_ylabel("mel band")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, label="magnitude")
    fig.tight_layout()
    _atomic_savefig(fig, path)
