"""Matplotlib renderings written next to the delimited report outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def save_method_report_figure(methods: Sequence[str], accuracies: Sequence[float],
                              path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(8, 3.6), constrained_layout=True)
    x = np.arange(len(methods))
    ax.bar(x, accuracies, color="tab:blue")
    ax.set_xticks(x)
    ax.set_xticklabels(methods, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("target accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, axis="y", alpha=0.3)
    for xi, acc in zip(x, accuracies):
        ax.text(xi, acc + 0.01, f"{acc:.3f}", ha="center", fontsize=7)
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_history_figure(history, path: str | Path) -> None:
    rows = history.rows
    epochs = [r.epoch for r in rows]
    fig, (ax_loss, ax_lr) = plt.subplots(1, 2, figsize=(9, 3.2), constrained_layout=True)
    ax_loss.plot(epochs, [r.L_c for r in rows], label="L_c")
    ax_loss.plot(epochs, [r.L_tri for r in rows], label="L_tri")
    ax_loss.plot(epochs, [r.L_all for r in rows], label="L_all")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.grid(True, alpha=0.3)
    ax_loss.legend(fontsize=8)
    accs = [r.target_accuracy for r in rows]
    if any(a is not None for a in accs):
        ax_acc = ax_loss.twinx()
        ax_acc.plot(epochs, accs, color="tab:red", linestyle="--", label="target acc")
        ax_acc.set_ylabel("target accuracy")
        ax_acc.set_ylim(0.0, 1.0)
    ax_lr.plot(epochs, [r.lr for r in rows], color="tab:green")
    ax_lr.set_xlabel("epoch")
    ax_lr.set_ylabel("learning rate")
    ax_lr.grid(True, alpha=0.3)
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sweep_figure(knob: str, values: Sequence, accuracies: Sequence[float],
                      path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2), constrained_layout=True)
    numeric = all(isinstance(v, (int, float)) for v in values)
    if numeric:
        ax.plot(values, accuracies, marker="o")
    else:
        x = np.arange(len(values))
        ax.bar(x, accuracies, color="tab:blue")
        ax.set_xticks(x)
        ax.set_xticklabels([str(v) for v in values], rotation=20, ha="right", fontsize=8)
    ax.set_xlabel(knob)
    ax.set_ylabel("target accuracy")
    ax.grid(True, alpha=0.3)
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_au_distribution_figure(dist: np.ndarray, class_names: Sequence[str],
                                path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 3.2), constrained_layout=True)
    im = ax.imshow(dist, aspect="auto", cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_yticks(np.arange(len(class_names)))
    ax.set_yticklabels(class_names, fontsize=8)
    ax.set_xlabel("action unit")
    ax.set_ylabel("class")
    fig.colorbar(im, ax=ax, label="occurrence frequency")
    fig.savefig(path, dpi=150)
    plt.close(fig)
