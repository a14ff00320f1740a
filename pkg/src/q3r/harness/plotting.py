"""Matplotlib figures written next to the CSV outputs (Agg backend, files only)."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_training(rows: list[dict], path) -> Path:
    """Loss, accuracy and per-matrix tail ratio / eps against epoch."""
    epochs = sorted({r["epoch"] for r in rows})
    first = {}
    for r in rows:
        first.setdefault(r["epoch"], r)
    per_matrix = defaultdict(list)
    for r in rows:
        per_matrix[r["matrix"]].append(r)

    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    ax = axes[0]
    ax.plot(epochs, [first[e]["train_loss"] for e in epochs], label="train")
    ax.plot(epochs, [first[e]["eval_loss"] for e in epochs], label="eval")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    acc = [first[e]["eval_accuracy"] for e in epochs]
    ax2 = ax.twinx()
    ax2.plot(epochs, acc, color="k", ls=":", label="eval acc")
    ax2.set_ylabel("eval accuracy")
    for name, rs in per_matrix.items():
        axes[1].plot([r["epoch"] for r in rs], [r["tail_ratio"] for r in rs], label=name)
        eps = [r["eps"] for r in rs]
        if any(e > 0 for e in eps):
            axes[2].semilogy([r["epoch"] for r in rs], eps, label=name)
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("tail ratio at r_target")
    axes[1].legend(fontsize=7)
    axes[2].set_xlabel("epoch")
    axes[2].set_ylabel("eps")
    if axes[2].lines:
        axes[2].legend(fontsize=7)
    return _save(fig, path)


def plot_truncation(rows: list[dict], path) -> Path:
    """Accuracy against retention, one line per label."""
    by_label = defaultdict(list)
    for r in rows:
        if r["metric"] == "accuracy":
            by_label[r["label"]].append((r["retention"], r["value"]))
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for label, pts in sorted(by_label.items()):
        pts.sort()
        ax.plot([100 * p for p, _ in pts], [a for _, a in pts], marker="o", label=label)
    ax.set_xlabel("parameter retention (%)")
    ax.set_ylabel("accuracy")
    ax.legend()
    return _save(fig, path)


def plot_sweep(rows: list[dict], path) -> Path:
    """Accuracy against retention for every successful grid cell."""
    cells = defaultdict(list)
    for r in rows:
        if r["status"] == "ok":
            key = f"lambda={r['lambda']:g} T={r['period']} r={r['r_target']}"
            cells[key].append((r["retention"], r["accuracy"]))
    fig, ax = plt.subplots(figsize=(6.5, 4.2))
    for key, pts in cells.items():
        pts.sort()
        ax.plot([100 * p for p, _ in pts], [a for _, a in pts], marker=".", label=key)
    ax.set_xlabel("parameter retention (%)")
    ax.set_ylabel("accuracy")
    if cells:
        ax.legend(fontsize=7)
    return _save(fig, path)
