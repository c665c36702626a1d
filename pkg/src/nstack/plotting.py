"""Matplotlib figures written next to the TSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_validation_curves(metrics: list[dict], path, title=""):
    """Validation cross-entropy difference against epoch, one line per restart."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for r in sorted({m["restart"] for m in metrics}):
        rows = [m for m in metrics if m["restart"] == r]
        ax.plot([m["epoch"] for m in rows], [m["valid_cross_entropy_diff"] for m in rows], lw=1, label=f"restart {r}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy diff. (nats)")
    ax.set_title(title)
    if metrics:
        ax.legend(fontsize=6)
    _save(fig, path)


def plot_by_length(rows: list[dict], path, title=""):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r["length"] for r in rows], [r["cross_entropy_diff"] for r in rows], marker=".", lw=1)
    ax.set_xlabel("length")
    ax.set_ylabel("cross-entropy diff. (nats)")
    ax.set_title(title)
    _save(fig, path)


def plot_pca(points: np.ndarray, labels, path, title=""):
    fig, ax = plt.subplots(figsize=(4.5, 4))
    for lab in sorted(set(labels)):
        m = np.array([x == lab for x in labels])
        ax.scatter(points[m, 0], points[m, 1], s=6, label=str(lab))
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.set_title(title)
    ax.legend(title="next symbol", fontsize=7)
    _save(fig, path)


def plot_heatmap(matrix: np.ndarray, row_labels, col_labels, path, title=""):
    """Reading-over-time matrix: one column per timestep, one row per reading entry."""
    fig, ax = plt.subplots(figsize=(max(4, 0.22 * len(row_labels) + 1.5), max(3, 0.2 * len(col_labels) + 1)))
    im = ax.imshow(matrix.T, aspect="auto", cmap="viridis", interpolation="nearest")
    ax.set_xticks(range(len(row_labels)))
    ax.set_xticklabels(row_labels, fontsize=6)
    ax.set_yticks(range(len(col_labels)))
    ax.set_yticklabels(col_labels, fontsize=6)
    ax.set_xlabel("input symbol")
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    _save(fig, path)
