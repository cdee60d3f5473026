"""Figures written straight to image files (Agg backend, no display needed)."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _show(x: np.ndarray) -> np.ndarray:
    """[C,H,W] in [-1,1] -> something imshow understands."""
    x = np.clip((np.asarray(x) + 1) / 2, 0, 1)
    return x[0] if x.shape[0] == 1 else x.transpose(1, 2, 0)


def plot_sweep(reports, path, chance: float | None = None) -> None:
    """Probe error and cycle error against sigma, one marker per seed and the mean line."""
    by_sigma = defaultdict(list)
    for r in reports:
        if not r.diverged:
            by_sigma[r.sigma].append(r)
    sigmas = sorted(by_sigma)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    panels = (("probe_err_generated", "probe error on generated sketches"),
              ("cycle_err", "held-out cycle error (L1)"))
    for ax, (attr, title) in zip(axes, panels):
        for s in sigmas:
            vals = [getattr(r, attr) for r in by_sigma[s]]
            ax.scatter([s] * len(vals), vals, color="0.6", s=14, zorder=2)
        means = [np.mean([getattr(r, attr) for r in by_sigma[s]]) for s in sigmas]
        ax.plot(sigmas, means, "o-", color="C0", zorder=3)
        ax.set_xlabel("noise sigma (8-bit units)")
        ax.set_title(title, fontsize=10)
        ax.grid(alpha=0.3)
    if chance is not None:
        axes[0].axhline(chance, color="C3", ls="--", lw=1, label="chance")
        axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_triptych(photo: np.ndarray, sketch: np.ndarray, recon: np.ndarray, path,
                  title: str = "") -> None:
    fig, axes = plt.subplots(1, 3, figsize=(6, 2.3))
    for ax, img, name in zip(axes, (photo, sketch, recon), ("photo", "sketch", "photo again")):
        ax.imshow(_show(img), cmap="gray", vmin=0, vmax=1, interpolation="nearest")
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_grid(rows: list[list[np.ndarray]], path, labels: list[str] | None = None) -> None:
    """Rows of [C,H,W] images, e.g. photo / generated sketch / reference sketch columns."""
    nr, nc = len(rows), max(len(r) for r in rows)
    fig, axes = plt.subplots(nr, nc, figsize=(1.6 * nc, 1.6 * nr), squeeze=False)
    for i, row in enumerate(rows):
        for j in range(nc):
            ax = axes[i][j]
            ax.axis("off")
            if j < len(row):
                ax.imshow(_show(row[j]), cmap="gray", vmin=0, vmax=1, interpolation="nearest")
            if i == 0 and labels and j < len(labels):
                ax.set_title(labels[j], fontsize=8)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)
