"""Matplotlib figure rendering for the CLI report paths.

Every figure lands next to its delimited counterpart (history CSV,
slice CSV, ablation CSV) so a run directory is self-describing.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .metrics import SLICE_CLAMP, FieldSlice
from .training import TrainHistory


def save_history_figure(history: TrainHistory, path) -> Path:
    """Loss decomposition and probe consistency over training steps."""
    steps = [r[0] for r in history.records]
    base = [r[1] for r in history.records]
    align = [r[2] for r in history.records]
    cons = [r[4] for r in history.records]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.plot(steps, base, label="baseline")
    if any(a != 0 for a in align):
        ax1.plot(steps, align, label="alignment")
    ax1.set_yscale("log")
    ax1.set_xlabel("step")
    ax1.set_ylabel("loss term")
    ax1.legend()
    ax2.plot(steps, cons, color="tab:red")
    ax2.set_yscale("log")
    ax2.set_xlabel("step")
    ax2.set_ylabel("mean probe consistency")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_slice_figure(sl: FieldSlice, path, n_contours: int = 11) -> Path:
    """Cross-section with signed-distance shading and level set contours."""
    fig, ax = plt.subplots(figsize=(5, 4.4))
    extent = (sl.v[0], sl.v[-1], sl.u[0], sl.u[-1])
    im = ax.imshow(sl.values, origin="lower", extent=extent, cmap="RdBu",
                   vmin=-SLICE_CLAMP, vmax=SLICE_CLAMP)
    levels = np.linspace(-SLICE_CLAMP, SLICE_CLAMP, n_contours)
    ax.contour(sl.v, sl.u, sl.values, levels=levels, colors="k", linewidths=0.4)
    ax.contour(sl.v, sl.u, sl.values, levels=[0.0], colors="k", linewidths=1.4)
    ax.set_title(f"slice {sl.axis}={sl.offset:g}")
    fig.colorbar(im, ax=ax, label="signed distance")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_ablation_figure(rows: list[dict], path) -> Path:
    """CD and NC per ablation variant."""
    labels = [r["variant"] for r in rows]
    cd = [float(r["cd"]) for r in rows]
    nc = [float(r["nc"]) for r in rows]
    x = np.arange(len(rows))
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(max(5, 0.9 * len(rows)), 6),
                                   sharex=True)
    ax1.bar(x, cd, color="tab:blue")
    ax1.set_ylabel("chamfer distance")
    ax2.bar(x, nc, color="tab:green")
    ax2.set_ylabel("normal consistency")
    ax2.set_ylim(min(nc) - 0.01, 1.0)
    ax2.set_xticks(x)
    ax2.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
