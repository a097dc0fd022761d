"""Matplotlib figures emitted alongside the delimited report output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

import numpy as np  # noqa: E402

from .correlation import CorrelationCurves  # noqa: E402


def _mean_band(curves: CorrelationCurves):
    """Per-frame mean and std over valid mesh points."""
    tdim = curves.frames
    mean = np.full(tdim, np.nan)
    std = np.full(tdim, np.nan)
    for t in range(tdim):
        vals = curves.values[t][curves.valid[t]]
        if vals.size:
            mean[t] = vals.mean()
            std[t] = vals.std()
    return mean, std


def plot_curve_comparison(path, named_curves, real: CorrelationCurves | None = None,
                          title: str = "") -> None:
    """Mean correlation vs frame for each run, with the real curves overlaid.

    `named_curves` maps run name -> CorrelationCurves; all curves share
    the frame axis.
    """
    fig, ax = plt.subplots(figsize=(7, 4))
    if real is not None:
        mean, std = _mean_band(real)
        ts = np.arange(len(mean))
        ax.plot(ts, mean, color="black", lw=2, label="real")
        ax.fill_between(ts, mean - std, mean + std, color="black", alpha=0.12)
    for name, curves in named_curves.items():
        mean, _ = _mean_band(curves)
        ax.plot(np.arange(len(mean)), mean, lw=1.5, label=name)
    ax.set_xlabel("frame")
    ax.set_ylabel("mean correlation")
    ax.set_ylim(-0.05, 1.05)
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=130)
    plt.close(fig)
