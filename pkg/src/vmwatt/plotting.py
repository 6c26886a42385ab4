"""Figures written next to the delimited outputs (SVG, PNG or PDF by extension)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (7.0, 3.2),
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "vmwatt",  # stable element ids between runs
}


def plot_truth_vs_prediction(truth, prediction, path: str | Path, title: str | None = None,
                             max_points: int | None = 300) -> Path:
    """Line chart of measured vs estimated watts over held-out samples."""
    truth = np.asarray(truth, dtype=float)
    prediction = np.asarray(prediction, dtype=float)
    if max_points is not None:
        truth, prediction = truth[:max_points], prediction[:max_points]
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.arange(len(truth))
        ax.plot(x, truth, lw=1.0, color="0.2", label="measured")
        ax.plot(x, prediction, lw=1.0, ls="--", color="tab:orange", label="estimated")
        ax.set_xlabel("held-out sample")
        ax.set_ylabel("power (W)")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False, loc="upper right")
        fig.tight_layout()
        fig.savefig(path, metadata={"Date": None} if path.suffix == ".svg" else None)
        plt.close(fig)
    return path


def plot_importances(importances: dict[str, float], path: str | Path,
                     title: str | None = None) -> Path:
    path = Path(path)
    names = list(importances)
    values = [importances[n] for n in names]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 2.8))
        ax.bar(names, values, color="tab:blue")
        ax.set_ylabel("MDI importance (%)")
        ax.set_ylim(0, 100)
        for i, v in enumerate(values):
            ax.text(i, v + 1.5, f"{v:.1f}", ha="center", fontsize=7)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, metadata={"Date": None} if path.suffix == ".svg" else None)
        plt.close(fig)
    return path
