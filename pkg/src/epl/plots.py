"""Figure rendering for the CLI report paths.

Every report that writes delimited output also renders a matplotlib figure
next to it. Figures are PNG files produced with the Agg backend; nothing
here opens a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

FIG_STYLE = {
    "figure.figsize": (7.0, 4.2),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)


def save_training_curves(rows, path) -> None:
    """Loss and held-out verification metrics over epochs, two panels."""
    epochs = [r["epoch"] for r in rows]
    with plt.rc_context(FIG_STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
        ax1.plot(epochs, [r["loss"] for r in rows], color="#1f77b4")
        ax1.set_xlabel("epoch")
        ax1.set_ylabel("mean training loss")
        ax1.set_title("loss")
        ax2.plot(epochs, [r["tar_far2"] for r in rows], label="TAR@FAR=1e-2")
        ax2.plot(epochs, [r["rank1"] for r in rows], label="rank-1")
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("rate")
        ax2.set_ylim(0.0, 1.02)
        ax2.set_title("held-out metrics")
        ax2.legend()
        _save(fig, path)


def save_similarity_histogram(summary, path, label="top-k negative cosine") -> None:
    """Bar rendering of a HistogramSummary with the peak marked."""
    centers = (summary.bin_edges[:-1] + summary.bin_edges[1:]) / 2.0
    width = summary.bin_edges[1] - summary.bin_edges[0]
    with plt.rc_context(FIG_STYLE):
        fig, ax = plt.subplots()
        ax.bar(centers, summary.counts, width=width * 0.95, color="#1f77b4")
        ax.axvline(summary.peak, color="#d62728", linestyle="--",
                   label=f"peak {summary.peak:.2f}")
        ax.axvline(summary.mean, color="#2ca02c", linestyle=":",
                   label=f"mean {summary.mean:.3f}")
        ax.set_xlabel(label)
        ax.set_ylabel("count")
        ax.legend()
        _save(fig, path)


def save_alignment_figure(series: dict, path) -> None:
    """Per-class alignment curves, one line per prototype source."""
    with plt.rc_context(FIG_STYLE):
        fig, ax = plt.subplots()
        for name, values in series.items():
            ax.plot(range(len(values)), values, marker=".", linestyle="",
                    label=f"{name} (mean {sum(values) / len(values):.4f})")
        ax.set_xlabel("class")
        ax.set_ylabel("cosine to class centroid")
        ax.legend()
        _save(fig, path)


def save_tar_curve(points, path) -> None:
    """TAR as a function of FAR on a log x axis."""
    fars = [p["far"] for p in points]
    tars = [p["tar"] for p in points]
    with plt.rc_context(FIG_STYLE):
        fig, ax = plt.subplots()
        ax.semilogx(fars, tars, marker="o")
        ax.set_xlabel("FAR")
        ax.set_ylabel("TAR")
        ax.set_ylim(0.0, 1.02)
        _save(fig, path)


def save_sweep_figure(rows, path) -> None:
    """Final metric per sweep cell, grouped by axis."""
    with plt.rc_context(FIG_STYLE):
        fig, ax = plt.subplots(figsize=(9, 4))
        labels = [f"{r['axis']}={r['value']}" for r in rows]
        ax.bar(range(len(rows)), [r["tar_far2"] for r in rows], color="#1f77b4")
        ax.set_xticks(range(len(rows)), labels, rotation=45, ha="right")
        ax.set_ylabel("TAR@FAR=1e-2")
        _save(fig, path)
