"""Deterministic SVG line plots for scenario reports."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "capillary-lab"
matplotlib.rcParams["svg.fonttype"] = "none"
matplotlib.rcParams["path.simplify"] = False


def line_plot(path, series, xlabel: str, ylabel: str, title: str = "", logx: bool = False, logy: bool = False,
              markers: bool = True) -> None:
    """Write ``series`` (a list of ``(label, xs, ys)``) to an SVG file with no timestamp."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, xs, ys in series:
        ax.plot(list(xs), list(ys), marker="o" if markers else None, markersize=3, linewidth=1.2, label=label)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, linewidth=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
