"""Figures rendered from the CSV outputs.

Every function reads the CSV files it is given and nothing else, so a figure
can always be regenerated from the delimited output. SVGs are written with a
fixed hash salt and no timestamp to keep them byte-stable.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {
    "svg.hashsalt": "metapopsim",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.linewidth": 0.8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "figure.dpi": 100,
}

_MARKERS = ("o", "^", "s", "D")


def read_columns(path) -> dict[str, list[float]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {name: [float(r[i]) for r in body] for i, name in enumerate(header)}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_paths(csv_path, svg_path, titles=None) -> Path:
    """One panel per ``panel_*`` column of a path CSV."""
    cols = read_columns(csv_path)
    names = [c for c in cols if c.startswith("panel_")]
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, len(names), figsize=(3.3 * len(names), 2.6), squeeze=False)
        for k, (ax, name) in enumerate(zip(axes[0], names)):
            ax.plot(cols["t"], cols[name], lw=0.6, color="black")
            ax.set_ylim(0.0, 1.02)
            ax.set_xlabel("t")
            ax.set_ylabel("survival probability")
            if titles:
                ax.set_title(titles[k], fontsize=8)
        fig.tight_layout()
        return _save(fig, svg_path)


def plot_occupancy(sim_csvs: dict, limit_csv, svg_path, title=None) -> Path:
    """Per-patch simulated proportions against the limiting occupancy line.

    ``sim_csvs`` maps a legend label (e.g. ``"n = 50"``) to a simulation CSV.
    """
    limit = read_columns(limit_csv)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        for marker, (label, path) in zip(_MARKERS, sim_csvs.items()):
            cols = read_columns(path)
            ax.scatter(cols["z"], cols["occupancy_proportion"], s=12, marker=marker,
                       facecolors="none", edgecolors="black", linewidths=0.6, label=label)
        ax.plot(limit["z"], limit["occupancy"], color="black", lw=1.0, label="limit")
        ax.set_xlabel("z")
        ax.set_ylabel("proportion of time occupied")
        ax.set_xlim(min(limit["z"]) - 0.2, max(limit["z"]) + 0.2)
        if title:
            ax.set_title(title, fontsize=8)
        ax.legend(loc="lower center", fontsize=7)
        fig.tight_layout()
        return _save(fig, svg_path)
