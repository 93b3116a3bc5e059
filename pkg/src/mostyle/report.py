"""Figure rendering for the CLI report paths.

Every evaluation command writes its numbers as CSV and, next to it, a small
matplotlib figure of the same data. Rendering uses the Agg backend so the CLI
works headless.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def write_csv_matrix(path: str | Path, matrix: np.ndarray) -> None:
    """Comma-separated values, '.' decimal, newline rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.atleast_2d(matrix):
            writer.writerow([f"{v:.9g}" for v in row])


def read_csv_matrix(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh) if row])


def save_loss_curves(log_path: str | Path, fig_path: str | Path) -> None:
    rows = []
    with open(log_path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(rec)
    if not rows:
        return
    steps = np.array([int(r["step"]) for r in rows])
    fig, ax = plt.subplots(figsize=(7, 4))
    for term in ("l_rec", "l_cyc", "l_root", "l_sm", "total"):
        ax.plot(steps, [float(r[term]) for r in rows], label=term, linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def save_msd_bars(msd: np.ndarray, fig_path: str | Path, thresholds=(0.1, 0.05)) -> None:
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.bar(np.arange(len(msd)), msd, color="steelblue")
    for thr, style in zip(thresholds, ("--", ":")):
        ax.axhline(thr, color="firebrick", linestyle=style, linewidth=1, label=f"> {thr}")
    ax.set_xlabel("joint index")
    ax.set_ylabel("MSD (height-normalized)")
    ax.set_xticks(np.arange(len(msd)))
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def save_attention_heatmap(matrix: np.ndarray, fig_path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(matrix, aspect="auto", origin="lower", cmap="viridis")
    ax.set_xlabel("content frame bin")
    ax.set_ylabel("style frame bin")
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def save_trajectories(tracks: list[tuple[str, np.ndarray]], fig_path: str | Path) -> None:
    """Planar root paths; each entry is (label, (T, 2) xz positions)."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for label, xy in tracks:
        ax.plot(xy[:, 0], xy[:, 1], label=label, linewidth=1)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("z (m)")
    ax.axis("equal")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def save_graph_diagram(levels, fig_path: str | Path) -> None:
    """Node-link sketch of the three graph levels, colored by body part."""
    colors = {"LL": "tab:blue", "RL": "tab:cyan", "SP": "tab:gray", "LA": "tab:red", "RA": "tab:orange"}
    fig, axes = plt.subplots(1, len(levels), figsize=(4 * len(levels), 4))
    for ax, g in zip(np.atleast_1d(axes), levels):
        n = g.n_vertices
        angle = np.linspace(0, 2 * np.pi, n, endpoint=False)
        xs, ys = np.cos(angle), np.sin(angle)
        for a, b in g.edges:
            ax.plot([xs[a], xs[b]], [ys[a], ys[b]], color="0.7", linewidth=1, zorder=1)
        for v in range(n):
            ax.scatter(xs[v], ys[v], s=120, color=colors[g.part_labels[v]], zorder=2)
            ax.annotate(str(v), (xs[v], ys[v]), ha="center", va="center", fontsize=7, zorder=3)
        ax.set_title(f"level {g.level} (K={g.K})")
        ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
