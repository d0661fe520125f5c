"""Figure rendering for the report path (matplotlib, file output only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from numpy.typing import NDArray

from .geometry import FAR, OMEGA, REGION_NAMES, W1, W2, Grid

_REGION_COLORS = {OMEGA: "tab:red", W1: "tab:blue", W2: "tab:green", FAR: "0.8"}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=140, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_regions(grid: Grid, path: str | Path) -> Path:
    """Scatter of grid nodes colored by region label."""
    fig, ax = plt.subplots(figsize=(6, 6))
    pts = grid.nodes if grid.n > 1 else np.column_stack([grid.nodes[:, 0], 0 * grid.nodes[:, 0]])
    for code, name in REGION_NAMES.items():
        sel = grid.region == code
        ax.scatter(pts[sel, 0], pts[sel, 1], s=6, label=name, color=_REGION_COLORS[code])
    ax.set_aspect("equal")
    ax.legend(loc="upper left", fontsize=8)
    ax.set_title(f"grid regions (h = {grid.h:g}, N = {grid.n_nodes})")
    return _save(fig, Path(path))


def plot_scalar(grid: Grid, values: NDArray[np.float64], path: str | Path, title: str) -> Path:
    """Scalar per-node field: image for n = 2, line for n = 1, scatter for n = 3."""
    values = np.asarray(values, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 5))
    if grid.n == 1:
        ax.plot(grid.nodes[:, 0], values, marker="o", ms=3)
        ax.set_xlabel("x")
    elif grid.n == 2:
        img = values.reshape(grid.shape)
        lo, hi = np.asarray(grid.geometry.box.lo), np.asarray(grid.geometry.box.hi)
        im = ax.imshow(
            img.T,
            origin="lower",
            extent=[lo[0], hi[0], lo[1], hi[1]],
            aspect="equal",
            cmap="viridis",
        )
        fig.colorbar(im, ax=ax, shrink=0.85)
    else:
        sc = ax.scatter(grid.nodes[:, 0], grid.nodes[:, 1], c=values, s=8, cmap="viridis")
        fig.colorbar(sc, ax=ax, shrink=0.85)
    ax.set_title(title)
    return _save(fig, Path(path))


def plot_vector(
    grid: Grid,
    nodes_idx: NDArray[np.int64],
    vectors: NDArray[np.float64],
    path: str | Path,
    title: str,
) -> Path:
    """Quiver (n = 2) or signed component plot (n = 1) of a nodal vector field."""
    pts = grid.nodes[nodes_idx]
    fig, ax = plt.subplots(figsize=(6, 6))
    if grid.n == 2:
        ax.quiver(pts[:, 0], pts[:, 1], vectors[:, 0], vectors[:, 1], scale=3.0)
        ax.set_aspect("equal")
    else:
        ax.plot(pts[:, 0], vectors[:, 0], marker="o", ms=3)
        ax.set_xlabel("x")
    ax.set_title(title)
    return _save(fig, Path(path))


def plot_runge_table(table: list[dict], path: str | Path, title: str) -> Path:
    """Residual and density norm versus the regularization weight."""
    alphas = [row["alpha"] for row in table if row["alpha"] > 0]
    resids = [row["residual"] for row in table if row["alpha"] > 0]
    norms = [row["g_norm"] for row in table if row["alpha"] > 0]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(alphas, resids, marker="o", label="relative residual")
    ax.loglog(alphas, norms, marker="s", label="density norm")
    ax.invert_xaxis()
    ax.set_xlabel("alpha")
    ax.legend(fontsize=8)
    ax.set_title(title)
    return _save(fig, Path(path))


def plot_matrix(values: NDArray[np.float64], path: str | Path, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(values, aspect="auto", cmap="RdBu_r")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_xlabel("source node")
    ax.set_ylabel("receiver node")
    ax.set_title(title)
    return _save(fig, Path(path))


def plot_linearization(rows, path: str | Path) -> Path:
    eps = [row.eps for row in rows]
    dev = [row.deviation for row in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(eps, dev, marker="o")
    ax.set_xlabel("eps")
    ax.set_ylabel("relative linearization deviation")
    ax.set_title("first-order linearization")
    return _save(fig, Path(path))
