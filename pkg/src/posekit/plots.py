"""PNG rendering for analysis grids and spike-location scatter data."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .behavior import AnalysisGrid, SpikeLocations


def plot_grid(grid: AnalysisGrid, path, title: str = "", cmap: str = "viridis") -> None:
    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    vals = grid.values
    if grid.mask is not None:
        vals = np.ma.masked_array(vals, grid.mask)
    # values[i, j] indexes (x bin, y bin); pcolormesh wants y-major
    mesh = ax.pcolormesh(grid.x_edges, grid.y_edges, vals.T, cmap=cmap)
    fig.colorbar(mesh, ax=ax, label=grid.units)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_spike_locations(data: SpikeLocations, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6.0, 6.0))
    if len(data.trajectory):
        ax.plot(data.trajectory[:, 0], data.trajectory[:, 1],
                color="0.7", linewidth=0.8, zorder=1)
    if len(data.rows):
        sc = ax.scatter(data.rows[:, 0], data.rows[:, 1], c=data.rows[:, 2],
                        cmap="hsv", vmin=-180, vmax=180, s=12, zorder=2)
        fig.colorbar(sc, ax=ax, label="head direction (deg)")
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
