"""Static figures: phenotype heatmap and population/resource time series."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .simulator import Trajectory  # noqa: E402

__all__ = ["heatmap_bounds", "plot_heatmap", "plot_series"]


def heatmap_bounds(*trajectories: Trajectory) -> tuple[float, float]:
    vmax = max(float(np.max([n.max() for _, n in tr.snapshots])) for tr in trajectories)
    return 0.0, vmax if vmax > 0 else 1.0


def _edges(centers: np.ndarray, lo: float, hi: float) -> np.ndarray:
    mid = 0.5 * (centers[1:] + centers[:-1])
    return np.concatenate([[lo], mid, [hi]])


def plot_heatmap(traj: Trajectory, path, alpha: float | None = None, bounds=None, title: str | None = None) -> dict:
    """n(x, t) as a heatmap on [0, 1] x [t0, t_end]; returns the colour scale and extent."""
    times = np.array([t for t, _ in traj.snapshots])
    data = np.array([n for _, n in traj.snapshots])
    K = data.shape[1]
    t0, t1 = float(traj.times[0]), float(traj.times[-1])
    vmin, vmax = bounds if bounds is not None else heatmap_bounds(traj)
    x_edges = np.linspace(0.0, 1.0, K + 1)
    t_edges = _edges(times, t0, t1) if times.size > 1 else np.array([t0, t1])

    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    mesh = ax.pcolormesh(x_edges, t_edges, data, vmin=vmin, vmax=vmax, cmap="viridis", shading="flat")
    if alpha is not None:
        ax.axvline(alpha, color="w", lw=0.8, ls="--")
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(t0, t1)
    ax.set_xlabel("expression level x")
    ax.set_ylabel("t")
    if title:
        ax.set_title(title)
    fig.colorbar(mesh, ax=ax, label="n(x, t)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return {"vmin": float(vmin), "vmax": float(vmax), "extent": [0.0, 1.0, t0, t1]}


def plot_series(traj: Trajectory, path, N_alpha_hat: float | None = None, R_hat: float | None = None) -> None:
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(5.5, 5.0), sharex=True)
    ax0.plot(traj.times, traj.N_series, label="N")
    ax0.plot(traj.times, traj.N_alpha_series, label=r"$N_\alpha$")
    if N_alpha_hat is not None:
        ax0.axhline(N_alpha_hat, color="k", lw=0.7, ls=":", label=r"$\hat N_\alpha$")
    ax0.set_ylabel("biomass")
    ax0.legend(loc="best", fontsize=8)
    ax1.plot(traj.times, traj.R_series, color="C2", label="R")
    if R_hat is not None:
        ax1.axhline(R_hat, color="k", lw=0.7, ls=":", label="d/b")
    ax1.set_ylabel("R")
    ax1.set_xlabel("t")
    ax1.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
