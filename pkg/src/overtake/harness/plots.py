"""Figures written next to the CSV outputs (Agg backend, no display needed)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "legend.frameon": False,
}
# no software/version stamp, so equal data gives equal bytes
PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata=PNG_META)
    plt.close(fig)
    return path


def plot_raceline(center, raceline, history, path):
    with plt.rc_context(STYLE):
        fig, (ax, ax2) = plt.subplots(1, 2, figsize=(9, 3.5),
                                      gridspec_kw={"width_ratios": [2, 1]})
        ax.plot(center[:, 0], center[:, 1], "--", color="0.5", label="centerline")
        ax.plot(raceline[:, 0], raceline[:, 1], color="C3", label="raceline")
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.legend(loc="best")
        ax2.semilogy(np.maximum(history, 1e-300), marker=".")
        ax2.set_xlabel("accepted iteration")
        ax2.set_ylabel(r"$\sum \kappa^2$")
        return _save(fig, path)


def plot_training(metrics: list[dict], path):
    u = np.array([m["update"] for m in metrics])
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
        axes[0].plot(u, [m["mean_reward"] for m in metrics], color="C0")
        axes[0].set_ylabel("mean reward per step")
        for k in ("velocity", "progress", "overtake", "raceline", "collision", "heading",
                  "smooth"):
            axes[1].plot(u, [m[f"r_{k}"] for m in metrics], label=k)
        axes[1].set_ylabel("mean component (unweighted)")
        axes[1].legend(fontsize=7, ncol=2)
        axes[2].plot(u, [m["clip_frac"] for m in metrics], label="clip fraction")
        axes[2].plot(u, [m["approx_kl"] for m in metrics], label="approx. KL")
        axes[2].legend()
        for ax in axes:
            ax.set_xlabel("update")
        return _save(fig, path)


def plot_trajectories(trajs: list[np.ndarray], corridor_halfwidth, path, title=""):
    """Agent (solid) and opponent (dashed) paths per episode; columns as TRAJ_COLUMNS."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(10, 3))
        for k, tr in enumerate(trajs):
            c = f"C{k % 10}"
            ax.plot(tr[:, 1], tr[:, 2], color=c)
            ax.plot(tr[:, 5], tr[:, 6], "--", color=c, alpha=0.6)
            ok = ~np.isnan(tr[:, 10])
            if ok.any():
                ax.plot(tr[ok, 10], tr[ok, 11], ".", color=c, ms=2)
        if corridor_halfwidth:
            for s in (-1, 1):
                ax.axhline(s * corridor_halfwidth, color="k", lw=0.8)
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.set_title(title)
        return _save(fig, path)


def plot_replay(gt_t, gt_xy, est: np.ndarray, path):
    """Estimates (columns EST_COLUMNS) against ground truth over time."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 1, figsize=(8, 4.5), sharex=True)
        for i, name in enumerate("xy"):
            ax = axes[i]
            ax.plot(gt_t, gt_xy[:, i], color="k", label="ground truth")
            ax.plot(est[:, 0], est[:, 1 + i], color="C3", label="UKF")
            sig = est[:, 5 + i]
            ax.fill_between(est[:, 0], est[:, 1 + i] - 2 * sig, est[:, 1 + i] + 2 * sig,
                            color="C3", alpha=0.2, lw=0)
            ax.set_ylabel(f"{name} [m]")
        axes[0].legend(loc="best")
        axes[1].set_xlabel("t [s]")
        return _save(fig, path)
