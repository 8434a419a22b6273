"""Figures written next to the CSV outputs (Agg backend, PNG files)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "figure.figsize": (5.0, 3.4),
}
# no timestamps or versions in the files, so reruns are byte-identical
PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata=PNG_META)
    plt.close(fig)
    return str(path)


def tz_histogram(edges, gt_counts, pred_counts=None, path="tz_hist.png", title=None):
    """Step t_z histogram; a second series is drawn as an outline."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        centers = 0.5 * (edges[1:] + edges[:-1])
        width = np.diff(edges)
        ax.bar(centers, gt_counts, width=width, color="#7a9cc6", label="ground truth")
        if pred_counts is not None:
            ax.step(edges, np.r_[pred_counts, pred_counts[-1]], where="post", color="#c0504d",
                    label="prediction")
            ax.legend()
        ax.axvline(0.0, color="0.5", lw=0.6)
        ax.set_xlabel("t_z per step (cm)")
        ax.set_ylabel("count")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def trajectories(gt_xyz, pred_xyz=None, path="trajectory.png", title=None):
    """Top (x-z) and side (y-z) projections of absolute positions."""
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 2, figsize=(7.0, 3.2))
        for ax, (i, j, name) in zip(axes, [(0, 2, "x"), (1, 2, "y")]):
            ax.plot(gt_xyz[:, j], gt_xyz[:, i], color="0.2", lw=1.0, label="ground truth")
            if pred_xyz is not None:
                ax.plot(pred_xyz[:, j], pred_xyz[:, i], color="#c0504d", lw=0.8, label="prediction")
            ax.set_xlabel("z (cm)")
            ax.set_ylabel(f"{name} (cm)")
            ax.set_aspect("equal", adjustable="datalim")
        axes[0].legend()
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def training_curve(curve, path="training_curve.png"):
    """Total loss (smoothed) and validation direction accuracy against step."""
    c = np.asarray(curve, dtype=float)
    step, total, acc = c[:, 0], c[:, 2], c[:, 7]
    win = max(1, len(total) // 50)
    smooth = np.convolve(total, np.ones(win) / win, mode="valid")
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.plot(step, total, color="0.8", lw=0.5)
        ax.plot(step[win - 1:], smooth, color="0.1", lw=1.0)
        ax.set_xlabel("step")
        ax.set_ylabel("training loss")
        ok = np.isfinite(acc)
        if ok.any():
            ax2 = ax.twinx()
            ax2.plot(step[ok], acc[ok], "o-", color="#4f81bd", ms=3, lw=0.8)
            ax2.set_ylabel("val. direction accuracy")
            ax2.set_ylim(0, 1.02)
        return _save(fig, path)


def warp_study(gt_lr, best_lr, path="warp_study.png"):
    """Per-pair reprojection loss at ground truth against the best perturbed pose."""
    gt_lr, best_lr = np.asarray(gt_lr), np.asarray(best_lr)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(3.8, 3.6))
        below = best_lr < gt_lr
        ax.scatter(gt_lr[~below], best_lr[~below], s=8, color="0.5", label="ground truth lowest")
        ax.scatter(gt_lr[below], best_lr[below], s=8, color="#c0504d", label="wrong pose lower")
        hi = float(max(gt_lr.max(), best_lr.max())) * 1.05
        ax.plot([0, hi], [0, hi], color="0.3", lw=0.6)
        ax.set_xlim(0, hi)
        ax.set_ylim(0, hi)
        ax.set_xlabel("L_R at ground truth")
        ax.set_ylabel("lowest L_R on perturbation grid")
        ax.legend(loc="upper left")
        return _save(fig, path)
