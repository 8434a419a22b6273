"""Pairwise prediction over a trajectory and chaining into absolute poses."""

from __future__ import annotations

import numpy as np

from ..pose_algebra import Pose, vec6_to_pose
from .model import Architecture, BimodalConfig, run_numpy, standardize


def predict_pairs(params: dict, arch: Architecture, cfg: BimodalConfig, images: np.ndarray,
                  pairs, batch: int = 64):
    """Predicted 6-vectors (and class probabilities, or None) for (i, j) frame pairs."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if images.shape[1] != arch.resolution or images.shape[2] != arch.resolution:
        raise ValueError(f"images are {images.shape[1]}x{images.shape[2]} but the model expects "
                         f"{arch.resolution}x{arch.resolution}")
    vecs, probs = [], []
    for s in range(0, len(pairs), batch):
        p = pairs[s:s + batch]
        x1 = standardize(images[p[:, 0]])
        x2 = standardize(images[p[:, 1]])
        pr, _, pose = run_numpy(params, x1, x2, arch, cfg, batch=batch)
        vecs.append(pose.astype(np.float64))
        if pr is not None:
            probs.append(pr.astype(np.float64))
    return np.concatenate(vecs), (np.concatenate(probs) if probs else None)


def chain(anchors: list[Pose], rel_vecs: np.ndarray, k: int) -> list[Pose]:
    """Absolute poses: frame i < k is ``anchors[i]``; frame i >= k is
    frame (i - k) composed with the predicted relative pose rel_vecs[i - k]."""
    n = len(rel_vecs) + k
    out = list(anchors[:k])
    for i in range(k, n):
        out.append(out[i - k] @ vec6_to_pose(rel_vecs[i - k]))
    return out


def predict_trajectory(params, arch, cfg, images, gt_poses: list[Pose], batch: int = 64):
    """Forward and backward absolute predictions.

    Forward chains (i -> i+k) predictions from the ground-truth poses of
    the first k frames.  Backward walks the frames in reverse, chaining
    (i -> i-k) predictions from the last k ground-truth poses; its list is
    in reversed frame order.  Also returns the raw per-pair records.
    """
    k = cfg.k
    n = len(gt_poses)
    if n <= k:
        raise ValueError(f"trajectory has {n} frames, need more than k={k}")
    if len(images) != n:
        raise ValueError("image and pose counts differ")
    fwd_pairs = np.array([(i, i + k) for i in range(n - k)])
    bwd_pairs = np.array([(n - 1 - r, n - 1 - r - k) for r in range(n - k)])
    fv, fp = predict_pairs(params, arch, cfg, images, fwd_pairs, batch)
    bv, bp = predict_pairs(params, arch, cfg, images, bwd_pairs, batch)
    fwd = chain(gt_poses[:k], fv, k)
    rev = gt_poses[::-1]
    bwd = chain(rev[:k], bv, k)
    records = (fwd_pairs, fv, fp, bwd_pairs, bv, bp)
    return fwd, bwd, records
