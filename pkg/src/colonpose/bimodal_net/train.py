"""Pair assembly and the SGD training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..losses import LossWeights
from ..pose_algebra import Pose, pose_to_vec6
from . import tape as T
from .model import (Architecture, BimodalConfig, forward, init_params, labels_from_tz, objective,
                    run_numpy, standardize)

log = logging.getLogger(__name__)


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    steps: int = 1500
    batch_size: int = 16
    lr: float = 5e-4
    momentum: float = 0.9
    warmup: int = 100
    lr_floor: float = 0.05    # final learning rate as a fraction of ``lr``
    clip: float = 1000.0      # global gradient-norm clip; only catches spikes
    w_c: float = 0.1
    seed: int = 0
    val_every: int = 250
    reverse_pairs: bool = True
    learn_loss_weights: bool = True  # False keeps beta, gamma at their initial values

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("need lr > 0 and 0 <= momentum < 1")
        if not 0 <= self.lr_floor <= 1:
            raise ValueError("lr_floor must lie in [0, 1]")

    def effective_w_c(self, cfg: BimodalConfig) -> float:
        return 0.0 if cfg.mode in ("bimodal_nosup", "unimodal") else self.w_c

    def lr_at(self, step: int) -> float:
        """Linear warm-up, then cosine decay to ``lr_floor`` times the base rate."""
        if step < self.warmup:
            return self.lr * (step + 1) / self.warmup
        frac = (step - self.warmup) / max(1, self.steps - self.warmup)
        f = self.lr_floor
        return self.lr * (f + (1 - f) * 0.5 * (1 + math.cos(math.pi * frac)))


@dataclass
class PairSet:
    """Image pairs k frames apart: ``index`` rows are (trajectory, first, second)."""

    images: list
    index: np.ndarray
    gt6: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.index)

    def batch(self, rows, dtype=np.float32):
        ix = self.index[rows]
        a = np.stack([self.images[t][i] for t, i, _ in ix])
        b = np.stack([self.images[t][j] for t, _, j in ix])
        return standardize(a, dtype), standardize(b, dtype), self.gt6[rows].astype(dtype), self.labels[rows]


def make_pairs(trajectories, k: int, reverse: bool = False) -> PairSet:
    """Pairs (i, i+k) from each loaded trajectory (objects with ``images`` and
    ``poses``); ``reverse`` adds every pair backwards with the inverted pose."""
    rows, vecs, tzs = [], [], []
    images = []
    for t, tr in enumerate(trajectories):
        images.append(tr.images)
        poses: list[Pose] = list(tr.poses.poses)
        seq_rows, seq_vecs = [], []
        for i in range(len(poses) - k):
            rel = poses[i].inverse() @ poses[i + k]
            seq_rows.append((t, i, i + k))
            seq_vecs.append(pose_to_vec6(rel))
            if reverse:
                seq_rows.append((t, i + k, i))
                seq_vecs.append(pose_to_vec6(rel.inverse()))
        rows += seq_rows
        vecs += seq_vecs
        tzs += [v[2] for v in seq_vecs]
    if not rows:
        raise ValueError("no pairs: trajectories are shorter than k + 1 frames")
    return PairSet(images, np.array(rows, dtype=np.int64), np.array(vecs), labels_from_tz(tzs))


@dataclass
class TrainResult:
    params: dict
    weights: LossWeights
    arch: Architecture
    cfg: BimodalConfig
    hyper: TrainConfig
    curve: list = field(default_factory=list)

    CURVE_HEADER = ("step", "lr", "total", "pose", "cls", "beta", "gamma", "val_acc")


def direction_accuracy_on(params, pairs: PairSet, arch, cfg, limit: int | None = None) -> float:
    """Held-out accuracy of the class head (argmax vs label)."""
    rows = np.arange(len(pairs)) if limit is None else np.arange(min(limit, len(pairs)))
    x1, x2, _, lab = pairs.batch(rows)
    probs, _, _ = run_numpy(params, x1, x2, arch, cfg)
    if probs is None:
        return float("nan")
    return float(np.mean(np.argmax(probs, axis=1) == lab))


def train(pairs: PairSet, cfg: BimodalConfig, hyper: TrainConfig, arch: Architecture | None = None,
          val_pairs: PairSet | None = None, dtype=np.float32, progress=None) -> TrainResult:
    """Minimise pose loss + w_c * class loss with SGD + momentum; beta and
    gamma are trained jointly.  Deterministic for a fixed seed."""
    if len(pairs) == 0:
        raise ValueError("empty dataset")
    arch = arch or Architecture(resolution=pairs.images[0].shape[1])
    params = init_params(arch, cfg, hyper.seed, dtype)
    beta = np.array(0.0, dtype=dtype)
    gamma = np.array(-3.0, dtype=dtype)
    vel = {k: np.zeros_like(v) for k, v in params.items()}
    vb, vg = np.zeros_like(beta), np.zeros_like(gamma)
    w_c = hyper.effective_w_c(cfg)
    rng = np.random.default_rng(hyper.seed + 1)
    drop_rng = np.random.default_rng(hyper.seed + 2)
    order = rng.permutation(len(pairs))
    cursor = 0
    result = TrainResult(params, LossWeights(0.0, -3.0, w_c), arch, cfg, hyper)
    bs = min(hyper.batch_size, len(pairs))
    for step in range(hyper.steps):
        if cursor + bs > len(order):
            order, cursor = rng.permutation(len(pairs)), 0
        rows = order[cursor:cursor + bs]
        cursor += bs
        x1, x2, gt6, lab = pairs.batch(rows, dtype)

        tape = T.Tape()
        P = {k: tape.param(v) for k, v in params.items()}
        bv, gv = tape.param(beta), tape.param(gamma)
        fw = forward(P, x1, x2, arch, cfg, training=True, rng=drop_rng)
        total, lp, lc = objective(fw, gt6, lab, bv, gv, w_c)
        tv = float(total.value)
        if not np.isfinite(tv):
            raise NonFiniteLoss(f"non-finite loss {tv} at step {step} (lr {hyper.lr_at(step):g})")
        tape.backward(total)

        grads = {k: (P[k].grad if P[k].grad is not None else np.zeros_like(v)) for k, v in params.items()}
        gnorm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
        c = min(1.0, hyper.clip / gnorm) if gnorm > 0 else 1.0
        lr = hyper.lr_at(step)
        for k in params:
            vel[k] = hyper.momentum * vel[k] - lr * c * grads[k]
            params[k] = params[k] + vel[k]
        if hyper.learn_loss_weights:
            vb = hyper.momentum * vb - lr * bv.grad
            vg = hyper.momentum * vg - lr * gv.grad
            beta, gamma = (beta + vb).astype(dtype), (gamma + vg).astype(dtype)

        row = [step, lr, tv, float(lp.value), float(lc.value) if lc is not None else float("nan"),
               float(beta), float(gamma), float("nan")]
        if val_pairs is not None and cfg.bimodal and ((step + 1) % hyper.val_every == 0 or step + 1 == hyper.steps):
            row[-1] = direction_accuracy_on(params, val_pairs, arch, cfg, limit=512)
            log.info("step %d loss %.4f val direction accuracy %.3f", step + 1, tv, row[-1])
        result.curve.append(row)
        if progress is not None:
            progress(step, row)
    result.params = params
    result.weights = LossWeights(float(beta), float(gamma), w_c)
    return result


def write_curve(path, curve) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TrainResult.CURVE_HEADER)
        for r in curve:
            w.writerow([r[0]] + [f"{v:.9g}" for v in r[1:]])


def hyper_dict(h: TrainConfig) -> dict:
    return asdict(h)
