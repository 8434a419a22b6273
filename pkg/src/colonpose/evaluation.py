"""Trajectory metrics: scale, ATE, RTE, ROT, direction accuracy and t_z histograms.

All lengths are cm and angles degrees.  Every "mean over steps" in the
metrics is a median.  Predicted trajectories are compared without any
rotational or translational alignment; only an optional least-squares scale
is applied.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import fileio
from .pose_algebra import Pose, Trajectory, rotation_angle_deg

HIST_EDGES = np.linspace(-1.5, 1.5, 51)  # cm, t_z of k=5 steps
ZERO_TZ = 1e-9


@dataclass
class MetricReport:
    trajectory: str
    direction: str  # forward | backward
    ate: float
    rte: float
    rot: float
    direction_accuracy: float
    scale: float
    n_steps: int
    manhattan: float = float("nan")

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise ValueError(f"direction must be forward or backward, got {self.direction!r}")

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list[str]:
        out = []
        for v in asdict(self).values():
            out.append(f"{v:.9g}" if isinstance(v, float) else str(v))
        return out


@dataclass
class Histogram:
    bin_edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if len(self.counts) != len(self.bin_edges) - 1:
            raise ValueError("need one more edge than counts")
        if np.any(np.diff(self.bin_edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")


def histogram(values, edges=HIST_EDGES) -> Histogram:
    """Histogram of ``values``; samples outside the edges are dropped."""
    counts, e = np.histogram(np.asarray(values, dtype=float), bins=np.asarray(edges, dtype=float))
    return Histogram(e, counts)


def manhattan_histogram_loss(a: Histogram, b: Histogram) -> float:
    if a.bin_edges.shape != b.bin_edges.shape or not np.array_equal(a.bin_edges, b.bin_edges):
        raise ValueError("histograms use different bin edges")
    return float(np.abs(a.counts - b.counts).sum())


def _positions(traj) -> np.ndarray:
    if isinstance(traj, Trajectory):
        return traj.positions()
    if len(traj) and isinstance(traj[0], Pose):
        return np.array([p.translation for p in traj])
    return np.asarray(traj, dtype=float).reshape(-1, 3)


def _check_lengths(a, b, minimum: int = 1):
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) < minimum:
        raise ValueError(f"need at least {minimum} entries, got {len(a)}")


def scale_factor(gt, pred) -> float:
    """Least-squares scalar s minimising sum |t_gt - s t_pred|^2 over absolute translations."""
    g, p = _positions(gt), _positions(pred)
    _check_lengths(g, p, 2)
    den = float(np.sum(p * p))
    if den == 0.0:
        raise ValueError("predicted translations are all zero; scale undefined")
    return float(np.sum(g * p)) / den


def _error_poses(gt_rel, pred_rel):
    _check_lengths(gt_rel, pred_rel)
    return [g.inverse() @ p for g, p in zip(gt_rel, pred_rel)]


def rte(gt_rel, pred_rel) -> float:
    """Median over steps of |translation(gt^-1 pred)|."""
    return float(np.median([np.linalg.norm(e.translation) for e in _error_poses(gt_rel, pred_rel)]))


def rot(gt_rel, pred_rel) -> float:
    """Median over steps of the rotation angle of gt^-1 pred, in degrees."""
    return float(np.median([rotation_angle_deg(e) for e in _error_poses(gt_rel, pred_rel)]))


def ate(gt, pred_scaled) -> float:
    """Median over frames of |t_gt - t_pred|."""
    g, p = _positions(gt), _positions(pred_scaled)
    _check_lengths(g, p)
    return float(np.median(np.linalg.norm(g - p, axis=1)))


def direction_accuracy(gt_rel, pred_rel) -> float:
    """Fraction of steps whose predicted t_z sign matches ground truth
    (steps with |t_z| < 1e-9 in the ground truth are skipped)."""
    _check_lengths(gt_rel, pred_rel)
    g = np.array([r.translation[2] for r in gt_rel])
    p = np.array([r.translation[2] for r in pred_rel])
    keep = np.abs(g) >= ZERO_TZ
    if not keep.any():
        raise ValueError("every ground-truth step has zero t_z; accuracy undefined")
    return float(np.mean(np.sign(g[keep]) == np.sign(p[keep])))


def _relatives(poses: list[Pose]) -> list[Pose]:
    return [a.inverse() @ b for a, b in zip(poses[:-1], poses[1:])]


def _scaled(poses: list[Pose], s: float) -> list[Pose]:
    return [Pose(p.rotation, s * p.translation) for p in poses]


def _phase_metrics(gt: list[Pose], pred: list[Pose], rescale: bool):
    """Metrics of one sub-trajectory, both expressed relative to their first frame."""
    g0, p0 = gt[0].inverse(), pred[0].inverse()
    g = [g0 @ x for x in gt]
    p = [p0 @ x for x in pred]
    try:
        s = scale_factor(g, p)
    except ValueError:
        s = 1.0
    if rescale:
        p = _scaled(p, s)
    gr, pr = _relatives(g), _relatives(p)
    try:
        acc = direction_accuracy(gr, pr)
    except ValueError:
        acc = float("nan")
    return ate(g, p), rte(gr, pr), rot(gr, pr), acc, s, len(gr)


def step_tz(poses: list[Pose], k: int) -> np.ndarray:
    return np.array([(a.inverse() @ b).translation[2] for a, b in zip(poses[:-k], poses[k:])])


def evaluate_direction(gt: list[Pose], pred: list[Pose], k: int, rescale: bool = False,
                       name: str = "traj", direction: str = "forward",
                       edges=HIST_EDGES) -> MetricReport:
    """Average the metrics of the k phase-offset sub-trajectories gt[p::k]."""
    _check_lengths(gt, pred)
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(gt) < k + 1:
        raise ValueError(f"need more than k={k} frames, got {len(gt)}")
    rows = [_phase_metrics(gt[p::k], pred[p::k], rescale) for p in range(k) if len(gt[p::k]) >= 2]
    a = np.array([r[:5] for r in rows], dtype=float)
    n_steps = int(sum(r[5] for r in rows))
    acc = float(np.nanmean(a[:, 3])) if np.isfinite(a[:, 3]).any() else float("nan")
    tz_g, tz_p = step_tz(gt, k), step_tz(pred, k)
    man = manhattan_histogram_loss(histogram(tz_g, edges), histogram(tz_p, edges))
    return MetricReport(name, direction, float(a[:, 0].mean()), float(a[:, 1].mean()),
                        float(a[:, 2].mean()), acc, float(a[:, 4].mean()), n_steps, man)


def evaluate_run(gt_poses_file, pred_poses_file, k: int = 5, rescale: bool = False,
                 backward_pred_file=None, name: str = "traj") -> tuple[MetricReport, MetricReport]:
    """Forward and backward reports for a ground-truth and predicted pose file.

    The backward direction walks the frames in reverse order.  When a
    separate backward prediction file is given (frames listed in reverse
    order) it is used; otherwise the forward prediction is reversed, which
    amounts to inverting its relative poses.
    """
    gt = fileio.read_poses(gt_poses_file)
    pred = fileio.read_poses(pred_poses_file)
    if len(gt) != len(pred):
        raise ValueError(f"{gt_poses_file} has {len(gt)} poses but {pred_poses_file} has {len(pred)}")
    fwd = evaluate_direction(gt, pred, k, rescale, name, "forward")
    if backward_pred_file is not None:
        bpred = fileio.read_poses(backward_pred_file)
        if len(bpred) != len(gt):
            raise ValueError(f"{backward_pred_file} has {len(bpred)} poses, expected {len(gt)}")
    else:
        bpred = pred[::-1]
    bwd = evaluate_direction(gt[::-1], bpred, k, rescale, name, "backward")
    return fwd, bwd


def write_reports(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MetricReport.header())
        for r in reports:
            w.writerow(r.row())


def write_histograms(path, gt: Histogram, pred: Histogram) -> None:
    if not np.array_equal(gt.bin_edges, pred.bin_edges):
        raise ValueError("histograms use different bin edges")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count_gt", "count_pred"])
        e = gt.bin_edges
        for i in range(len(gt.counts)):
            w.writerow([f"{e[i]:.6g}", f"{e[i + 1]:.6g}", int(gt.counts[i]), int(pred.counts[i])])
