"""Are self-supervised warping losses minimised by the true pose?

For sampled frame pairs the source frame is warped into the target view with
ground-truth depth and ground-truth relative pose, and the photometric and
geometric losses are recorded.  The same reprojection loss is then evaluated
for a grid of perturbed poses; a pair "fails" when some wrong pose scores
lower than the truth.
"""

from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import fileio
from .camera import DepthMap, RgbImage, warp_depth, warp_image
from .losses import NoOverlapError, geometric_consistency_loss, reprojection_loss, ssim_loss
from .pose_algebra import Pose, rot_x, rot_y, rot_z, translate


@dataclass
class StudyRow:
    pair_id: str
    target: int
    source: int
    l_r: float
    l_s: float
    l_g: float
    valid_fraction: float
    best_l_r: float
    best_perturbation: str
    wrong_pose_lower: int

    @classmethod
    def header(cls):
        return [f.name for f in fields(cls)]

    def row(self):
        return [f"{v:.9g}" if isinstance(v, float) else str(v) for v in asdict(self).values()]


def perturbation_grid(trans_cm=(0.05, 0.1, 0.2), rot_deg=(0.5, 1.0, 2.0)) -> list[tuple[str, Pose]]:
    """Single-axis offsets: +-t along x, y, z and +-r about x, y, z."""
    grid = []
    for a in trans_cm:
        for s in (1, -1):
            for axis, name in enumerate("xyz"):
                v = [0.0, 0.0, 0.0]
                v[axis] = s * a
                grid.append((f"t{name}{s * a:+g}", translate(*v)))
    for a in rot_deg:
        for s in (1, -1):
            for f, name in ((rot_x, "x"), (rot_y, "y"), (rot_z, "z")):
                grid.append((f"r{name}{s * a:+g}", f(s * a)))
    return grid


def pair_losses(tgt_img: RgbImage, tgt_depth: DepthMap, src_img: RgbImage, src_depth: DepthMap,
                omega: Pose, equalize_mean: bool = False):
    """(l_r, l_s, l_g, valid_fraction, warped image, mask) for one pose hypothesis."""
    warped, mask = warp_image(tgt_depth, src_img, omega)
    l_r = reprojection_loss(tgt_img, warped, mask, equalize_mean)
    try:
        l_s = ssim_loss(tgt_img, warped, mask)
    except NoOverlapError:
        l_s = float("nan")
    d_w, d_p, m2 = warp_depth(tgt_depth, src_depth, omega)
    l_g = geometric_consistency_loss(d_w, d_p, m2)
    return l_r, l_s, l_g, float(mask.mean()), warped, mask


def sample_pairs(n_frames: int, k: int, n_pairs: int, seed: int) -> np.ndarray:
    """Sorted target frame indices for (t, t+k) pairs, without replacement when possible."""
    avail = n_frames - k
    if avail <= 0:
        raise ValueError(f"need more than k={k} frames")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(avail, size=min(n_pairs, avail), replace=False))


def run_study(images, depths, poses, k_intr, k: int = 5, n_pairs: int = 100, seed: int = 0,
              grid=None, equalize_mean: bool = False, dump_dir=None, n_dumps: int = 0):
    """Evaluate every sampled pair; returns a list of StudyRow.

    ``images`` are uint8 or [0,1] arrays, ``depths`` z-depth arrays,
    ``poses`` world-from-camera Poses.
    """
    grid = grid if grid is not None else perturbation_grid()
    rows = []
    for n, t in enumerate(sample_pairs(len(poses), k, n_pairs, seed)):
        s = int(t) + k
        tgt, src = _rgb(images[t], k_intr), _rgb(images[s], k_intr)
        dt, ds = DepthMap(np.asarray(depths[t], float), k_intr), DepthMap(np.asarray(depths[s], float), k_intr)
        omega = poses[t].inverse() @ poses[s]
        l_r, l_s, l_g, vf, warped, mask = pair_losses(tgt, dt, src, ds, omega, equalize_mean)
        best, best_name, best_img = np.inf, "", None
        for name, delta in grid:
            w, m = warp_image(dt, src, omega @ delta)
            try:
                v = reprojection_loss(tgt, w, m, equalize_mean)
            except NoOverlapError:
                continue
            if v < best:
                best, best_name, best_img = v, name, (w, m)
        rows.append(StudyRow(f"{t:05d}-{s:05d}", int(t), s, l_r, l_s, l_g, vf, float(best), best_name,
                             int(best < l_r)))
        if dump_dir is not None and n < n_dumps:
            _dump(dump_dir, rows[-1].pair_id, tgt, src, warped, mask, best_img)
    return rows


def _rgb(a, k_intr) -> RgbImage:
    a = np.asarray(a)
    v = a.astype(float) / 255.0 if a.dtype == np.uint8 else a.astype(float)
    return RgbImage(v, k_intr)


def _error_map(target, warped, mask):
    e = np.abs(target.values - warped.values).mean(axis=2) * mask
    return np.repeat(np.clip(4.0 * e, 0, 1)[..., None], 3, axis=2)


def _dump(out, pair_id, tgt, src, warped, mask, best):
    os.makedirs(out, exist_ok=True)
    stem = os.path.join(out, pair_id)
    fileio.write_ppm(stem + "_target.ppm", tgt.values)
    fileio.write_ppm(stem + "_source.ppm", src.values)
    fileio.write_ppm(stem + "_warped_gt.ppm", warped.values)
    fileio.write_ppm(stem + "_error_gt.ppm", _error_map(tgt, warped, mask))
    if best is not None:
        fileio.write_ppm(stem + "_warped_best.ppm", best[0].values)
        fileio.write_ppm(stem + "_error_best.ppm", _error_map(tgt, best[0], best[1]))


def write_rows(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(StudyRow.header())
        for r in rows:
            w.writerow(r.row())


def summarize(rows) -> dict:
    lr = np.array([r.l_r for r in rows])
    lg = np.array([r.l_g for r in rows])
    return {
        "pairs": len(rows),
        "fraction_wrong_pose_lower": float(np.mean([r.wrong_pose_lower for r in rows])),
        "gt_l_r_mean": float(lr.mean()),
        "gt_l_g_mean": float(lg.mean()),
        "gt_l_r_min": float(lr.min()),
        "gt_l_g_min": float(lg.min()),
    }
