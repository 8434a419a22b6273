"""Warping losses, the learned-weight pose loss and the class loss.

Image losses take masked means so the loss scale does not depend on image
size.  ``pose_loss_grad`` is the analytic gradient used by the trainer.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.ndimage import uniform_filter

from .pose_algebra import RelPose6

SSIM_WINDOW = 7
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PROB_FLOOR = 1e-12


class NoOverlapError(ValueError):
    """The validity mask selects no pixel (or no full SSIM window)."""


@dataclass
class LossWeights:
    beta: float = 0.0
    gamma: float = -3.0
    w_c: float = 0.1

    def __post_init__(self):
        if not (np.isfinite(self.beta) and np.isfinite(self.gamma)):
            raise ValueError("beta and gamma must be finite")
        if self.w_c < 0:
            raise ValueError("w_c must be non-negative")


@dataclass
class LossReport:
    pair_id: str
    l_r: float = 0.0
    l_s: float = 0.0
    l_g: float = 0.0
    l_pose: float = 0.0
    l_class: float = 0.0
    total: float = 0.0
    valid_fraction: float = 0.0

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list[str]:
        return [self.pair_id] + [f"{v:.9g}" for k, v in asdict(self).items() if k != "pair_id"]


def write_loss_reports(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LossReport.header())
        for r in reports:
            w.writerow(r.row())


def _vals(img):
    return np.asarray(getattr(img, "values", img), dtype=float)


def _check_mask(mask, shape):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise ValueError(f"mask shape {mask.shape} does not match image {shape}")
    if not mask.any():
        raise NoOverlapError("validity mask is empty: the images do not overlap")
    return mask


def equalize_means(target, warped, mask):
    """Scale ``warped`` so its masked mean intensity matches the target's."""
    t, w = _vals(target), _vals(warped)
    m = np.asarray(mask, dtype=bool)
    mw = w[m].mean()
    if mw <= 0:
        return w
    return w * (t[m].mean() / mw)


def reprojection_loss(target, warped, mask, equalize_mean: bool = False) -> float:
    """Masked mean absolute per-channel difference."""
    t, w = _vals(target), _vals(warped)
    if t.shape != w.shape:
        raise ValueError("target and warped images differ in shape")
    m = _check_mask(mask, t.shape[:2])
    if equalize_mean:
        w = equalize_means(t, w, m)
    return float(np.abs(t[m] - w[m]).mean())


def ssim_map(x: np.ndarray, y: np.ndarray, window: int = SSIM_WINDOW) -> np.ndarray:
    """Per-window SSIM with a uniform window, valid windows only, averaged over channels."""
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    h, w = x.shape[:2]
    if h < window or w < window:
        raise ValueError(f"image {h}x{w} is smaller than the {window}x{window} SSIM window")
    r = window // 2
    size = (window, window, 1)
    mu_x = uniform_filter(x, size, mode="nearest")
    mu_y = uniform_filter(y, size, mode="nearest")
    sxx = uniform_filter(x * x, size, mode="nearest") - mu_x ** 2
    syy = uniform_filter(y * y, size, mode="nearest") - mu_y ** 2
    sxy = uniform_filter(x * y, size, mode="nearest") - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (sxx + syy + SSIM_C2)
    s = (num / den).mean(axis=-1)
    return s[r:h - r, r:w - r]


def ssim_loss(target, warped, mask, window: int = SSIM_WINDOW) -> float:
    """Mean of (1 - SSIM) / 2 over windows lying entirely on valid pixels."""
    t, w = _vals(target), _vals(warped)
    if t.shape != w.shape:
        raise ValueError("target and warped images differ in shape")
    s = ssim_map(t, w, window)
    m = np.asarray(mask, dtype=bool)
    if m.shape != t.shape[:2]:
        raise ValueError("mask shape does not match image")
    r = window // 2
    full = uniform_filter(m.astype(float), window, mode="constant")[r:-r, r:-r] > 1 - 1e-9
    if not full.any():
        raise NoOverlapError("no SSIM window lies entirely inside the valid region")
    return float(((1.0 - s[full]) / 2.0).mean())


def geometric_consistency_loss(d_warped, d_projected, mask) -> float:
    """Masked mean of |a - b| / (a + b)."""
    a, b = _vals(d_warped), _vals(d_projected)
    if a.shape != b.shape:
        raise ValueError("depth maps differ in shape")
    m = _check_mask(mask, a.shape)
    return float((np.abs(a[m] - b[m]) / (a[m] + b[m])).mean())


def _vec6(p) -> np.ndarray:
    return p.as_vector() if isinstance(p, RelPose6) else np.asarray(p, dtype=float).reshape(6)


def pose_loss(pred, gt, w: LossWeights) -> float:
    """|t_hat - t|_1 e^-beta + beta + |logq_hat - logq|_1 e^-gamma + gamma."""
    d = _vec6(pred) - _vec6(gt)
    return float(np.abs(d[:3]).sum() * np.exp(-w.beta) + w.beta
                 + np.abs(d[3:]).sum() * np.exp(-w.gamma) + w.gamma)


def pose_loss_grad(pred, gt, w: LossWeights):
    """Analytic gradient of ``pose_loss``: (d/dpred (6,), d/dbeta, d/dgamma)."""
    d = _vec6(pred) - _vec6(gt)
    eb, eg = np.exp(-w.beta), np.exp(-w.gamma)
    g_pred = np.sign(d) * np.array([eb] * 3 + [eg] * 3)
    g_beta = 1.0 - np.abs(d[:3]).sum() * eb
    g_gamma = 1.0 - np.abs(d[3:]).sum() * eg
    return g_pred, float(g_beta), float(g_gamma)


def class_loss(pred_probs, label: int) -> float:
    p = np.asarray(pred_probs, dtype=float)
    return float(-np.log(max(p[int(label)], PROB_FLOOR)))


def supervised_target(pose_l: float, class_l: float, w: LossWeights) -> float:
    return float(pose_l + w.w_c * class_l)
