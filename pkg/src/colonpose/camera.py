"""Pinhole projection and dense inverse warping.

Pixel (row i, column j) has continuous coordinates (x=j, y=i); no half-pixel
offset is used anywhere, and the renderer follows the same convention.
Camera axes: x right, y down, z forward along the optical axis.  Depth maps
store z-depth (distance along the optical axis), not ray length.

``omega`` arguments are relative camera poses ``P_target^-1 P_source``: the
source camera expressed in the target camera frame.  A point seen by the
target camera at X therefore sits at ``omega^-1 X`` in the source camera.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pose_algebra import Pose

EDGE_EPS = 1e-9  # pixels; tolerance on the image-bounds test


class BehindCameraError(ValueError):
    pass


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @classmethod
    def default(cls, resolution: int = 128) -> "Intrinsics":
        """Wide pinhole, about 94 degrees horizontal FOV at any resolution."""
        scale = resolution / 128.0
        return cls(60.0 * scale, 60.0 * scale, 64.0 * scale, 64.0 * scale, resolution, resolution)

    def as_line(self) -> str:
        return f"{self.fx!r} {self.fy!r} {self.cx!r} {self.cy!r} {self.width} {self.height}"

    @classmethod
    def from_line(cls, line: str) -> "Intrinsics":
        fx, fy, cx, cy, w, h = line.split()
        return cls(float(fx), float(fy), float(cx), float(cy), int(w), int(h))


@dataclass(frozen=True, eq=False)
class DepthMap:
    values: np.ndarray
    intrinsics: Intrinsics

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != self.intrinsics.shape:
            raise ValueError(f"depth shape {v.shape} does not match intrinsics {self.intrinsics.shape}")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("depth values must be positive and finite")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class RgbImage:
    values: np.ndarray
    intrinsics: Intrinsics

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != self.intrinsics.shape + (3,):
            raise ValueError(f"image shape {v.shape} does not match intrinsics {self.intrinsics.shape}")
        object.__setattr__(self, "values", v)


def project(point, k: Intrinsics) -> np.ndarray:
    x, y, z = np.asarray(point, dtype=float)
    if not z > 0:
        raise BehindCameraError(f"point has non-positive depth z={z}")
    return np.array([k.fx * x / z + k.cx, k.fy * y / z + k.cy])


def backproject(pixel, depth: float, k: Intrinsics) -> np.ndarray:
    if not depth > 0:
        raise ValueError(f"depth must be positive, got {depth}")
    u, v = np.asarray(pixel, dtype=float)
    return np.array([(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth])


def pixel_grid(k: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:k.height, 0:k.width]
    return xs.astype(float), ys.astype(float)


def backproject_depth(depth: np.ndarray, k: Intrinsics) -> np.ndarray:
    """HxW z-depth -> HxWx3 camera-space points."""
    xs, ys = pixel_grid(k)
    d = np.asarray(depth, dtype=float)
    return np.stack([(xs - k.cx) / k.fx * d, (ys - k.cy) / k.fy * d, d], axis=-1)


def _sample_locations(values, xs, ys):
    """Bilinear interpolation at in-bounds float locations (caller has masked)."""
    h, w = values.shape[:2]
    x0 = np.minimum(np.floor(xs).astype(np.intp), w - 2)
    y0 = np.minimum(np.floor(ys).astype(np.intp), h - 2)
    fx = xs - x0
    fy = ys - y0
    if values.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    v00 = values[y0, x0]
    v01 = values[y0, x0 + 1]
    v10 = values[y0 + 1, x0]
    v11 = values[y0 + 1, x0 + 1]
    return (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy


def bilinear_sample(image, location):
    """Sample ``image`` (array, RgbImage or DepthMap) at subpixel (x, y).

    Locations must satisfy 0 <= x <= W-1 and 0 <= y <= H-1; on the last row or
    column the 2x2 neighbourhood is shifted inward so integer locations stay exact.
    """
    values = np.asarray(getattr(image, "values", image), dtype=float)
    h, w = values.shape[:2]
    if h < 2 or w < 2:
        raise ValueError("bilinear sampling needs at least a 2x2 image")
    x, y = (float(c) for c in location)
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        raise ValueError(f"location ({x}, {y}) outside [0, {w - 1}] x [0, {h - 1}]")
    out = _sample_locations(values, np.array([x]), np.array([y]))[0]
    return out if values.ndim == 3 else float(out)


def reproject(target_depth: np.ndarray, omega: Pose, k: Intrinsics):
    """Map every target pixel into the source camera.

    Returns source pixel coordinates (xs, ys), the source-frame z of each
    transformed point, and the validity mask.
    """
    pts = backproject_depth(target_depth, k)
    # omega^-1 X = R^T (X - t)
    src = (pts - omega.translation) @ omega.rotation
    z = src[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        us = k.fx * src[..., 0] / z + k.cx
        vs = k.fy * src[..., 1] / z + k.cy
    # border pixels that round-trip to 63 + 1e-15 still count as inside
    mask = (z > 0) & (us >= -EDGE_EPS) & (us <= k.width - 1 + EDGE_EPS)
    mask &= (vs >= -EDGE_EPS) & (vs <= k.height - 1 + EDGE_EPS)
    mask &= np.isfinite(us) & np.isfinite(vs)
    us = np.where(mask, np.clip(us, 0, k.width - 1), us)
    vs = np.where(mask, np.clip(vs, 0, k.height - 1), vs)
    return us, vs, z, mask


def warp_image(target_depth: DepthMap, source: RgbImage, omega_target_to_source: Pose):
    """Inverse-warp ``source`` into the target view using the target depth.

    Pixels whose reprojection leaves the source image or lands behind the
    source camera are masked out and set to 0.  Occlusions are not tested:
    a target point hidden from the source camera still samples whatever the
    source sees along that ray.
    """
    k = target_depth.intrinsics
    if source.intrinsics.shape != k.shape:
        raise ValueError("target depth and source image sizes differ")
    us, vs, _, mask = reproject(target_depth.values, omega_target_to_source, k)
    out = np.zeros(k.shape + (3,), dtype=np.float64)
    out[mask] = _sample_locations(np.asarray(source.values, dtype=float), us[mask], vs[mask])
    return RgbImage(out, k), mask


def warp_depth(target_depth: DepthMap, source_depth: DepthMap, omega: Pose):
    """Return (sampled source depth, projected target depth, mask).

    The sampled depth is the source depth map read at the reprojected
    locations; the projected depth is the z of each target point after moving
    it into the source frame.  Invalid pixels carry the target depth in both
    outputs so the maps stay strictly positive.
    """
    k = target_depth.intrinsics
    if source_depth.intrinsics.shape != k.shape:
        raise ValueError("target and source depth sizes differ")
    us, vs, z, mask = reproject(target_depth.values, omega, k)
    tgt = np.asarray(target_depth.values, dtype=float)
    sampled = tgt.copy()
    projected = tgt.copy()
    sampled[mask] = _sample_locations(np.asarray(source_depth.values, dtype=float), us[mask], vs[mask])
    projected[mask] = z[mask]
    return DepthMap(sampled, k), DepthMap(projected, k), mask
