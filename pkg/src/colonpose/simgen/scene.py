"""Tube geometry: Catmull-Rom centerlines, transported frames and fold profile."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..pose_algebra import quat_from_matrix, rot_x, rot_y

DENSE_SPACING = 0.02  # cm between dense centerline samples


def _catmull_rom_segment(p0, p1, p2, p3, t, alpha=0.5):
    """Centripetal Catmull-Rom between p1 and p2 evaluated at t in [0, 1] (vectorised)."""
    def knot(ti, a, b):
        return ti + max(np.linalg.norm(b - a), 1e-12) ** alpha

    t0 = 0.0
    t1 = knot(t0, p0, p1)
    t2 = knot(t1, p1, p2)
    t3 = knot(t2, p2, p3)
    tt = (t1 + (t2 - t1) * np.asarray(t))[:, None]
    a1 = (t1 - tt) / (t1 - t0) * p0 + (tt - t0) / (t1 - t0) * p1
    a2 = (t2 - tt) / (t2 - t1) * p1 + (tt - t1) / (t2 - t1) * p2
    a3 = (t3 - tt) / (t3 - t2) * p2 + (tt - t2) / (t3 - t2) * p3
    b1 = (t2 - tt) / (t2 - t0) * a1 + (tt - t0) / (t2 - t0) * a2
    b2 = (t3 - tt) / (t3 - t1) * a2 + (tt - t1) / (t3 - t1) * a3
    return (t2 - tt) / (t2 - t1) * b1 + (tt - t1) / (t2 - t1) * b2


def transport_frames(points: np.ndarray, tangents: np.ndarray, n0: np.ndarray | None = None) -> np.ndarray:
    """Rotation-minimising normals along a sampled curve (double reflection method)."""
    n = len(tangents)
    normals = np.empty_like(tangents)
    t0 = tangents[0]
    if n0 is None:
        ref = np.array([0.0, 1.0, 0.0]) if abs(t0[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        n0 = ref - ref.dot(t0) * t0
    n0 = n0 - n0.dot(t0) * t0
    normals[0] = n0 / np.linalg.norm(n0)
    for i in range(n - 1):
        ti, tj = tangents[i], tangents[i + 1]
        v1 = points[i + 1] - points[i]
        c1 = v1.dot(v1)
        if c1 < 1e-30:
            normals[i + 1] = normals[i]
            continue
        r = normals[i] - (2.0 / c1) * v1.dot(normals[i]) * v1
        tl = ti - (2.0 / c1) * v1.dot(ti) * v1
        v2 = tj - tl
        c2 = v2.dot(v2)
        r = r if c2 < 1e-30 else r - (2.0 / c2) * v2.dot(r) * v2
        r -= r.dot(tj) * tj
        normals[i + 1] = r / np.linalg.norm(r)
    return normals


@dataclass
class Centerline:
    """Arclength-sampled spline through control points.

    ``points``/``tangents``/``normals``/``binormals`` are dense samples spaced
    ``spacing`` cm apart; ``knots`` holds the arclength of every control point.
    """

    control: np.ndarray
    points: np.ndarray = field(repr=False)
    tangents: np.ndarray = field(repr=False)
    normals: np.ndarray = field(repr=False)
    binormals: np.ndarray = field(repr=False)
    knots: np.ndarray
    spacing: float

    @property
    def length(self) -> float:
        return float((len(self.points) - 1) * self.spacing)

    @classmethod
    def through(cls, control, spacing: float = DENSE_SPACING, n0=None) -> "Centerline":
        c = np.asarray(control, dtype=float)
        if len(c) < 2:
            raise ValueError("a centerline needs at least two control points")
        gaps = np.linalg.norm(np.diff(c, axis=0), axis=1)
        if np.any(gaps < 1e-6):
            raise ValueError("degenerate spline: consecutive waypoints coincide")
        ext = np.vstack([2 * c[0] - c[1], c, 2 * c[-1] - c[-2]])
        fine = 400
        ts = np.linspace(0.0, 1.0, fine, endpoint=False)
        segs, seg_id = [], []
        for i in range(len(c) - 1):
            segs.append(_catmull_rom_segment(ext[i], ext[i + 1], ext[i + 2], ext[i + 3], ts))
            seg_id.append(i + ts)
        segs.append(c[-1:])
        seg_id.append(np.array([len(c) - 1.0]))
        poly = np.vstack(segs)
        par = np.concatenate(seg_id)
        arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(poly, axis=0), axis=1))])
        n = int(np.floor(arc[-1] / spacing)) + 1
        s = np.arange(n) * spacing
        u = np.interp(s, arc, par)
        pts = np.empty((n, 3))
        for i in range(len(c) - 1):
            sel = (u >= i) & ((u < i + 1) | (i == len(c) - 2))
            if sel.any():
                pts[sel] = _catmull_rom_segment(ext[i], ext[i + 1], ext[i + 2], ext[i + 3],
                                                np.clip(u[sel] - i, 0.0, 1.0))
        tan = np.gradient(pts, axis=0)
        tan /= np.linalg.norm(tan, axis=1, keepdims=True)
        nor = transport_frames(pts, tan, n0)
        bin_ = np.cross(tan, nor)
        knots = np.interp(np.arange(len(c), dtype=float), par, arc)
        return cls(c, pts, tan, nor, bin_, knots, spacing)

    def index(self, s) -> np.ndarray:
        return np.clip(np.round(np.asarray(s) / self.spacing).astype(int), 0, len(self.points) - 1)

    def position(self, s) -> np.ndarray:
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        f = s / self.spacing
        i0 = np.minimum(np.floor(f).astype(int), len(self.points) - 2)
        w = (f - i0)[..., None]
        return self.points[i0] * (1 - w) + self.points[i0 + 1] * w

    def frame(self, s) -> np.ndarray:
        """Camera-style frame at arclength s: columns (normal, tangent x normal, tangent)."""
        f = float(np.clip(s, 0.0, self.length)) / self.spacing
        i = min(int(np.floor(f)), len(self.points) - 2)
        w = f - i
        t = self.tangents[i] * (1 - w) + self.tangents[i + 1] * w
        t /= np.linalg.norm(t)
        nrm = self.normals[i] * (1 - w) + self.normals[i + 1] * w
        nrm -= nrm.dot(t) * t
        nrm /= np.linalg.norm(nrm)
        return np.column_stack([nrm, np.cross(t, nrm), t])


def fold_profile_slope(power: float) -> float:
    """max over theta of d/dtheta [max(0, cos theta)^power]."""
    th = np.linspace(0, np.pi / 2, 20001)
    return float(np.max(power * np.cos(th) ** (power - 1) * np.sin(th)))


@dataclass
class TubeScene:
    centerline: Centerline
    base_radius: float = 2.5
    fold_amplitude: float = 0.9
    fold_frequency: float = 0.4
    fold_power: float = 4.0
    fold_phase: float = 0.0
    texture_seed: int = 0

    def __post_init__(self):
        if not (self.base_radius > self.fold_amplitude >= 0):
            raise ValueError("need base_radius > fold_amplitude >= 0")
        if self.fold_frequency < 0:
            raise ValueError("fold_frequency must be non-negative")

    def radius(self, s) -> np.ndarray:
        c = np.cos(2 * np.pi * self.fold_frequency * (np.asarray(s, dtype=float) - self.fold_phase))
        return self.base_radius - self.fold_amplitude * np.maximum(c, 0.0) ** self.fold_power

    def lipschitz(self) -> float:
        """Bound on |grad F| for F = radius(s) - distance to centerline."""
        slope = self.fold_amplitude * 2 * np.pi * self.fold_frequency * fold_profile_slope(self.fold_power)
        return 1.0 + 1.5 * slope

    def surface_distance(self, points: np.ndarray) -> np.ndarray:
        """Approximate |distance to the tube wall| for world points (Nx3), brute force."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        from scipy.spatial import cKDTree

        cl = self.centerline
        _, idx = cKDTree(cl.points).query(pts)
        d = pts - cl.points[idx]
        along = np.einsum("ij,ij->i", d, cl.tangents[idx])
        s = idx * cl.spacing + along
        radial = d - along[:, None] * cl.tangents[idx]
        rho = np.linalg.norm(radial, axis=1)
        return np.abs(self.radius(s) - rho)


def base_waypoint_positions(n: int = 18, spacing: float = 5.0, max_turn_deg: float = 22.0,
                            seed: int = 0) -> np.ndarray:
    """Meandering control points starting at the origin heading along +z."""
    rng = np.random.default_rng(seed)
    pts = [np.zeros(3)]
    heading = np.eye(3)
    for _ in range(n - 1):
        yaw, pitch = rng.uniform(-max_turn_deg, max_turn_deg, 2)
        heading = heading @ rot_y(yaw).rotation @ rot_x(pitch).rotation
        pts.append(pts[-1] + spacing * heading[:, 2])
    return np.array(pts)


def make_scene(seed: int = 0, n_waypoints: int = 18, spacing: float = 5.0, **tube) -> TubeScene:
    cl = Centerline.through(base_waypoint_positions(n_waypoints, spacing, seed=seed))
    return TubeScene(cl, texture_seed=seed, **tube)


def straight_scene(length: float = 30.0, **tube) -> TubeScene:
    """Straight tube along +z, mostly for tests."""
    n = max(int(round(length / 5.0)), 1) + 1
    ctrl = np.column_stack([np.zeros(n), np.zeros(n), np.linspace(0.0, length, n)])
    return TubeScene(Centerline.through(ctrl, n0=np.array([1.0, 0.0, 0.0])), **tube)


def frame_quaternion(frame: np.ndarray) -> np.ndarray:
    return quat_from_matrix(frame)
