"""Rigid-body poses, log-quaternion 6D vectors and trajectory integration.

Poses are world-from-camera transforms.  The relative pose between two
cameras is ``relative(p1, p2) = p1^-1 p2``: camera 2 expressed in the frame
of camera 1, so a positive z translation means camera 2 sits in front of
camera 1.  Units are centimetres and radians unless a name says otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

ORTHO_TOL = 1e-9


def _as_rotation(rotation) -> np.ndarray:
    r = np.array(rotation, dtype=float).reshape(3, 3)
    r.setflags(write=False)
    return r


@dataclass(frozen=True, eq=False)
class Pose:
    """4x4 rigid transform stored as rotation + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_rotation(self.rotation))
        t = np.array(self.translation, dtype=float).reshape(3)
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got shape {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def is_valid(self, tol: float = ORTHO_TOL) -> bool:
        r = self.rotation
        return bool(
            np.all(np.isfinite(r))
            and np.all(np.isfinite(self.translation))
            and np.allclose(r.T @ r, np.eye(3), atol=tol, rtol=0)
            and abs(np.linalg.det(r) - 1.0) <= tol
        )

    def inverse(self) -> "Pose":
        return invert(self)

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )

    def __repr__(self):
        return f"Pose(R={self.rotation.tolist()}, t={self.translation.tolist()})"


@dataclass(frozen=True)
class UnitQuaternion:
    w: float
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    @classmethod
    def from_array(cls, q) -> "UnitQuaternion":
        q = canonical_quaternion(q)
        return cls(*(float(v) for v in q))


@dataclass(frozen=True, eq=False)
class RelPose6:
    """Translation (cm) followed by the 3D logarithm of a unit quaternion."""

    translation: np.ndarray
    logq: np.ndarray

    def __post_init__(self):
        for name in ("translation", "logq"):
            v = np.array(getattr(self, name), dtype=float).reshape(3)
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @classmethod
    def from_vector(cls, v) -> "RelPose6":
        v = np.asarray(v, dtype=float).reshape(6)
        return cls(v[:3], v[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.translation, self.logq])

    def __repr__(self):
        return f"RelPose6(t={self.translation.tolist()}, logq={self.logq.tolist()})"


@dataclass(frozen=True)
class Trajectory:
    poses: tuple
    frame_indices: tuple

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        object.__setattr__(self, "frame_indices", tuple(int(i) for i in self.frame_indices))
        if len(self.poses) != len(self.frame_indices):
            raise ValueError("poses and frame_indices differ in length")
        if any(b <= a for a, b in zip(self.frame_indices, self.frame_indices[1:])):
            raise ValueError("frame_indices must be strictly increasing")

    @classmethod
    def from_poses(cls, poses: Sequence[Pose], start: int = 0, step: int = 1) -> "Trajectory":
        return cls(tuple(poses), tuple(range(start, start + step * len(poses), step)))

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, i) -> Pose:
        return self.poses[i]

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def relatives(self) -> list[Pose]:
        return [relative(a, b) for a, b in zip(self.poses, self.poses[1:])]


# --------------------------------------------------------------------------
# elementary constructors


def rot_x(deg: float) -> Pose:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return Pose(np.array([[1, 0, 0], [0, c, -s], [0, s, c]]))


def rot_y(deg: float) -> Pose:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return Pose(np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]]))


def rot_z(deg: float) -> Pose:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return Pose(np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]]))


def translate(x: float, y: float, z: float) -> Pose:
    return Pose(np.eye(3), (x, y, z))


def random_pose(rng: np.random.Generator, max_translation: float = 10.0) -> Pose:
    """Uniformly random rotation (via a uniform unit quaternion) and a box translation."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return Pose(quat_to_matrix(q), rng.uniform(-max_translation, max_translation, 3))


# --------------------------------------------------------------------------
# group operations


def compose(a: Pose, b: Pose) -> Pose:
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt, -rt @ p.translation)


def relative(p1: Pose, p2: Pose) -> Pose:
    """Pose of camera 2 seen from camera 1, i.e. ``p1^-1 p2``."""
    r1t = p1.rotation.T
    return Pose(r1t @ p2.rotation, r1t @ (p2.translation - p1.translation))


def integrate(start: Pose, relatives: Iterable[Pose], start_index: int = 0) -> Trajectory:
    poses = [start]
    for rel in relatives:
        poses.append(compose(poses[-1], rel))
    return Trajectory.from_poses(poses, start=start_index)


_M = np.diag([1.0, -1.0, 1.0])


def handedness_convert(p: Pose) -> Pose:
    """Flip the y axis on both sides: ``M P M`` with ``M = diag(1, -1, 1, 1)``."""
    return Pose(_M @ p.rotation @ _M, _M @ p.translation)


def rotation_angle_deg(p: Pose) -> float:
    """Geodesic angle of the rotation part, in degrees, within [0, 180].

    Evaluated as ``atan2(sin, cos)`` where ``cos = (trace - 1) / 2`` (clamped to
    [-1, 1]) and ``sin`` comes from the skew part of R.  This is the same
    angle as ``arccos((trace - 1) / 2)`` but keeps full precision near 0 and
    returns exactly 0 for an exactly symmetric R with trace 3.
    """
    r = p.rotation
    c = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    s = 0.5 * np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    s = min(s, 1.0)
    return float(np.degrees(np.arctan2(s, c)))


# --------------------------------------------------------------------------
# quaternions


def canonical_quaternion(q) -> np.ndarray:
    """Normalise and pick the w >= 0 hemisphere.

    For w == 0 both signs are on the boundary; the representative whose
    first nonzero vector component is positive is returned.
    """
    q = np.asarray(q, dtype=float).reshape(4)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0:
        raise ValueError("cannot normalise a zero quaternion")
    q = q / n
    if q[0] < 0:
        q = -q
    elif q[0] == 0:
        nz = np.flatnonzero(q[1:])
        if nz.size and q[1 + nz[0]] < 0:
            q = -q
    return q


def quat_from_matrix(r) -> np.ndarray:
    """Shepperd's method; returns canonical (w, x, y, z)."""
    r = np.asarray(r, dtype=float)
    tr = np.trace(r)
    cands = np.array([tr, r[0, 0], r[1, 1], r[2, 2]])
    i = int(np.argmax(cands))
    if i == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    elif i == 1:
        s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif i == 2:
        s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    return canonical_quaternion(q)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def quat_log(q) -> np.ndarray:
    """log of a unit quaternion (cos a, sin a * u) -> a * u, after canonicalisation."""
    q = canonical_quaternion(q)
    v = q[1:]
    nv = np.linalg.norm(v)
    if nv < 1e-300:
        return np.zeros(3)
    return np.arctan2(nv, q[0]) * v / nv


def quat_exp(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(3)
    a = np.linalg.norm(v)
    if a < 1e-8:
        # sin(a)/a = 1 - a^2/6 + ...
        sinc = 1.0 - a * a / 6.0
    else:
        sinc = np.sin(a) / a
    return np.concatenate([[np.cos(a)], sinc * v])


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def slerp(q0, q1, t: float) -> np.ndarray:
    q0 = canonical_quaternion(q0)
    q1 = canonical_quaternion(q1)
    d = float(np.dot(q0, q1))
    if d < 0:
        q1, d = -q1, -d
    if d > 0.9995:
        return canonical_quaternion(q0 + t * (q1 - q0))
    th = np.arccos(min(d, 1.0))
    return canonical_quaternion((np.sin((1 - t) * th) * q0 + np.sin(t * th) * q1) / np.sin(th))


# --------------------------------------------------------------------------
# 6D representation


def to_6d(p: Pose) -> RelPose6:
    return RelPose6(p.translation, quat_log(quat_from_matrix(p.rotation)))


def from_6d(r: RelPose6) -> Pose:
    return Pose(quat_to_matrix(quat_exp(r.logq)), r.translation)


def vec6_to_pose(v) -> Pose:
    return from_6d(RelPose6.from_vector(v))


def pose_to_vec6(p: Pose) -> np.ndarray:
    return to_6d(p).as_vector()
