"""Waypoint randomisation and the back-and-forth camera path."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np
from scipy.ndimage import gaussian_filter1d

from ..pose_algebra import (Pose, Trajectory, UnitQuaternion, quat_from_matrix, quat_multiply,
                            quat_to_matrix, rot_z, slerp)
from .scene import Centerline, TubeScene


@dataclass(frozen=True)
class Waypoint:
    position: np.ndarray
    orientation: UnitQuaternion

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        p.setflags(write=False)
        object.__setattr__(self, "position", p)
        if self.orientation.w < 0:
            raise ValueError("waypoint orientation must be canonical (w >= 0)")


@dataclass
class TrajectoryConfig:
    n_waypoints: int = 18
    frames_per_segment: int = 60
    n_frames: int | None = None
    max_wp_translation: float = 0.2   # cm
    max_wp_rotation: float = 20.0     # degrees
    roll_rate: float = 0.25           # degrees per frame (scale of the roll velocity)
    step_size_mean: float = 0.088     # cm of arclength per frame
    speed_jitter: float = 0.3
    include_reinsertion: bool = True
    run_min: int = 40                 # frames per insertion/withdrawal run
    run_max: int = 160
    end_margin: float = 8.0           # cm kept free at both tube ends
    start_arclength: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.max_wp_translation < 0 or self.max_wp_rotation < 0:
            raise ValueError("waypoint randomisation bounds must be non-negative")
        if self.step_size_mean <= 0:
            raise ValueError("step_size_mean must be positive")
        if not 0 < self.run_min <= self.run_max:
            raise ValueError("need 0 < run_min <= run_max")

    @property
    def frame_count(self) -> int:
        if self.n_frames is not None:
            return int(self.n_frames)
        return self.frames_per_segment * (self.n_waypoints - 1)

    @classmethod
    def calibrated(cls, **overrides) -> "TrajectoryConfig":
        """Settings tuned to a mean k=5 step of 0.44 cm and about 4.6 degrees per step."""
        base = dict(step_size_mean=0.096, roll_rate=0.75, speed_jitter=0.25)
        base.update(overrides)
        return cls(**base)

    def updated(self, **kw) -> "TrajectoryConfig":
        known = {f.name for f in fields(self)}
        bad = set(kw) - known
        if bad:
            raise KeyError(f"unknown trajectory option(s): {', '.join(sorted(bad))}")
        return replace(self, **kw)


def base_waypoints(scene: TubeScene) -> list[Waypoint]:
    """Waypoints at the scene's control points, oriented along the centerline."""
    cl = scene.centerline
    return [Waypoint(cl.position(s), UnitQuaternion.from_array(quat_from_matrix(cl.frame(s))))
            for s in cl.knots]


def _random_unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def randomize_waypoints(base: list[Waypoint], cfg: TrajectoryConfig, rng_seed=None) -> list[Waypoint]:
    """Offset every waypoint inside a ball of radius ``max_wp_translation`` and
    rotate it about a uniform random axis by an angle uniform in
    [0, ``max_wp_rotation``]."""
    rng = np.random.default_rng(cfg.seed if rng_seed is None else rng_seed)
    n = len(base)
    dirs = _random_unit_vectors(rng, n)
    radii = cfg.max_wp_translation * rng.uniform(0, 1, n) ** (1 / 3)
    axes = _random_unit_vectors(rng, n)
    angles = np.radians(cfg.max_wp_rotation) * rng.uniform(0, 1, n)
    out = []
    for wp, d, r, ax, a in zip(base, dirs, radii, axes, angles):
        dq = np.concatenate([[np.cos(a / 2)], np.sin(a / 2) * ax])
        q = quat_multiply(wp.orientation.as_array(), dq)
        out.append(Waypoint(wp.position + r * d, UnitQuaternion.from_array(q)))
    return out


def _smooth_noise(rng, n, sigma=12.0):
    w = gaussian_filter1d(rng.normal(size=n + 1), sigma, mode="reflect")
    sd = w.std()
    return w / sd if sd > 0 else w


def _arclength_schedule(cfg: TrajectoryConfig, rng, lo: float, hi: float, start: float):
    n = cfg.frame_count
    speed = cfg.step_size_mean * np.clip(1.0 + cfg.speed_jitter * _smooth_noise(rng, n), 0.2, 2.0)
    direction = np.ones(n)
    if cfg.include_reinsertion:
        i, sign = 0, 1.0
        while i < n:
            run = int(rng.integers(cfg.run_min, cfg.run_max + 1))
            direction[i:i + run] = sign
            sign = -sign
            i += run
    u = np.empty(n)
    u[0] = start
    flip = 1.0
    for i in range(1, n):
        nxt = u[i - 1] + flip * direction[i] * speed[i]
        if nxt > hi or nxt < lo:
            flip = -flip
            nxt = u[i - 1] + flip * direction[i] * speed[i]
        u[i] = nxt
    return u


def sample_camera_path(scene: TubeScene, cfg: TrajectoryConfig,
                       waypoints: list[Waypoint] | None = None) -> Trajectory:
    """Camera poses along the (randomised) waypoint spline.

    The camera always looks toward increasing arclength (the lumen ahead);
    withdrawal runs move it backwards, which makes the k-frame z steps
    bimodal.  Orientation = transported path frame * slerp of the waypoint
    rotation offsets * accumulated roll about the optical axis.
    """
    rng = np.random.default_rng(cfg.seed)
    base = base_waypoints(scene)
    if waypoints is None:
        waypoints = randomize_waypoints(base, cfg, rng_seed=cfg.seed + 7919)
    if len(waypoints) != len(base):
        raise ValueError("waypoints do not match the scene's control points")
    pos = np.array([w.position for w in waypoints])
    path = Centerline.through(pos, n0=scene.centerline.normals[0])
    # rotation offset of each waypoint relative to its base orientation
    offsets = [quat_multiply(_conj(b.orientation.as_array()), w.orientation.as_array())
               for b, w in zip(base, waypoints)]

    lo, hi = cfg.end_margin, path.length - cfg.end_margin
    if hi <= lo:
        raise ValueError("tube too short for the requested end margin")
    start = cfg.start_arclength
    if start is None:
        start = float(rng.uniform(lo, lo + 0.5 * (hi - lo)))
    u = _arclength_schedule(cfg, rng, lo, hi, float(np.clip(start, lo, hi)))
    roll = np.cumsum(np.concatenate([[0.0], cfg.roll_rate * _smooth_noise(rng, len(u) - 1, 20.0)[1:]]))

    knots = path.knots
    poses = []
    for ui, ri in zip(u, roll):
        seg = int(np.clip(np.searchsorted(knots, ui, side="right") - 1, 0, len(knots) - 2))
        frac = (ui - knots[seg]) / (knots[seg + 1] - knots[seg])
        dq = slerp(offsets[seg], offsets[seg + 1], float(np.clip(frac, 0.0, 1.0)))
        r = path.frame(ui) @ quat_to_matrix(dq) @ rot_z(ri).rotation
        poses.append(Pose(r, path.position(ui)))
    return Trajectory.from_poses(poses)


def _conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def pair_motion(traj: Trajectory, k: int = 5):
    """Relative poses of all (t, t+k) pairs and their summary statistics."""
    rel = [traj[i].inverse() @ traj[i + k] for i in range(len(traj) - k)]
    t = np.array([r.translation for r in rel]).reshape(-1, 3)
    from ..pose_algebra import rotation_angle_deg
    ang = np.array([rotation_angle_deg(r) for r in rel])
    return rel, t, ang


def bimodality(tz: np.ndarray, edges=None) -> dict:
    """Mass, histogram peak and peak height on each side of zero, plus the
    lowest count between the two peaks."""
    tz = np.asarray(tz, dtype=float)
    if edges is None:
        edges = np.linspace(-1.5, 1.5, 51)
    counts, edges = np.histogram(tz, bins=edges)
    centers = 0.5 * (edges[1:] + edges[:-1])
    neg, pos = centers < 0, centers > 0
    i_neg = np.flatnonzero(neg)[np.argmax(counts[neg])]
    i_pos = np.flatnonzero(pos)[np.argmax(counts[pos])]
    return {
        "frac_neg": float(np.mean(tz < 0)),
        "frac_pos": float(np.mean(tz > 0)),
        "mode_neg": float(centers[i_neg]),
        "mode_pos": float(centers[i_pos]),
        "peak_neg": int(counts[i_neg]),
        "peak_pos": int(counts[i_pos]),
        "trough": int(counts[i_neg:i_pos + 1].min()),
    }


def is_bimodal(tz, min_mass: float = 0.3, max_trough: float = 0.5) -> bool:
    """Two opposite-sign modes, each holding ``min_mass`` of the sample, with a
    dip between them below ``max_trough`` times the smaller peak."""
    b = bimodality(tz)
    return (b["frac_neg"] >= min_mass and b["frac_pos"] >= min_mass
            and b["mode_neg"] < 0 < b["mode_pos"]
            and b["trough"] <= max_trough * min(b["peak_neg"], b["peak_pos"]))
