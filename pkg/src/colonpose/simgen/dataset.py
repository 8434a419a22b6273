"""On-disk dataset layout, manifest and end-to-end generation.

Layout::

    <out>/manifest.txt
    <out>/traj_NN/frame_00000.ppm   8-bit RGB
    <out>/traj_NN/frame_00000.pfm   float32 z-depth in cm
    <out>/traj_NN/poses.txt         world-from-camera, right-handed
    <out>/traj_NN/intrinsics.txt
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .. import fileio
from ..camera import Intrinsics
from ..pose_algebra import Pose, Trajectory, handedness_convert
from .path import TrajectoryConfig, pair_motion, sample_camera_path
from .render import LightRig, render_frame
from .scene import make_scene

GENERATOR_VERSION = "1.0"
UNITS = "cm"


@dataclass
class DatasetManifest:
    root: str
    seed: int
    intrinsics: Intrinsics
    trajectories: list[str] = field(default_factory=list)
    frame_counts: list[int] = field(default_factory=list)
    version: str = GENERATOR_VERSION
    units: str = UNITS

    def traj_dir(self, i: int) -> str:
        return os.path.join(self.root, self.trajectories[i])

    def items(self):
        yield "version", self.version
        yield "seed", str(self.seed)
        yield "units", self.units
        yield "intrinsics", self.intrinsics.as_line()
        yield "trajectories", ",".join(self.trajectories)
        yield "frame_counts", ",".join(str(n) for n in self.frame_counts)

    def write(self) -> str:
        path = os.path.join(self.root, "manifest.txt")
        fileio.write_keyvalue(path, dict(self.items()))
        return path

    @classmethod
    def read(cls, root) -> "DatasetManifest":
        path = os.path.join(root, "manifest.txt")
        kv = fileio.read_keyvalue(path)
        try:
            names = [n for n in kv["trajectories"].split(",") if n]
            counts = [int(n) for n in kv["frame_counts"].split(",") if n]
            m = cls(str(root), int(kv["seed"]), Intrinsics.from_line(kv["intrinsics"]),
                    names, counts, kv["version"], kv["units"])
        except (KeyError, ValueError) as exc:
            raise fileio.ParseError(f"{path}: malformed manifest ({exc})") from exc
        if len(names) != len(counts):
            raise fileio.ParseError(f"{path}: trajectories and frame_counts differ in length")
        return m

    def validate(self) -> None:
        """Every referenced file exists and frame counts match the pose files."""
        for i, n in enumerate(self.frame_counts):
            d = self.traj_dir(i)
            poses = fileio.read_poses(os.path.join(d, "poses.txt"))
            if len(poses) != n:
                raise ValueError(f"{d}: manifest says {n} frames, poses.txt has {len(poses)}")
            for j in range(n):
                for ext in ("ppm", "pfm"):
                    p = frame_path(d, j, ext)
                    if not os.path.exists(p):
                        raise FileNotFoundError(p)

    def checksum(self) -> str:
        """SHA-256 over every file of the dataset, in a fixed order."""
        h = hashlib.sha256()
        files = [os.path.join(self.root, "manifest.txt")]
        for i, n in enumerate(self.frame_counts):
            d = self.traj_dir(i)
            files += [os.path.join(d, "poses.txt"), os.path.join(d, "intrinsics.txt")]
            files += [frame_path(d, j, ext) for j in range(n) for ext in ("ppm", "pfm")]
        for f in files:
            with open(f, "rb") as fh:
                h.update(fh.read())
        return h.hexdigest()


def frame_path(traj_dir, index: int, ext: str) -> str:
    return os.path.join(traj_dir, f"frame_{index:05d}.{ext}")


def write_dataset(frames, poses, manifest: DatasetManifest, out_dir=None,
                  left_handed: bool = False) -> DatasetManifest:
    """Write one trajectory (frames = iterable of (RgbImage, DepthMap)) and
    append it to ``manifest``; the manifest file is rewritten each call.

    ``left_handed`` marks poses given in a left-handed convention; they are
    converted so the stored poses are always right-handed.
    """
    poses = list(poses)
    root = manifest.root if out_dir is None else str(out_dir)
    manifest.root = root
    name = f"traj_{len(manifest.trajectories):02d}"
    d = os.path.join(root, name)
    os.makedirs(d, exist_ok=True)
    n = 0
    for n, (img, depth) in enumerate(frames, 1):
        if n > len(poses):
            raise ValueError("more frames than poses")
        if img.intrinsics != manifest.intrinsics or depth.intrinsics != manifest.intrinsics:
            raise ValueError("frame intrinsics differ from the manifest")
        fileio.write_ppm(frame_path(d, n - 1, "ppm"), img.values)
        fileio.write_pfm(frame_path(d, n - 1, "pfm"), depth.values)
    if n != len(poses):
        raise ValueError(f"{n} frames but {len(poses)} poses")
    if left_handed:
        poses = [handedness_convert(p) for p in poses]
    fileio.write_poses(os.path.join(d, "poses.txt"), poses)
    with open(os.path.join(d, "intrinsics.txt"), "w") as fh:
        fh.write(manifest.intrinsics.as_line() + "\n")
    manifest.trajectories.append(name)
    manifest.frame_counts.append(n)
    manifest.write()
    return manifest


@dataclass
class TrajectoryData:
    """A loaded trajectory: uint8 images (N,H,W,3), float32 depth (N,H,W), poses."""

    images: np.ndarray
    depths: np.ndarray | None
    poses: Trajectory
    intrinsics: Intrinsics


def load_trajectory(traj_dir, with_depth: bool = True, limit: int | None = None) -> TrajectoryData:
    poses = fileio.read_poses(os.path.join(traj_dir, "poses.txt"))
    with open(os.path.join(traj_dir, "intrinsics.txt")) as fh:
        k = Intrinsics.from_line(fh.readline())
    n = len(poses) if limit is None else min(limit, len(poses))
    imgs = np.empty((n, k.height, k.width, 3), dtype=np.uint8)
    deps = np.empty((n, k.height, k.width), dtype=np.float32) if with_depth else None
    for i in range(n):
        imgs[i] = fileio.read_ppm(frame_path(traj_dir, i, "ppm"), as_uint8=True)
        if with_depth:
            deps[i] = fileio.read_pfm(frame_path(traj_dir, i, "pfm"))
    return TrajectoryData(imgs, deps, Trajectory.from_poses(poses[:n]), k)


def trajectory_seeds(seed: int, index: int) -> tuple[int, int]:
    """(scene seed, path seed) for trajectory ``index`` of a dataset."""
    ss = np.random.SeedSequence([int(seed), int(index)])
    a, b = ss.generate_state(2)
    return int(a), int(b)


def generate(out_dir, seed: int = 0, n_trajectories: int = 1, traj_cfg: TrajectoryConfig | None = None,
             resolution: int = 128, scene_kw: dict | None = None, lights: LightRig | None = None,
             progress=None) -> DatasetManifest:
    """Build scenes, sample paths, render every frame and write the dataset.

    Each trajectory gets its own tube and path, both derived from ``seed``.
    """
    traj_cfg = traj_cfg or TrajectoryConfig()
    k = Intrinsics.default(resolution)
    os.makedirs(out_dir, exist_ok=True)
    manifest = DatasetManifest(str(out_dir), int(seed), k)
    for i in range(n_trajectories):
        scene_seed, path_seed = trajectory_seeds(seed, i)
        scene = make_scene(scene_seed % (2 ** 31), n_waypoints=traj_cfg.n_waypoints, **(scene_kw or {}))
        traj = sample_camera_path(scene, traj_cfg.updated(seed=path_seed))

        def frames(traj=traj, scene=scene, i=i):
            for j, pose in enumerate(traj.poses):
                if progress is not None:
                    progress(i, j, len(traj))
                yield render_frame(scene, pose, k, lights)

        write_dataset(frames(), traj.poses, manifest)
    return manifest


def summarize(poses: list[Pose] | Trajectory, k: int = 5) -> dict:
    """Frame count, mean k-step translation/rotation and t_z bimodality."""
    from .path import bimodality, is_bimodal

    traj = poses if isinstance(poses, Trajectory) else Trajectory.from_poses(list(poses))
    _, t, ang = pair_motion(traj, k)
    out = {"frames": len(traj), "mean_step_cm": float(np.linalg.norm(t, axis=1).mean()),
           "mean_rotation_deg": float(ang.mean())}
    out.update(bimodality(t[:, 2]))
    out["bimodal"] = bool(is_bimodal(t[:, 2]))
    return out
