"""Readers and writers for pose text files, PPM (P6) and PFM images.

Pose files hold one world-from-camera 4x4 matrix per line as 16 row-major
floats; ``#`` starts a comment line.  PFM files are written little-endian
(scale header -1.0) with rows stored bottom-to-top as the format requires.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .pose_algebra import Pose


class ParseError(ValueError):
    """Malformed input file; message carries the file name and line number."""


def write_poses(path, poses) -> None:
    lines = ["# world-from-camera 4x4, row-major, right-handed, cm"]
    for p in poses:
        m = p.matrix if isinstance(p, Pose) else np.asarray(p, dtype=float)
        lines.append(" ".join(repr(float(v)) for v in m.reshape(16)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_poses(path) -> list[Pose]:
    poses = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 16:
                raise ParseError(f"{path}:{lineno}: expected 16 floats, got {len(parts)}")
            try:
                vals = np.array([float(v) for v in parts])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            m = vals.reshape(4, 4)
            if not np.allclose(m[3], [0, 0, 0, 1], atol=1e-6):
                raise ParseError(f"{path}:{lineno}: last row must be 0 0 0 1")
            poses.append(Pose.from_matrix(m))
    return poses


def write_ppm(path, rgb: np.ndarray) -> None:
    """Write an HxWx3 image in [0, 1] as 8-bit binary PPM."""
    a = np.asarray(rgb)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"expected HxWx3 array, got {a.shape}")
    if a.dtype != np.uint8:
        a = np.clip(np.round(a * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = a.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(a).tobytes())


def _ppm_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_ppm(path, as_uint8: bool = False) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), off = _ppm_tokens(data, 4)
    if magic != b"P6" or int(maxval) != 255:
        raise ParseError(f"{path}: only 8-bit P6 is supported")
    w, h = int(w), int(h)
    a = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=off).reshape(h, w, 3)
    if as_uint8:
        return a.copy()
    return a.astype(np.float32) / 255.0


def write_pfm(path, img: np.ndarray) -> None:
    a = np.asarray(img, dtype="<f4")
    if a.ndim == 2:
        header = "Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError(f"PFM holds HxW or HxWx3 data, got {a.shape}")
    h, w = a.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(a[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise ParseError(f"{path}: not a PFM file")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        chans = 3 if header == b"PF" else 1
        a = np.frombuffer(fh.read(), dtype=dtype, count=w * h * chans)
    shape = (h, w, 3) if chans == 3 else (h, w)
    return a.reshape(shape)[::-1].astype(np.float32)


def read_keyvalue(path) -> dict[str, str]:
    """Plain ``key=value`` text; blank lines and ``#`` comments are skipped."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_keyvalue(path, items) -> None:
    text = "".join(f"{k}={v}\n" for k, v in items.items())
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
