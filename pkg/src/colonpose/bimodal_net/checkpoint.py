"""Binary checkpoint: versioned header, parameter grids as little-endian
float32 in declaration order, then beta and gamma; plus a key=value sidecar
holding the model, mode and training configuration."""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .. import fileio
from ..losses import LossWeights
from .model import Architecture, BimodalConfig
from .train import TrainConfig

MAGIC = b"CPNT"
VERSION = 1


def sidecar_path(path) -> str:
    return str(path) + ".txt"


def save(path, params: dict, weights: LossWeights, arch: Architecture, cfg: BimodalConfig,
         hyper: TrainConfig | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(params)))
        for name, arr in params.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)) + nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        fh.write(np.array([weights.beta, weights.gamma], dtype="<f4").tobytes())
    side = {"format_version": str(VERSION), "mode": cfg.mode, "bin1": repr(cfg.bin1),
            "bin2": repr(cfg.bin2), "k": str(cfg.k), "w_c": repr(weights.w_c),
            "architecture": json.dumps(arch.as_dict(), sort_keys=True)}
    if hyper is not None:
        for k, v in vars(hyper).items():
            side[f"train.{k}"] = repr(v)
    fileio.write_keyvalue(sidecar_path(path), side)


def load(path):
    """-> (params, LossWeights, Architecture, BimodalConfig)"""
    if not os.path.exists(sidecar_path(path)):
        raise FileNotFoundError(f"missing checkpoint sidecar {sidecar_path(path)}")
    side = fileio.read_keyvalue(sidecar_path(path))
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise fileio.ParseError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise fileio.ParseError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    params = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + ln].decode("utf-8")
        off += ln
        (nd,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{nd}I", data, off)
        off += 4 * nd
        n = int(np.prod(shape))
        params[name] = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float32)
        off += 4 * n
    beta, gamma = np.frombuffer(data, dtype="<f4", count=2, offset=off)
    if off + 8 != len(data):
        raise fileio.ParseError(f"{path}: trailing or missing bytes")
    arch = Architecture(**json.loads(side["architecture"]))
    cfg = BimodalConfig(float(side["bin1"]), float(side["bin2"]), int(side["k"]), side["mode"])
    return params, LossWeights(float(beta), float(gamma), float(side["w_c"])), arch, cfg
