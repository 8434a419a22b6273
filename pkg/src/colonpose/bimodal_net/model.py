"""Encoder, correlation layer, class head, residual regression head and the
mixture that turns them into one relative pose.

Parameters live in a plain ordered dict of numpy arrays; the declaration
order of that dict is the checkpoint order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..pose_algebra import RelPose6
from . import tape as T

MODES = ("bimodal", "unimodal", "bimodal_nosup", "bimodal_nocorr")


@dataclass
class BimodalConfig:
    """Bin centres (cm) for class 0 (t_z < 0) and class 1 (t_z > 0), frame gap and mode."""

    bin1: float = -0.5
    bin2: float = 0.5
    k: int = 5
    mode: str = "bimodal"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {', '.join(MODES)}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.bimodal and not (self.bin1 == -self.bin2 and self.bin1 < 0):
            raise ValueError("bimodal modes need bin1 = -bin2 < 0 (bin1 belongs to t_z < 0)")

    @classmethod
    def for_k(cls, k: int = 5, mode: str = "bimodal") -> "BimodalConfig":
        return cls(-0.1 * k, 0.1 * k, k, mode)

    @property
    def bimodal(self) -> bool:
        return self.mode != "unimodal"

    @property
    def bins(self) -> tuple[float, float]:
        return (self.bin1, self.bin2)


@dataclass
class Architecture:
    """Layer widths.  The encoder has one stride-2 stage per entry of ``enc``."""

    resolution: int = 128
    enc: tuple = (8, 16, 32, 64)
    fc: tuple = (64, 32)
    reg: tuple = (64, 64, 32)
    in_channels: int = 3
    dropout: float = 0.5

    def __post_init__(self):
        self.enc, self.fc, self.reg = tuple(self.enc), tuple(self.fc), tuple(self.reg)
        if self.resolution % self.downsample:
            raise ValueError(f"resolution {self.resolution} is not divisible by {self.downsample}")

    @property
    def downsample(self) -> int:
        return 2 ** len(self.enc)

    @property
    def grid(self) -> int:
        return self.resolution // self.downsample

    @property
    def cells(self) -> int:
        return self.grid * self.grid

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class BimodalPrediction:
    probs: np.ndarray
    residuals: tuple
    final: RelPose6
    bins: tuple = field(default=(-0.5, 0.5))

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if abs(p.sum() - 1.0) > 1e-6:
            raise ValueError("class probabilities must sum to 1")
        want = mix(p, self.residuals, self.bins)
        if not np.allclose(want, self.final.as_vector(), atol=1e-9):
            raise ValueError("final pose does not match the mixture of the residuals")


def _vec(r) -> np.ndarray:
    return r.as_vector() if isinstance(r, RelPose6) else np.asarray(r, dtype=float).reshape(6)


def mix(probs, residuals, bins) -> np.ndarray:
    b1 = np.array([0, 0, bins[0], 0, 0, 0.0])
    b2 = np.array([0, 0, bins[1], 0, 0, 0.0])
    p = np.asarray(probs, dtype=float)
    return p[0] * (b1 + _vec(residuals[0])) + p[1] * (b2 + _vec(residuals[1]))


def predict(probs, residuals, cfg: BimodalConfig) -> RelPose6:
    """Mixture of the two bin-anchored residuals; unimodal returns residuals[0]."""
    if not cfg.bimodal:
        return RelPose6.from_vector(_vec(residuals[0]))
    p = np.asarray(probs, dtype=float)
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError("class probabilities must sum to 1")
    return RelPose6.from_vector(mix(p, residuals, cfg.bins))


# ---- parameters ---------------------------------------------------------------

def init_params(arch: Architecture, cfg: BimodalConfig, seed: int = 0, dtype=np.float32) -> dict:
    """He-normal weights, zero biases; the last layer of each head starts small."""
    rng = np.random.default_rng(seed)
    p = {}

    def conv(name, cin, cout, gain=1.0):
        p[name + ".w"] = (rng.normal(size=(3, 3, cin, cout)) * gain * np.sqrt(2.0 / (9 * cin))).astype(dtype)
        p[name + ".b"] = np.zeros(cout, dtype=dtype)

    def fc(name, din, dout, gain=1.0):
        p[name + ".w"] = (rng.normal(size=(din, dout)) * gain * np.sqrt(2.0 / din)).astype(dtype)
        p[name + ".b"] = np.zeros(dout, dtype=dtype)

    c = arch.in_channels
    for i, w in enumerate(arch.enc):
        conv(f"enc{i}", c, w)
        c = w
    feat = c
    if cfg.bimodal:
        din = 2 * feat if cfg.mode == "bimodal_nocorr" else 2 * arch.cells * arch.cells
        for i, w in enumerate(arch.fc + (2,)):
            fc(f"cls{i}", din, w, gain=0.1 if i == len(arch.fc) else 1.0)
            din = w
    c = 2 * feat
    for i, w in enumerate(arch.reg + (12,)):
        conv(f"reg{i}", c, w, gain=0.1 if i == len(arch.reg) else 1.0)
        c = w
    return p


# ---- forward pieces -------------------------------------------------------------

def standardize(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 or [0,1] NHWC images -> zero-mean, unit-std per image."""
    x = np.asarray(images, dtype=dtype)
    if images.dtype == np.uint8:
        x = x / dtype(255.0)
    m = x.mean(axis=(1, 2, 3), keepdims=True)
    s = x.std(axis=(1, 2, 3), keepdims=True)
    return ((x - m) / (s + dtype(1e-3))).astype(dtype)


def encode(x: T.Var, P: dict, arch: Architecture) -> T.Var:
    if x.value.shape[1] % arch.downsample or x.value.shape[2] % arch.downsample:
        raise ValueError(f"image size {x.value.shape[1:3]} is not divisible by {arch.downsample}")
    h = x
    for i in range(len(arch.enc)):
        h = T.relu(T.conv2d(h, P[f"enc{i}.w"], P[f"enc{i}.b"], stride=2, pad=1))
    return h


def correlate(f1: T.Var, f2: T.Var):
    """Raw volume (N, HW, HW) and its two softmax views: over f1 cells and over f2 cells."""
    c = f1.value.shape[-1]
    raw = T.correlation(f1, f2, temperature=float(np.sqrt(c)))
    return raw, T.softmax(raw, axis=1), T.softmax(raw, axis=2)


def classify(f1: T.Var, f2: T.Var, P: dict, arch: Architecture, cfg: BimodalConfig,
             training: bool = False, rng=None) -> T.Var:
    """Class logits (N, 2).  Only the correlation views reach the head unless
    the mode is ``bimodal_nocorr``, where pooled features are used instead."""
    n = f1.value.shape[0]
    if cfg.mode == "bimodal_nocorr":
        h = T.concat([T.mean_spatial(f1), T.mean_spatial(f2)], axis=1)
    else:
        _, v1, v2 = correlate(f1, f2)
        m = arch.cells * arch.cells
        # views average 1/cells; rescale so the head sees O(1) inputs
        h = T.scale(T.concat([T.reshape(v1, (n, m)), T.reshape(v2, (n, m))], axis=1), float(arch.cells))
    n_layers = len(arch.fc) + 1
    for i in range(n_layers):
        h = T.linear(h, P[f"cls{i}.w"], P[f"cls{i}.b"])
        if i < n_layers - 1:
            h = T.dropout(T.relu(h), arch.dropout, rng, training)
    return h


def regress(f1: T.Var, f2: T.Var, P: dict, arch: Architecture) -> T.Var:
    """(N, 12): residual 6-vectors for class 0 then class 1."""
    h = T.concat([f1, f2], axis=3)
    n_layers = len(arch.reg) + 1
    for i in range(n_layers):
        h = T.conv2d(h, P[f"reg{i}.w"], P[f"reg{i}.b"], stride=1, pad=1)
        if i < n_layers - 1:
            h = T.relu(h)
    return T.mean_spatial(h)


@dataclass
class Forward:
    logits: T.Var | None
    probs: T.Var | None
    out12: T.Var
    pose: T.Var


def forward(P: dict, x1: np.ndarray, x2: np.ndarray, arch: Architecture, cfg: BimodalConfig,
            training: bool = False, rng=None) -> Forward:
    """Full network on standardized NHWC batches; ``P`` maps names to tape Vars."""
    tape = next(iter(P.values())).tape
    n = x1.shape[0]
    feats = encode(tape.const(np.concatenate([x1, x2])), P, arch)
    f1 = T.getitem(feats, slice(0, n))
    f2 = T.getitem(feats, slice(n, 2 * n))
    out12 = regress(f1, f2, P, arch)
    if not cfg.bimodal:
        return Forward(None, None, out12, T.getitem(out12, (slice(None), slice(0, 6))))
    logits = classify(f1, f2, P, arch, cfg, training, rng)
    probs = T.softmax(logits, axis=1)
    return Forward(logits, probs, out12, T.mixture(probs, out12, cfg.bins))


def objective(fw: Forward, gt6: np.ndarray, labels: np.ndarray, beta: T.Var, gamma: T.Var,
              w_c: float) -> tuple[T.Var, T.Var, T.Var | None]:
    """(total, pose loss, class loss) with total = pose + w_c * class."""
    lp = T.pose_loss(fw.pose, gt6, beta, gamma)
    if fw.logits is None or w_c == 0:
        return lp, lp, (T.cross_entropy(fw.logits, labels) if fw.logits is not None else None)
    lc = T.cross_entropy(fw.logits, labels)
    return T.add(lp, T.scale(lc, w_c)), lp, lc


def labels_from_tz(tz) -> np.ndarray:
    """0 for t_z < 0, 1 otherwise; an exact zero copies the previous label."""
    tz = np.asarray(tz, dtype=float)
    out = (tz >= 0).astype(int)
    for i in np.flatnonzero(tz == 0):
        out[i] = out[i - 1] if i > 0 else 1
    return out


def run_numpy(params: dict, x1: np.ndarray, x2: np.ndarray, arch: Architecture,
              cfg: BimodalConfig, batch: int = 64):
    """Inference without gradients: (probs or None, out12, pose) as arrays."""
    probs, outs, poses = [], [], []
    for s in range(0, len(x1), batch):
        tape = T.Tape()
        P = {k: tape.const(v) for k, v in params.items()}
        fw = forward(P, x1[s:s + batch], x2[s:s + batch], arch, cfg, training=False)
        outs.append(fw.out12.value)
        poses.append(fw.pose.value)
        if fw.probs is not None:
            probs.append(fw.probs.value)
    pr = np.concatenate(probs) if probs else None
    return pr, np.concatenate(outs), np.concatenate(poses)
