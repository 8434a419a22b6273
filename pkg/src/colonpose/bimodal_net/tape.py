"""A small reverse-mode tape over numpy arrays.

Only the operators the pose network needs are provided.  Feature maps are
NHWC.  Every op records a closure that maps the output gradient to input
gradients; ``Tape.backward`` replays them in reverse creation order.
Arrays keep the dtype they were created with, so the same code trains in
float32 and is gradient-checked in float64.
"""

from __future__ import annotations

import numpy as np


class Var:
    __slots__ = ("value", "grad", "needs_grad", "tape")

    def __init__(self, value, tape: "Tape", needs_grad: bool = False):
        self.value = value
        self.grad = None
        self.needs_grad = needs_grad
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g):
        if not self.needs_grad:
            return
        self.grad = g if self.grad is None else self.grad + g


class Tape:
    def __init__(self):
        self._records = []

    def param(self, value) -> Var:
        return Var(value, self, True)

    def const(self, value) -> Var:
        return Var(value, self, False)

    def _out(self, value, *parents, backward=None) -> Var:
        needs = any(p.needs_grad for p in parents)
        out = Var(value, self, needs)
        if needs and backward is not None:
            self._records.append((out, backward))
        return out

    def backward(self, out: Var, grad=None) -> None:
        out.grad = np.ones_like(out.value) if grad is None else grad
        for node, fn in reversed(self._records):
            if node.grad is not None:
                fn(node.grad)
        self._records.clear()


def _tape(*xs) -> Tape:
    return xs[0].tape


# ---- elementwise / shape ops -------------------------------------------------

def relu(x: Var) -> Var:
    pos = x.value > 0
    return _tape(x)._out(np.where(pos, x.value, 0).astype(x.value.dtype), x,
                         backward=lambda g: x.accumulate(g * pos))


def add(a: Var, b: Var) -> Var:
    return _tape(a)._out(a.value + b.value, a, b,
                         backward=lambda g: (a.accumulate(g), b.accumulate(g)))


def scale(x: Var, c: float) -> Var:
    return _tape(x)._out(x.value * c, x, backward=lambda g: x.accumulate(g * c))


def reshape(x: Var, shape) -> Var:
    old = x.value.shape
    return _tape(x)._out(x.value.reshape(shape), x, backward=lambda g: x.accumulate(g.reshape(old)))


def concat(xs, axis: int = -1) -> Var:
    sizes = [x.value.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        for x, part in zip(xs, np.split(g, cuts, axis=axis)):
            x.accumulate(part)

    return _tape(*xs)._out(np.concatenate([x.value for x in xs], axis=axis), *xs, backward=back)


def getitem(x: Var, key) -> Var:
    """Basic (slice) indexing, e.g. ``getitem(x, (slice(None), slice(0, 6)))``."""
    def back(g):
        full = np.zeros_like(x.value)
        full[key] = g
        x.accumulate(full)

    return _tape(x)._out(x.value[key], x, backward=back)


def mean_spatial(x: Var) -> Var:
    """(N,H,W,C) -> (N,C) average over the grid."""
    n, h, w, c = x.value.shape

    def back(g):
        x.accumulate(np.broadcast_to(g[:, None, None, :] / (h * w), x.value.shape).copy())

    return _tape(x)._out(x.value.mean(axis=(1, 2)), x, backward=back)


def dropout(x: Var, p: float, rng: np.random.Generator | None, training: bool) -> Var:
    """Inverted dropout; identity when not training."""
    if not training or p <= 0:
        return x
    keep = (rng.random(x.value.shape) >= p).astype(x.value.dtype) / (1.0 - p)
    return _tape(x)._out(x.value * keep, x, backward=lambda g: x.accumulate(g * keep))


# ---- linear algebra ------------------------------------------------------------

def linear(x: Var, w: Var, b: Var) -> Var:
    """(N,D) @ (D,O) + (O,)"""
    def back(g):
        x.accumulate(g @ w.value.T)
        w.accumulate(x.value.T @ g)
        b.accumulate(g.sum(axis=0))

    return _tape(x, w, b)._out(x.value @ w.value + b.value, x, w, b, backward=back)


def _pad(x, p):
    return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x


def conv2d(x: Var, w: Var, b: Var, stride: int = 1, pad: int = 1) -> Var:
    """NHWC convolution, weights (kh, kw, C_in, C_out), via im2col."""
    n, h, wd, c = x.value.shape
    kh, kw, cin, cout = w.value.shape
    if cin != c:
        raise ValueError(f"conv expects {cin} input channels, got {c}")
    xp = _pad(x.value, pad)
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    taps = [(i, j) for i in range(kh) for j in range(kw)]
    cols = np.stack([xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] for i, j in taps], axis=3)
    cols = cols.reshape(n * ho * wo, kh * kw * cin)
    wmat = w.value.reshape(kh * kw * cin, cout)
    out = (cols @ wmat).reshape(n, ho, wo, cout) + b.value

    def back(g):
        g2 = g.reshape(-1, cout)
        w.accumulate((cols.T @ g2).reshape(w.value.shape))
        b.accumulate(g2.sum(axis=0))
        if x.needs_grad:
            dcols = (g2 @ wmat.T).reshape(n, ho, wo, kh * kw, cin)
            gp = np.zeros_like(xp)
            for t, (i, j) in enumerate(taps):
                gp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, t, :]
            x.accumulate(gp[:, pad:pad + h, pad:pad + wd, :] if pad else gp)

    return _tape(x, w, b)._out(out, x, w, b, backward=back)


def correlation(f1: Var, f2: Var, temperature: float = 1.0) -> Var:
    """(N,H,W,C) x (N,H,W,C) -> (N, HW, HW) inner products of every cell pair,
    divided by ``temperature``.  Entry [n, p, q] pairs cell p of f1 with cell q of f2."""
    if f1.value.shape != f2.value.shape:
        raise ValueError(f"feature grids differ: {f1.value.shape} vs {f2.value.shape}")
    n, h, w, c = f1.value.shape
    a = f1.value.reshape(n, h * w, c)
    b = f2.value.reshape(n, h * w, c)
    inv = 1.0 / temperature

    def back(g):
        f1.accumulate((g @ b).reshape(f1.value.shape) * inv)
        f2.accumulate((np.swapaxes(g, 1, 2) @ a).reshape(f2.value.shape) * inv)

    return _tape(f1, f2)._out((a @ np.swapaxes(b, 1, 2)) * inv, f1, f2, backward=back)


def softmax(x: Var, axis: int) -> Var:
    z = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        x.accumulate(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _tape(x)._out(s, x, backward=back)


# ---- heads and losses ----------------------------------------------------------

def mixture(probs: Var, out12: Var, bins) -> Var:
    """Per row: p1 (b1 + w1) + p2 (b2 + w2) with b_i = (0, 0, bin_i, 0, 0, 0)."""
    b = np.zeros((2, 6), dtype=out12.value.dtype)
    b[0, 2], b[1, 2] = bins
    p = probs.value
    r1 = out12.value[:, :6] + b[0]
    r2 = out12.value[:, 6:] + b[1]
    val = p[:, :1] * r1 + p[:, 1:2] * r2

    def back(g):
        probs.accumulate(np.stack([(g * r1).sum(axis=1), (g * r2).sum(axis=1)], axis=1))
        out12.accumulate(np.concatenate([g * p[:, :1], g * p[:, 1:2]], axis=1))

    return _tape(probs, out12)._out(val, probs, out12, backward=back)


def pose_loss(pred: Var, gt: np.ndarray, beta: Var, gamma: Var) -> Var:
    """Batch mean of |dt|_1 e^-beta + beta + |dlogq|_1 e^-gamma + gamma."""
    d = pred.value - gt
    eb, eg = np.exp(-beta.value), np.exp(-gamma.value)
    at = np.abs(d[:, :3]).sum(axis=1)
    ar = np.abs(d[:, 3:]).sum(axis=1)
    n = d.shape[0]
    val = np.asarray((at * eb + beta.value + ar * eg + gamma.value).mean(), dtype=pred.value.dtype)

    def back(g):
        w = np.concatenate([np.full(3, eb), np.full(3, eg)]).astype(d.dtype)
        pred.accumulate(g * np.sign(d) * w / n)
        beta.accumulate(g * (1.0 - at.mean() * eb))
        gamma.accumulate(g * (1.0 - ar.mean() * eg))

    return _tape(pred, beta, gamma)._out(val, pred, beta, gamma, backward=back)


def cross_entropy(logits: Var, labels: np.ndarray) -> Var:
    """Batch mean of -log softmax(logits)[label]."""
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = z.shape[0]
    idx = np.arange(n), np.asarray(labels, dtype=int)
    val = np.asarray(-logp[idx].mean(), dtype=logits.value.dtype)

    def back(g):
        d = np.exp(logp)
        d[idx] -= 1.0
        logits.accumulate(g * d / n)

    return _tape(logits)._out(val, logits, backward=back)
