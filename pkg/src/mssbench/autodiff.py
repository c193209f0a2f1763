"""Minimal reverse-mode autodiff over numpy arrays, at layer granularity.

Every op takes :class:`Var` inputs and returns a new ``Var``.  When any input
belongs to a :class:`Tape`, the op records a closure mapping the output
gradient to input gradients.  Without a tape the ops are plain numpy forward
passes, which is how inference runs.

Activations are batch-first: ``(batch, channels, time)``.
"""
from __future__ import annotations

import itertools

import numpy as np

from .errors import GraphError

EPS = 1e-8
_ids = itertools.count()


class Var:
    __slots__ = ("value", "tape", "name", "id")

    def __init__(self, value, tape: "Tape | None" = None, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.name = name
        self.id = next(_ids)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, name={self.name!r})"


class Tape:
    """Records ops in execution order; ``backward`` replays them once in reverse."""

    def __init__(self):
        self._records = []
        self._leaves = {}
        self._produced = set()
        self._consumed = False

    def watch(self, name: str, value) -> Var:
        v = Var(value, self, name)
        self._leaves[name] = v
        return v

    def constant(self, value) -> Var:
        return Var(value, self)

    def record(self, out: Var, inputs, backward_fn):
        self._records.append((out, inputs, backward_fn))
        self._produced.add(out.id)

    def backward(self, loss: Var) -> dict:
        if self._consumed:
            raise GraphError("tape already consumed; record the forward pass again")
        if loss.tape is not self or loss.id not in self._produced:
            raise GraphError("loss was not recorded on this tape")
        if loss.value.size != 1:
            raise GraphError("backward needs a scalar loss")
        self._consumed = True
        grads = {loss.id: np.ones_like(loss.value)}
        for out, inputs, fn in reversed(self._records):
            g = grads.pop(out.id, None)
            if g is None:
                continue
            for inp, gi in zip(inputs, fn(g)):
                if inp is None or gi is None or inp.tape is not self:
                    continue
                if inp.id in grads:
                    grads[inp.id] = grads[inp.id] + gi
                else:
                    grads[inp.id] = gi
        return {name: grads.get(v.id, np.zeros_like(v.value)) for name, v in self._leaves.items()}


def _tape_of(*vs):
    for v in vs:
        if isinstance(v, Var) and v.tape is not None:
            return v.tape
    return None


def _op(value, inputs, backward_fn) -> Var:
    tape = _tape_of(*inputs)
    out = Var(value, tape)
    if tape is not None:
        tape.record(out, inputs, backward_fn)
    return out


# ---------------------------------------------------------------- elementwise

def add(a: Var, b: Var) -> Var:
    return _op(a.value + b.value, (a, b), lambda g: (g, g))


def mul(a: Var, b: Var) -> Var:
    av, bv = a.value, b.value
    return _op(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Var, c: float) -> Var:
    return _op(a.value * c, (a,), lambda g: (g * c,))


def relu(x: Var) -> Var:
    mask = x.value > 0
    return _op(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Var) -> Var:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _op(y, (x,), lambda g: (g * y * (1.0 - y),))


def prelu(x: Var, alpha: Var) -> Var:
    """Parametric ReLU with one shared slope."""
    xv, a = x.value, alpha.value
    neg = xv < 0
    y = np.where(neg, a * xv, xv)

    def back(g):
        return g * np.where(neg, a, 1.0), np.atleast_1d(np.sum(g * xv * neg)).reshape(a.shape)

    return _op(y, (x, alpha), back)


def take(x: Var, index) -> Var:
    """Basic-slice view ``x[index]``."""
    shape = x.value.shape

    def back(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _op(x.value[index].copy(), (x,), back)


# -------------------------------------------------------------- convolutions

def pointwise(x: Var, weight: Var, bias: Var) -> Var:
    """1x1 convolution: (B, Cin, T) -> (B, Cout, T) with weight (Cout, Cin)."""
    xv, w = x.value, weight.value
    y = np.einsum("oc,bct->bot", w, xv) + bias.value[None, :, None]

    def back(g):
        return (np.einsum("oc,bot->bct", w, g),
                np.einsum("bot,bct->oc", g, xv),
                g.sum(axis=(0, 2)))

    return _op(y, (x, weight, bias), back)


def dilation_padding(kernel: int, dilation: int, causal: bool) -> tuple[int, int]:
    total = (kernel - 1) * dilation
    if causal:
        return total, 0
    return total // 2, total - total // 2


def depthwise(x: Var, weight: Var, bias: Var, dilation: int, causal: bool) -> Var:
    """Per-channel dilated convolution, same-length output, weight (C, P)."""
    xv, w = x.value, weight.value
    T = xv.shape[2]
    P = w.shape[1]
    left, right = dilation_padding(P, dilation, causal)
    xp = np.pad(xv, ((0, 0), (0, 0), (left, right)))
    y = np.broadcast_to(bias.value[None, :, None], xv.shape).copy()
    for k in range(P):
        y += w[None, :, k, None] * xp[:, :, k * dilation:k * dilation + T]

    def back(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w)
        for k in range(P):
            sl = slice(k * dilation, k * dilation + T)
            gxp[:, :, sl] += g * w[None, :, k, None]
            gw[:, k] = np.einsum("bct,bct->c", g, xp[:, :, sl])
        return gxp[:, :, left:left + T], gw, g.sum(axis=(0, 2))

    return _op(y, (x, weight, bias), back)


def n_frames(n_samples: int, kernel: int, stride: int) -> int:
    return (n_samples - kernel) // stride + 1


def _frames(x: np.ndarray, kernel: int, stride: int, count: int) -> np.ndarray:
    """(B, C, T) -> (B, C, F, L) view of strided windows."""
    b, c, _ = x.shape
    sb, sc, st = x.strides
    return np.lib.stride_tricks.as_strided(x, (b, c, count, kernel), (sb, sc, st * stride, st), writeable=False)


def _overlap_add(frames: np.ndarray, stride: int, length: int) -> np.ndarray:
    """Inverse of :func:`_frames` by summation; ``frames`` is (B, C, F, L) with L % stride == 0."""
    b, c, f, kernel = frames.shape
    out = np.zeros((b, c, (f - 1) * stride + kernel))
    for j in range(kernel // stride):
        part = frames[:, :, :, j * stride:(j + 1) * stride].reshape(b, c, f * stride)
        out[:, :, j * stride:j * stride + f * stride] += part
    if length <= out.shape[2]:
        return out[:, :, :length]
    return np.pad(out, ((0, 0), (0, 0), (0, length - out.shape[2])))


def conv_encode(x: Var, basis: Var, stride: int) -> Var:
    """Strided multichannel convolution (B, C, T) -> (B, N, F) with basis (N, C, L)."""
    xv, w = x.value, basis.value
    kernel = w.shape[2]
    F = n_frames(xv.shape[2], kernel, stride)
    fr = _frames(np.ascontiguousarray(xv), kernel, stride, F)
    y = np.einsum("bcfl,ncl->bnf", fr, w)

    def back(g):
        gfr = np.einsum("bnf,ncl->bcfl", g, w)
        return _overlap_add(gfr, stride, xv.shape[2]), np.einsum("bnf,bcfl->ncl", g, fr)

    return _op(y, (x, basis), back)


def conv_decode(z: Var, basis: Var, stride: int, length: int) -> Var:
    """Transposed strided convolution (B, N, F) -> (B, C, length), overlap-added then trimmed/padded."""
    zv, w = z.value, basis.value
    kernel = w.shape[2]
    F = zv.shape[2]
    fr = np.einsum("bnf,ncl->bcfl", zv, w)
    y = _overlap_add(fr, stride, length)

    def back(g):
        full = (F - 1) * stride + kernel
        gpad = np.zeros((g.shape[0], g.shape[1], max(full, length)))
        gpad[:, :, :length] = g
        gfr = _frames(gpad, kernel, stride, F)
        return np.einsum("bcfl,ncl->bnf", gfr, w), np.einsum("bnf,bcfl->ncl", zv, gfr)

    return _op(y, (z, basis), back)


# ------------------------------------------------------------- normalization

def _layer_norm(x: Var, gain: Var, bias: Var, cumulative: bool) -> Var:
    xv = x.value
    _, C, T = xv.shape
    if cumulative:
        count = C * np.arange(1, T + 1, dtype=np.float64)
        s1 = np.cumsum(xv.sum(axis=1), axis=1)
        s2 = np.cumsum((xv * xv).sum(axis=1), axis=1)
    else:
        count = np.full(1, float(C * T))
        s1 = xv.sum(axis=(1, 2))[:, None]
        s2 = (xv * xv).sum(axis=(1, 2))[:, None]
    mean = s1 / count
    var = np.maximum(s2 / count - mean * mean, 0.0) + EPS
    std = np.sqrt(var)
    xhat = (xv - mean[:, None, :]) / std[:, None, :]
    g_, b_ = gain.value, bias.value
    y = g_[None, :, None] * xhat + b_[None, :, None]

    def back(g):
        dxhat = g * g_[None, :, None]
        a = dxhat.sum(axis=1)
        b = (dxhat * xhat).sum(axis=1)
        if not cumulative:
            a = a.sum(axis=1, keepdims=True)
            b = b.sum(axis=1, keepdims=True)
        A = a / (std * count)
        Bc = b / (count * var)
        if cumulative:
            # statistics at frame t depend on every frame <= t
            rA = np.cumsum(A[:, ::-1], axis=1)[:, ::-1]
            rB = np.cumsum(Bc[:, ::-1], axis=1)[:, ::-1]
            rBm = np.cumsum((Bc * mean)[:, ::-1], axis=1)[:, ::-1]
        else:
            rA, rB, rBm = A, Bc, Bc * mean
        gx = (dxhat / std[:, None, :] - rA[:, None, :]
              - xv * rB[:, None, :] + rBm[:, None, :])
        return gx, (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))

    return _op(y, (x, gain, bias), back)


def global_layer_norm(x: Var, gain: Var, bias: Var) -> Var:
    """Normalize each batch item over all channels and frames."""
    return _layer_norm(x, gain, bias, cumulative=False)


def cumulative_layer_norm(x: Var, gain: Var, bias: Var) -> Var:
    """Normalize frame t with statistics of frames 0..t only."""
    return _layer_norm(x, gain, bias, cumulative=True)


# --------------------------------------------------------------------- losses

def l1_loss(estimates, references) -> Var:
    """Mean absolute error over all sources, batch items, channels and samples."""
    total = sum(e.value.size for e in estimates)
    diffs = [e.value - r.value for e, r in zip(estimates, references)]
    value = sum(np.abs(d).sum() for d in diffs) / total
    signs = [np.sign(d) / total for d in diffs]

    def back(g):
        return [g * s for s in signs] + [-g * s for s in signs]

    return _op(np.asarray(value), tuple(estimates) + tuple(references), back)


NEG_SNR_FLOOR = -100.0


def neg_snr_loss(estimates, references, eps: float = EPS) -> Var:
    """Negative SNR in dB, averaged over sources and batch items, floored at -100."""
    terms, grads = [], []
    for e, r in zip(estimates, references):
        axes = tuple(range(1, e.value.ndim))
        d = r.value - e.value
        num = (r.value ** 2).sum(axis=axes) + eps
        den = (d ** 2).sum(axis=axes) + eps
        loss = -10.0 * np.log10(num / den)
        active = loss > NEG_SNR_FLOOR
        terms.append(np.where(active, loss, NEG_SNR_FLOOR))
        # d/d est of 10 log10(den) = (10 / ln10) * (-2 d) / den
        c = (10.0 / np.log(10.0)) / den * active
        grads.append((c, d, num, r.value))
    count = sum(t.size for t in terms)
    value = sum(t.sum() for t in terms) / count

    def back(g):
        ge, gr = [], []
        for c, d, num, rv in grads:
            shape = (-1,) + (1,) * (d.ndim - 1)
            cc = c.reshape(shape) * g / count
            ge.append(-2.0 * cc * d)
            # reference enters both numerator and residual
            k = (10.0 / np.log(10.0)) / num.reshape(shape) * (c.reshape(shape) > 0) * g / count
            gr.append(2.0 * cc * d - 2.0 * k * rv)
        return ge + gr

    return _op(np.asarray(value), tuple(estimates) + tuple(references), back)
