"""ConvTasNet extractor: learned encoder, dilated-convolution mask estimator, decoder.

The forward pass is written once against :mod:`mssbench.autodiff`, so the
same code runs inference (no tape) and training (with a tape).  Causal models
additionally get :class:`StreamingSeparator`, which processes audio in chunks
with carried state and reproduces the batch output.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .audio_io import AudioBuffer
from .errors import CorruptWeights, IncompatibleWeights, InvalidArgument, TooShort

MAGIC = b"CDZW"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TasNetConfig:
    n_filters: int = 512
    kernel_len: int = 32
    bottleneck: int = 128
    conv_channels: int = 512
    skip_channels: int = 128
    kernel: int = 3
    blocks_per_repeat: int = 8
    repeats: int = 3
    n_sources: int = 2
    in_channels: int = 2
    causal: bool = False
    mask_activation: str | None = None

    def __post_init__(self):
        for f in ("n_filters", "kernel_len", "bottleneck", "conv_channels", "skip_channels", "kernel",
                  "blocks_per_repeat", "repeats", "n_sources", "in_channels"):
            if int(getattr(self, f)) < 1:
                raise InvalidArgument(f"{f} must be positive")
        if self.kernel_len % 2:
            raise InvalidArgument("kernel_len must be even (stride = kernel_len / 2)")
        if self.mask_activation is None:
            object.__setattr__(self, "mask_activation", "sigmoid" if self.causal else "relu")
        if self.mask_activation not in ("relu", "sigmoid"):
            raise InvalidArgument(f"unknown mask activation {self.mask_activation!r}")

    @property
    def stride(self) -> int:
        return self.kernel_len // 2

    @property
    def n_blocks(self) -> int:
        return self.blocks_per_repeat * self.repeats

    def dilation(self, block: int) -> int:
        return 2 ** (block % self.blocks_per_repeat)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "TasNetConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in known})


def tiny_config(causal: bool = False, **overrides) -> TasNetConfig:
    """The desk-scale configuration used by tests and toy training."""
    base = dict(n_filters=16, kernel_len=8, bottleneck=8, conv_channels=16, skip_channels=8,
                kernel=3, blocks_per_repeat=2, repeats=2, causal=causal)
    base.update(overrides)
    return TasNetConfig(**base)


def param_shapes(cfg: TasNetConfig) -> dict:
    N, C, L = cfg.n_filters, cfg.in_channels, cfg.kernel_len
    B, H, Sc, P = cfg.bottleneck, cfg.conv_channels, cfg.skip_channels, cfg.kernel
    shapes = {"encoder.basis": (N, C, L), "bottleneck.weight": (B, N), "bottleneck.bias": (B,)}
    for i in range(cfg.n_blocks):
        p = f"blocks.{i}."
        shapes.update({
            p + "conv_in.weight": (H, B), p + "conv_in.bias": (H,),
            p + "prelu1": (1,), p + "norm1.gain": (H,), p + "norm1.bias": (H,),
            p + "depthwise.weight": (H, P), p + "depthwise.bias": (H,),
            p + "prelu2": (1,), p + "norm2.gain": (H,), p + "norm2.bias": (H,),
            p + "skip.weight": (Sc, H), p + "skip.bias": (Sc,),
            p + "residual.weight": (B, H), p + "residual.bias": (B,),
        })
    shapes.update({"mask.prelu": (1,), "mask.weight": (cfg.n_sources * N, Sc),
                   "mask.bias": (cfg.n_sources * N,), "decoder.basis": (N, C, L)})
    return shapes


def parameter_count(cfg: TasNetConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def init_weights(cfg: TasNetConfig, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.startswith("prelu"):
            w = np.full(shape, 0.25)
        elif leaf == "gain":
            w = np.ones(shape)
        elif leaf == "bias":
            w = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
        weights[name] = w
    return weights


def check_weights(cfg: TasNetConfig, weights: dict) -> None:
    shapes = param_shapes(cfg)
    if set(shapes) != set(weights):
        missing = sorted(set(shapes) - set(weights))
        extra = sorted(set(weights) - set(shapes))
        raise CorruptWeights(f"weight names do not match config (missing {missing[:3]}, extra {extra[:3]})")
    for name, shape in shapes.items():
        w = np.asarray(weights[name])
        if w.shape != shape:
            raise CorruptWeights(f"{name}: shape {w.shape} != expected {shape}")
        if not np.all(np.isfinite(w)):
            raise CorruptWeights(f"{name}: non-finite values")


# ---------------------------------------------------------------- forward

def _block(x, W, i, cfg: TasNetConfig):
    p = f"blocks.{i}."
    norm = ad.cumulative_layer_norm if cfg.causal else ad.global_layer_norm
    y = ad.pointwise(x, W[p + "conv_in.weight"], W[p + "conv_in.bias"])
    y = norm(ad.prelu(y, W[p + "prelu1"]), W[p + "norm1.gain"], W[p + "norm1.bias"])
    y = ad.depthwise(y, W[p + "depthwise.weight"], W[p + "depthwise.bias"], cfg.dilation(i), cfg.causal)
    y = norm(ad.prelu(y, W[p + "prelu2"]), W[p + "norm2.gain"], W[p + "norm2.bias"])
    skip = ad.pointwise(y, W[p + "skip.weight"], W[p + "skip.bias"])
    res = ad.pointwise(y, W[p + "residual.weight"], W[p + "residual.bias"])
    return res, skip


def _mask_head(skip_sum, W, cfg: TasNetConfig):
    m = ad.pointwise(ad.prelu(skip_sum, W["mask.prelu"]), W["mask.weight"], W["mask.bias"])
    return ad.sigmoid(m) if cfg.mask_activation == "sigmoid" else ad.relu(m)


def _encode(x, W, cfg):
    return ad.relu(ad.conv_encode(x, W["encoder.basis"], cfg.stride))


def _masks(latent, W, cfg):
    x = ad.pointwise(latent, W["bottleneck.weight"], W["bottleneck.bias"])
    skip_sum = None
    for i in range(cfg.n_blocks):
        res, skip = _block(x, W, i, cfg)
        x = ad.add(x, res)
        skip_sum = skip if skip_sum is None else ad.add(skip_sum, skip)
    return _mask_head(skip_sum, W, cfg)


def _as_vars(weights: dict, tape: ad.Tape | None) -> dict:
    if tape is None:
        return {k: ad.Var(v) for k, v in weights.items()}
    return {k: tape.watch(k, v) for k, v in weights.items()}


def padded_length(n_samples: int, cfg: TasNetConfig) -> int:
    """Smallest length >= n_samples (and >= L) covered exactly by whole frames."""
    L, S = cfg.kernel_len, cfg.stride
    if n_samples <= L:
        return L
    return L + -(-(n_samples - L) // S) * S


def forward(x: np.ndarray, cfg: TasNetConfig, weights: dict, tape: ad.Tape | None = None):
    """Batch forward pass.  ``x`` is (batch, channels, samples); returns one Var per source."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != cfg.in_channels:
        raise InvalidArgument(f"input must be (batch, {cfg.in_channels}, samples), got {x.shape}")
    T = x.shape[2]
    Tp = padded_length(T, cfg)
    xin = np.pad(x, ((0, 0), (0, 0), (0, Tp - T))) if Tp > T else x
    W = _as_vars(weights, tape)
    xv = tape.constant(xin) if tape is not None else ad.Var(xin)
    latent = _encode(xv, W, cfg)
    masks = _masks(latent, W, cfg)
    N = cfg.n_filters
    outs = []
    for s in range(cfg.n_sources):
        m = ad.take(masks, (slice(None), slice(s * N, (s + 1) * N), slice(None)))
        outs.append(ad.conv_decode(ad.mul(latent, m), W["decoder.basis"], cfg.stride, T))
    return outs


# ------------------------------------------------------------ public stages

@dataclass(frozen=True, eq=False)
class LatentFrames:
    frames: np.ndarray  # (N, F)
    frame_rate: float


def encode(mixture: AudioBuffer, cfg: TasNetConfig, weights: dict) -> LatentFrames:
    if mixture.length < cfg.kernel_len:
        raise TooShort(f"input of {mixture.length} samples is shorter than the encoder window {cfg.kernel_len}")
    if mixture.channels != cfg.in_channels:
        raise InvalidArgument(f"expected {cfg.in_channels} channels, got {mixture.channels}")
    z = _encode(ad.Var(mixture.samples[None]), {"encoder.basis": ad.Var(weights["encoder.basis"])}, cfg)
    return LatentFrames(z.value[0], mixture.sample_rate / cfg.stride)


def separator_masks(latent: LatentFrames, cfg: TasNetConfig, weights: dict) -> np.ndarray:
    """Masks shaped (n_sources, N, F)."""
    if latent.frames.shape[0] != cfg.n_filters:
        raise InvalidArgument(f"latent has {latent.frames.shape[0]} channels, config says {cfg.n_filters}")
    m = _masks(ad.Var(latent.frames[None]), _as_vars(weights, None), cfg).value[0]
    return m.reshape(cfg.n_sources, cfg.n_filters, -1)


def decode(latent: LatentFrames, mask: np.ndarray | None, cfg: TasNetConfig, weights: dict,
           length: int, sample_rate: int) -> AudioBuffer:
    z = latent.frames if mask is None else latent.frames * mask
    y = ad.conv_decode(ad.Var(z[None]), ad.Var(weights["decoder.basis"]), cfg.stride, length)
    return AudioBuffer(y.value[0], sample_rate)


def separate(mixture: AudioBuffer, cfg: TasNetConfig, weights: dict) -> tuple[AudioBuffer, AudioBuffer]:
    """(target, residual) estimates, each with the mixture's shape."""
    if mixture.channels != cfg.in_channels:
        raise InvalidArgument(f"expected {cfg.in_channels} channels, got {mixture.channels}")
    outs = forward(mixture.samples[None], cfg, weights)
    target, residual = outs[0], outs[1]
    return (AudioBuffer(target.value[0], mixture.sample_rate),
            AudioBuffer(residual.value[0], mixture.sample_rate))


def receptive_field(cfg: TasNetConfig) -> tuple[int, int]:
    """(lookback, lookahead) in latent frames contributed by the depthwise convolutions."""
    back = ahead = 0
    for i in range(cfg.n_blocks):
        left, right = ad.dilation_padding(cfg.kernel, cfg.dilation(i), cfg.causal)
        back += left
        ahead += right
    return back, ahead


# ---------------------------------------------------------------- streaming

class _StreamingNorm:
    def __init__(self, gain, bias):
        self.gain, self.bias = gain, bias
        self.s1 = 0.0
        self.s2 = 0.0
        self.frames = 0

    def __call__(self, x):
        C, T = x.shape
        s1 = np.cumsum(np.concatenate([[self.s1], x.sum(axis=0)]))[1:]
        s2 = np.cumsum(np.concatenate([[self.s2], (x * x).sum(axis=0)]))[1:]
        count = C * np.arange(self.frames + 1, self.frames + T + 1, dtype=np.float64)
        self.s1, self.s2, self.frames = s1[-1], s2[-1], self.frames + T
        mean = s1 / count
        std = np.sqrt(np.maximum(s2 / count - mean * mean, 0.0) + ad.EPS)
        return self.gain[:, None] * ((x - mean) / std) + self.bias[:, None]


def _prelu(x, a):
    return np.where(x < 0, a * x, x)


class StreamingSeparator:
    """Chunked inference for causal models with carried state.

    Feed audio with :meth:`push`; each call returns the output samples that
    are already final.  :meth:`flush` drains the rest.  The concatenated
    output equals :func:`separate` on the whole signal.
    """

    def __init__(self, cfg: TasNetConfig, weights: dict, sample_rate: int):
        if not cfg.causal:
            raise InvalidArgument("streaming inference needs a causal model")
        self.cfg, self.W, self.sample_rate = cfg, weights, sample_rate
        H = cfg.conv_channels
        self._norms = [(_StreamingNorm(weights[f"blocks.{i}.norm1.gain"], weights[f"blocks.{i}.norm1.bias"]),
                        _StreamingNorm(weights[f"blocks.{i}.norm2.gain"], weights[f"blocks.{i}.norm2.bias"]))
                       for i in range(cfg.n_blocks)]
        self._history = [np.zeros((H, (cfg.kernel - 1) * cfg.dilation(i))) for i in range(cfg.n_blocks)]
        self._pending = np.zeros((cfg.in_channels, 0))
        self._tail = np.zeros((cfg.n_sources, cfg.in_channels, cfg.kernel_len - cfg.stride))
        self._received = 0
        self._emitted = 0
        self._closed = False

    def _separator(self, latent):
        cfg, W = self.cfg, self.W
        x = W["bottleneck.weight"] @ latent + W["bottleneck.bias"][:, None]
        skip_sum = None
        for i in range(cfg.n_blocks):
            p = f"blocks.{i}."
            n1, n2 = self._norms[i]
            y = W[p + "conv_in.weight"] @ x + W[p + "conv_in.bias"][:, None]
            y = n1(_prelu(y, W[p + "prelu1"][0]))
            hist = np.concatenate([self._history[i], y], axis=1)
            d, P, T = cfg.dilation(i), cfg.kernel, y.shape[1]
            w = W[p + "depthwise.weight"]
            z = np.broadcast_to(W[p + "depthwise.bias"][:, None], y.shape).copy()
            for k in range(P):
                z += w[:, k, None] * hist[:, k * d:k * d + T]
            keep = (P - 1) * d
            self._history[i] = hist[:, hist.shape[1] - keep:] if keep else hist[:, :0]
            z = n2(_prelu(z, W[p + "prelu2"][0]))
            skip = W[p + "skip.weight"] @ z + W[p + "skip.bias"][:, None]
            x = x + (W[p + "residual.weight"] @ z + W[p + "residual.bias"][:, None])
            skip_sum = skip if skip_sum is None else skip_sum + skip
        m = W["mask.weight"] @ _prelu(skip_sum, W["mask.prelu"][0]) + W["mask.bias"][:, None]
        if cfg.mask_activation == "sigmoid":
            return 0.5 * (1.0 + np.tanh(0.5 * m))
        return np.maximum(m, 0.0)

    def _run(self) -> np.ndarray:
        cfg = self.cfg
        L, S, N = cfg.kernel_len, cfg.stride, cfg.n_filters
        avail = self._pending.shape[1]
        if avail < L:
            return np.zeros((cfg.n_sources, cfg.in_channels, 0))
        F = (avail - L) // S + 1
        latent = ad.conv_encode(ad.Var(self._pending[None, :, :(F - 1) * S + L]),
                                ad.Var(self.W["encoder.basis"]), S).value[0]
        latent = np.maximum(latent, 0.0)
        self._pending = self._pending[:, F * S:]
        masks = self._separator(latent)
        outs = []
        for s in range(cfg.n_sources):
            seg = ad.conv_decode(ad.Var((latent * masks[s * N:(s + 1) * N])[None]),
                                 ad.Var(self.W["decoder.basis"]), S, (F - 1) * S + L).value[0]
            seg[:, :L - S] += self._tail[s]
            self._tail[s] = seg[:, F * S:]
            outs.append(seg[:, :F * S])
        return np.stack(outs)

    def push(self, chunk) -> np.ndarray:
        """Append input (channels, n); returns finalized output (n_sources, channels, m)."""
        if self._closed:
            raise InvalidArgument("stream already flushed")
        chunk = np.asarray(chunk, dtype=np.float64)
        self._pending = np.concatenate([self._pending, chunk], axis=1)
        self._received += chunk.shape[1]
        out = self._run()
        return self._clip(out)

    def flush(self) -> np.ndarray:
        self._closed = True
        pad = padded_length(self._received, self.cfg) - self._received
        self._pending = np.concatenate([self._pending, np.zeros((self.cfg.in_channels, pad))], axis=1)
        out = np.concatenate([self._run(), self._tail], axis=2)
        return self._clip(out)

    def _clip(self, out):
        keep = max(0, min(out.shape[2], self._received - self._emitted))
        self._emitted += keep
        return out[:, :, :keep]


def stream_separate(mixture: AudioBuffer, cfg: TasNetConfig, weights: dict, chunk_s: float = 0.5):
    """Run :class:`StreamingSeparator` over ``mixture`` in ``chunk_s`` pieces."""
    sess = StreamingSeparator(cfg, weights, mixture.sample_rate)
    step = max(1, int(round(chunk_s * mixture.sample_rate)))
    parts = [sess.push(mixture.samples[:, i:i + step]) for i in range(0, mixture.length, step)]
    parts.append(sess.flush())
    y = np.concatenate(parts, axis=2)
    return AudioBuffer(y[0], mixture.sample_rate), AudioBuffer(y[1], mixture.sample_rate)


# ------------------------------------------------------------------ storage

def save_weights(weights: dict, cfg: TasNetConfig, path) -> None:
    check_weights(cfg, weights)
    header = json.dumps(cfg.to_json(), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(header)), header,
             struct.pack("<I", len(weights))]
    for name in param_shapes(cfg):
        w = np.asarray(weights[name])
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", w.ndim))
        parts.append(struct.pack(f"<{w.ndim}I", *w.shape))
        parts.append(w.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptWeights("weight file is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_weights(path) -> tuple[dict, TasNetConfig]:
    r = _Reader(Path(path).read_bytes())
    if len(r.data) < 8 or r.data[:4] != MAGIC:
        raise IncompatibleWeights(f"{path}: bad magic, not a CDZW file")
    r.take(4)
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise IncompatibleWeights(f"{path}: unsupported version {version}")
    (hlen,) = r.unpack("<I")
    try:
        cfg = TasNetConfig.from_json(json.loads(r.take(hlen).decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise CorruptWeights(f"{path}: unreadable config header ({exc})") from exc
    (count,) = r.unpack("<I")
    weights = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if rank else 1
        weights[name] = np.frombuffer(r.take(4 * n), dtype="<f4").astype(np.float64).reshape(dims)
    if r.pos != len(r.data):
        raise CorruptWeights(f"{path}: trailing bytes after tensors")
    check_weights(cfg, weights)
    return weights, cfg
