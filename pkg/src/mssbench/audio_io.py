"""WAV reading/writing and the in-memory audio carrier.

Samples are held as float64 arrays shaped ``(channels, length)``.  Integer PCM
is scaled by ``2**(bits-1)`` on read; float32 files pass through unchanged.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptFile, InvalidArgument, IoError, SampleRateMismatch, UnsupportedFormat

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

ENCODINGS = {"pcm16": (WAVE_FORMAT_PCM, 16), "pcm24": (WAVE_FORMAT_PCM, 24), "float32": (WAVE_FORMAT_IEEE_FLOAT, 32)}


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[0] < 1:
            raise InvalidArgument(f"samples must be (channels, length), got shape {x.shape}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise InvalidArgument(f"sample_rate must be a positive integer, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise InvalidArgument("audio buffer contains NaN or Inf")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.length / self.sample_rate

    def channel(self, c: int) -> np.ndarray:
        return self.samples[c]

    def with_samples(self, samples) -> "AudioBuffer":
        return AudioBuffer(samples, self.sample_rate)

    def __eq__(self, other):
        if not isinstance(other, AudioBuffer):
            return NotImplemented
        return (self.sample_rate == other.sample_rate
                and self.samples.shape == other.samples.shape
                and bool(np.array_equal(self.samples, other.samples)))

    def __repr__(self):
        return f"AudioBuffer(channels={self.channels}, length={self.length}, sample_rate={self.sample_rate})"


def require_same_rate(*buffers: AudioBuffer) -> int:
    rates = {b.sample_rate for b in buffers}
    if len(rates) != 1:
        raise SampleRateMismatch(f"sample rates differ: {sorted(rates)}")
    return rates.pop()


def _chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8:pos + 8 + size]
        yield cid, size, body
        pos += 8 + size + (size & 1)


def read_wav(path) -> AudioBuffer:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise UnsupportedFormat(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    declared = None
    for cid, size, body in _chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise CorruptFile(f"{path}: short fmt chunk")
            tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", body)
            if tag == WAVE_FORMAT_EXTENSIBLE:
                if len(body) < 40:
                    raise CorruptFile(f"{path}: short extensible fmt chunk")
                tag = struct.unpack_from("<H", body, 24)[0]
            fmt = (tag, channels, rate, block_align, bits)
        elif cid == b"data":
            payload, declared = body, size
            break
    if fmt is None:
        raise CorruptFile(f"{path}: missing fmt chunk")
    if payload is None:
        raise CorruptFile(f"{path}: missing data chunk")

    tag, channels, rate, block_align, bits = fmt
    if (tag, bits) not in {(WAVE_FORMAT_PCM, 16), (WAVE_FORMAT_PCM, 24), (WAVE_FORMAT_IEEE_FLOAT, 32)}:
        raise UnsupportedFormat(f"{path}: format tag {tag:#06x} with {bits} bits is not supported")
    if channels < 1 or block_align != channels * bits // 8:
        raise CorruptFile(f"{path}: inconsistent fmt chunk")
    if len(payload) < declared or len(payload) % block_align:
        raise CorruptFile(f"{path}: truncated data chunk ({len(payload)} of {declared} bytes)")

    n = len(payload) // block_align
    if tag == WAVE_FORMAT_IEEE_FLOAT:
        x = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(x)):
            raise CorruptFile(f"{path}: non-finite float samples")
    elif bits == 16:
        x = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    else:
        raw = np.frombuffer(payload, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        x = v.astype(np.float64) / float(1 << 23)
    return AudioBuffer(x.reshape(n, channels).T.copy(), rate)


def _quantize(x: np.ndarray, bits: int) -> np.ndarray:
    scale = float(1 << (bits - 1))
    x = np.clip(x, -1.0, 1.0 - 1.0 / scale) * scale
    # round half away from zero
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


def write_wav(buffer: AudioBuffer, path, encoding: str = "float32") -> None:
    if encoding not in ENCODINGS:
        raise InvalidArgument(f"unknown encoding {encoding!r}; expected one of {sorted(ENCODINGS)}")
    tag, bits = ENCODINGS[encoding]
    frames = buffer.samples.T
    if encoding == "float32":
        payload = frames.astype("<f4").tobytes()
    elif encoding == "pcm16":
        payload = _quantize(frames, 16).astype("<i2").tobytes()
    else:
        q = _quantize(frames, 24).reshape(-1) & 0xFFFFFF
        b = np.stack([q & 0xFF, (q >> 8) & 0xFF, (q >> 16) & 0xFF], axis=1).astype(np.uint8)
        payload = b.tobytes()

    block_align = buffer.channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, buffer.channels, buffer.sample_rate,
                      buffer.sample_rate * block_align, block_align, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    try:
        Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    except OSError as exc:
        raise IoError(str(exc)) from exc
