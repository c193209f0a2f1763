"""First-order ambisonics: direction encoding, horizontal rotation, mid-side decode.

Conventions: FuMa channel order and weighting (W carries 1/sqrt(2)),
azimuth in degrees, counter-clockwise positive, 0 deg = front.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audio_io import AudioBuffer
from .errors import InvalidArgument

FUMA_W = 1.0 / np.sqrt(2.0)
DEFAULT_PATTERN = 0.5


@dataclass(frozen=True, eq=False)
class BFormatSignal:
    """Four equal-length channels W, X, Y, Z (FuMa)."""

    w: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    sample_rate: int

    def __post_init__(self):
        chans = [np.atleast_1d(np.asarray(c, dtype=np.float64)) for c in (self.w, self.x, self.y, self.z)]
        if len({c.shape for c in chans}) != 1 or chans[0].ndim != 1:
            raise InvalidArgument("B-format channels must be equal-length 1-D sequences")
        if not all(np.all(np.isfinite(c)) for c in chans):
            raise InvalidArgument("B-format signal contains NaN or Inf")
        for name, c in zip("wxyz", chans):
            object.__setattr__(self, name, c)

    @property
    def length(self) -> int:
        return self.w.shape[0]

    def as_array(self) -> np.ndarray:
        return np.stack([self.w, self.x, self.y, self.z])

    @classmethod
    def from_buffer(cls, buf: AudioBuffer, convention: str = "fuma") -> "BFormatSignal":
        """Wrap a 4-channel buffer. ``convention="ambix"`` converts ACN/SN3D (W,Y,Z,X) to FuMa."""
        if buf.channels != 4:
            raise InvalidArgument(f"B-format needs 4 channels, got {buf.channels}")
        s = buf.samples
        if convention == "fuma":
            return cls(s[0], s[1], s[2], s[3], buf.sample_rate)
        if convention == "ambix":
            return cls(s[0] * FUMA_W, s[3], s[1], s[2], buf.sample_rate)
        raise InvalidArgument(f"unknown convention {convention!r}")

    def to_buffer(self) -> AudioBuffer:
        return AudioBuffer(self.as_array(), self.sample_rate)


@dataclass(frozen=True)
class DirectionCoefficients:
    w: float
    x: float
    y: float
    azimuth_deg: float


@dataclass(frozen=True, eq=False)
class MidSidePair:
    mid: np.ndarray
    side: np.ndarray
    sample_rate: int

    def __post_init__(self):
        mid = np.atleast_1d(np.asarray(self.mid, dtype=np.float64))
        side = np.atleast_1d(np.asarray(self.side, dtype=np.float64))
        if mid.shape != side.shape:
            raise InvalidArgument("mid and side must have equal lengths")
        object.__setattr__(self, "mid", mid)
        object.__setattr__(self, "side", side)


def _cos_sin(azimuth_deg: float) -> tuple[float, float]:
    # remainder() is odd-symmetric, so mirrored angles give exactly mirrored coefficients
    theta = math.radians(math.remainder(float(azimuth_deg), 360.0))
    return math.cos(theta), math.sin(theta)


def rotate_z(sig: BFormatSignal, azimuth_deg: float) -> BFormatSignal:
    """Rotate the sound field about the vertical axis; a source at phi moves to phi + azimuth."""
    c, s = _cos_sin(azimuth_deg)
    return BFormatSignal(sig.w.copy(), sig.x * c - sig.y * s, sig.x * s + sig.y * c,
                         sig.z.copy(), sig.sample_rate)


def encode_direction(azimuth_deg: float) -> DirectionCoefficients:
    c, s = _cos_sin(azimuth_deg)
    return DirectionCoefficients(FUMA_W, c, s, float(azimuth_deg))


def decode_midside(sig: BFormatSignal, pattern: float = DEFAULT_PATTERN) -> MidSidePair:
    """Front-facing virtual mic of polar pattern ``pattern`` (1 = omni, 0 = fig-8) as mid, Y as side."""
    if not 0.0 <= pattern <= 1.0:
        raise InvalidArgument(f"pattern must lie in [0, 1], got {pattern}")
    mid = pattern * np.sqrt(2.0) * sig.w + (1.0 - pattern) * sig.x
    return MidSidePair(mid, sig.y.copy(), sig.sample_rate)


def midside_to_stereo(ms: MidSidePair) -> AudioBuffer:
    return AudioBuffer(np.stack([ms.mid + ms.side, ms.mid - ms.side]), ms.sample_rate)


def anechoic_gains(azimuth_deg: float, pattern: float = DEFAULT_PATTERN) -> tuple[float, float]:
    d = encode_direction(azimuth_deg)
    m = pattern * np.sqrt(2.0) * d.w + (1.0 - pattern) * d.x
    return float(m + d.y), float(m - d.y)
