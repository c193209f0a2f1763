"""Stereo scene rendering: azimuth layout, anechoic panning, B-format reverb."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ambisonics
from .ambisonics import BFormatSignal
from .audio_io import AudioBuffer, require_same_rate
from .bss_eval import DEFAULT_FILTER_LEN, track_sdr
from .convolver import DEFAULT_BLOCK, convolve_stereo
from .errors import InvalidArgument, MissingImpulseResponse, UnknownInstrument

STRINGS = ("cello", "viola", "violin")
WOODWINDS = ("bassoon", "clarinet", "flute", "oboe", "saxophone")
INSTRUMENTS = tuple(sorted(STRINGS + WOODWINDS))
SCENE_LABELS = INSTRUMENTS + ("other",)
PEAK_TARGET = 0.95


@dataclass
class SceneSpec:
    stems: list  # [(instrument, mono AudioBuffer)], in score order
    spacing_deg: float = 10.0
    mode: str = "anechoic"
    ir: BFormatSignal | None = None
    decode_pattern: float = ambisonics.DEFAULT_PATTERN
    center_deg: float = 0.0
    normalize: bool = True
    ir_name: str | None = None

    def __post_init__(self):
        if not self.stems:
            raise InvalidArgument("scene needs at least one stem")
        if self.mode not in ("anechoic", "reverb"):
            raise InvalidArgument(f"mode must be 'anechoic' or 'reverb', got {self.mode!r}")
        if self.mode == "reverb" and self.ir is None:
            raise MissingImpulseResponse("reverb mode requires a B-format impulse response")
        for label, buf in self.stems:
            if label not in SCENE_LABELS:
                raise InvalidArgument(f"unknown instrument label {label!r}")
            if buf.channels != 1:
                raise InvalidArgument(f"stem {label!r} must be mono")
        require_same_rate(*(b for _, b in self.stems))
        if self.ir is not None and self.ir.sample_rate != self.stems[0][1].sample_rate:
            require_same_rate(self.stems[0][1], self.ir.to_buffer())


@dataclass
class RenderedScene:
    stems_stereo: list  # [(instrument, stereo AudioBuffer)]
    mixture: AudioBuffer
    azimuths: list
    metadata: dict = field(default_factory=dict)

    def stem(self, instrument: str) -> AudioBuffer:
        for label, buf in self.stems_stereo:
            if label == instrument:
                return buf
        raise UnknownInstrument(instrument)


def assign_azimuths(n: int, spacing_deg: float = 10.0, center_deg: float = 0.0) -> list[float]:
    """Symmetric layout around ``center_deg``, listed in score order."""
    if n < 1:
        raise InvalidArgument("need at least one source")
    return [center_deg + (i - (n - 1) / 2) * spacing_deg for i in range(n)]


def merge_same_instrument(stems: list) -> list:
    """Sum lines that share an instrument label; first-occurrence order is kept."""
    if not stems:
        return []
    shapes = {b.samples.shape for _, b in stems}
    if len(shapes) != 1:
        raise InvalidArgument(f"stems must have equal shapes, got {sorted(shapes)}")
    rate = require_same_rate(*(b for _, b in stems))
    merged: dict[str, np.ndarray] = {}
    for label, buf in stems:
        if label in merged:
            merged[label] = merged[label] + buf.samples
        else:
            merged[label] = buf.samples.copy()
    return [(label, AudioBuffer(x, rate)) for label, x in merged.items()]


def stereo_ir(ir: BFormatSignal, azimuth_deg: float, pattern: float) -> AudioBuffer:
    rotated = ambisonics.rotate_z(ir, azimuth_deg)
    return ambisonics.midside_to_stereo(ambisonics.decode_midside(rotated, pattern))


def sum_stems(buffers: list[AudioBuffer]) -> AudioBuffer:
    """Left-to-right sum in list order; the mixture identity depends on this order."""
    acc = np.zeros_like(buffers[0].samples)
    for b in buffers:
        acc = acc + b.samples
    return AudioBuffer(acc, buffers[0].sample_rate)


def render(spec: SceneSpec, block_size: int = DEFAULT_BLOCK) -> RenderedScene:
    rate = spec.stems[0][1].sample_rate
    azimuths = assign_azimuths(len(spec.stems), spec.spacing_deg, spec.center_deg)
    rendered = []
    for (label, stem), az in zip(spec.stems, azimuths):
        if spec.mode == "reverb":
            out = convolve_stereo(stem, stereo_ir(spec.ir, az, spec.decode_pattern), block_size).samples
        else:
            gl, gr = ambisonics.anechoic_gains(az, spec.decode_pattern)
            out = np.stack([gl * stem.samples[0], gr * stem.samples[0]])
        rendered.append((label, out))

    length = max(x.shape[1] for _, x in rendered)
    padded = []
    for label, x in rendered:
        if x.shape[1] < length:
            x = np.pad(x, ((0, 0), (0, length - x.shape[1])))
        padded.append((label, x))

    mixture = sum_stems([AudioBuffer(x, rate) for _, x in padded]).samples
    scale = 1.0
    peak = float(np.max(np.abs(mixture)))
    if spec.normalize and peak > 0:
        scale = PEAK_TARGET / peak
        padded = [(label, x * scale) for label, x in padded]
        mixture = sum_stems([AudioBuffer(x, rate) for _, x in padded]).samples

    stems_stereo = [(label, AudioBuffer(x, rate)) for label, x in padded]
    metadata = {
        "mode": spec.mode,
        "azimuths_deg": azimuths,
        "instruments": [label for label, _ in spec.stems],
        "spacing_deg": spec.spacing_deg,
        "center_deg": spec.center_deg,
        "decode_pattern": spec.decode_pattern,
        "azimuth_convention": "counter-clockwise positive, 0 deg front",
        "ambisonic_convention": "FuMa (W scaled by 1/sqrt(2)), order W,X,Y,Z",
        "stereo_decode": "L = mid + side, R = mid - side",
        "normalization_scale": scale,
        "sample_rate": rate,
        "length": length,
        "ir": spec.ir_name if spec.mode == "reverb" else None,
    }
    return RenderedScene(stems_stereo, AudioBuffer(mixture, rate), azimuths, metadata)


def smr_reference(scene: RenderedScene, target: str, frame_s: float = 1.0,
                  filter_len: int = DEFAULT_FILTER_LEN) -> float:
    """Signal-to-music ratio: the target stem scored against the unprocessed mixture."""
    reference = scene.stem(target)
    value, _ = track_sdr(reference, scene.mixture, frame_s, filter_len)
    return value
