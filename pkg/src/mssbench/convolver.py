"""Linear convolution: a direct time-domain reference and a uniform-partitioned
overlap-save engine for long impulse responses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audio_io import AudioBuffer, require_same_rate
from .errors import InvalidArgument

DEFAULT_BLOCK = 4096


@dataclass(frozen=True)
class PartitionPlan:
    block_size: int
    ir_partitions: int

    def __post_init__(self):
        b = self.block_size
        if b < 64 or b & (b - 1):
            raise InvalidArgument(f"block_size must be a power of two >= 64, got {b}")
        if self.ir_partitions < 1:
            raise InvalidArgument("ir_partitions must be >= 1")

    @property
    def fft_size(self) -> int:
        return 2 * self.block_size

    @classmethod
    def for_ir(cls, ir_length: int, block_size: int = DEFAULT_BLOCK) -> "PartitionPlan":
        return cls(block_size, max(1, math.ceil(ir_length / block_size)))


def _as_1d(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidArgument(f"{name} must be a non-empty 1-D sequence")
    return x


def convolve_direct(signal, ir) -> np.ndarray:
    """O(N*M) time-domain convolution; the reference the FFT path is checked against."""
    return np.convolve(_as_1d(signal, "signal"), _as_1d(ir, "ir"), mode="full")


class PartitionedConvolver:
    """Streaming overlap-save convolver with a frequency-domain delay line.

    The IR spectra are fixed at construction.  One instance owns its delay
    line, so feed a single stream per instance.
    """

    def __init__(self, ir, plan: PartitionPlan | None = None):
        ir = _as_1d(ir, "ir")
        plan = plan or PartitionPlan.for_ir(ir.size)
        if plan.ir_partitions != math.ceil(ir.size / plan.block_size):
            raise InvalidArgument(
                f"plan has {plan.ir_partitions} partitions but IR of length {ir.size} needs "
                f"{math.ceil(ir.size / plan.block_size)} at block size {plan.block_size}")
        self.plan = plan
        B, P = plan.block_size, plan.ir_partitions
        parts = np.zeros((P, B))
        parts.reshape(-1)[:ir.size] = ir
        self._ir_spectra = np.fft.rfft(parts, n=2 * B, axis=1)
        self.reset()

    def reset(self):
        B, P = self.plan.block_size, self.plan.ir_partitions
        self._fdl = np.zeros((P, B + 1), dtype=np.complex128)
        self._prev = np.zeros(B)

    def process_block(self, block: np.ndarray) -> np.ndarray:
        B = self.plan.block_size
        if block.shape != (B,):
            raise InvalidArgument(f"block must have {B} samples")
        spectrum = np.fft.rfft(np.concatenate([self._prev, block]))
        self._prev = block.copy()
        self._fdl = np.roll(self._fdl, 1, axis=0)
        self._fdl[0] = spectrum
        acc = np.einsum("pk,pk->k", self._fdl, self._ir_spectra)
        return np.fft.irfft(acc, n=2 * B)[B:]

    def convolve(self, signal) -> np.ndarray:
        signal = _as_1d(signal, "signal")
        B = self.plan.block_size
        out_len = signal.size + self.plan.ir_partitions * B  # covers N + M - 1
        n_blocks = math.ceil(out_len / B)
        padded = np.zeros(n_blocks * B)
        padded[:signal.size] = signal
        self.reset()
        out = np.empty(n_blocks * B)
        for i in range(n_blocks):
            out[i * B:(i + 1) * B] = self.process_block(padded[i * B:(i + 1) * B])
        return out


def convolve_fft(signal, ir, plan: PartitionPlan | None = None) -> np.ndarray:
    signal = _as_1d(signal, "signal")
    ir = _as_1d(ir, "ir")
    out = PartitionedConvolver(ir, plan).convolve(signal)
    return out[:signal.size + ir.size - 1]


def convolve_stereo(signal: AudioBuffer, ir: AudioBuffer, block_size: int = DEFAULT_BLOCK) -> AudioBuffer:
    """Mono signal through a 2-channel IR."""
    require_same_rate(signal, ir)
    if signal.channels != 1:
        raise InvalidArgument(f"signal must be mono, got {signal.channels} channels")
    if ir.channels != 2:
        raise InvalidArgument(f"ir must have 2 channels, got {ir.channels}")
    plan = PartitionPlan.for_ir(ir.length, block_size)
    chans = [convolve_fft(signal.samples[0], ir.samples[c], plan) for c in range(2)]
    return AudioBuffer(np.stack(chans), signal.sample_rate)
