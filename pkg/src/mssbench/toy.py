"""Synthetic two-source task: band-limited low noise vs high tones, rendered as
an anechoic stereo scene with the sources 10 degrees apart.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .audio_io import AudioBuffer
from .dataset import MixtureSample
from .scene import SceneSpec, render

LOW_LABEL = "cello"
HIGH_LABEL = "flute"


@dataclass(frozen=True)
class ToyConfig:
    sample_rate: int = 16000
    duration_s: float = 2.0
    low_band: tuple = (100.0, 800.0)
    high_band: tuple = (2000.0, 6000.0)
    n_tones: int = 4
    spacing_deg: float = 10.0


def low_noise(n: int, rate: int, band, rng) -> np.ndarray:
    sos = signal.butter(6, band, btype="bandpass", fs=rate, output="sos")
    x = signal.sosfilt(sos, rng.standard_normal(n + 2048))[2048:]
    return x / np.sqrt(np.mean(x * x))


def high_tones(n: int, rate: int, band, n_tones: int, rng) -> np.ndarray:
    t = np.arange(n) / rate
    x = np.zeros(n)
    for _ in range(n_tones):
        f = rng.uniform(*band)
        x += np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) * rng.uniform(0.5, 1.0)
    # slow amplitude envelope so the task is not stationary
    x *= 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi))
    return x / np.sqrt(np.mean(x * x))


def toy_sample(seed: int, cfg: ToyConfig = ToyConfig()) -> MixtureSample:
    rng = np.random.default_rng(seed)
    n = int(round(cfg.duration_s * cfg.sample_rate))
    low = low_noise(n, cfg.sample_rate, cfg.low_band, rng)
    high = high_tones(n, cfg.sample_rate, cfg.high_band, cfg.n_tones, rng)
    spec = SceneSpec([(LOW_LABEL, AudioBuffer(low, cfg.sample_rate)),
                      (HIGH_LABEL, AudioBuffer(high, cfg.sample_rate))],
                     spacing_deg=cfg.spacing_deg, mode="anechoic")
    scene = render(spec)
    return MixtureSample(f"toy-{seed}", scene.stems_stereo, origin="random_mix", rng_seed=seed)


def toy_pool(n: int, base_seed: int, cfg: ToyConfig = ToyConfig()) -> list:
    return [toy_sample(base_seed + i, cfg) for i in range(n)]
