"""Projection-based SDR with framewise median aggregation, plus the t-test used
to compare conditions.

SDR per frame and channel follows the BSS-eval construction: the estimate is
projected onto ``filter_len`` delayed copies of the reference, and the ratio of
projected energy to residual energy is reported in dB, clamped to +/-100.
Frames with a silent reference are undefined (``None``) and skipped by the
medians.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .audio_io import AudioBuffer, require_same_rate
from .errors import DegenerateSamples, InvalidArgument, NoValidFrames
from .toeplitz import ToeplitzInverse

SDR_CAP = 100.0
DEFAULT_FILTER_LEN = 512
SILENCE_ENERGY = 1e-12
RIDGE = 1e-10
_CG_TOL = 1e-13
_CG_MAXITER = 200


@dataclass
class SdrFrame:
    frame_index: int
    per_channel_sdr: list
    channel_median: float | None = None

    def __post_init__(self):
        defined = [v for v in self.per_channel_sdr if v is not None]
        self.channel_median = float(np.median(defined)) if defined else None


@dataclass
class SdrReport:
    track_medians: dict
    frame_count: int = 0
    smr_reference: float | None = None
    instrument_median: float = field(init=False)

    def __post_init__(self):
        if not self.track_medians:
            raise InvalidArgument("report needs at least one track")
        self.instrument_median = dataset_sdr(self.track_medians)


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: float
    p: float

    def format(self) -> str:
        df = f"{self.df:.0f}" if float(self.df).is_integer() else f"{self.df:.1f}"
        return f"t={self.t:.2f}, df={df}, p={self.p:.2f}"


def _next_fast_len(n: int) -> int:
    return 1 << int(np.ceil(np.log2(max(n, 2))))


class _Projector:
    """Least-squares projection onto delayed copies of one reference frame.

    The normal equations are solved exactly for the finite window.  Their
    Toeplitz part (the zero-padded autocorrelation) is factored once by
    Levinson-Durbin and used as the preconditioner of a conjugate-gradient
    solve against the true windowed Gram matrix, whose only difference is a
    small edge correction from the last ``filter_len - 1`` samples.
    """

    def __init__(self, reference: np.ndarray, filter_len: int):
        self.n = reference.size
        self.k = filter_len
        self.nfft = _next_fast_len(self.n + filter_len)
        self.ref_spec = np.fft.rfft(reference, self.nfft)
        acf = np.fft.irfft(self.ref_spec * np.conj(self.ref_spec), self.nfft)[:filter_len]
        self.ridge = RIDGE * acf[0]
        acf = acf.copy()
        acf[0] += self.ridge
        self.precond = ToeplitzInverse(acf)

    def apply(self, h: np.ndarray) -> np.ndarray:
        """Filter the reference with ``h``, truncated to the window."""
        return np.fft.irfft(self.ref_spec * np.fft.rfft(h, self.nfft), self.nfft)[:self.n]

    def correlate(self, y: np.ndarray) -> np.ndarray:
        """c[k] = sum_n ref[n - k] * y[n] for k < filter_len."""
        return np.fft.irfft(np.conj(self.ref_spec) * np.fft.rfft(y, self.nfft), self.nfft)[:self.k]

    def gram(self, h: np.ndarray) -> np.ndarray:
        return self.correlate(self.apply(h)) + self.ridge * h

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        h = self.precond.solve(rhs)
        res = rhs - self.gram(h)
        z = self.precond.solve(res)
        p = z.copy()
        rz = res @ z
        stop = _CG_TOL * np.linalg.norm(rhs)
        for _ in range(_CG_MAXITER):
            if np.linalg.norm(res) <= stop:
                break
            q = self.gram(p)
            alpha = rz / (p @ q)
            h += alpha * p
            res -= alpha * q
            z = self.precond.solve(res)
            rz_new = res @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        return h

    def project(self, estimate: np.ndarray) -> np.ndarray:
        return self.apply(self.solve(self.correlate(estimate)))


def _ratio_db(signal_energy: float, noise_energy: float) -> float:
    # a silent projection (e.g. an all-zero estimate) is the worst case, even when the residual is zero too
    if signal_energy <= 0:
        return -SDR_CAP
    if noise_energy <= 0:
        return SDR_CAP
    return float(np.clip(10 * np.log10(signal_energy / noise_energy), -SDR_CAP, SDR_CAP))


def projection_sdr(reference, estimate, filter_len: int = DEFAULT_FILTER_LEN) -> float | None:
    """SDR in dB of ``estimate`` against ``reference``; ``None`` if the reference is silent."""
    ref = np.asarray(reference, dtype=np.float64)
    est = np.asarray(estimate, dtype=np.float64)
    if ref.shape != est.shape or ref.ndim != 1:
        raise InvalidArgument(f"reference and estimate must be equal-length 1-D, got {ref.shape} vs {est.shape}")
    if ref.size < filter_len:
        raise InvalidArgument(f"frame of {ref.size} samples is shorter than filter_len={filter_len}")
    if ref @ ref < SILENCE_ENERGY:
        return None
    s_target = _Projector(ref, filter_len).project(est)
    e = est - s_target
    return _ratio_db(float(s_target @ s_target), float(e @ e))


def frame_sdrs(reference: AudioBuffer, estimate: AudioBuffer, frame_s: float = 1.0,
               filter_len: int = DEFAULT_FILTER_LEN) -> list[SdrFrame]:
    require_same_rate(reference, estimate)
    if reference.samples.shape != estimate.samples.shape:
        raise InvalidArgument(f"shape mismatch: {reference.samples.shape} vs {estimate.samples.shape}")
    win = int(round(frame_s * reference.sample_rate))
    if win < 1:
        raise InvalidArgument("frame length must be at least one sample")
    frames = []
    for i in range(reference.length // win):
        sl = slice(i * win, (i + 1) * win)
        per_channel = [projection_sdr(reference.samples[c, sl], estimate.samples[c, sl], filter_len)
                       for c in range(reference.channels)]
        frames.append(SdrFrame(i, per_channel))
    return frames


def median_of_frames(frames: list[SdrFrame]) -> float:
    defined = [f.channel_median for f in frames if f.channel_median is not None]
    if not defined:
        raise NoValidFrames(f"none of {len(frames)} frames has a defined SDR")
    return float(np.median(defined))


def track_sdr(reference: AudioBuffer, estimate: AudioBuffer, frame_s: float = 1.0,
              filter_len: int = DEFAULT_FILTER_LEN) -> tuple[float, list[SdrFrame]]:
    """Median over frames of the per-frame channel median."""
    frames = frame_sdrs(reference, estimate, frame_s, filter_len)
    return median_of_frames(frames), frames


def dataset_sdr(per_track: dict) -> float:
    if not per_track:
        raise InvalidArgument("need at least one track")
    return float(np.median(list(per_track.values())))


def t_test(samples_a, samples_b, method: str = "pooled") -> TTestResult:
    """Two-sample t-test, two-sided.  ``pooled`` assumes equal variances (df = na + nb - 2)."""
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise InvalidArgument("each sample needs at least two values")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0 and vb == 0:
        raise DegenerateSamples("both samples have zero variance")
    diff = a.mean() - b.mean()
    if method == "pooled":
        df = na + nb - 2
        sp2 = ((na - 1) * va + (nb - 1) * vb) / df
        se = np.sqrt(sp2 * (1.0 / na + 1.0 / nb))
    elif method == "welch":
        qa, qb = va / na, vb / nb
        se = np.sqrt(qa + qb)
        df = (qa + qb) ** 2 / (qa * qa / (na - 1) + qb * qb / (nb - 1))
    else:
        raise InvalidArgument(f"unknown method {method!r}")
    t = diff / se
    p = 2.0 * stats.t.sf(abs(t), df)
    return TTestResult(float(t), float(df), float(min(p, 1.0)))
