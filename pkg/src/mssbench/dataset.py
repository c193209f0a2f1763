"""Corpus manifests and sample generation: segmentation, random string+woodwind
mixtures, training crops, gain/channel-swap augmentation.

Every random operation takes an explicit integer seed and is a pure function
of its inputs and that seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer, read_wav, require_same_rate
from .errors import InsufficientPool, InvalidArgument, TooShort, UnknownInstrument
from .scene import INSTRUMENTS, STRINGS, WOODWINDS, merge_same_instrument, sum_stems

MANIFEST_VERSION = 1
SPLITS = ("train", "valid", "eval")


@dataclass(frozen=True)
class StemRef:
    instrument: str
    wav_path: str


@dataclass(frozen=True)
class TrackEntry:
    track_id: str
    source_dataset: str
    stems: tuple
    split: str


@dataclass
class CorpusManifest:
    tracks: list
    sample_rate: int
    root: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        for t in self.tracks:
            if t.split not in SPLITS:
                raise InvalidArgument(f"track {t.track_id}: unknown split {t.split!r}")
            for s in t.stems:
                if s.instrument not in INSTRUMENTS:
                    raise InvalidArgument(f"track {t.track_id}: unknown instrument {s.instrument!r}")

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        path = Path(path)
        doc = json.loads(path.read_text())
        if doc.get("version") != MANIFEST_VERSION:
            raise InvalidArgument(f"{path}: unsupported manifest version {doc.get('version')!r}")
        tracks = [TrackEntry(t["track_id"], t["source_dataset"],
                             tuple(StemRef(s["instrument"], s["wav_path"]) for s in t["stems"]),
                             t["split"])
                  for t in doc["tracks"]]
        m = cls(tracks, int(doc["sample_rate"]), path.parent)
        for t in m.tracks:
            for s in t.stems:
                if not m.resolve(s.wav_path).exists():
                    raise FileNotFoundError(f"{path}: missing stem {s.wav_path}")
        return m

    def to_json(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "sample_rate": self.sample_rate,
            "tracks": [{"track_id": t.track_id, "source_dataset": t.source_dataset, "split": t.split,
                        "stems": [{"instrument": s.instrument, "wav_path": s.wav_path} for s in t.stems]}
                       for t in self.tracks],
        }

    def resolve(self, wav_path: str) -> Path:
        p = Path(wav_path)
        return p if p.is_absolute() else self.root / p

    def split(self, name: str) -> list:
        return [t for t in self.tracks if t.split == name]

    def load_stems(self, track: TrackEntry) -> list:
        stems = []
        for s in track.stems:
            buf = read_wav(self.resolve(s.wav_path))
            if buf.sample_rate != self.sample_rate:
                raise InvalidArgument(f"{s.wav_path}: rate {buf.sample_rate} != manifest {self.sample_rate}")
            stems.append((s.instrument, buf))
        return stems


@dataclass
class MixtureSample:
    sample_id: str
    stems: list  # [(instrument, AudioBuffer)]
    origin: str = "quartet"
    rng_seed: int | None = None

    def __post_init__(self):
        if not self.stems:
            raise InvalidArgument("sample needs at least one stem")
        if len({b.samples.shape for _, b in self.stems}) != 1:
            raise InvalidArgument("stems must share one shape")
        require_same_rate(*(b for _, b in self.stems))

    @property
    def sample_rate(self) -> int:
        return self.stems[0][1].sample_rate

    @property
    def length(self) -> int:
        return self.stems[0][1].length

    @property
    def duration_s(self) -> float:
        return self.length / self.sample_rate

    @property
    def instruments(self) -> list:
        return [label for label, _ in self.stems]

    @property
    def mixture(self) -> AudioBuffer:
        return sum_stems([b for _, b in self.stems])


def family(instrument: str) -> str:
    if instrument in STRINGS:
        return "string"
    if instrument in WOODWINDS:
        return "woodwind"
    return "other"


def segment(stems: list, seg_s: float = 15.0, sample_prefix: str = "seg") -> list:
    """Consecutive non-overlapping segments; a trailing remainder shorter than ``seg_s`` is dropped."""
    if not stems:
        return []
    if len({b.samples.shape for _, b in stems}) != 1:
        raise InvalidArgument("stems must be aligned and equal length")
    rate = require_same_rate(*(b for _, b in stems))
    win = int(round(seg_s * rate))
    out = []
    for i in range(stems[0][1].length // win):
        sl = slice(i * win, (i + 1) * win)
        out.append(MixtureSample(f"{sample_prefix}-{i:03d}",
                                 [(label, AudioBuffer(b.samples[:, sl].copy(), rate)) for label, b in stems],
                                 origin="quartet"))
    return out


def segment_count(n_samples: int, sample_rate: int, seg_s: float = 15.0) -> int:
    return n_samples // int(round(seg_s * sample_rate))


def random_mixture(pool: list, rng_seed: int, n_stems: tuple = (2, 5), sample_id: str | None = None) -> MixtureSample:
    """Draw distinct instruments (>=1 string, >=1 woodwind) and one pool segment per instrument.

    ``pool`` is a list of ``(instrument, AudioBuffer)`` single-instrument
    segments.  ``n_stems`` is an inclusive range; it is capped at the number
    of distinct instruments available.
    """
    lo, hi = n_stems
    if lo < 2 or hi < lo:
        raise InvalidArgument(f"n_stems must satisfy 2 <= lo <= hi, got {n_stems}")
    by_inst: dict[str, list] = {}
    for label, buf in pool:
        by_inst.setdefault(label, []).append(buf)
    strings = sorted(i for i in by_inst if family(i) == "string")
    winds = sorted(i for i in by_inst if family(i) == "woodwind")
    if not strings or not winds:
        raise InsufficientPool("pool needs at least one string and one woodwind segment")
    available = sorted(by_inst)
    if lo > len(available):
        raise InsufficientPool(f"cannot draw {lo} distinct instruments from {len(available)}")

    rng = np.random.default_rng(rng_seed)
    n = int(rng.integers(lo, min(hi, len(available)) + 1))
    chosen = [strings[rng.integers(len(strings))], winds[rng.integers(len(winds))]]
    rest = [i for i in available if i not in chosen]
    if n > 2:
        chosen += [rest[j] for j in rng.choice(len(rest), size=n - 2, replace=False)]
    picks = [(inst, by_inst[inst][rng.integers(len(by_inst[inst]))]) for inst in chosen]
    length = min(b.length for _, b in picks)
    stems = [(inst, AudioBuffer(b.samples[:, :length].copy(), b.sample_rate)) for inst, b in picks]
    return MixtureSample(sample_id or f"mix-{rng_seed}", stems, origin="random_mix", rng_seed=rng_seed)


def stem_pool(samples: list) -> list:
    """Flatten samples into ``(instrument, buffer)`` segments for :func:`random_mixture`."""
    return [(label, buf) for s in samples for label, buf in s.stems]


def training_crop(sample: MixtureSample, crop_s: float = 3.0, rng_seed: int = 0) -> MixtureSample:
    win = int(round(crop_s * sample.sample_rate))
    if win > sample.length:
        raise TooShort(f"sample of {sample.duration_s:.2f} s is shorter than crop of {crop_s} s")
    rng = np.random.default_rng(rng_seed)
    offset = int(rng.integers(0, sample.length - win + 1))
    stems = [(label, AudioBuffer(b.samples[:, offset:offset + win].copy(), b.sample_rate))
             for label, b in sample.stems]
    return replace(sample, stems=stems)


@dataclass(frozen=True)
class AugmentConfig:
    gain_db: float = 6.0
    swap_prob: float = 0.5


def augment(sample: MixtureSample, rng_seed: int, cfg: AugmentConfig = AugmentConfig()) -> MixtureSample:
    """Independent per-stem gain (uniform in dB) and a sample-wide L/R swap."""
    rng = np.random.default_rng(rng_seed)
    gains_db = rng.uniform(-cfg.gain_db, cfg.gain_db, size=len(sample.stems))
    swap = rng.random() < cfg.swap_prob
    stems = []
    for (label, b), g_db in zip(sample.stems, gains_db):
        x = b.samples * 10.0 ** (g_db / 20.0) if g_db != 0 else b.samples.copy()
        if swap and x.shape[0] == 2:
            x = x[::-1].copy()
        stems.append((label, AudioBuffer(x, b.sample_rate)))
    return replace(sample, stems=stems)


def target_pair(sample: MixtureSample, target: str) -> tuple:
    """(mixture, target stem, residual) with mixture == target + residual exactly."""
    merged = merge_same_instrument(sample.stems)
    tgt = [b for label, b in merged if label == target]
    if not tgt:
        raise UnknownInstrument(target)
    others = [b for label, b in merged if label != target]
    target_stem = tgt[0]
    if others:
        residual = sum_stems(others)
    else:
        residual = AudioBuffer(np.zeros_like(target_stem.samples), target_stem.sample_rate)
    mixture = AudioBuffer(target_stem.samples + residual.samples, target_stem.sample_rate)
    return mixture, target_stem, residual


def sample_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def validation_set(manifest: CorpusManifest, seed: int, seg_s: float = 15.0, n_random: int | None = None,
                   n_stems: tuple = (2, 5), split: str = "valid") -> list:
    """Segment held-out tracks into ensemble samples and add random string+woodwind mixes.

    By default twice as many random mixes as ensemble segments are drawn.
    """
    quartets = []
    for track in manifest.split(split):
        stems = merge_same_instrument(manifest.load_stems(track))
        quartets += segment(stems, seg_s, sample_prefix=track.track_id)
    if n_random is None:
        n_random = 2 * len(quartets)
    pool = stem_pool(quartets)
    mixes = [random_mixture(pool, sample_seed(seed, i), n_stems, sample_id=f"mix-{i:04d}")
             for i in range(n_random)] if n_random else []
    return quartets + mixes
