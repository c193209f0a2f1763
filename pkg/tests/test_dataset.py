import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mssbench.audio_io import AudioBuffer, write_wav
from mssbench.dataset import (AugmentConfig, CorpusManifest, MixtureSample, augment, family, random_mixture,
                              segment, stem_pool, target_pair, training_crop, validation_set)
from mssbench.scene import sum_stems
from mssbench.errors import InsufficientPool, InvalidArgument, TooShort, UnknownInstrument

RATE = 100


def stems_of(seconds, labels=("violin", "viola", "cello", "flute"), channels=1, seed=0):
    rng = np.random.default_rng(seed)
    n = int(seconds * RATE)
    return [(lab, AudioBuffer(rng.standard_normal((channels, n)), RATE)) for lab in labels]


def test_segment_counts():
    assert len(segment(stems_of(60))) == 4
    assert len(segment(stems_of(59))) == 3
    assert segment(stems_of(14)) == []
    segs = segment(stems_of(31))
    assert all(s.duration_s == 15.0 and s.origin == "quartet" for s in segs)


def test_segment_content_is_consecutive():
    st_ = stems_of(30)
    segs = segment(st_)
    assert np.array_equal(segs[1].stems[2][1].samples, st_[2][1].samples[:, 15 * RATE:30 * RATE])


def _pool():
    segs = segment(stems_of(45, ("violin", "viola", "cello", "flute")), 15) + \
        segment(stems_of(30, ("oboe", "clarinet", "bassoon", "saxophone"), seed=1), 15)
    return stem_pool(segs)


def test_random_mixture_deterministic():
    pool = _pool()
    a, b = random_mixture(pool, 42), random_mixture(pool, 42)
    assert a.instruments == b.instruments
    assert all(x[1] == y[1] for x, y in zip(a.stems, b.stems))
    assert a.origin == "random_mix" and a.rng_seed == 42


def test_random_mixture_two_stems_forced():
    pool = _pool()
    for seed in range(200):
        s = random_mixture(pool, seed, (2, 2))
        assert sorted(family(i) for i in s.instruments) == ["string", "woodwind"]


@settings(max_examples=200)
@given(st.integers(0, 2 ** 63 - 1))
def test_random_mixture_family_constraint(seed):
    s = random_mixture(_POOL, seed)
    fams = [family(i) for i in s.instruments]
    assert "string" in fams and "woodwind" in fams
    assert 2 <= len(s.instruments) <= 5
    assert len(set(s.instruments)) == len(s.instruments)
    assert len({b.length for _, b in s.stems}) == 1


_POOL = _pool()


def test_random_mixture_insufficient():
    only_strings = stem_pool(segment(stems_of(15, ("violin", "cello")), 15))
    with pytest.raises(InsufficientPool):
        random_mixture(only_strings, 0)
    with pytest.raises(InvalidArgument):
        random_mixture(_POOL, 0, (1, 3))


def test_training_crop():
    s = segment(stems_of(15, channels=2))[0]
    c = training_crop(s, 3.0, 7)
    assert c.duration_s == 3.0
    full = s.stems[0][1].samples
    # all stems share the offset
    offs = [int(np.flatnonzero(np.all(b.samples[:, :1] == full_b.samples, axis=0))[0])
            for (_, b), (_, full_b) in zip(c.stems, s.stems)]
    assert len(set(offs)) == 1
    assert np.array_equal(training_crop(s, 3.0, 7).stems[1][1].samples, c.stems[1][1].samples)
    assert all(x[1] == y[1] for x, y in zip(training_crop(s, 15.0, 3).stems, s.stems))
    assert full.shape[1] == 1500
    with pytest.raises(TooShort):
        training_crop(s, 16.0, 0)


def test_augment_identity_and_symmetry():
    s = segment(stems_of(15, channels=2))[0]
    ident = augment(s, 3, AugmentConfig(gain_db=0.0, swap_prob=0.0))
    assert all(x[1] == y[1] for x, y in zip(ident.stems, s.stems))
    sym = MixtureSample("s", [(lab, AudioBuffer(np.stack([b.samples[0], b.samples[0]]), RATE))
                              for lab, b in s.stems])
    swapped = augment(sym, 3, AugmentConfig(gain_db=0.0, swap_prob=1.0))
    assert all(x[1] == y[1] for x, y in zip(swapped.stems, sym.stems))


def test_augment_gain_range_and_swap():
    s = segment(stems_of(15, channels=2))[0]
    swaps = 0
    for seed in range(200):
        a = augment(s, seed)
        swapped = np.allclose(a.stems[0][1].samples[0] / s.stems[0][1].samples[1],
                              a.stems[0][1].samples[0, 0] / s.stems[0][1].samples[1, 0])
        swaps += swapped
        for (_, b0), (_, b1) in zip(s.stems, a.stems):
            src = b0.samples[::-1] if swapped else b0.samples
            g = b1.samples / src
            assert np.allclose(g, g[0, 0])
            assert abs(20 * np.log10(abs(g[0, 0]))) <= 6.0 + 1e-9
    assert 60 < swaps < 140
    a = augment(s, 11)
    assert np.array_equal(a.mixture.samples, sum_stems([b for _, b in a.stems]).samples)


def test_target_pair():
    s = segment(stems_of(15, ("violin", "flute"), channels=2))[0]
    mix, tgt, res = target_pair(s, "violin")
    assert res == s.stems[1][1]
    assert np.array_equal(mix.samples, tgt.samples + res.samples)
    with pytest.raises(UnknownInstrument):
        target_pair(s, "oboe")
    dup = MixtureSample("d", [("violin", s.stems[0][1]), ("flute", s.stems[1][1]), ("violin", s.stems[0][1])])
    _, tgt, _ = target_pair(dup, "violin")
    assert np.array_equal(tgt.samples, 2 * s.stems[0][1].samples)


def test_manifest_round_trip_and_validation_set(tmp_path):
    tracks = []
    for t, (labels, secs) in enumerate([(("violin", "violin", "viola", "cello"), 47),
                                        (("flute", "oboe", "clarinet", "bassoon"), 31)]):
        stems = []
        for k, (lab, buf) in enumerate(stems_of(secs, labels, seed=t)):
            p = tmp_path / f"t{t}_{k}_{lab}.wav"
            write_wav(buf, p)
            stems.append({"instrument": lab, "wav_path": p.name})
        tracks.append({"track_id": f"t{t}", "source_dataset": "synthetic", "split": "valid", "stems": stems})
    (tmp_path / "manifest.json").write_text(json.dumps({"version": 1, "sample_rate": RATE, "tracks": tracks}))
    m = CorpusManifest.load(tmp_path / "manifest.json")
    assert m.to_json()["tracks"][0]["stems"][0]["wav_path"] == "t0_0_violin.wav"
    samples = validation_set(m, seed=5)
    quartets = [s for s in samples if s.origin == "quartet"]
    mixes = [s for s in samples if s.origin == "random_mix"]
    assert len(quartets) == 3 + 2 and len(mixes) == 10
    assert quartets[0].instruments == ["violin", "viola", "cello"]
    again = validation_set(m, seed=5)
    assert [s.instruments for s in again] == [s.instruments for s in samples]


def test_manifest_rejects_unknown_instrument(tmp_path):
    doc = {"version": 1, "sample_rate": RATE, "tracks": [
        {"track_id": "x", "source_dataset": "s", "split": "valid", "stems": [{"instrument": "tuba", "wav_path": "a"}]}]}
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(InvalidArgument):
        CorpusManifest.load(tmp_path / "m.json")
