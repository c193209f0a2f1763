import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mssbench.audio_io import AudioBuffer, read_wav, write_wav
from mssbench.errors import CorruptFile, InvalidArgument, IoError, UnsupportedFormat


def _raw_pcm16(path, values, channels=1, rate=8000):
    payload = np.asarray(values, dtype="<i2").tobytes()
    fmt = struct.pack("<HHIIHH", 1, channels, rate, rate * 2 * channels, 2 * channels, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def test_pcm16_scaling(tmp_path):
    p = tmp_path / "a.wav"
    _raw_pcm16(p, [16384, -32768, 0, 32767])
    buf = read_wav(p)
    assert buf.channels == 1 and buf.sample_rate == 8000
    assert buf.samples[0, 0] == 0.5
    assert buf.samples[0, 1] == -1.0
    assert buf.samples[0, 3] == 32767 / 32768


def test_pcm16_write_values(tmp_path):
    p = tmp_path / "b.wav"
    write_wav(AudioBuffer([0.5, 1.5, -1.5, -0.25], 8000), p, "pcm16")
    raw = np.frombuffer(p.read_bytes()[44:], dtype="<i2")
    assert raw.tolist() == [16384, 32767, -32768, -8192]


def test_round_half_away_from_zero(tmp_path):
    p = tmp_path / "r.wav"
    step = 1 / 32768
    write_wav(AudioBuffer([0.5 * step, -0.5 * step, 1.5 * step], 8000), p, "pcm16")
    raw = np.frombuffer(p.read_bytes()[44:], dtype="<i2")
    assert raw.tolist() == [1, -1, 2]


def test_float32_round_trip_is_identity(tmp_path, rng):
    x = rng.standard_normal((3, 1000)).astype(np.float32).astype(np.float64)
    p = tmp_path / "f.wav"
    write_wav(AudioBuffer(x, 44100), p, "float32")
    buf = read_wav(p)
    assert np.array_equal(buf.samples, x)
    p2 = tmp_path / "g.wav"
    write_wav(buf, p2, "float32")
    assert p.read_bytes() == p2.read_bytes()


def test_pcm24_round_trip(tmp_path, rng):
    x = rng.uniform(-1, 1, (2, 500))
    p = tmp_path / "c.wav"
    write_wav(AudioBuffer(x, 48000), p, "pcm24")
    buf = read_wav(p)
    assert np.max(np.abs(buf.samples - x)) <= 2.0 ** -24 + 1e-15
    assert buf.channels == 2 and buf.sample_rate == 48000


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.integers(1, 200), elements=st.floats(-1, 1 - 2 ** -15)))
def test_pcm16_error_bound(tmp_path_factory, x):
    p = tmp_path_factory.mktemp("h") / "x.wav"
    write_wav(AudioBuffer(x, 8000), p, "pcm16")
    assert np.max(np.abs(read_wav(p).samples[0] - x)) <= 2.0 ** -15


def test_truncated_data_chunk(tmp_path):
    p = tmp_path / "t.wav"
    write_wav(AudioBuffer(np.zeros(100), 8000), p, "pcm16")
    p.write_bytes(p.read_bytes()[:-11])
    with pytest.raises(CorruptFile):
        read_wav(p)


def test_unsupported_codec(tmp_path):
    p = tmp_path / "u.wav"
    fmt = struct.pack("<HHIIHH", 0x55, 1, 8000, 1000, 1, 8)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", 0)
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(UnsupportedFormat):
        read_wav(p)
    (tmp_path / "n.wav").write_bytes(b"not a wave file at all")
    with pytest.raises(UnsupportedFormat):
        read_wav(tmp_path / "n.wav")


def test_unwritable_path(tmp_path):
    with pytest.raises(IoError):
        write_wav(AudioBuffer(np.zeros(4), 8000), tmp_path / "missing" / "x.wav")


def test_buffer_invariants():
    with pytest.raises(InvalidArgument):
        AudioBuffer([0.0, np.nan], 8000)
    with pytest.raises(InvalidArgument):
        AudioBuffer([0.0], 0)
    b = AudioBuffer([[1.0, 2.0], [3.0, 4.0]], 16000)
    assert b.samples.dtype == np.float64 and b.length == 2 and b.channels == 2
