import numpy as np
import pytest

from mssbench import tasnet
from mssbench.audio_io import AudioBuffer
from mssbench.errors import CorruptWeights, IncompatibleWeights, InvalidArgument, TooShort
from mssbench.tasnet import (LatentFrames, StreamingSeparator, TasNetConfig, decode, encode, init_weights,
                             load_weights, parameter_count, receptive_field, save_weights, separate,
                             separator_masks, stream_separate, tiny_config)

RATE = 8000


@pytest.fixture(params=[False, True], ids=["noncausal", "causal"])
def model(request):
    cfg = tiny_config(causal=request.param)
    return cfg, init_weights(cfg, seed=7)


def buf(x):
    return AudioBuffer(np.asarray(x, dtype=float), RATE)


def test_encode_frame_law(model, rng):
    cfg, w = model
    assert encode(buf(np.zeros((2, 200))), cfg, w).frames.max() == 0.0
    assert encode(buf(rng.standard_normal((2, cfg.kernel_len))), cfg, w).frames.shape == (cfg.n_filters, 1)
    for T in (cfg.kernel_len + 1, 101, 400):
        lat = encode(buf(rng.standard_normal((2, T))), cfg, w)
        assert lat.frames.shape[1] == (T - cfg.kernel_len) // cfg.stride + 1
        assert lat.frame_rate == RATE / cfg.stride
    with pytest.raises(TooShort):
        encode(buf(np.ones((2, cfg.kernel_len - 1))), cfg, w)


def test_encode_doubles_when_preactivation_positive(model, rng):
    cfg, w = model
    w = dict(w, **{"encoder.basis": np.abs(w["encoder.basis"])})
    x = np.abs(rng.standard_normal((2, 300))) + 0.1
    a = encode(buf(x), cfg, w).frames
    assert np.all(a > 0)
    assert np.allclose(encode(buf(2 * x), cfg, w).frames, 2 * a, rtol=1e-14)


def test_sigmoid_masks_in_open_unit_interval(rng):
    cfg = tiny_config(causal=False, mask_activation="sigmoid")
    w = init_weights(cfg, 1)
    m = separator_masks(encode(buf(rng.standard_normal((2, 400))), cfg, w), cfg, w)
    assert m.shape == (2, cfg.n_filters, (400 - 8) // 4 + 1)
    assert np.all((m > 0) & (m < 1))


def test_masks_are_not_normalized(rng):
    cfg = tiny_config(causal=True)
    w = init_weights(cfg, 2)
    m = separator_masks(encode(buf(rng.standard_normal((2, 400))), cfg, w), cfg, w)
    assert np.max(np.abs(m[0] + m[1] - 1.0)) > 1e-3


def test_mask_causality_by_perturbation(rng):
    for causal in (True, False):
        cfg = tiny_config(causal=causal, mask_activation="sigmoid")
        w = init_weights(cfg, 4)
        frames = np.abs(rng.standard_normal((cfg.n_filters, 60)))
        base = separator_masks(LatentFrames(frames, 1.0), cfg, w)
        t = 30
        pert = frames.copy()
        pert[:, t + 1:] += rng.standard_normal((cfg.n_filters, 60 - t - 1))
        out = separator_masks(LatentFrames(pert, 1.0), cfg, w)
        if causal:
            assert np.array_equal(out[:, :, :t + 1], base[:, :, :t + 1])
        else:
            assert not np.allclose(out[:, :, :t + 1], base[:, :, :t + 1])


def test_decode_contracts(model, rng):
    cfg, w = model
    lat = encode(buf(rng.standard_normal((2, 333))), cfg, w)
    silent = decode(lat, np.zeros_like(lat.frames), cfg, w, 333, RATE)
    assert silent.length == 333 and np.max(np.abs(silent.samples)) == 0.0
    ones = decode(lat, np.ones_like(lat.frames), cfg, w, 333, RATE)
    assert ones == decode(lat, None, cfg, w, 333, RATE)


def test_separate_shapes_and_silence(model, rng):
    cfg, w = model
    mix = buf(rng.standard_normal((2, 517)))
    t, r = separate(mix, cfg, w)
    assert t.samples.shape == r.samples.shape == (2, 517)
    t0, r0 = separate(buf(np.zeros((2, 517))), cfg, w)
    assert np.max(np.abs(t0.samples)) == 0.0 and np.max(np.abs(r0.samples)) == 0.0
    t2, _ = separate(mix, cfg, w)
    assert t2 == t
    with pytest.raises(InvalidArgument):
        separate(buf(np.zeros((1, 100))), cfg, w)


def test_strict_sample_causality(rng):
    cfg = tiny_config(causal=True)
    w = init_weights(cfg, 5)
    x = rng.standard_normal((2, 600))
    base, _ = separate(buf(x), cfg, w)
    t = 250
    y = x.copy()
    y[:, t + cfg.kernel_len + 1:] = rng.standard_normal((2, 600 - t - cfg.kernel_len - 1))
    out, _ = separate(buf(y), cfg, w)
    assert np.array_equal(out.samples[:, :t + 1], base.samples[:, :t + 1])


@pytest.mark.parametrize("chunk_s", [0.5, 0.013, 0.0007])
def test_streaming_matches_batch(rng, chunk_s):
    cfg = tiny_config(causal=True)
    w = init_weights(cfg, 6)
    mix = buf(rng.standard_normal((2, RATE + 123)))
    t, r = separate(mix, cfg, w)
    st, sr = stream_separate(mix, cfg, w, chunk_s)
    assert st.length == mix.length
    assert np.max(np.abs(st.samples - t.samples)) <= 1e-10
    assert np.max(np.abs(sr.samples - r.samples)) <= 1e-10


def test_streaming_needs_causal_model():
    cfg = tiny_config(causal=False)
    with pytest.raises(InvalidArgument):
        StreamingSeparator(cfg, init_weights(cfg), RATE)


def test_receptive_field():
    assert receptive_field(TasNetConfig()) == (765, 765)
    assert receptive_field(TasNetConfig(causal=True))[1] == 0
    assert receptive_field(TasNetConfig(causal=True)) == (1530, 0)
    assert receptive_field(TasNetConfig(blocks_per_repeat=1, repeats=1)) == (1, 1)
    assert receptive_field(tiny_config(causal=True, kernel=5))[1] == 0


def test_parameter_count_matches_weights(model):
    cfg, w = model
    assert parameter_count(cfg) == sum(v.size for v in w.values())
    full = TasNetConfig()
    assert parameter_count(full) == sum(v.size for v in init_weights(full).values())


def test_time_shift_covariance(rng):
    cfg = tiny_config(causal=False)
    w = init_weights(cfg, 8)
    x = rng.standard_normal((2, 400))
    shifted = np.concatenate([np.zeros((2, cfg.stride)), x], axis=1)
    a = encode(buf(x), cfg, w).frames
    b = encode(buf(shifted), cfg, w).frames
    assert np.max(np.abs(b[:, 1:] - a)) <= 1e-10


def test_weight_round_trip(model, tmp_path):
    cfg, w = model
    w32 = {k: v.astype(np.float32).astype(np.float64) for k, v in w.items()}
    save_weights(w32, cfg, tmp_path / "m.cdzw")
    back, cfg2 = load_weights(tmp_path / "m.cdzw")
    assert cfg2 == cfg
    assert set(back) == set(w32) and all(np.array_equal(back[k], w32[k]) for k in w32)


def test_weight_file_errors(model, tmp_path):
    cfg, w = model
    p = tmp_path / "m.cdzw"
    save_weights(w, cfg, p)
    data = p.read_bytes()
    (tmp_path / "short.cdzw").write_bytes(data[:-10])
    with pytest.raises(CorruptWeights):
        load_weights(tmp_path / "short.cdzw")
    (tmp_path / "magic.cdzw").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(IncompatibleWeights):
        load_weights(tmp_path / "magic.cdzw")
    (tmp_path / "ver.cdzw").write_bytes(data[:4] + (9).to_bytes(4, "little") + data[8:])
    with pytest.raises(IncompatibleWeights):
        load_weights(tmp_path / "ver.cdzw")
    bad = dict(w, **{"mask.bias": np.zeros(3)})
    with pytest.raises(CorruptWeights):
        save_weights(bad, cfg, p)


def test_config_json_round_trip():
    cfg = tiny_config(causal=True)
    assert TasNetConfig.from_json(cfg.to_json()) == cfg
    assert cfg.mask_activation == "sigmoid" and tiny_config().mask_activation == "relu"
    with pytest.raises(InvalidArgument):
        TasNetConfig(kernel_len=31)


def test_tiny_parameter_count():
    assert tasnet.parameter_count(tiny_config()) == 3121
