import json

import numpy as np
import pytest

from mssbench import tasnet
from mssbench.audio_io import AudioBuffer, read_wav, write_wav
from mssbench.cli import instrument_from_filename, main

RATE = 8000


@pytest.fixture
def stems_dir(tmp_path, rng):
    d = tmp_path / "stems"
    d.mkdir()
    for i, inst in enumerate(("violin", "viola", "cello", "flute")):
        write_wav(AudioBuffer(0.2 * rng.standard_normal(RATE), RATE), d / f"{i:02d}_{inst}.wav")
    return d


def test_instrument_labels():
    assert instrument_from_filename("AuSep_1_vn_01_Jupiter_violin") == "violin"
    assert instrument_from_filename("03-sax") == "saxophone"


def test_spatialize_anechoic(stems_dir, tmp_path):
    out = tmp_path / "scene"
    assert main(["spatialize", "--stems-dir", str(stems_dir), "--out-dir", str(out)]) == 0
    assert sorted(p.name for p in out.glob("*.wav")) == ["cello.wav", "flute.wav", "mixture.wav", "viola.wav",
                                                          "violin.wav"]
    meta = json.loads((out / "scene.json").read_text())
    assert meta["azimuths_deg"] == [-15, -5, 5, 15] and meta["seed"] == 0
    mix = read_wav(out / "mixture.wav")
    total = sum(read_wav(out / f"{i}.wav").samples for i in ("violin", "viola", "cello", "flute"))
    assert np.max(np.abs(mix.samples - total)) < 1e-6


def test_spatialize_is_byte_identical(stems_dir, tmp_path):
    for name in ("a", "b"):
        assert main(["spatialize", "--stems-dir", str(stems_dir), "--out-dir", str(tmp_path / name)]) == 0
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_spatialize_reverb_without_ir_is_usage_error(stems_dir, tmp_path, capsys):
    assert main(["spatialize", "--stems-dir", str(stems_dir), "--mode", "reverb",
                 "--out-dir", str(tmp_path / "o")]) == 2
    assert "MissingImpulseResponse" in capsys.readouterr().err


def test_spatialize_reverb_with_ir(stems_dir, tmp_path, rng):
    ir = AudioBuffer(rng.standard_normal((4, 200)) * np.exp(-np.arange(200) / 40), RATE)
    write_wav(ir, tmp_path / "hall.wav")
    out = tmp_path / "rev"
    assert main(["spatialize", "--stems-dir", str(stems_dir), "--mode", "reverb", "--ir", str(tmp_path / "hall.wav"),
                 "--out-dir", str(out)]) == 0
    assert read_wav(out / "mixture.wav").length == RATE + 199


def test_report_empty_csv_is_usage_error(tmp_path):
    (tmp_path / "r.csv").write_text("dataset,instrument,track,condition,causality,sdr_db,smr_db,status\n")
    assert main(["report", "--results", str(tmp_path / "r.csv"), "--out-dir", str(tmp_path / "o")]) == 2


def test_evaluate_and_report(stems_dir, tmp_path):
    scene = tmp_path / "scene"
    main(["spatialize", "--stems-dir", str(stems_dir), "--out-dir", str(scene)])
    doc = {"version": 1, "entries": [
        {"dataset": "valid", "track": "x", "condition": "anech", "causality": c,
         "references_dir": "scene", "estimates_dir": "scene"} for c in ("causal", "noncausal")]}
    (tmp_path / "eval.json").write_text(json.dumps(doc))
    out = tmp_path / "res"
    assert main(["--threads", "2", "evaluate", "--manifest", str(tmp_path / "eval.json"), "--out-dir", str(out),
                 "--filter-len", "64"]) == 0
    text = (out / "results.csv").read_text().splitlines()
    assert len(text) == 1 + 8
    assert all(",100.000," in line for line in text[1:])
    assert "Average" in (out / "table2.md").read_text()
    assert main(["report", "--results", str(out / "results.csv"), "--out-dir", str(tmp_path / "rep")]) == 0
    sig = (tmp_path / "rep" / "significance.md").read_text()
    assert "causal vs noncausal" in sig


def test_mix_command(tmp_path, rng):
    rate = 200
    tracks = []
    for t, labels in enumerate([("violin", "viola", "cello", "cello"), ("flute", "oboe", "clarinet", "bassoon")]):
        stems = []
        for k, lab in enumerate(labels):
            p = tmp_path / f"{t}_{k}.wav"
            write_wav(AudioBuffer(rng.standard_normal(rate * (31 + 15 * t)), rate), p)
            stems.append({"instrument": lab, "wav_path": p.name})
        tracks.append({"track_id": f"t{t}", "source_dataset": "syn", "split": "valid", "stems": stems})
    (tmp_path / "m.json").write_text(json.dumps({"version": 1, "sample_rate": rate, "tracks": tracks}))
    assert main(["--seed", "3", "mix", "--manifest", str(tmp_path / "m.json"), "--out-dir", str(tmp_path / "o")]) == 0
    idx = json.loads((tmp_path / "o" / "samples.json").read_text())
    assert idx["counts"] == {"quartet": 2 + 3, "random_mix": 10}
    assert all({"string", "woodwind"} <= set(s["families"]) for s in idx["samples"] if s["origin"] == "random_mix")


def test_separate_command(tmp_path, rng):
    cfg = tasnet.tiny_config(causal=True)
    tasnet.save_weights(tasnet.init_weights(cfg, 1), cfg, tmp_path / "m.cdzw")
    write_wav(AudioBuffer(0.1 * rng.standard_normal((2, 1000)), RATE), tmp_path / "mix.wav")
    for flag in ([], ["--streaming"]):
        out = tmp_path / ("s" if flag else "b")
        assert main(["separate", "--model", str(tmp_path / "m.cdzw"), "--in", str(tmp_path / "mix.wav"),
                     "--out-dir", str(out)] + flag) == 0
        assert read_wav(out / "target.wav").samples.shape == (2, 1000)
    assert np.max(np.abs(read_wav(tmp_path / "s" / "target.wav").samples
                         - read_wav(tmp_path / "b" / "target.wav").samples)) < 1e-7
    (tmp_path / "bad.cdzw").write_bytes(b"nope")
    assert main(["separate", "--model", str(tmp_path / "bad.cdzw"), "--in", str(tmp_path / "mix.wav"),
                 "--out-dir", str(tmp_path / "x")]) == 2


def test_train_toy_command(tmp_path):
    cfg = {"train": {"epochs": 2, "max_steps": 4, "batch_size": 2, "crop_s": 0.25},
           "toy": {"sample_rate": 4000, "duration_s": 0.5}, "n_train": 4, "n_valid": 2}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["train-toy", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "m.cdzw"),
                 "--history", str(tmp_path / "h.csv")]) == 0
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,lr,train_loss,valid_loss" and len(lines) == 3
    _, model_cfg = tasnet.load_weights(tmp_path / "m.cdzw")
    assert model_cfg == tasnet.tiny_config()


def test_threads_env_override(monkeypatch):
    from argparse import Namespace

    from mssbench.cli import thread_count
    monkeypatch.setenv("CADENZA_THREADS", "6")
    assert thread_count(Namespace(threads=1)) == 6
    monkeypatch.delenv("CADENZA_THREADS")
    assert thread_count(Namespace(threads=3)) == 3
