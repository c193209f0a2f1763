"""Command-line entry point: ``mssbench <command> ...``.

Exit codes: 0 success, 1 internal error, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import report, tasnet, toy, train
from .ambisonics import BFormatSignal
from .audio_io import AudioBuffer, read_wav, write_wav
from .dataset import CorpusManifest, family, validation_set
from .errors import (CorruptWeights, IncompatibleWeights, InvalidArgument, MissingImpulseResponse,
                     MssError, UnknownInstrument, UnsupportedFormat)
from .scene import INSTRUMENTS, SceneSpec, merge_same_instrument, render

log = logging.getLogger("mssbench")

USAGE_ERRORS = (InvalidArgument, MissingImpulseResponse, UnknownInstrument, IncompatibleWeights,
                CorruptWeights, UnsupportedFormat, FileNotFoundError, json.JSONDecodeError, KeyError)

ALIASES = {"sax": "saxophone", "altosax": "saxophone", "alto_sax": "saxophone", "vln": "violin",
           "vla": "viola", "vc": "cello", "fl": "flute", "ob": "oboe", "cl": "clarinet", "bn": "bassoon"}


class UsageError(Exception):
    pass


def thread_count(args) -> int:
    env = os.environ.get("CADENZA_THREADS")
    n = int(env) if env else args.threads
    return max(1, n)


def instrument_from_filename(name: str) -> str:
    tokens = [t for t in re.split(r"[^a-z]+", name.lower()) if t]
    for t in tokens:
        if t in INSTRUMENTS:
            return t
    for t in tokens:
        if t in ALIASES:
            return ALIASES[t]
    raise UsageError(f"cannot infer an instrument label from file name {name!r}")


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------ commands

def cmd_spatialize(args) -> int:
    stems_dir = Path(args.stems_dir)
    files = sorted(p for p in stems_dir.glob("*.wav"))
    if not files:
        raise UsageError(f"{stems_dir}: no WAV stems found")
    stems = []
    for p in files:
        buf = read_wav(p)
        if buf.channels > 1:
            log.warning("%s has %d channels; averaging to mono", p.name, buf.channels)
            buf = AudioBuffer(buf.samples.mean(axis=0), buf.sample_rate)
        stems.append((instrument_from_filename(p.stem), buf))
    if args.order:
        rank = {name: i for i, name in enumerate(args.order.split(","))}
        stems.sort(key=lambda s: rank.get(s[0], len(rank)))
    stems = merge_same_instrument(_pad_equal(stems))

    ir = None
    if args.ir:
        ir = BFormatSignal.from_buffer(read_wav(args.ir), args.ir_convention)
    spec = SceneSpec(stems, spacing_deg=args.spacing, mode=args.mode, ir=ir, decode_pattern=args.pattern,
                     center_deg=args.center, normalize=not args.no_normalize,
                     ir_name=Path(args.ir).name if args.ir else None)
    scene = render(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for label, buf in scene.stems_stereo:
        write_wav(buf, out / f"{label}.wav", args.encoding)
    write_wav(scene.mixture, out / "mixture.wav", args.encoding)
    meta = dict(scene.metadata, seed=args.seed, encoding=args.encoding,
                sources=[p.name for p in files], ir_convention=args.ir_convention if args.ir else None)
    _write_json(out / "scene.json", meta)
    return 0


def _pad_equal(stems):
    n = max(b.length for _, b in stems)
    return [(label, b if b.length == n else AudioBuffer(np.pad(b.samples, ((0, 0), (0, n - b.length))),
                                                         b.sample_rate))
            for label, b in stems]


def cmd_mix(args) -> int:
    manifest = CorpusManifest.load(args.manifest)
    samples = validation_set(manifest, args.seed, args.seg_s, args.n_random, tuple(args.n_stems), args.split)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for s in samples:
        d = out / s.sample_id
        d.mkdir(exist_ok=True)
        for label, buf in s.stems:
            write_wav(buf, d / f"{label}.wav", args.encoding)
        write_wav(s.mixture, d / "mixture.wav", args.encoding)
        index.append({"sample_id": s.sample_id, "origin": s.origin, "rng_seed": s.rng_seed,
                      "instruments": s.instruments, "families": sorted({family(i) for i in s.instruments}),
                      "duration_s": s.duration_s})
    counts = {"quartet": sum(1 for s in samples if s.origin == "quartet"),
              "random_mix": sum(1 for s in samples if s.origin == "random_mix")}
    _write_json(out / "samples.json", {"seed": args.seed, "seg_s": args.seg_s, "counts": counts,
                                       "samples": index})
    print(f"wrote {len(samples)} samples ({counts['quartet']} ensemble segments, "
          f"{counts['random_mix']} random mixes) to {out}")
    return 0


def cmd_separate(args) -> int:
    weights, cfg = tasnet.load_weights(args.model)
    mixture = read_wav(args.input)
    if args.streaming:
        target, residual = tasnet.stream_separate(mixture, cfg, weights, args.chunk_s)
    else:
        target, residual = tasnet.separate(mixture, cfg, weights)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_wav(target, out / "target.wav", args.encoding)
    write_wav(residual, out / "residual.wav", args.encoding)
    return 0


def cmd_evaluate(args) -> int:
    entries = report.load_eval_manifest(args.manifest, args.estimates_dir)
    rows = report.evaluate_manifest(entries, args.smr_only, thread_count(args), args.frame_s, args.filter_len)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_results(rows, out / "results.csv")
    (out / "table2.md").write_text(report.render_median_table(report.pivot(rows)))
    print(f"evaluated {len(rows)} rows -> {out / 'results.csv'}")
    return 0


def cmd_report(args) -> int:
    rows = report.read_results(args.results)
    if not rows:
        raise UsageError(f"{args.results}: no result rows")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table2.md").write_text(report.render_median_table(report.pivot(rows)))
    (out / "significance.md").write_text(report.render_significance(report.significance(rows)))
    return 0


def cmd_train_toy(args) -> int:
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    model_cfg = tasnet.tiny_config(**doc.get("model", {}))
    tdoc = dict(epochs=40, crop_s=0.5, max_steps=500, lr0=3e-3, seed=args.seed)
    tdoc.update(doc.get("train", {}))
    train_cfg = train.TrainConfig(**tdoc)
    toy_cfg = toy.ToyConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in doc.get("toy", {}).items()})
    n_train, n_valid = doc.get("n_train", 32), doc.get("n_valid", 4)
    train_pool = toy.toy_pool(n_train, 1000 + 10_000 * train_cfg.seed, toy_cfg)
    valid_pool = toy.toy_pool(n_valid, 2000 + 10_000 * train_cfg.seed, toy_cfg)
    weights, history = train.fit(model_cfg, train_cfg, train_pool, valid_pool, toy.LOW_LABEL,
                                 progress=lambda r: log.info("epoch %d valid %.5f", r.epoch, r.valid_loss))
    tasnet.save_weights(weights, model_cfg, args.out)
    with open(args.history, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "lr", "train_loss", "valid_loss"], lineterminator="\n")
        w.writeheader()
        w.writerows(train.history_rows(history))
    print(f"trained {len(history)} epochs; best valid loss {min(r.valid_loss for r in history):.5f}")
    return 0


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mssbench", description="Classical-ensemble source separation toolkit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("spatialize", help="render stereo scenes from mono stems")
    s.add_argument("--stems-dir", required=True)
    s.add_argument("--ir")
    s.add_argument("--ir-convention", choices=["fuma", "ambix"], default="fuma")
    s.add_argument("--mode", choices=["anechoic", "reverb"], default="anechoic")
    s.add_argument("--spacing", type=float, default=10.0)
    s.add_argument("--center", type=float, default=0.0)
    s.add_argument("--pattern", type=float, default=0.5)
    s.add_argument("--order", help="comma-separated instrument order (left to right)")
    s.add_argument("--no-normalize", action="store_true")
    s.add_argument("--encoding", choices=["float32", "pcm16", "pcm24"], default="float32")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_spatialize)

    s = sub.add_parser("mix", help="materialize a validation set from a corpus manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seg-s", type=float, default=15.0)
    s.add_argument("--n-random", type=int, default=None)
    s.add_argument("--n-stems", type=int, nargs=2, default=[2, 5], metavar=("MIN", "MAX"))
    s.add_argument("--split", default="valid")
    s.add_argument("--encoding", choices=["float32", "pcm16", "pcm24"], default="float32")
    s.set_defaults(func=cmd_mix)

    s = sub.add_parser("separate", help="run a trained extractor on a mixture")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--streaming", action="store_true")
    s.add_argument("--chunk-s", type=float, default=0.5)
    s.add_argument("--encoding", choices=["float32", "pcm16", "pcm24"], default="float32")
    s.set_defaults(func=cmd_separate)

    s = sub.add_parser("evaluate", help="score estimates against references")
    s.add_argument("--manifest", required=True)
    s.add_argument("--estimates-dir")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--smr-only", action="store_true")
    s.add_argument("--frame-s", type=float, default=1.0)
    s.add_argument("--filter-len", type=int, default=512)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("train-toy", help="train a tiny extractor on the synthetic two-source task")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--history", required=True)
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("report", help="pivot tables and t-tests from results.csv")
    s.add_argument("--results", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, *USAGE_ERRORS) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (MssError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
