"""Evaluation manifests, results tables and the per-instrument SDR pivot."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer, read_wav
from .bss_eval import DEFAULT_FILTER_LEN, t_test, track_sdr
from .errors import DegenerateSamples, InvalidArgument, NoValidFrames
from .scene import sum_stems

RESULT_COLUMNS = ["dataset", "instrument", "track", "condition", "causality", "sdr_db", "smr_db", "status"]
CONDITIONS = ("anech", "reverb", "synth")
CAUSALITIES = ("causal", "noncausal", "n/a")
DISPLAY = {"causal": "Causal", "noncausal": "Non-causal", "anech": "Anech", "reverb": "Reverb", "synth": "Synth"}


@dataclass(frozen=True)
class EvalEntry:
    dataset: str
    track: str
    condition: str
    causality: str
    references_dir: Path
    estimates_dir: Path | None


def load_eval_manifest(path, estimates_root=None) -> list[EvalEntry]:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("version") != 1:
        raise InvalidArgument(f"{path}: unsupported evaluation manifest version {doc.get('version')!r}")
    base = path.parent
    est_base = Path(estimates_root) if estimates_root else base
    entries = []
    for e in doc["entries"]:
        cond, caus = e.get("condition", "reverb"), e.get("causality", "n/a")
        if cond not in CONDITIONS:
            raise InvalidArgument(f"unknown condition {cond!r}")
        if caus not in CAUSALITIES:
            raise InvalidArgument(f"unknown causality {caus!r}")
        est = e.get("estimates_dir")
        entries.append(EvalEntry(e["dataset"], str(e["track"]), cond, caus,
                                 base / e["references_dir"], est_base / est if est else None))
    return entries


def _reference_stems(ref_dir: Path) -> dict:
    stems = {p.stem: read_wav(p) for p in sorted(ref_dir.glob("*.wav")) if p.stem != "mixture"}
    if not stems:
        raise InvalidArgument(f"{ref_dir}: no reference stems")
    return stems


def _db(value) -> str:
    return "" if value is None else f"{value:.3f}"


def _safe_track_sdr(ref: AudioBuffer, est: AudioBuffer, frame_s, filter_len):
    try:
        return track_sdr(ref, est, frame_s, filter_len)[0]
    except NoValidFrames:
        return None


def evaluate_entry(entry: EvalEntry, smr_only: bool = False, frame_s: float = 1.0,
                   filter_len: int = DEFAULT_FILTER_LEN) -> list[dict]:
    refs = _reference_stems(entry.references_dir)
    mix_path = entry.references_dir / "mixture.wav"
    mixture = read_wav(mix_path) if mix_path.exists() else sum_stems(list(refs.values()))
    rows = []
    for inst, ref in refs.items():
        row = {"dataset": entry.dataset, "instrument": inst, "track": entry.track,
               "condition": entry.condition, "causality": "n/a" if smr_only else entry.causality}
        smr = _safe_track_sdr(ref, mixture, frame_s, filter_len)
        sdr, status = None, "ok"
        if not smr_only:
            est_path = entry.estimates_dir / f"{inst}.wav" if entry.estimates_dir else None
            if est_path is None or not est_path.exists():
                status = "missing"
            else:
                est = read_wav(est_path)
                if est.samples.shape != ref.samples.shape:
                    status = "shape_mismatch"
                else:
                    sdr = _safe_track_sdr(ref, est, frame_s, filter_len)
                    status = "ok" if sdr is not None else "silent_reference"
        row.update(sdr_db=_db(sdr), smr_db=_db(smr), status=status)
        rows.append(row)
    return rows


def evaluate_manifest(entries: list[EvalEntry], smr_only: bool = False, threads: int = 1,
                      frame_s: float = 1.0, filter_len: int = DEFAULT_FILTER_LEN) -> list[dict]:
    work = lambda e: evaluate_entry(e, smr_only, frame_s, filter_len)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(work, entries))
    else:
        chunks = [work(e) for e in entries]
    return [row for chunk in chunks for row in chunk]


def write_results(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r.get(k, "") for k in RESULT_COLUMNS})


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r.setdefault("status", "ok")
    return rows


def _num(s):
    return None if s in (None, "") else float(s)


def _median_over_tracks(values: dict):
    return float(np.median(list(values.values()))) if values else None


def pivot(rows: list[dict]) -> dict:
    """Per dataset: instrument -> column -> median over tracks.

    Columns are ``"Ref"`` (SMR, preferring the reverb condition) and
    ``(causality, condition)`` pairs.  Only rows with status ``ok`` count.
    """
    out = {}
    for ds in sorted({r["dataset"] for r in rows}):
        drows = [r for r in rows if r["dataset"] == ds and r.get("status", "ok") == "ok"]
        table = {}
        for inst in sorted({r["instrument"] for r in drows}):
            irows = [r for r in drows if r["instrument"] == inst]
            cells = {}
            smr_by_cond = {}
            for r in irows:
                v = _num(r["smr_db"])
                if v is not None:
                    smr_by_cond.setdefault(r["condition"], {})[r["track"]] = v
            for cond in ("reverb", "synth", "anech"):
                if cond in smr_by_cond:
                    cells["Ref"] = _median_over_tracks(smr_by_cond[cond])
                    break
            groups = {}
            for r in irows:
                v = _num(r["sdr_db"])
                if v is not None and r["causality"] != "n/a":
                    groups.setdefault((r["causality"], r["condition"]), {})[r["track"]] = v
            for key, vals in groups.items():
                cells[key] = _median_over_tracks(vals)
            table[inst] = cells
        out[ds] = table
    return out


def _columns(table: dict) -> list:
    keys = {k for cells in table.values() for k in cells if k != "Ref"}
    order = [(c, k) for c in ("causal", "noncausal") for k in CONDITIONS]
    cols = ["Ref"] if any("Ref" in cells for cells in table.values()) else []
    return cols + [k for k in order if k in keys]


def average_row(table: dict, columns: list) -> dict:
    """Mean over instruments of each column's per-instrument median."""
    avg = {}
    for col in columns:
        vals = [cells[col] for cells in table.values() if cells.get(col) is not None]
        avg[col] = float(np.mean(vals)) if vals else None
    return avg


def render_median_table(piv: dict) -> str:
    lines = ["# SDR (dB) per instrument", ""]
    for ds, table in piv.items():
        cols = _columns(table)
        header = ["Instrument"] + [c if c == "Ref" else f"{DISPLAY[c[0]]} {DISPLAY[c[1]]}" for c in cols]
        lines.append(f"## {ds}")
        lines.append("")
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "|".join(["---"] + ["---:"] * len(cols)) + "|")
        fmt = lambda v: "-" if v is None else f"{v:.3f}"
        for inst, cells in table.items():
            lines.append("| " + " | ".join([inst] + [fmt(cells.get(c)) for c in cols]) + " |")
        avg = average_row(table, cols)
        lines.append("| " + " | ".join(["Average"] + [fmt(avg[c]) for c in cols]) + " |")
        lines.append("")
    return "\n".join(lines)


def _samples(rows, key, value):
    return [float(r["sdr_db"]) for r in rows
            if r.get("status", "ok") == "ok" and r["sdr_db"] not in ("", None) and r[key] == value]


def significance(rows: list[dict]) -> list[dict]:
    comparisons = [("causality", "causal", "noncausal"), ("condition", "anech", "reverb")]
    out = []
    for key, a, b in comparisons:
        sa, sb = _samples(rows, key, a), _samples(rows, key, b)
        entry = {"comparison": f"{a} vs {b}", "n_a": len(sa), "n_b": len(sb)}
        if len(sa) >= 2 and len(sb) >= 2:
            try:
                entry["result"] = t_test(sa, sb)
            except DegenerateSamples:
                entry["result"] = None
        else:
            entry["result"] = None
        out.append(entry)
    return out


def render_significance(tests: list[dict]) -> str:
    lines = ["# Pooled two-sample t-tests on per-track SDR", "",
             "| Comparison | n_a | n_b | t | df | p | summary |", "|---|---:|---:|---:|---:|---:|---|"]
    for e in tests:
        r = e["result"]
        if r is None:
            lines.append(f"| {e['comparison']} | {e['n_a']} | {e['n_b']} | - | - | - | not enough data |")
        else:
            lines.append(f"| {e['comparison']} | {e['n_a']} | {e['n_b']} | {r.t:.4f} | {r.df:.0f} | "
                         f"{r.p:.4f} | {r.format()} |")
    return "\n".join(lines) + "\n"
