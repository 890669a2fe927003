"""CSV interchange formats.

DE features, one row per second::

    subject_id,trial_id,second,label,de_0,...,de_309

where ``de_{5*e+b}`` is electrode ``e``, band ``b`` (electrode-major).

Raw EEG, repeated per trial::

    subject_id,trial_id,label,sample_rate
    s01,t01,2,200.0
    <62 rows of comma-separated samples, one row per channel>

Floats are written with ``repr`` so files round-trip exactly and repeated
runs produce identical bytes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..features import N_CHANNELS, N_FEATURES, DEFeatureSet, EEGRecording

DE_HEADER = ["subject_id", "trial_id", "second", "label"] + [f"de_{i}" for i in range(N_FEATURES)]
RAW_HEADER = "subject_id,trial_id,label,sample_rate"
HISTORY_HEADER = ["epoch", "ce_loss", "md", "discrepancy", "target_accuracy"]


def fmt(x):
    if x is None:
        return ""
    return repr(float(x))


def write_de_csv(path, feature_sets):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(feature_sets, DEFeatureSet):
        feature_sets = [feature_sets]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DE_HEADER)
        for fs in feature_sets:
            flat = fs.de.reshape(len(fs), N_FEATURES)
            for i in range(len(fs)):
                w.writerow([fs.subject_id, fs.trial_ids[i], int(fs.seconds[i]), int(fs.labels[i])]
                           + [repr(float(v)) for v in flat[i]])


def read_de_csv(path):
    """Returns ``{subject_id: DEFeatureSet}`` in file order."""
    path = Path(path)
    rows = {}
    with path.open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != DE_HEADER:
            raise FormatError(f"{path}: unexpected DE CSV header")
        for lineno, row in enumerate(r, start=2):
            if not row:
                continue
            if len(row) != len(DE_HEADER):
                raise FormatError(f"{path}:{lineno}: expected {len(DE_HEADER)} fields, got {len(row)}")
            try:
                entry = (row[1], int(row[2]), int(row[3]), [float(v) for v in row[4:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            rows.setdefault(row[0], []).append(entry)
    out = {}
    for sid, entries in rows.items():
        tids, secs, labels, de = zip(*entries)
        out[sid] = DEFeatureSet(sid, list(tids), list(secs), list(labels), np.array(de))
    return out


def read_feature_dir(path):
    """All DE CSVs under a directory (or a single file), keyed and sorted by subject id."""
    path = Path(path)
    files = sorted(path.glob("*.csv")) if path.is_dir() else [path]
    if not files:
        raise FormatError(f"no feature CSV files in {path}")
    merged = {}
    for f in files:
        for sid, fs in read_de_csv(f).items():
            merged[sid] = DEFeatureSet.concat([merged[sid], fs]) if sid in merged else fs
    return dict(sorted(merged.items()))


def write_feature_dir(path, feature_sets):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for fs in feature_sets:
        write_de_csv(path / f"{fs.subject_id}.csv", fs)


def write_raw_csv(path, recordings):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for rec in recordings:
            fh.write(RAW_HEADER + "\n")
            fh.write(f"{rec.subject_id},{rec.trial_id},{rec.label},{repr(float(rec.sample_rate))}\n")
            for ch in rec.samples:
                fh.write(",".join(repr(float(v)) for v in ch) + "\n")


def read_raw_csv(path):
    path = Path(path)
    lines = path.read_text().splitlines()
    recs = []
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        if lines[i].strip() != RAW_HEADER:
            raise FormatError(f"{path}:{i + 1}: expected block header {RAW_HEADER!r}")
        if i + 1 + N_CHANNELS >= len(lines):
            raise FormatError(f"{path}:{i + 1}: truncated trial block")
        meta = lines[i + 1].split(",")
        if len(meta) != 4:
            raise FormatError(f"{path}:{i + 2}: bad metadata line")
        try:
            samples = np.array([[float(v) for v in lines[i + 2 + c].split(",")]
                                for c in range(N_CHANNELS)])
            recs.append(EEGRecording(meta[0], meta[1], int(meta[2]), float(meta[3]), samples))
        except ValueError as exc:
            raise FormatError(f"{path}:{i + 1}: {exc}") from None
        i += 2 + N_CHANNELS
    return recs


def write_history_csv(path, history):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for row in history:
            w.writerow([row["epoch"]] + [fmt(row[k]) for k in HISTORY_HEADER[1:]])


def write_matrix_csv(path, matrix, labels):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + list(labels))
        for lab, row in zip(labels, matrix):
            w.writerow([lab] + [repr(float(v)) for v in row])


def write_embeddings_csv(path, rows, dim):
    """``rows`` yields (subject_id, role, label, vector)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "role", "label"] + [f"emb_{i}" for i in range(dim)])
        for sid, role, label, vec in rows:
            w.writerow([sid, role, int(label)] + [repr(float(v)) for v in vec])


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
