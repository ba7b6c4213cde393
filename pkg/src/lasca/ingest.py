"""Frame/annotation loading, fixed-length windowing, and min-max normalization.

Inputs are pre-extracted per-frame feature CSVs plus a continuous affect
annotation CSV. Frames and annotations are grouped into (subject, video)
streams, cut into consecutive non-overlapping windows aligned to t=0, and
mean-pooled. A window is emitted only when the stream's observed extent
reaches the window's end, so a trailing partial remainder is discarded, and
only when it contains at least one frame and one annotation sample.

Normalization statistics are fitted on training windows only and applied
with clamping, so unseen test values stay inside [0, 1].
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, SchemaError

__all__ = [
    "FrameRecord",
    "AffectSample",
    "FeatureWindow",
    "NormStats",
    "load_frames",
    "load_annotations",
    "segment_windows",
    "merge_windows",
    "fit_normalizer",
    "apply_normalizer",
    "dump_windows",
    "load_windows",
]

FRAME_KEY_COLUMNS = ("subject_id", "video_id", "timestamp")
ANNOTATION_COLUMNS = ("subject_id", "video_id", "timestamp", "valence", "arousal")


@dataclass(frozen=True)
class FrameRecord:
    subject_id: str
    video_id: str
    timestamp: float
    features: dict[str, float]
    modality: str


@dataclass(frozen=True)
class AffectSample:
    subject_id: str
    video_id: str
    timestamp: float
    valence: float
    arousal: float


@dataclass(frozen=True, eq=False)
class FeatureWindow:
    """One temporal segment with mean-pooled features and affect values."""

    subject_id: str
    video_id: str
    t_start: float
    t_end: float
    x_raw: np.ndarray
    a_valence: float
    a_arousal: float
    feature_names: tuple[str, ...]
    # (modality, start, stop) slices of x_raw, in concatenation order.
    blocks: tuple[tuple[str, int, int], ...]

    def __post_init__(self):
        self.x_raw.setflags(write=False)

    @property
    def dim(self) -> int:
        return int(self.x_raw.shape[0])

    def affect(self, dimension: str) -> float:
        if dimension == "valence":
            return self.a_valence
        if dimension == "arousal":
            return self.a_arousal
        raise ValueError(f"unknown affect dimension '{dimension}'")

    @property
    def stream(self) -> tuple[str, str]:
        return (self.subject_id, self.video_id)


@dataclass(frozen=True, eq=False)
class NormStats:
    """Per-dimension training min/max."""

    mins: np.ndarray
    maxs: np.ndarray
    fitted_on: int

    def __post_init__(self):
        self.mins.setflags(write=False)
        self.maxs.setflags(write=False)
        if np.any(self.maxs < self.mins):
            raise ValueError("max < min in normalization stats")


def _parse_float(cell: str, what: str, path: Path, line: int) -> float:
    try:
        value = float(cell)
    except ValueError as exc:
        raise ParseError(f"non-numeric {what} '{cell}'", str(path), line) from exc
    if not math.isfinite(value):
        raise ParseError(f"non-finite {what} '{cell}'", str(path), line)
    return value


def load_frames(path: str | Path, modality: str) -> list[FrameRecord]:
    """Load one modality's frame CSV.

    Header is `subject_id,video_id,timestamp,<feature columns...>`; feature
    column order is preserved. Timestamps must be non-negative and strictly
    increasing within each (subject, video) stream.
    """
    path = Path(path)
    records: list[FrameRecord] = []
    last_ts: dict[tuple[str, str], float] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header row") from None
        if tuple(header[:3]) != FRAME_KEY_COLUMNS:
            raise SchemaError(
                f"{path}: header must start with {','.join(FRAME_KEY_COLUMNS)}"
            )
        feature_names = tuple(header[3:])
        if not feature_names:
            raise SchemaError(f"{path}: no feature columns")
        if len(set(feature_names)) != len(feature_names):
            raise SchemaError(f"{path}: duplicate feature columns")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} cells, got {len(row)}", str(path), line
                )
            subject_id, video_id = row[0], row[1]
            ts = _parse_float(row[2], "timestamp", path, line)
            if ts < 0:
                raise ParseError(f"negative timestamp {ts}", str(path), line)
            key = (subject_id, video_id)
            prev = last_ts.get(key)
            if prev is not None and ts <= prev:
                raise SchemaError(
                    f"{path}:{line}: timestamps not strictly increasing in "
                    f"stream {key} ({ts} after {prev})"
                )
            last_ts[key] = ts
            values = {
                name: _parse_float(cell, f"feature '{name}'", path, line)
                for name, cell in zip(feature_names, row[3:])
            }
            records.append(
                FrameRecord(
                    subject_id=subject_id,
                    video_id=video_id,
                    timestamp=ts,
                    features=values,
                    modality=modality,
                )
            )
    return records


def load_annotations(path: str | Path) -> list[AffectSample]:
    """Load the affect annotation CSV; values outside [-1, 1] are rejected."""
    path = Path(path)
    samples: list[AffectSample] = []
    last_ts: dict[tuple[str, str], float] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header row") from None
        if tuple(header) != ANNOTATION_COLUMNS:
            raise SchemaError(
                f"{path}: header must be {','.join(ANNOTATION_COLUMNS)}"
            )
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} cells, got {len(row)}", str(path), line
                )
            subject_id, video_id = row[0], row[1]
            ts = _parse_float(row[2], "timestamp", path, line)
            if ts < 0:
                raise ParseError(f"negative timestamp {ts}", str(path), line)
            key = (subject_id, video_id)
            prev = last_ts.get(key)
            if prev is not None and ts <= prev:
                raise SchemaError(
                    f"{path}:{line}: timestamps not strictly increasing in "
                    f"stream {key} ({ts} after {prev})"
                )
            last_ts[key] = ts
            valence = _parse_float(row[3], "valence", path, line)
            arousal = _parse_float(row[4], "arousal", path, line)
            for name, value in (("valence", valence), ("arousal", arousal)):
                if not -1.0 <= value <= 1.0:
                    raise ParseError(
                        f"{name} value {value} outside [-1, 1]", str(path), line
                    )
            samples.append(AffectSample(subject_id, video_id, ts, valence, arousal))
    return samples


def _by_stream(items: Iterable) -> dict[tuple[str, str], list]:
    grouped: dict[tuple[str, str], list] = {}
    for item in items:
        grouped.setdefault((item.subject_id, item.video_id), []).append(item)
    return grouped


def segment_windows(
    frames: Sequence[FrameRecord],
    annotations: Sequence[AffectSample],
    window_len: float,
) -> list[FeatureWindow]:
    """Cut streams into consecutive windows of exactly window_len seconds.

    Windows are aligned to t=0 of each stream. Frame features and annotation
    values are mean-pooled per window; windows missing either are dropped.
    Output is ordered by (subject_id, video_id, t_start). Empty input yields
    an empty list.
    """
    if window_len <= 0:
        raise ValueError(f"window_len must be positive, got {window_len}")
    frame_streams = _by_stream(frames)
    ann_streams = _by_stream(annotations)

    windows: list[FeatureWindow] = []
    for key in sorted(frame_streams):
        stream_frames = frame_streams[key]
        stream_anns = ann_streams.get(key, [])
        if not stream_anns:
            continue
        modality = stream_frames[0].modality
        feature_names = tuple(stream_frames[0].features)
        t_max = max(stream_frames[-1].timestamp, stream_anns[-1].timestamp)
        n_windows = int(t_max // window_len)
        if n_windows == 0:
            continue

        frame_bins: list[list[FrameRecord]] = [[] for _ in range(n_windows)]
        for fr in stream_frames:
            idx = int(fr.timestamp // window_len)
            if idx < n_windows:
                frame_bins[idx].append(fr)
        ann_bins: list[list[AffectSample]] = [[] for _ in range(n_windows)]
        for ann in stream_anns:
            idx = int(ann.timestamp // window_len)
            if idx < n_windows:
                ann_bins[idx].append(ann)

        for k in range(n_windows):
            if not frame_bins[k] or not ann_bins[k]:
                continue
            x = np.mean(
                [[fr.features[name] for name in feature_names] for fr in frame_bins[k]],
                axis=0,
            )
            windows.append(
                FeatureWindow(
                    subject_id=key[0],
                    video_id=key[1],
                    t_start=k * window_len,
                    t_end=(k + 1) * window_len,
                    x_raw=np.asarray(x, dtype=np.float64),
                    a_valence=float(np.mean([a.valence for a in ann_bins[k]])),
                    a_arousal=float(np.mean([a.arousal for a in ann_bins[k]])),
                    feature_names=feature_names,
                    blocks=((modality, 0, len(feature_names)),),
                )
            )
    return windows


def merge_windows(
    facial: Sequence[FeatureWindow], audio: Sequence[FeatureWindow]
) -> list[FeatureWindow]:
    """Join per-modality windows on (subject, video, t_start) into multimodal ones.

    Windows present in only one modality are dropped. The fused vector is the
    facial block followed by the audio block.
    """
    audio_index = {(w.subject_id, w.video_id, w.t_start): w for w in audio}
    merged: list[FeatureWindow] = []
    for fw in facial:
        aw = audio_index.get((fw.subject_id, fw.video_id, fw.t_start))
        if aw is None:
            continue
        if not math.isclose(fw.a_valence, aw.a_valence) or not math.isclose(
            fw.a_arousal, aw.a_arousal
        ):
            raise SchemaError(
                f"affect mismatch between modalities for stream {fw.stream} "
                f"window at t={fw.t_start}"
            )
        d_f = fw.dim
        merged.append(
            FeatureWindow(
                subject_id=fw.subject_id,
                video_id=fw.video_id,
                t_start=fw.t_start,
                t_end=fw.t_end,
                x_raw=np.concatenate([fw.x_raw, aw.x_raw]),
                a_valence=fw.a_valence,
                a_arousal=fw.a_arousal,
                feature_names=fw.feature_names + aw.feature_names,
                blocks=(("facial", 0, d_f), ("audio", d_f, d_f + aw.dim)),
            )
        )
    return merged


def fit_normalizer(train_windows: Sequence[FeatureWindow]) -> NormStats:
    """Per-dimension min/max over training windows only."""
    if not train_windows:
        raise ValueError("cannot fit normalizer on an empty training set")
    dims = {w.dim for w in train_windows}
    if len(dims) != 1:
        raise ValueError(f"inconsistent window dimensions: {sorted(dims)}")
    stack = np.stack([w.x_raw for w in train_windows])
    return NormStats(
        mins=stack.min(axis=0),
        maxs=stack.max(axis=0),
        fitted_on=len(train_windows),
    )


def apply_normalizer(stats: NormStats, x_raw: np.ndarray) -> np.ndarray:
    """Map a raw vector into [0, 1]^d with clamping.

    Constant training dimensions (max == min) map to 0.0, which marks the
    feature as never salient downstream.
    """
    x = np.asarray(x_raw, dtype=np.float64)
    if x.shape != stats.mins.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {stats.mins.shape}")
    span = stats.maxs - stats.mins
    out = np.zeros_like(x)
    varying = span > 0
    out[varying] = (x[varying] - stats.mins[varying]) / span[varying]
    np.clip(out, 0.0, 1.0, out=out)
    return out


def dump_windows(windows: Sequence[FeatureWindow], path: str | Path) -> None:
    """Write windows as JSON Lines (optional cache format)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for w in windows:
            fh.write(
                json.dumps(
                    {
                        "subject_id": w.subject_id,
                        "video_id": w.video_id,
                        "t_start": w.t_start,
                        "t_end": w.t_end,
                        "x_raw": w.x_raw.tolist(),
                        "a_valence": w.a_valence,
                        "a_arousal": w.a_arousal,
                        "feature_names": list(w.feature_names),
                        "blocks": [list(b) for b in w.blocks],
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_windows(path: str | Path) -> list[FeatureWindow]:
    """Read a JSON Lines window cache written by dump_windows."""
    path = Path(path)
    out: list[FeatureWindow] = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append(
                FeatureWindow(
                    subject_id=rec["subject_id"],
                    video_id=rec["video_id"],
                    t_start=float(rec["t_start"]),
                    t_end=float(rec["t_end"]),
                    x_raw=np.asarray(rec["x_raw"], dtype=np.float64),
                    a_valence=float(rec["a_valence"]),
                    a_arousal=float(rec["a_arousal"]),
                    feature_names=tuple(rec["feature_names"]),
                    blocks=tuple(
                        (str(m), int(a), int(b)) for m, a, b in rec["blocks"]
                    ),
                )
            )
    return out
