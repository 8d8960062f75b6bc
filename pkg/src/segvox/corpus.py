"""Build frame-labelled training examples from a segmented speech corpus.

Two consecutive corpus segments of the same recording are concatenated into
one training span.  Feature frames whose center falls inside a segment are
labelled 0 (inside an utterance); every other frame is labelled 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import groupby
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from segvox.audio_features import FeatureConfig, FeatureMatrix, Waveform, compute_fbank
from segvox.errors import AlignmentError, DataError, FormatError

OVERLAP_TOLERANCE_S = 1e-3


@dataclass(frozen=True)
class SegmentRecord:
    audio_id: str
    offset_s: float
    duration_s: float
    transcript: str | None = None
    translation: str | None = None

    def __post_init__(self):
        if self.offset_s < 0:
            raise DataError(f"negative offset {self.offset_s} for {self.audio_id}")
        if self.duration_s <= 0:
            raise DataError(f"non-positive duration {self.duration_s} for {self.audio_id}")

    @property
    def end_s(self) -> float:
        return self.offset_s + self.duration_s


@dataclass
class FrameLabels:
    labels: np.ndarray
    frame_shift_s: float

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.labels.size and not np.isin(self.labels, (0, 1)).all():
            raise DataError("frame labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.labels)

    def to_text(self) -> str:
        return "".join("01"[v] for v in self.labels) + "\n"

    @classmethod
    def from_text(cls, text: str, frame_shift_s: float) -> "FrameLabels":
        body = text.strip()
        if set(body) - {"0", "1"}:
            raise FormatError("label dump may only contain '0' and '1'")
        return cls(np.frombuffer(body.encode(), dtype=np.uint8) - ord("0"), frame_shift_s)


@dataclass
class TrainingExample:
    features: FeatureMatrix
    labels: FrameLabels
    source: tuple[str, int]

    def __post_init__(self):
        if len(self.labels) != self.features.n_frames:
            raise AlignmentError(
                f"{len(self.labels)} labels for {self.features.n_frames} feature frames"
            )


def load_manifest(path) -> list[SegmentRecord]:
    """Parse a JSON Lines manifest; records come back grouped by audio and
    sorted by offset (audio ids keep first-appearance order)."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = SegmentRecord(
                    audio_id=str(obj["audio"]),
                    offset_s=float(obj["offset"]),
                    duration_s=float(obj["duration"]),
                    transcript=obj.get("transcript"),
                    translation=obj.get("translation"),
                )
            except KeyError as exc:
                raise FormatError(f"{path}:{lineno}: missing field {exc}") from exc
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            records.append(rec)
    order = {}
    for rec in records:
        order.setdefault(rec.audio_id, len(order))
    records.sort(key=lambda r: (order[r.audio_id], r.offset_s))
    for audio_id, group in groupby(records, key=lambda r: r.audio_id):
        group = list(group)
        for prev, cur in zip(group, group[1:]):
            if prev.end_s > cur.offset_s + OVERLAP_TOLERANCE_S:
                raise DataError(
                    f"{audio_id}: segment at {prev.offset_s:.3f}s overlaps the one at "
                    f"{cur.offset_s:.3f}s"
                )
    return records


def group_by_audio(records: Sequence[SegmentRecord]) -> dict[str, list[SegmentRecord]]:
    out: dict[str, list[SegmentRecord]] = {}
    for rec in records:
        out.setdefault(rec.audio_id, []).append(rec)
    return out


def frame_labels_for_span(
    segments: Sequence[SegmentRecord],
    span_start_s: float,
    span_end_s: float,
    frame_shift_s: float,
    n_frames: int,
) -> FrameLabels:
    # span_end_s only documents the span; n_frames decides the label count
    centers = span_start_s + np.arange(n_frames) * frame_shift_s + frame_shift_s / 2
    labels = np.ones(n_frames, dtype=np.int8)
    for seg in segments:
        labels[(centers >= seg.offset_s) & (centers < seg.end_s)] = 0
    return FrameLabels(labels, frame_shift_s)


def extract_pair_example(
    seg_i: SegmentRecord,
    seg_next: SegmentRecord,
    wave: Waveform,
    fcfg: FeatureConfig,
    index: int = 0,
) -> TrainingExample:
    if seg_i.audio_id != seg_next.audio_id:
        raise DataError(f"pair spans two recordings: {seg_i.audio_id}, {seg_next.audio_id}")
    if seg_next.offset_s < seg_i.offset_s:
        raise DataError("segments of a pair are out of order")
    start, end = seg_i.offset_s, seg_next.end_s
    if end > wave.duration_s + 0.5 / wave.sample_rate:
        raise DataError(
            f"{seg_i.audio_id}: span ends at {end:.3f}s beyond audio length "
            f"{wave.duration_s:.3f}s"
        )
    feats = compute_fbank(wave.slice_seconds(start, end), fcfg)
    feats.audio_id = seg_i.audio_id
    labels = frame_labels_for_span(
        [seg_i, seg_next], start, end, feats.frame_shift_s, feats.n_frames
    )
    return TrainingExample(feats, labels, (seg_i.audio_id, index))


def iter_pair_examples(
    segments: Sequence[SegmentRecord],
    wave: Waveform,
    fcfg: FeatureConfig,
    max_example_s: float = 60.0,
) -> Iterator[TrainingExample]:
    """Yield one example per consecutive segment pair of a single recording.

    Pairs whose combined span exceeds ``max_example_s`` are skipped.
    """
    for i, (a, b) in enumerate(zip(segments, segments[1:])):
        if b.end_s - a.offset_s > max_example_s:
            continue
        yield extract_pair_example(a, b, wave, fcfg, index=i)


def downsample_labels(labels: FrameLabels, out_len: int, factor: int) -> FrameLabels:
    """Pick every ``factor``-th label so the teacher matches the model grid."""
    if factor < 1:
        raise DataError(f"factor must be >= 1, got {factor}")
    n = len(labels)
    if n == 0 or abs(out_len - math.ceil(n / factor)) > 1:
        raise AlignmentError(
            f"cannot map {n} labels onto {out_len} outputs with factor {factor}"
        )
    idx = np.minimum(np.arange(out_len) * factor, n - 1)
    return FrameLabels(labels.labels[idx], labels.frame_shift_s * factor)


def write_labels(path, labels: FrameLabels) -> None:
    Path(path).write_text(labels.to_text())


def read_labels(path, frame_shift_s: float) -> FrameLabels:
    return FrameLabels.from_text(Path(path).read_text(), frame_shift_s)
