"""Predicted segment type and its on-disk formats (JSON Lines / TSV)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from segvox.errors import DataError, FormatError


@dataclass(frozen=True)
class SegmentHypothesis:
    start_s: float
    end_s: float

    def __post_init__(self):
        if not 0 <= self.start_s < self.end_s:
            raise DataError(f"invalid segment [{self.start_s}, {self.end_s})")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def format_jsonl(audio_id: str, segments: Iterable[SegmentHypothesis]) -> str:
    # 3-decimal fixed point; json.dumps would print floats in repr form
    return "".join(
        f'{{"audio": {json.dumps(audio_id)}, "start": {s.start_s:.3f}, "end": {s.end_s:.3f}}}\n'
        for s in segments
    )


def format_tsv(audio_id: str, segments: Iterable[SegmentHypothesis]) -> str:
    return "".join(f"{audio_id}\t{s.start_s:.3f}\t{s.end_s:.3f}\n" for s in segments)


def read_segments(path) -> dict[str, list[SegmentHypothesis]]:
    """Read segments in JSONL or TSV form, grouped by audio id in file order."""
    out: dict[str, list[SegmentHypothesis]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            if line.lstrip().startswith("{"):
                rec = json.loads(line)
                audio, start, end = rec["audio"], float(rec["start"]), float(rec["end"])
            else:
                audio, start, end = line.split("\t")
                start, end = float(start), float(end)
        except (ValueError, KeyError) as exc:
            raise FormatError(f"{path}:{lineno}: malformed segment line ({exc})") from exc
        out.setdefault(audio, []).append(SegmentHypothesis(start, end))
    return out
