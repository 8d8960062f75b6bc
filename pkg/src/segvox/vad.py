"""Energy-based voice activity detection.

Per-frame log energies are split into two clusters by 1-D k-means and a
threshold is placed between the cluster centers; the higher the
aggressiveness, the closer the threshold sits to the loud cluster. The
binary decision is median-smoothed and active runs are extended by a
hangover. Decisions use 0 = active speech, 1 = inactive, the same polarity
as the segmentation labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from segvox.audio_features import Waveform
from segvox.errors import ConfigError, DataError, FormatError
from segvox.segments import SegmentHypothesis

ENERGY_EPS = 1e-10
# minimum separation between the cluster centers, in nats
MIN_CLUSTER_GAP = 1.0
THRESHOLD_POSITION = {1: 0.3, 2: 0.5, 3: 0.7}


@dataclass(frozen=True)
class VadConfig:
    frame_ms: int = 10
    aggressiveness: int = 2
    hangover_ms: int = 200
    smoothing_frames: int = 5

    def __post_init__(self):
        if self.frame_ms not in (10, 20, 30):
            raise ConfigError(f"frame_ms must be 10, 20 or 30, got {self.frame_ms}")
        if self.aggressiveness not in THRESHOLD_POSITION:
            raise ConfigError(f"aggressiveness must be 1, 2 or 3, got {self.aggressiveness}")
        if self.smoothing_frames < 1 or self.smoothing_frames % 2 == 0:
            raise ConfigError("smoothing_frames must be a positive odd number")
        if self.hangover_ms < 0:
            raise ConfigError("hangover_ms must be >= 0")


@dataclass
class VadTrace:
    decisions: np.ndarray
    frame_ms: int

    def __post_init__(self):
        self.decisions = np.asarray(self.decisions, dtype=np.int8)
        if self.decisions.size and not np.isin(self.decisions, (0, 1)).all():
            raise DataError("VAD decisions must be 0 or 1")

    def __len__(self) -> int:
        return len(self.decisions)

    @property
    def frame_s(self) -> float:
        return self.frame_ms / 1000.0

    def inverted(self) -> "VadTrace":
        return VadTrace(1 - self.decisions, self.frame_ms)


def frame_log_energy(wave: Waveform, frame_ms: int) -> np.ndarray:
    frame_len = wave.sample_rate * frame_ms // 1000
    n = len(wave.samples) // frame_len
    if n == 0:
        raise DataError(f"audio shorter than one {frame_ms} ms VAD frame")
    frames = wave.samples[: n * frame_len].reshape(n, frame_len)
    return np.log((frames * frames).sum(axis=1) + ENERGY_EPS)


def two_means(values: np.ndarray, max_iter: int = 100) -> tuple[float, float]:
    """Low and high centers of a 1-D two-cluster k-means, seeded at min/max."""
    lo, hi = float(values.min()), float(values.max())
    for _ in range(max_iter):
        if hi - lo <= 0:
            break
        upper = values >= (lo + hi) / 2
        new_lo = float(values[~upper].mean()) if (~upper).any() else lo
        new_hi = float(values[upper].mean()) if upper.any() else hi
        if new_lo == lo and new_hi == hi:
            break
        lo, hi = new_lo, new_hi
    return lo, hi


def median_smooth(active: np.ndarray, width: int) -> np.ndarray:
    if width <= 1 or active.size == 0:
        return active
    half = width // 2
    padded = np.pad(active.astype(np.int8), half, mode="edge")
    return sliding_window_view(padded, width).sum(axis=1) > half


def apply_hangover(active: np.ndarray, frames: int) -> np.ndarray:
    """Keep each active run going for ``frames`` extra frames after it ends."""
    out = active.copy()
    if frames <= 0:
        return out
    last_active = -np.inf
    for i in range(len(active)):
        if active[i]:
            last_active = i
        elif i - last_active <= frames:
            out[i] = True
    return out


def vad_decide(wave: Waveform, config: VadConfig) -> VadTrace:
    energy = frame_log_energy(wave, config.frame_ms)
    c_low, c_high = two_means(energy)
    if c_high - c_low < MIN_CLUSTER_GAP:
        return VadTrace(np.ones(len(energy), dtype=np.int8), config.frame_ms)
    alpha = THRESHOLD_POSITION[config.aggressiveness]
    threshold = (1 - alpha) * c_low + alpha * c_high
    active = energy >= threshold
    active = median_smooth(active, config.smoothing_frames)
    active = apply_hangover(active, config.hangover_ms // config.frame_ms)
    return VadTrace(np.where(active, 0, 1), config.frame_ms)


def vad_to_model_frames(trace: VadTrace, n_out: int, model_frame_s: float,
                        origin_s: float = 0.0) -> np.ndarray:
    """Majority vote of the VAD frames overlapping each model frame.

    Model frame k spans [origin + k*d, origin + (k+1)*d). Ties go to 0
    (active). Model frames past the end of the trace reuse its last frame.
    """
    if len(trace) == 0:
        raise DataError("empty VAD trace")
    # integer microseconds keep overlap tests exact
    vad_us = trace.frame_ms * 1000
    model_us = int(round(model_frame_s * 1e6))
    origin_us = int(round(origin_s * 1e6))
    ones = np.concatenate([[0], np.cumsum(trace.decisions, dtype=np.int64)])
    out = np.empty(n_out, dtype=np.int8)
    last = len(trace) - 1
    for k in range(n_out):
        lo_us = origin_us + k * model_us
        hi_us = lo_us + model_us
        first = min(lo_us // vad_us, last)
        stop = min(max(-(-hi_us // vad_us), first + 1), last + 1)
        n1 = ones[stop] - ones[first]
        n0 = (stop - first) - n1
        out[k] = 1 if n1 > n0 else 0
    return out


def trace_to_segments(trace: VadTrace, min_gap_ms: float, duration_s: float | None = None
                      ) -> list[SegmentHypothesis]:
    active = trace.decisions == 0
    frame_s = trace.frame_s
    runs = []
    i, n = 0, len(active)
    while i < n:
        if active[i]:
            j = i
            while j < n and active[j]:
                j += 1
            runs.append([i, j])
            i = j
        else:
            i += 1
    min_gap = min_gap_ms / trace.frame_ms
    merged: list[list[int]] = []
    for run in runs:
        if merged and run[0] - merged[-1][1] < min_gap:
            merged[-1][1] = run[1]
        else:
            merged.append(run)
    limit = duration_s if duration_s is not None else n * frame_s
    return [SegmentHypothesis(a * frame_s, min(b * frame_s, limit)) for a, b in merged]


def vad_segment(wave: Waveform, config: VadConfig, min_gap_ms: float = 0.0
                ) -> list[SegmentHypothesis]:
    """Pause-based segmentation: every maximal active run is a segment."""
    return trace_to_segments(vad_decide(wave, config), min_gap_ms, wave.duration_s)


def write_trace(path, trace: VadTrace) -> None:
    body = "".join("01"[v] for v in trace.decisions)
    Path(path).write_text(f"frame_ms={trace.frame_ms}\n{body}\n")


def read_trace(path) -> VadTrace:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("frame_ms="):
        raise FormatError(f"{path}: missing 'frame_ms=<int>' header")
    try:
        frame_ms = int(lines[0].split("=", 1)[1])
    except ValueError as exc:
        raise FormatError(f"{path}: bad header {lines[0]!r}") from exc
    body = "".join(line.strip() for line in lines[1:])
    if set(body) - {"0", "1"}:
        raise FormatError(f"{path}: trace may only contain '0' and '1'")
    return VadTrace(np.frombuffer(body.encode(), dtype=np.uint8) - ord("0"), frame_ms)
