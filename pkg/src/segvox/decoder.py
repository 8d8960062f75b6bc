"""Turn frame posteriors into segments.

Labels follow the corpus convention: 0 = inside an utterance, 1 = outside.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from segvox.audio_features import FeatureConfig, Waveform, compute_fbank, num_frames
from segvox.errors import AlignmentError, ConfigError, DataError, SegvoxError
from segvox.seg_model.model import LabelProbabilities, ModelParams, forward
from segvox.segments import SegmentHypothesis
from segvox.vad import VadConfig, VadTrace, vad_decide, vad_to_model_frames

log = logging.getLogger(__name__)

MODES = ("model_only", "hybrid")


@dataclass(frozen=True)
class DecodeConfig:
    window_T_s: float = 20.0
    maxlen_s: float = 10.0
    min_segment_s: float = 0.2
    min_gap_frames: int = 1
    mode: str = "model_only"

    def __post_init__(self):
        if self.window_T_s <= 0 or self.maxlen_s <= 0:
            raise ConfigError("window_T_s and maxlen_s must be positive")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.min_segment_s < 0 or self.min_gap_frames < 0:
            raise ConfigError("min_segment_s and min_gap_frames must be >= 0")


def argmax_labels(probs: LabelProbabilities) -> np.ndarray:
    p = probs.probs
    return (p[:, 1] > p[:, 0]).astype(np.int8)


def maxlen_frames(cfg: DecodeConfig, frame_duration_s: float) -> int:
    return max(1, int(round(cfg.maxlen_s / frame_duration_s)))


def hybrid_decode(model_labels: np.ndarray, vad: np.ndarray, maxlen: int,
                  run_length: int = 0) -> tuple[np.ndarray, int]:
    """Fuse model and VAD labels left to right.

    ``run_length`` counts consecutive inside-utterance frames decided so far.
    Below ``maxlen`` a boundary frame needs both sources to agree (AND);
    from ``maxlen`` on, either source suffices (OR). Returns the labels and
    the run length after the last frame so decoding can resume.
    """
    out = np.empty(len(model_labels), dtype=np.int8)
    for n, (m, v) in enumerate(zip(model_labels, vad)):
        label = (m & v) if run_length < maxlen else (m | v)
        out[n] = label
        run_length = 0 if label else run_length + 1
    return out, run_length


def hybrid_labels(probs: LabelProbabilities, vad: Sequence[int], cfg: DecodeConfig) -> np.ndarray:
    vad = np.asarray(vad, dtype=np.int8)
    if len(vad) != len(probs):
        raise AlignmentError(f"{len(vad)} VAD decisions for {len(probs)} model frames")
    labels, _ = hybrid_decode(argmax_labels(probs), vad, maxlen_frames(cfg, probs.frame_duration_s))
    return labels


def _runs(labels: np.ndarray, value: int) -> list[list[int]]:
    runs = []
    n = len(labels)
    i = 0
    while i < n:
        if labels[i] == value:
            j = i
            while j < n and labels[j] == value:
                j += 1
            runs.append([i, j])
            i = j
        else:
            i += 1
    return runs


def _merge_short(segs: list[list[float]], min_len: float) -> list[list[float]]:
    while len(segs) > 1:
        short = [i for i, (a, b) in enumerate(segs) if b - a < min_len]
        if not short:
            break
        i = short[0]
        gap_prev = segs[i][0] - segs[i - 1][1] if i > 0 else np.inf
        gap_next = segs[i + 1][0] - segs[i][1] if i + 1 < len(segs) else np.inf
        if gap_prev <= gap_next:
            segs[i - 1][1] = segs[i][1]
        else:
            segs[i + 1][0] = segs[i][0]
        del segs[i]
    return segs


def labels_to_segments(labels: Sequence[int], frame_duration_s: float, origin_s: float,
                       cfg: DecodeConfig, limit_s: float | None = None
                       ) -> list[SegmentHypothesis]:
    """Maximal runs of 0 become segments.

    Interior pauses shorter than ``cfg.min_gap_frames`` are bridged, then
    segments shorter than ``cfg.min_segment_s`` merge into the neighbour
    across the smaller gap (the previous one on ties). ``limit_s`` clips
    segment ends, e.g. to the audio duration.
    """
    labels = np.asarray(labels, dtype=np.int8)
    k = np.arange(len(labels))
    return _timed_segments(labels, origin_s + k * frame_duration_s,
                           origin_s + (k + 1) * frame_duration_s, cfg, limit_s)


def _timed_segments(labels, starts, ends, cfg: DecodeConfig, limit_s=None):
    # frames carry explicit times because windows need not tile one grid
    bridged: list[list[int]] = []
    for run in _runs(labels, 0):
        if bridged and run[0] - bridged[-1][1] < cfg.min_gap_frames:
            bridged[-1][1] = run[1]
        else:
            bridged.append(run)
    segs = [[float(starts[a]), float(ends[b - 1])] for a, b in bridged]
    segs = _merge_short(segs, cfg.min_segment_s)
    out = []
    for a, b in segs:
        if limit_s is not None:
            b = min(b, limit_s)
        if b > a:
            out.append(SegmentHypothesis(a, b))
    return out


def window_bounds(n_samples: int, sample_rate: int, window_s: float, min_samples: int
                  ) -> list[tuple[int, int]]:
    """Consecutive [start, end) sample ranges of ``window_s`` seconds.

    A trailing window with fewer than ``min_samples`` samples is folded into
    the one before it.
    """
    size = int(round(window_s * sample_rate))
    bounds = [(s, min(s + size, n_samples)) for s in range(0, n_samples, size)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < min_samples:
        last = bounds.pop()
        bounds[-1] = (bounds[-1][0], last[1])
    return bounds


def window_probabilities(wave: Waveform, params: ModelParams, cfg: DecodeConfig,
                         fcfg: FeatureConfig) -> list[tuple[float, LabelProbabilities]]:
    """Run the model independently on each fixed-length window.

    Returns (window start in seconds, posteriors) per window.
    """
    sr = wave.sample_rate
    frame_len = fcfg.frame_length_samples(sr)
    shift = fcfg.frame_shift_samples(sr)
    if num_frames(len(wave.samples), frame_len, shift) < 1:
        raise DataError("audio shorter than one feature frame")
    min_samples = frame_len + 3 * shift  # four feature frames
    out = []
    for w, (lo, hi) in enumerate(window_bounds(len(wave.samples), sr, cfg.window_T_s, min_samples)):
        try:
            chunk = Waveform(wave.samples[lo:hi], sr, wave.audio_id)
            feats = compute_fbank(chunk, fcfg)
            out.append((lo / sr, forward(params, feats)))
        except SegvoxError as exc:
            raise type(exc)(f"window {w}: {exc}") from exc
    return out


def segment_stream(wave: Waveform, params: ModelParams, vad_cfg: VadConfig | None,
                   cfg: DecodeConfig, fcfg: FeatureConfig,
                   vad_trace: VadTrace | None = None) -> list[SegmentHypothesis]:
    """Window the audio, label every window, and cut the stream into segments.

    In hybrid mode the VAD comes from ``vad_trace`` when given, otherwise it
    is computed with ``vad_cfg``; the inside-run length carries across
    window boundaries.
    """
    windows = window_probabilities(wave, params, cfg, fcfg)
    trace = None
    if cfg.mode == "hybrid":
        if vad_trace is not None:
            trace = vad_trace
        else:
            trace = vad_decide(wave, vad_cfg if vad_cfg is not None else VadConfig())

    labels, starts, ends = [], [], []
    run_length = 0
    fd = windows[0][1].frame_duration_s
    for origin, probs in windows:
        lab = argmax_labels(probs)
        if trace is not None:
            vad = vad_to_model_frames(trace, len(probs), probs.frame_duration_s, origin)
            lab, run_length = hybrid_decode(lab, vad, maxlen_frames(cfg, fd), run_length)
        k = np.arange(len(lab))
        labels.append(lab)
        starts.append(origin + k * probs.frame_duration_s)
        ends.append(origin + (k + 1) * probs.frame_duration_s)
    return _timed_segments(np.concatenate(labels), np.concatenate(starts),
                           np.concatenate(ends), cfg, wave.duration_s)


def fixed_length_segment(duration_s: float, L_s: float) -> list[SegmentHypothesis]:
    if duration_s <= 0:
        raise DataError(f"duration must be positive, got {duration_s}")
    if L_s <= 0:
        raise ConfigError(f"segment length must be positive, got {L_s}")
    out = []
    k = 0
    while k * L_s < duration_s:
        out.append(SegmentHypothesis(k * L_s, min((k + 1) * L_s, duration_s)))
        k += 1
    return out
