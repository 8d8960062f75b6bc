"""Synthetic tone/silence streams with ground-truth segment manifests.

Each "utterance" is a harmonic tone with a slowly varying pitch and short
fades; utterances are separated by near-silent pauses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from segvox.audio_features import Waveform
from segvox.corpus import SegmentRecord


@dataclass(frozen=True)
class SynthConfig:
    sample_rate: int = 16000
    n_utterances: int = 8
    utt_range_s: tuple[float, float] = (0.5, 3.0)
    gap_range_s: tuple[float, float] = (0.3, 1.5)
    edge_silence_s: tuple[float, float] = (0.3, 1.0)
    amplitude_range: tuple[float, float] = (0.1, 0.5)
    noise_level: float = 1e-3
    fade_s: float = 0.01


def _tone(rng: np.random.Generator, n: int, sr: int, cfg: SynthConfig) -> np.ndarray:
    t = np.arange(n) / sr
    f0 = rng.uniform(100.0, 300.0)
    vibrato = 1.0 + 0.05 * np.sin(2 * np.pi * rng.uniform(2.0, 6.0) * t)
    phase = 2 * np.pi * np.cumsum(f0 * vibrato) / sr
    harmonics = sum(np.sin(k * phase) / k for k in range(1, 5))
    env = np.ones(n)
    fade = min(int(cfg.fade_s * sr), n // 2)
    if fade:
        ramp = np.linspace(0.0, 1.0, fade)
        env[:fade] = ramp
        env[-fade:] = ramp[::-1]
    amp = rng.uniform(*cfg.amplitude_range)
    return amp * env * harmonics / np.max(np.abs(harmonics))


def synth_stream(seed: int, audio_id: str = "synth", cfg: SynthConfig = SynthConfig()
                 ) -> tuple[Waveform, list[SegmentRecord]]:
    """One recording plus the manifest records of its utterances.

    Segment times are exact multiples of 1 ms.
    """
    rng = np.random.default_rng(seed)
    sr = cfg.sample_rate

    def ms(lo_hi):
        return int(round(rng.uniform(*lo_hi) * 1000))

    pieces, records = [], []
    cursor_ms = ms(cfg.edge_silence_s)
    pieces.append(np.zeros(cursor_ms * sr // 1000))
    for u in range(cfg.n_utterances):
        dur_ms = ms(cfg.utt_range_s)
        pieces.append(_tone(rng, dur_ms * sr // 1000, sr, cfg))
        records.append(SegmentRecord(audio_id, cursor_ms / 1000, dur_ms / 1000,
                                     transcript=f"utt{u}"))
        cursor_ms += dur_ms
        gap_ms = ms(cfg.gap_range_s if u < cfg.n_utterances - 1 else cfg.edge_silence_s)
        pieces.append(np.zeros(gap_ms * sr // 1000))
        cursor_ms += gap_ms
    samples = np.concatenate(pieces)
    samples = samples + cfg.noise_level * rng.standard_normal(len(samples))
    return Waveform(np.clip(samples, -1.0, 32767 / 32768), sr, audio_id), records
