"""WAV reading and log-Mel filterbank (FBANK) features."""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from segvox.errors import ConfigError, DataError, FormatError

PCM16_SCALE = 32768.0
PREEMPHASIS = 0.97

FBANK_MAGIC = b"SVFB"
FBANK_VERSION = 1
_FBANK_HEADER = struct.Struct("<4sIIII")


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int
    audio_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError("waveform must be mono (1-D samples)")
        if self.sample_rate <= 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("waveform contains non-finite samples")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def slice_seconds(self, start_s: float, end_s: float) -> "Waveform":
        lo = int(round(start_s * self.sample_rate))
        hi = int(round(end_s * self.sample_rate))
        return Waveform(self.samples[lo:hi], self.sample_rate, self.audio_id)


@dataclass(frozen=True)
class FeatureConfig:
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    num_mel_bins: int = 80
    low_freq_hz: float = 20.0
    # None means Nyquist of the audio being processed
    high_freq_hz: float | None = None
    dither: bool = False
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.frame_shift_ms <= 0 or self.frame_shift_ms > self.frame_length_ms:
            raise ConfigError("need 0 < frame_shift_ms <= frame_length_ms")
        if self.num_mel_bins < 1:
            raise ConfigError("num_mel_bins must be >= 1")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")
        if self.high_freq_hz is not None and self.low_freq_hz >= self.high_freq_hz:
            raise ConfigError("low_freq_hz must be below high_freq_hz")

    def frame_length_samples(self, sample_rate: int) -> int:
        return int(round(sample_rate * self.frame_length_ms / 1000.0))

    def frame_shift_samples(self, sample_rate: int) -> int:
        return int(round(sample_rate * self.frame_shift_ms / 1000.0))

    def high_freq(self, sample_rate: int) -> float:
        nyquist = sample_rate / 2.0
        hi = nyquist if self.high_freq_hz is None else self.high_freq_hz
        if hi > nyquist or self.low_freq_hz >= hi:
            raise ConfigError(f"need low_freq_hz < high_freq_hz <= {nyquist} Hz")
        return hi


@dataclass
class FeatureMatrix:
    data: np.ndarray
    frame_shift_s: float
    frame_length_s: float
    audio_id: str = ""

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def frame_span(self, k: int) -> tuple[float, float]:
        start = k * self.frame_shift_s
        return start, start + self.frame_length_s


def read_wav(path) -> Waveform:
    """Read a mono 16-bit PCM WAV file, scaling samples into [-1, 1)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getcomptype() != "NONE":
                raise FormatError(f"{path}: compressed WAV ({wf.getcomptype()}) not supported")
            if wf.getsampwidth() != 2:
                raise FormatError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
            if wf.getnchannels() != 1:
                raise FormatError(f"{path}: expected mono, got {wf.getnchannels()} channels")
            n_declared = wf.getnframes()
            rate = wf.getframerate()
            raw = wf.readframes(n_declared)
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if len(raw) != 2 * n_declared:
        raise FormatError(
            f"{path}: truncated data, header declares {n_declared} frames, "
            f"found {len(raw) // 2}"
        )
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / PCM16_SCALE, rate, audio_id=path.stem)


def write_wav(path, wave_: Waveform) -> None:
    pcm = np.clip(np.round(wave_.samples * PCM16_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(wave_.sample_rate)
        wf.writeframes(pcm.tobytes())


def mel_scale(freq_hz):
    return 1127.0 * np.log1p(np.asarray(freq_hz, dtype=np.float64) / 700.0)


def inverse_mel_scale(mel):
    return 700.0 * np.expm1(np.asarray(mel, dtype=np.float64) / 1127.0)


def mel_center_frequencies(config: FeatureConfig, sample_rate: int) -> np.ndarray:
    lo = mel_scale(config.low_freq_hz)
    hi = mel_scale(config.high_freq(sample_rate))
    points = np.linspace(lo, hi, config.num_mel_bins + 2)
    return inverse_mel_scale(points[1:-1])


def mel_filterbank(config: FeatureConfig, fft_size: int, sample_rate: int) -> np.ndarray:
    """Triangular filters, equally spaced on the mel scale.

    Each triangle rises linearly in the mel domain from its left neighbour's
    center to its own center and falls to its right neighbour's center.
    Returns an array of shape (num_mel_bins, fft_size // 2 + 1).
    """
    if fft_size < 2 or fft_size & (fft_size - 1):
        raise ConfigError(f"fft_size must be a power of two, got {fft_size}")
    lo = mel_scale(config.low_freq_hz)
    hi = mel_scale(config.high_freq(sample_rate))
    edges = np.linspace(lo, hi, config.num_mel_bins + 2)
    bin_mel = mel_scale(np.arange(fft_size // 2 + 1) * sample_rate / fft_size)

    left = edges[:-2, None]
    center = edges[1:-1, None]
    right = edges[2:, None]
    rising = (bin_mel - left) / (center - left)
    falling = (right - bin_mel) / (right - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))

    empty = np.flatnonzero(weights.sum(axis=1) <= 0)
    if empty.size:
        raise ConfigError(
            f"{config.num_mel_bins} mel bins too many for fft_size={fft_size}: "
            f"filters {empty.tolist()} cover no FFT bin"
        )
    return weights


def num_frames(num_samples: int, frame_len: int, frame_shift: int) -> int:
    if num_samples < frame_len:
        return 0
    return 1 + (num_samples - frame_len) // frame_shift


def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def compute_fbank(
    wave_: Waveform, config: FeatureConfig, rng: np.random.Generator | None = None
) -> FeatureMatrix:
    sr = wave_.sample_rate
    frame_len = config.frame_length_samples(sr)
    shift = config.frame_shift_samples(sr)
    n = num_frames(len(wave_.samples), frame_len, shift)
    if n == 0:
        raise DataError(
            f"audio of {len(wave_.samples)} samples is shorter than one "
            f"{frame_len}-sample frame"
        )

    samples = wave_.samples
    if config.dither:
        rng = rng if rng is not None else np.random.default_rng(0)
        samples = samples + rng.standard_normal(len(samples)) / PCM16_SCALE

    idx = np.arange(frame_len)[None, :] + shift * np.arange(n)[:, None]
    frames = samples[idx]
    emphasized = np.empty_like(frames)
    emphasized[:, 1:] = frames[:, 1:] - PREEMPHASIS * frames[:, :-1]
    emphasized[:, 0] = frames[:, 0] * (1.0 - PREEMPHASIS)
    windowed = emphasized * np.hamming(frame_len)

    fft_size = _next_pow2(frame_len)
    power = np.abs(np.fft.rfft(windowed, n=fft_size, axis=1)) ** 2
    mel_energy = power @ mel_filterbank(config, fft_size, sr).T
    data = np.log(np.maximum(mel_energy, config.log_floor))
    return FeatureMatrix(
        data=data,
        frame_shift_s=shift / sr,
        frame_length_s=frame_len / sr,
        audio_id=wave_.audio_id,
    )


def write_feature_dump(path, feats: FeatureMatrix) -> None:
    n, d = feats.data.shape
    shift_us = int(round(feats.frame_shift_s * 1e6))
    with open(path, "wb") as fh:
        fh.write(_FBANK_HEADER.pack(FBANK_MAGIC, FBANK_VERSION, n, d, shift_us))
        fh.write(np.ascontiguousarray(feats.data, dtype="<f4").tobytes())


def read_feature_dump(path, frame_length_s: float = 0.025) -> FeatureMatrix:
    """Inverse of :func:`write_feature_dump` (frame length is not stored)."""
    blob = Path(path).read_bytes()
    if len(blob) < _FBANK_HEADER.size:
        raise FormatError(f"{path}: too short for a feature header")
    magic, version, n, d, shift_us = _FBANK_HEADER.unpack_from(blob)
    if magic != FBANK_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FBANK_VERSION:
        raise FormatError(f"{path}: unsupported feature dump version {version}")
    body = blob[_FBANK_HEADER.size:]
    if len(body) != 4 * n * d:
        raise FormatError(f"{path}: expected {n}x{d} floats, got {len(body) // 4}")
    data = np.frombuffer(body, dtype="<f4").reshape(n, d).astype(np.float32)
    return FeatureMatrix(data, shift_us / 1e6, frame_length_s, audio_id=Path(path).stem)
