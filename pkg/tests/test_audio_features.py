import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segvox.audio_features import (
    FeatureConfig,
    Waveform,
    compute_fbank,
    mel_filterbank,
    mel_scale,
    read_feature_dump,
    read_wav,
    write_feature_dump,
    write_wav,
)
from segvox.errors import ConfigError, DataError, FormatError

from conftest import SR, tone


def handmade_wav(samples, rate=16000, channels=1, bits=16, fmt_tag=1, declared=None):
    """RIFF bytes assembled field by field, independent of the ``wave`` module."""
    data = struct.pack(f"<{len(samples)}h", *samples) if bits == 16 else bytes(len(samples))
    n_data = len(data) if declared is None else declared
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", n_data) + data
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_read_wav_normalizes_by_32768(tmp_path):
    path = tmp_path / "four.wav"
    path.write_bytes(handmade_wav([-32768, 32767, 0, 16384]))
    wave = read_wav(path)
    assert wave.samples.tolist() == [-1.0, 32767 / 32768, 0.0, 0.5]
    assert wave.sample_rate == 16000
    assert wave.audio_id == "four"


def test_read_wav_one_second(tmp_path):
    path = tmp_path / "zeros.wav"
    path.write_bytes(handmade_wav([0] * 16000))
    wave = read_wav(path)
    assert len(wave.samples) == 16000
    assert np.all(wave.samples == 0.0)


def test_read_wav_rejects_stereo(tmp_path):
    path = tmp_path / "stereo.wav"
    path.write_bytes(handmade_wav([0, 0, 0, 0], channels=2))
    with pytest.raises(FormatError, match="mono"):
        read_wav(path)


def test_read_wav_rejects_8bit(tmp_path):
    path = tmp_path / "u8.wav"
    path.write_bytes(handmade_wav([0] * 4, bits=8))
    with pytest.raises(FormatError, match="16-bit"):
        read_wav(path)


def test_read_wav_rejects_float_encoding(tmp_path):
    path = tmp_path / "float.wav"
    path.write_bytes(handmade_wav([0] * 4, fmt_tag=3))
    with pytest.raises(FormatError):
        read_wav(path)


def test_read_wav_truncated(tmp_path):
    path = tmp_path / "short.wav"
    path.write_bytes(handmade_wav([1, 2, 3, 4], declared=100))
    with pytest.raises(FormatError, match="truncated"):
        read_wav(path)


def test_wav_round_trip(tmp_path):
    wave = Waveform(np.array([-1.0, -0.5, 0.0, 0.25]), 8000)
    write_wav(tmp_path / "x.wav", wave)
    assert np.array_equal(read_wav(tmp_path / "x.wav").samples, wave.samples)


def test_waveform_invariants():
    with pytest.raises(DataError):
        Waveform(np.array([0.0, np.nan]), 16000)
    with pytest.raises(DataError):
        Waveform(np.zeros(4), 0)


def test_mel_scale_values():
    assert mel_scale(0.0) == 0.0
    assert mel_scale(700.0) == pytest.approx(1127 * math.log(2))
    assert abs(mel_scale(700.0) - 781.17) < 0.01


def test_filterbank_rows_positive():
    fb = mel_filterbank(FeatureConfig(), 512, SR)
    assert fb.shape == (80, 257)
    assert np.all(fb >= 0)
    assert np.all(fb.sum(axis=1) > 0)


def test_filterbank_too_many_bins():
    with pytest.raises(ConfigError, match="cover no FFT bin"):
        mel_filterbank(FeatureConfig(num_mel_bins=200), 64, SR)


def test_filterbank_requires_power_of_two():
    with pytest.raises(ConfigError):
        mel_filterbank(FeatureConfig(), 400, SR)


def test_filterbank_is_stable_across_calls():
    cfg = FeatureConfig()
    assert np.array_equal(mel_filterbank(cfg, 512, SR), mel_filterbank(cfg, 512, SR))


def test_frame_count_one_second():
    feats = compute_fbank(Waveform(tone(440, 1.0), SR), FeatureConfig())
    assert feats.data.shape == (98, 80)
    assert feats.frame_shift_s == pytest.approx(0.01)
    assert feats.frame_span(3) == pytest.approx((0.03, 0.055))


@settings(max_examples=40, deadline=None)
@given(
    n_samples=st.integers(min_value=200, max_value=12000),
    length_ms=st.sampled_from([20.0, 25.0, 32.0]),
    shift_ms=st.sampled_from([5.0, 10.0, 12.5]),
    rate=st.sampled_from([8000, 16000]),
)
def test_frame_count_formula(n_samples, length_ms, shift_ms, rate):
    cfg = FeatureConfig(frame_length_ms=length_ms, frame_shift_ms=shift_ms, num_mel_bins=23)
    frame_len = int(round(rate * length_ms / 1000))
    shift = int(round(rate * shift_ms / 1000))
    wave = Waveform(np.random.default_rng(n_samples).uniform(-0.5, 0.5, n_samples), rate)
    if n_samples < frame_len:
        with pytest.raises(DataError):
            compute_fbank(wave, cfg)
        return
    assert compute_fbank(wave, cfg).n_frames == 1 + (n_samples - frame_len) // shift


def test_silence_is_floor_exactly(silence):
    cfg = FeatureConfig()
    feats = compute_fbank(silence, cfg)
    assert np.all(feats.data == math.log(cfg.log_floor))


def test_sine_peaks_in_nearest_filter():
    cfg = FeatureConfig()
    feats = compute_fbank(Waveform(tone(1000, 1.0), SR), cfg)
    peaks = feats.data.argmax(axis=1)
    assert np.all(peaks == peaks[0])
    # filter centers recomputed from scratch: 82 mel-equidistant points, inner 80
    lo, hi = 1127 * math.log(1 + 20 / 700), 1127 * math.log(1 + 8000 / 700)
    centers = [700 * (math.exp((lo + (hi - lo) * (i + 1) / 81) / 1127) - 1) for i in range(80)]
    nearest = min(range(80), key=lambda i: abs(centers[i] - 1000))
    assert peaks[0] == nearest


def test_scaling_shifts_log_energy():
    rng = np.random.default_rng(0)
    base = Waveform(rng.uniform(-0.1, 0.1, 8000), SR)
    scaled = Waveform(base.samples * 3.0, SR)
    a = compute_fbank(base, FeatureConfig()).data
    b = compute_fbank(scaled, FeatureConfig()).data
    assert np.allclose(b - a, 2 * math.log(3.0), atol=1e-6)


def test_deterministic_without_dither():
    wave = Waveform(np.random.default_rng(1).uniform(-0.5, 0.5, 4000), SR)
    assert np.array_equal(compute_fbank(wave, FeatureConfig()).data,
                          compute_fbank(wave, FeatureConfig()).data)


def test_dither_changes_silence():
    feats = compute_fbank(Waveform(np.zeros(4000), SR), FeatureConfig(dither=True),
                          rng=np.random.default_rng(0))
    assert np.mean(feats.data > math.log(1e-10)) > 0.5


def test_short_audio_rejected():
    with pytest.raises(DataError):
        compute_fbank(Waveform(np.zeros(399), SR), FeatureConfig())


def test_config_validation():
    with pytest.raises(ConfigError):
        FeatureConfig(frame_shift_ms=30, frame_length_ms=25)
    with pytest.raises(ConfigError):
        FeatureConfig(num_mel_bins=0)
    with pytest.raises(ConfigError):
        FeatureConfig(high_freq_hz=9000).high_freq(16000)


def test_feature_dump_round_trip(tmp_path):
    feats = compute_fbank(Waveform(tone(300, 0.5), SR), FeatureConfig())
    path = tmp_path / "x.fbk"
    write_feature_dump(path, feats)
    blob = path.read_bytes()
    magic, version, n, d, shift_us = struct.unpack_from("<4sIIII", blob)
    assert (magic, version, n, d, shift_us) == (b"SVFB", 1, feats.n_frames, 80, 10000)
    back = read_feature_dump(path)
    assert np.array_equal(back.data, feats.data.astype(np.float32))
    assert back.frame_shift_s == pytest.approx(0.01)


def test_feature_dump_bad_magic(tmp_path):
    path = tmp_path / "bad.fbk"
    path.write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(FormatError, match="magic"):
        read_feature_dump(path)
