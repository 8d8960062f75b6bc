import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segvox.audio_features import FeatureConfig, Waveform, compute_fbank
from segvox.decoder import (
    DecodeConfig,
    argmax_labels,
    fixed_length_segment,
    hybrid_decode,
    hybrid_labels,
    labels_to_segments,
    maxlen_frames,
    segment_stream,
    window_bounds,
)
from segvox.errors import AlignmentError, ConfigError, DataError
from segvox.seg_model import ModelConfig, forward, init_params
from segvox.seg_model.model import LabelProbabilities

from conftest import SR, tone
from oracles import hybrid_oracle

RAW = DecodeConfig(min_segment_s=0.0, min_gap_frames=0)


def probs_from_labels(labels, fd=0.04):
    labels = np.asarray(labels)
    p1 = np.where(labels == 1, 0.8, 0.2)
    return LabelProbabilities(np.stack([1 - p1, p1], axis=1), fd)


def spans(segs):
    return [(round(s.start_s, 6), round(s.end_s, 6)) for s in segs]


def test_argmax_examples():
    p = LabelProbabilities(np.array([[0.9, 0.1], [0.2, 0.8], [0.5, 0.5]]), 0.04)
    assert argmax_labels(p).tolist() == [0, 1, 0]


def test_hybrid_and_below_maxlen():
    labels, _ = hybrid_decode(np.array([1]), np.array([0]), maxlen=5, run_length=0)
    assert labels.tolist() == [0]


def test_hybrid_or_at_maxlen():
    labels, _ = hybrid_decode(np.array([1]), np.array([0]), maxlen=5, run_length=5)
    assert labels.tolist() == [1]


def test_hybrid_walkthrough():
    labels, run = hybrid_decode(np.ones(5, dtype=np.int8), np.zeros(5, dtype=np.int8), maxlen=2)
    assert labels.tolist() == [0, 0, 1, 0, 0]
    assert run == 2


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60),
       st.integers(1, 8))
def test_hybrid_matches_oracle(pairs, maxlen):
    model = np.array([m for m, _ in pairs], dtype=np.int8)
    vad = np.array([v for _, v in pairs], dtype=np.int8)
    labels, _ = hybrid_decode(model, vad, maxlen)
    assert labels.tolist() == hybrid_oracle(model, vad, maxlen)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=2, max_size=40),
       st.integers(1, 6), st.integers(1, 39))
def test_hybrid_resumes_across_chunks(pairs, maxlen, cut):
    model = np.array([m for m, _ in pairs], dtype=np.int8)
    vad = np.array([v for _, v in pairs], dtype=np.int8)
    cut = min(cut, len(pairs) - 1)
    whole, _ = hybrid_decode(model, vad, maxlen)
    first, run = hybrid_decode(model[:cut], vad[:cut], maxlen)
    second, _ = hybrid_decode(model[cut:], vad[cut:], maxlen, run)
    assert np.concatenate([first, second]).tolist() == whole.tolist()


@settings(max_examples=50)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=40), st.integers(1, 10))
def test_hybrid_with_vad_equal_to_model_is_argmax(labels, maxlen):
    probs = probs_from_labels(labels)
    cfg = DecodeConfig(maxlen_s=maxlen * 0.04)
    assert hybrid_labels(probs, labels, cfg).tolist() == labels


def test_hybrid_always_active_vad_below_maxlen_is_all_inside():
    probs = probs_from_labels([1, 0, 1, 1, 0])
    assert hybrid_labels(probs, [0] * 5, DecodeConfig(maxlen_s=10.0)).tolist() == [0] * 5


def test_hybrid_length_mismatch():
    with pytest.raises(AlignmentError):
        hybrid_labels(probs_from_labels([0, 1]), [0], DecodeConfig())


def test_maxlen_frames():
    assert maxlen_frames(DecodeConfig(maxlen_s=10.0), 0.04) == 250
    assert maxlen_frames(DecodeConfig(maxlen_s=0.01), 0.04) == 1


def test_labels_to_segments_example():
    assert spans(labels_to_segments([0, 0, 1, 1, 0], 0.04, 0.0, RAW)) == [(0.0, 0.08), (0.16, 0.2)]


def test_labels_to_segments_all_inside_and_all_outside():
    assert spans(labels_to_segments([0] * 10, 0.04, 1.0, RAW)) == [(1.0, 1.4)]
    assert labels_to_segments([1] * 10, 0.04, 0.0, RAW) == []


def test_short_gap_bridged():
    cfg = DecodeConfig(min_segment_s=0.0, min_gap_frames=2)
    assert spans(labels_to_segments([0, 0, 1, 0, 0, 1, 1, 0], 0.1, 0.0, cfg)) == [(0.0, 0.5), (0.7, 0.8)]


def test_short_segment_merges_into_nearer_neighbour():
    cfg = DecodeConfig(min_segment_s=0.25, min_gap_frames=0)
    labels = [0, 0, 0, 1, 0, 1, 1, 1, 0, 0, 0]
    assert spans(labels_to_segments(labels, 0.1, 0.0, cfg)) == [(0.0, 0.5), (0.8, 1.1)]


def test_short_segment_tie_goes_to_previous():
    cfg = DecodeConfig(min_segment_s=0.25, min_gap_frames=0)
    labels = [0, 0, 0, 1, 0, 1, 0, 0, 0]
    assert spans(labels_to_segments(labels, 0.1, 0.0, cfg)) == [(0.0, 0.5), (0.6, 0.9)]


@settings(max_examples=100)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=80))
def test_segments_are_the_inside_runs(labels):
    fd = 0.04
    segs = labels_to_segments(labels, fd, 0.0, RAW)
    for a, b in zip(segs, segs[1:]):
        assert a.end_s < b.start_s
    covered = np.ones(len(labels), dtype=int)
    for s in segs:
        lo, hi = int(round(s.start_s / fd)), int(round(s.end_s / fd))
        assert 0 <= lo < hi <= len(labels)
        covered[lo:hi] = 0
    assert covered.tolist() == labels


def test_decode_config_validation():
    with pytest.raises(ConfigError):
        DecodeConfig(mode="vad")
    with pytest.raises(ConfigError):
        DecodeConfig(window_T_s=0)


def test_window_bounds_65_seconds():
    bounds = window_bounds(65 * SR, SR, 20.0, 880)
    assert [(a / SR, b / SR) for a, b in bounds] == [(0, 20), (20, 40), (40, 60), (60, 65)]


def test_window_bounds_folds_tiny_tail():
    bounds = window_bounds(20 * SR + 100, SR, 20.0, 880)
    assert bounds == [(0, 20 * SR + 100)]


def test_fixed_length_segments():
    assert spans(fixed_length_segment(65, 20)) == [(0, 20), (20, 40), (40, 60), (60, 65)]
    assert spans(fixed_length_segment(20, 20)) == [(0, 20)]
    assert spans(fixed_length_segment(0.5, 20)) == [(0, 0.5)]
    with pytest.raises(DataError):
        fixed_length_segment(0, 20)


def test_stream_with_one_window_equals_direct_decoding():
    fcfg = FeatureConfig()
    params = init_params(ModelConfig.desk(), seed=0)
    wave = Waveform(np.concatenate([tone(220, 0.7), np.zeros(SR // 2), tone(330, 0.9)]), SR)
    cfg = DecodeConfig(window_T_s=30.0)
    probs = forward(params, compute_fbank(wave, fcfg))
    direct = labels_to_segments(argmax_labels(probs), probs.frame_duration_s, 0.0, cfg,
                                limit_s=wave.duration_s)
    assert segment_stream(wave, params, None, cfg, fcfg) == direct


def test_stream_segments_lie_within_audio():
    fcfg = FeatureConfig()
    params = init_params(ModelConfig.desk(), seed=1)
    wave = Waveform(np.random.default_rng(0).uniform(-0.3, 0.3, int(2.5 * SR)), SR)
    for mode in ("model_only", "hybrid"):
        segs = segment_stream(wave, params, None, DecodeConfig(window_T_s=1.0, mode=mode), fcfg)
        assert all(0 <= s.start_s < s.end_s <= wave.duration_s for s in segs)
