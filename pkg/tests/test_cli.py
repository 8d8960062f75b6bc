import json

import numpy as np
import pytest

from segvox.audio_features import Waveform, write_wav
from segvox.cli import load_examples, main
from segvox.seg_model import ModelConfig, init_params, save_checkpoint
from segvox.segments import read_segments
from segvox.vad import VadTrace, write_trace

from conftest import SR, tone


def manifest(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


@pytest.fixture
def corpus(tmp_path):
    """Two audios: 'a' with three segments, 'b' with one."""
    audio = tmp_path / "audio"
    audio.mkdir()
    sig = np.concatenate([tone(200, 1.0), np.zeros(SR // 2), tone(300, 1.0),
                          np.zeros(SR // 2), tone(250, 1.0)])
    write_wav(audio / "a.wav", Waveform(sig, SR))
    write_wav(audio / "b.wav", Waveform(tone(200, 1.0), SR))
    rows = [{"audio": "a", "offset": 0.0, "duration": 1.0},
            {"audio": "a", "offset": 1.5, "duration": 1.0},
            {"audio": "a", "offset": 3.0, "duration": 1.0},
            {"audio": "b", "offset": 0.0, "duration": 1.0}]
    return audio, manifest(tmp_path / "m.jsonl", rows)


def test_extract_counts_pairs(corpus, tmp_path, capsys):
    audio, man = corpus
    out = tmp_path / "ex"
    assert main(["extract", "--manifest", str(man), "--audio-dir", str(audio),
                 "--out", str(out)]) == 0
    stats = json.loads((out / "stats.json").read_text())
    assert stats["examples"] == 2
    assert "examples=2" in capsys.readouterr().out
    examples = load_examples(out)
    assert [ex.source for ex in examples] == [("a", 0), ("a", 1)]
    assert all(len(ex.labels) == ex.features.n_frames for ex in examples)


def test_extract_reports_missing_audio(corpus, tmp_path, capsys):
    audio, _ = corpus
    man = manifest(tmp_path / "m2.jsonl", [
        {"audio": "a", "offset": 0.0, "duration": 1.0},
        {"audio": "a", "offset": 1.5, "duration": 1.0},
        {"audio": "ghost", "offset": 0.0, "duration": 1.0},
        {"audio": "ghost", "offset": 2.0, "duration": 1.0}])
    assert main(["extract", "--manifest", str(man), "--audio-dir", str(audio),
                 "--out", str(tmp_path / "ex")]) == 0
    assert "ghost" in capsys.readouterr().err
    assert json.loads((tmp_path / "ex" / "stats.json").read_text())["failed_audios"] == 1


def test_extract_all_missing_is_data_error(tmp_path):
    man = manifest(tmp_path / "m.jsonl", [{"audio": "ghost", "offset": 0.0, "duration": 1.0}])
    assert main(["extract", "--manifest", str(man), "--audio-dir", str(tmp_path),
                 "--out", str(tmp_path / "ex")]) == 2


@pytest.mark.parametrize("command,flag", [
    ("extract", "--manifest"), ("train", "--examples"), ("segment", "--mode"),
    ("evaluate", "--tolerance"), ("vad", "--aggressiveness"), ("synth", "--n-utterances")])
def test_help_lists_flags(command, flag, capsys):
    with pytest.raises(SystemExit) as exc:
        main([command, "--help"])
    assert exc.value.code == 0
    assert flag in capsys.readouterr().out


def test_unknown_flag_fails_without_output(tmp_path):
    out = tmp_path / "segs.jsonl"
    with pytest.raises(SystemExit) as exc:
        main(["segment", "x.wav", "--mode", "fixed:20", "--out", str(out), "--bogus"])
    assert exc.value.code != 0
    assert not out.exists()


def test_model_mode_needs_checkpoint(corpus, tmp_path):
    audio, _ = corpus
    assert main(["segment", str(audio / "a.wav"), "--mode", "model"]) == 1


def test_bad_mode_is_usage_error(corpus):
    audio, _ = corpus
    assert main(["segment", str(audio / "a.wav"), "--mode", "fixed:-3"]) == 1
    assert main(["segment", str(audio / "a.wav"), "--mode", "magic"]) == 1


def test_segment_vad_mode(corpus, tmp_path):
    audio, _ = corpus
    out = tmp_path / "s.jsonl"
    assert main(["segment", str(audio / "a.wav"), "--mode", "vad", "--out", str(out)]) == 0
    assert len(read_segments(out)["a"]) == 3


def test_vad_command_writes_trace(corpus, tmp_path):
    audio, _ = corpus
    traces = tmp_path / "traces"
    out = tmp_path / "v.tsv"
    assert main(["vad", str(audio / "a.wav"), "--trace-dir", str(traces), "--format", "tsv",
                 "--out", str(out)]) == 0
    assert (traces / "a.vad").read_text().startswith("frame_ms=10\n")
    assert out.read_text().count("\n") == 3


def test_vad_trace_changes_hybrid_output(corpus, tmp_path):
    audio, _ = corpus
    ckpt = tmp_path / "m.ckpt"
    save_checkpoint(init_params(ModelConfig.desk(), seed=0), ckpt)
    outputs = []
    for value in (0, 1):
        trace = tmp_path / f"t{value}.vad"
        write_trace(trace, VadTrace(np.full(400, value), 10))
        out = tmp_path / f"h{value}.jsonl"
        assert main(["segment", str(audio / "a.wav"), "--mode", "hybrid", "--checkpoint",
                     str(ckpt), "--vad-trace", str(trace), "--maxlen", "1000",
                     "--out", str(out)]) == 0
        outputs.append(out.read_text())
    # an always-active trace vetoes every boundary
    assert [len(v) for v in read_segments(tmp_path / "h0.jsonl").values()] == [1]
    assert outputs[0] != outputs[1]


def write_hyp(path, rows):
    path.write_text("".join(json.dumps({"audio": a, "start": s, "end": e}) + "\n"
                            for a, s, e in rows))
    return path


def run_evaluate(tmp_path, hyp_rows, tol="0.2"):
    ref = manifest(tmp_path / "ref.jsonl", [{"audio": "a", "offset": 0.0, "duration": 1.0},
                                            {"audio": "a", "offset": 1.5, "duration": 1.0}])
    hyp = write_hyp(tmp_path / "hyp.jsonl", hyp_rows)
    out = tmp_path / "report.json"
    assert main(["evaluate", "--hyp", str(hyp), "--ref", str(ref), "--tolerance", tol,
                 "--out", str(out)]) == 0
    return json.loads(out.read_text())


def test_evaluate_identical(tmp_path):
    report = run_evaluate(tmp_path, [("a", 0.0, 1.0), ("a", 1.5, 2.5)])
    assert report["boundary"]["f1"] == 1.0
    assert report["over"] == report["under"] == 0


def test_evaluate_empty_hypothesis(tmp_path):
    (tmp_path / "hyp.jsonl").write_text("")
    report = run_evaluate(tmp_path, [])
    assert report["boundary"]["recall"] == 0.0


def test_evaluate_tolerance_monotone(tmp_path):
    rows = [("a", 0.15, 1.0), ("a", 1.5, 2.8)]
    narrow = run_evaluate(tmp_path, rows, "0.1")["boundary"]["f1"]
    wide = run_evaluate(tmp_path, rows, "0.5")["boundary"]["f1"]
    assert wide > narrow


def test_evaluate_unknown_audio(tmp_path):
    ref = manifest(tmp_path / "ref.jsonl", [{"audio": "a", "offset": 0.0, "duration": 1.0}])
    hyp = write_hyp(tmp_path / "hyp.jsonl", [("zzz", 0.0, 1.0)])
    assert main(["evaluate", "--hyp", str(hyp), "--ref", str(ref)]) == 2


def test_evaluate_alignment(tmp_path):
    ref = manifest(tmp_path / "ref.jsonl", [{"audio": "a", "offset": 0.0, "duration": 1.0}])
    hyp = write_hyp(tmp_path / "hyp.jsonl", [("a", 0.0, 1.0)])
    (tmp_path / "ref.txt").write_text("a b\nc d e\n")
    (tmp_path / "hyp.txt").write_text("a b c d e\n")
    out = tmp_path / "r.json"
    assert main(["evaluate", "--hyp", str(hyp), "--ref", str(ref), "--ref-text",
                 str(tmp_path / "ref.txt"), "--hyp-text", str(tmp_path / "hyp.txt"),
                 "--out", str(out)]) == 0
    assert json.loads(out.read_text())["alignment"] == {"distance": 0, "splits": [2]}
