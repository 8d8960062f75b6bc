"""Command-line driver: synth, extract, train, segment, evaluate, vad.

Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 numeric error.
Set SEGVOX_LOG (e.g. ``info``, ``debug``) for log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from segvox.audio_features import read_feature_dump, read_wav, write_feature_dump, write_wav
from segvox.config import PipelineConfig, apply_overrides, load_config, parse_set_flags
from segvox.corpus import (
    SegmentRecord,
    TrainingExample,
    group_by_audio,
    iter_pair_examples,
    load_manifest,
    read_labels,
    write_labels,
)
from segvox.decoder import fixed_length_segment, segment_stream
from segvox.errors import ConfigError, NumericError, SegvoxError
from segvox.eval_align import (
    align_to_reference,
    boundary_metrics,
    frame_f1,
    over_under_counts,
    segments_to_frames,
)
from segvox.seg_model import average_best, load_checkpoint, save_checkpoint, train
from segvox.segments import SegmentHypothesis, format_jsonl, format_tsv, read_segments
from segvox.synth import SynthConfig, synth_stream
from segvox.vad import read_trace, trace_to_segments, vad_decide, vad_segment, write_trace

log = logging.getLogger("segvox")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def write_atomic(path, text: str | bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    mode = "wb" if isinstance(text, bytes) else "w"
    with os.fdopen(fd, mode) as fh:
        fh.write(text)
    os.replace(tmp, path)


def _config(args) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    return apply_overrides(cfg, parse_set_flags(getattr(args, "set", None)))


def _audio_path(audio_dir, audio_id: str) -> Path:
    return Path(audio_dir) / f"{audio_id}.wav"


# -- synth -----------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scfg = SynthConfig(n_utterances=args.n_utterances)
    lines = []
    for i in range(args.n_audios):
        audio_id = f"{args.prefix}{i:03d}"
        wave, records = synth_stream(args.seed * 100003 + i, audio_id, scfg)
        write_wav(out / f"{audio_id}.wav", wave)
        for r in records:
            lines.append(json.dumps({"audio": r.audio_id, "offset": r.offset_s,
                                     "duration": r.duration_s, "transcript": r.transcript}))
    write_atomic(out / "manifest.jsonl", "".join(line + "\n" for line in lines))
    print(f"wrote {args.n_audios} audios, {len(lines)} segments to {out}")
    return EXIT_OK


# -- extract ---------------------------------------------------------------

def cmd_extract(args) -> int:
    cfg = _config(args)
    records = load_manifest(args.manifest)
    audio_dir = args.audio_dir or cfg.paths.audio_dir
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failures, index = [], []
    groups = group_by_audio(records)
    for audio_id, segs in groups.items():
        try:
            wave = read_wav(_audio_path(audio_dir, audio_id))
            examples = list(iter_pair_examples(segs, wave, cfg.feature, args.max_example_s))
        except (OSError, SegvoxError) as exc:
            failures.append(f"{audio_id}: {exc}")
            continue
        for ex in examples:
            name = f"{len(index):06d}"
            write_feature_dump(out / f"{name}.fbk", ex.features)
            write_labels(out / f"{name}.lab", ex.labels)
            index.append({"id": name, "audio": audio_id, "pair": ex.source[1],
                          "n_frames": ex.features.n_frames,
                          "frame_shift_s": ex.features.frame_shift_s,
                          "frame_length_s": ex.features.frame_length_s,
                          "label1_frames": int(ex.labels.labels.sum())})
    for f in failures:
        print(f"error: {f}", file=sys.stderr)
    if not index and not failures:
        log.warning("no consecutive segment pairs found; 0 examples written")
    write_atomic(out / "index.jsonl", "".join(json.dumps(r) + "\n" for r in index))
    n_frames = sum(r["n_frames"] for r in index)
    stats = {
        "examples": len(index),
        "label1_fraction": (sum(r["label1_frames"] for r in index) / n_frames) if n_frames else 0.0,
        "mean_example_s": (sum(r["n_frames"] * r["frame_shift_s"] for r in index) / len(index))
        if index else 0.0,
        "failed_audios": len(failures),
    }
    write_atomic(out / "stats.json", json.dumps(stats, indent=2) + "\n")
    print(f"examples={stats['examples']} label1_fraction={stats['label1_fraction']:.4f} "
          f"mean_example_s={stats['mean_example_s']:.3f}")
    if failures and len(failures) == len(groups):
        return EXIT_DATA
    return EXIT_OK


def load_examples(directory) -> list[TrainingExample]:
    directory = Path(directory)
    index_path = directory / "index.jsonl"
    if not index_path.is_file():
        raise FileNotFoundError(f"no example index at {index_path}")
    out = []
    for line in index_path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        feats = read_feature_dump(directory / f"{rec['id']}.fbk", rec.get("frame_length_s", 0.025))
        labels = read_labels(directory / f"{rec['id']}.lab", feats.frame_shift_s)
        out.append(TrainingExample(feats, labels, (rec["audio"], rec["pair"])))
    return out


# -- train -----------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _config(args)
    overrides = {"seed": args.seed if args.seed is not None else cfg.general.seed}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.valid_fraction is not None:
        overrides["valid_fraction"] = args.valid_fraction
    opt = replace(cfg.train, **overrides)
    checkpoint = args.checkpoint or cfg.paths.checkpoint
    if not checkpoint:
        raise UsageError("no checkpoint path (use --checkpoint or [paths] checkpoint)")
    examples = load_examples(args.examples)
    if not examples:
        raise SegvoxError(f"{args.examples}: no training examples")
    model_cfg = replace(cfg.model, input_dim=examples[0].features.dim)
    result = train(model_cfg, examples, opt, keep_epoch_params=args.average_best > 0)
    params = result.params
    if args.average_best > 0:
        params = average_best(result, args.average_best)
    Path(checkpoint).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, checkpoint)
    log_path = args.log or f"{checkpoint}.log.jsonl"
    write_atomic(log_path, "".join(
        json.dumps({"epoch": h.epoch, "train_loss": h.train_loss, "valid_loss": h.valid_loss,
                    "lr": h.lr, "steps": h.steps}) + "\n" for h in result.history))
    print(f"best epoch {result.best_epoch}; checkpoint {checkpoint}; log {log_path}")
    return EXIT_OK


# -- segment ---------------------------------------------------------------

def _parse_mode(mode: str):
    if mode in ("model", "hybrid", "vad"):
        return mode, None
    if mode.startswith("fixed:"):
        try:
            length = float(mode.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad fixed length in --mode {mode!r}") from None
        if length <= 0:
            raise UsageError("fixed length must be positive")
        return "fixed", length
    raise UsageError(f"unknown --mode {mode!r} (model, hybrid, vad, fixed:L)")


def _trace_for(args, audio_id: str, n_audios: int):
    if not args.vad_trace:
        return None
    path = Path(args.vad_trace)
    if path.is_dir():
        return read_trace(path / f"{audio_id}.vad")
    if n_audios > 1:
        raise UsageError("--vad-trace FILE needs a single audio; pass a directory of <id>.vad")
    return read_trace(path)


def cmd_segment(args) -> int:
    cfg = _config(args)
    mode, fixed_len = _parse_mode(args.mode)
    decode = cfg.decode
    if args.window is not None:
        decode = replace(decode, window_T_s=args.window)
    if args.maxlen is not None:
        decode = replace(decode, maxlen_s=args.maxlen)
    params = None
    if mode in ("model", "hybrid"):
        checkpoint = args.checkpoint or cfg.paths.checkpoint
        if not checkpoint:
            raise UsageError(f"--mode {mode} requires --checkpoint")
        params = load_checkpoint(checkpoint, input_dim=cfg.feature.num_mel_bins)
        decode = replace(decode, mode="hybrid" if mode == "hybrid" else "model_only")

    def run(path):
        wave = read_wav(path)
        if mode == "fixed":
            return fixed_length_segment(wave.duration_s, fixed_len)
        if mode == "vad":
            trace = _trace_for(args, wave.audio_id, len(args.audio))
            if trace is not None:
                return trace_to_segments(trace, args.min_gap_ms, wave.duration_s)
            return vad_segment(wave, cfg.vad, args.min_gap_ms)
        trace = _trace_for(args, wave.audio_id, len(args.audio)) if mode == "hybrid" else None
        return segment_stream(wave, params, cfg.vad, decode, cfg.feature, vad_trace=trace)

    def guarded(path):
        try:
            return run(path), None
        except (OSError, SegvoxError, UsageError) as exc:
            if isinstance(exc, UsageError) or not args.continue_on_error:
                raise
            return None, f"{path}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(guarded, args.audio))

    fmt = format_tsv if args.format == "tsv" else format_jsonl
    chunks, errors = [], []
    for path, (segs, err) in zip(args.audio, results):
        if err:
            errors.append(err)
            continue
        chunks.append(fmt(Path(path).stem, segs))
    text = "".join(chunks)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    return EXIT_DATA if errors else EXIT_OK


# -- evaluate --------------------------------------------------------------

def _ref_segments(records: list[SegmentRecord]) -> dict[str, list[SegmentHypothesis]]:
    return {a: [SegmentHypothesis(r.offset_s, r.end_s) for r in segs]
            for a, segs in group_by_audio(records).items()}


def evaluate(hyp: dict, ref: dict, tolerance: float) -> dict:
    unmatched = sorted(set(hyp) - set(ref))
    if unmatched:
        raise SegvoxError(f"hypothesis audio ids missing from reference: {unmatched}")
    tp = n_hyp = n_ref = over = under = 0
    pred_frames, true_frames = [], []
    for audio_id, ref_segs in ref.items():
        hyp_segs = hyp.get(audio_id, [])
        bm = boundary_metrics(hyp_segs, ref_segs, tolerance)
        tp += bm.true_positives
        n_hyp += bm.n_hyp
        n_ref += bm.n_ref
        o, u = over_under_counts(hyp_segs, ref_segs, tolerance)
        over += o
        under += u
        end = max([s.end_s for s in hyp_segs + ref_segs], default=0.0)
        pred_frames.append(segments_to_frames(hyp_segs, end))
        true_frames.append(segments_to_frames(ref_segs, end))
    precision = tp / n_hyp if n_hyp else 0.0
    recall = tp / n_ref if n_ref else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "boundary": {"precision": precision, "recall": recall, "f1": f1,
                     "tolerance_s": tolerance, "n_hyp": n_hyp, "n_ref": n_ref},
        "over": over,
        "under": under,
        "frame": frame_f1(np.concatenate(pred_frames) if pred_frames else np.zeros(0),
                          np.concatenate(true_frames) if true_frames else np.zeros(0)),
    }


def cmd_evaluate(args) -> int:
    ref = _ref_segments(load_manifest(args.ref))
    hyp = read_segments(args.hyp)
    report = evaluate(hyp, ref, args.tolerance)
    if bool(args.ref_text) != bool(args.hyp_text):
        raise UsageError("--ref-text and --hyp-text must be given together")
    if args.ref_text:
        sentences = [line.split() for line in Path(args.ref_text).read_text().splitlines()
                     if line.strip()]
        tokens = Path(args.hyp_text).read_text().split()
        res = align_to_reference(tokens, sentences)
        report["alignment"] = {"distance": res.total_edit_distance, "splits": res.split_points}
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- vad -------------------------------------------------------------------

def cmd_vad(args) -> int:
    cfg = _config(args)
    vcfg = cfg.vad
    if args.frame_ms is not None:
        vcfg = replace(vcfg, frame_ms=args.frame_ms)
    if args.aggressiveness is not None:
        vcfg = replace(vcfg, aggressiveness=args.aggressiveness)
    chunks = []
    for path in args.audio:
        wave = read_wav(path)
        if args.trace_dir:
            Path(args.trace_dir).mkdir(parents=True, exist_ok=True)
            write_trace(Path(args.trace_dir) / f"{wave.audio_id}.vad", vad_decide(wave, vcfg))
        fmt = format_tsv if args.format == "tsv" else format_jsonl
        chunks.append(fmt(wave.audio_id, vad_segment(wave, vcfg, args.min_gap_ms)))
    text = "".join(chunks)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="INI-style config file")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="segvox", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate tone/silence audio with a manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-audios", type=int, default=4)
    p.add_argument("--n-utterances", type=int, default=8)
    p.add_argument("--prefix", default="synth")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="build pair training examples from a manifest")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--audio-dir", help="directory holding <audio>.wav files")
    p.add_argument("--out", required=True, help="example archive directory")
    p.add_argument("--max-example-s", type=float, default=60.0)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the segmentation model")
    _common(p)
    p.add_argument("--examples", required=True, help="directory written by extract")
    p.add_argument("--checkpoint", help="output checkpoint path")
    p.add_argument("--log", help="per-epoch JSONL loss log (default <checkpoint>.log.jsonl)")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--valid-fraction", type=float)
    p.add_argument("--average-best", type=int, default=0, metavar="K",
                   help="average the K best epochs instead of keeping the single best")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="segment audio files")
    _common(p)
    p.add_argument("audio", nargs="+", help="WAV files")
    p.add_argument("--checkpoint")
    p.add_argument("--mode", default="model", help="model, hybrid, vad or fixed:L")
    p.add_argument("--vad-trace", help="trace file (single audio) or directory of <id>.vad")
    p.add_argument("--window", type=float, help="inference window T in seconds")
    p.add_argument("--maxlen", type=float, help="hybrid maxlen in seconds")
    p.add_argument("--min-gap-ms", type=float, default=0.0, help="vad mode: bridge shorter pauses")
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("--format", choices=("jsonl", "tsv"), default="jsonl")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--continue-on-error", action="store_true")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("evaluate", help="score segments against a reference manifest")
    p.add_argument("--hyp", required=True, help="segments (JSONL or TSV)")
    p.add_argument("--ref", required=True, help="reference manifest (JSONL)")
    p.add_argument("--tolerance", type=float, default=0.2)
    p.add_argument("--ref-text", help="reference sentences, one per line")
    p.add_argument("--hyp-text", help="hypothesis token stream")
    p.add_argument("--out", help="output JSON file (default stdout)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("vad", help="pause-based segmentation with the energy VAD")
    _common(p)
    p.add_argument("audio", nargs="+")
    p.add_argument("--frame-ms", type=int, choices=(10, 20, 30))
    p.add_argument("--aggressiveness", type=int, choices=(1, 2, 3))
    p.add_argument("--min-gap-ms", type=float, default=0.0)
    p.add_argument("--trace-dir", help="also write <id>.vad decision traces here")
    p.add_argument("--out")
    p.add_argument("--format", choices=("jsonl", "tsv"), default="jsonl")
    p.set_defaults(func=cmd_vad)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("SEGVOX_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"segvox {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"segvox {args.command}: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SegvoxError, OSError) as exc:
        print(f"segvox {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
