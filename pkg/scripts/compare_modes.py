"""Train a desk-scale model on synthetic streams and compare segmenters.

Prints boundary F1, over/under counts and frame F1 for the model-only,
hybrid, pause-based (VAD) and fixed-length segmenters on held-out streams.

    python3 scripts/compare_modes.py --train-examples 100 --test-streams 5
"""

import argparse
import time

import numpy as np

from segvox.audio_features import FeatureConfig
from segvox.corpus import iter_pair_examples
from segvox.decoder import DecodeConfig, fixed_length_segment, segment_stream
from segvox.eval_align import boundary_metrics, frame_f1, over_under_counts, segments_to_frames
from segvox.seg_model import ModelConfig, OptimizerConfig, train
from segvox.segments import SegmentHypothesis
from segvox.synth import SynthConfig, synth_stream
from segvox.vad import VadConfig, vad_segment


def build_examples(n, first_seed, fcfg):
    examples, seed = [], first_seed
    while len(examples) < n:
        wave, records = synth_stream(seed, f"train{seed}")
        examples.extend(iter_pair_examples(records, wave, fcfg))
        seed += 1
    return examples[:n]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--train-examples", type=int, default=100)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--test-streams", type=int, default=5)
    ap.add_argument("--utterances", type=int, default=8)
    ap.add_argument("--tolerance", type=float, default=0.1)
    ap.add_argument("--fixed-length", type=float, default=2.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    fcfg = FeatureConfig()
    t0 = time.perf_counter()
    examples = build_examples(args.train_examples, 1000, fcfg)
    opt = OptimizerConfig(lr_scale=1.0, warmup_steps=200, batch_size=8, accum_grad=1,
                          epochs=args.epochs, valid_fraction=0.1, seed=args.seed)
    result = train(ModelConfig.desk(), examples, opt)
    print(f"trained {len(examples)} examples in {time.perf_counter() - t0:.1f}s, "
          f"best epoch {result.best_epoch}")

    segmenters = {
        "model": lambda w: segment_stream(w, result.params, None, DecodeConfig(), fcfg),
        "hybrid": lambda w: segment_stream(w, result.params, VadConfig(),
                                           DecodeConfig(mode="hybrid"), fcfg),
        "vad": lambda w: vad_segment(w, VadConfig()),
        f"fixed:{args.fixed_length:g}": lambda w: fixed_length_segment(w.duration_s,
                                                                      args.fixed_length),
    }
    scores = {name: [] for name in segmenters}
    for k in range(args.test_streams):
        wave, records = synth_stream(90000 + k, f"test{k}", SynthConfig(n_utterances=args.utterances))
        ref = [SegmentHypothesis(r.offset_s, r.end_s) for r in records]
        truth = segments_to_frames(ref, wave.duration_s)
        for name, fn in segmenters.items():
            hyp = fn(wave)
            bm = boundary_metrics(hyp, ref, args.tolerance)
            over, under = over_under_counts(hyp, ref)
            ff = frame_f1(segments_to_frames(hyp, wave.duration_s), truth)["f1"]
            scores[name].append((bm.f1, over, under, ff))

    print(f"{'mode':<10} {'boundary F1':>11} {'over':>5} {'under':>6} {'frame F1':>9}")
    for name, rows in scores.items():
        arr = np.array(rows)
        print(f"{name:<10} {arr[:, 0].mean():11.3f} {int(arr[:, 1].sum()):5d} "
              f"{int(arr[:, 2].sum()):6d} {arr[:, 3].mean():9.3f}")


if __name__ == "__main__":
    main()
