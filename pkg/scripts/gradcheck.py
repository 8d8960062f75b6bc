"""Finite-difference gradient check of the classifier on random inputs.

    python3 scripts/gradcheck.py --seeds 3 --d-model 8 --layers 1
"""

import argparse

import numpy as np

from segvox.audio_features import FeatureMatrix
from segvox.corpus import FrameLabels, TrainingExample
from segvox.seg_model import ModelConfig, init_params, make_batch
from segvox.seg_model.gradcheck import check_gradients


def random_example(n, dim, rng):
    return TrainingExample(FeatureMatrix(rng.standard_normal((n, dim)), 0.01, 0.025),
                           FrameLabels(rng.integers(0, 2, n), 0.01), ("random", 0))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--d-model", type=int, default=8)
    ap.add_argument("--heads", type=int, default=2)
    ap.add_argument("--layers", type=int, default=1)
    ap.add_argument("--input-dim", type=int, default=8)
    ap.add_argument("--frames", type=int, default=32)
    ap.add_argument("--batch", type=int, default=2)
    ap.add_argument("--step", type=float, default=1e-4)
    ap.add_argument("--dropout", type=float, default=0.0,
                    help="nonzero checks gradients under a fixed dropout mask")
    args = ap.parse_args()

    cfg = ModelConfig(input_dim=args.input_dim, conv_channels=4, d_model=args.d_model,
                      n_heads=args.heads, ffn_dim=2 * args.d_model, n_layers=args.layers,
                      dropout=args.dropout)
    worst = 0.0
    for seed in range(args.seeds):
        rng = np.random.default_rng(seed)
        params = init_params(cfg, seed=seed, dtype=np.float64)
        batch = make_batch([random_example(args.frames, args.input_dim, rng)
                            for _ in range(args.batch)], dtype=np.float64)
        checks = check_gradients(params, batch, step=args.step,
                                 seed=seed if args.dropout > 0 else None)
        for c in checks:
            print(f"seed {seed} {c.name:<24} max rel err {c.max_rel_error:.2e} "
                  f"({c.n_checked} checked, {c.n_kink} at ReLU kinks)")
            worst = max(worst, c.max_rel_error)
    print(f"worst relative error {worst:.2e}")


if __name__ == "__main__":
    main()
