"""Adam training loop with inverse-square-root warmup."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from segvox.corpus import TrainingExample
from segvox.errors import DataError, NumericError
from segvox.seg_model.config import ModelConfig, OptimizerConfig
from segvox.seg_model.model import (
    Batch,
    ModelParams,
    init_params,
    loss_and_gradients,
    make_batch,
    predict_labels,
    forward_logits,
    seg_loss,
)

log = logging.getLogger(__name__)


def noam_lr(step: int, d_model: int, warmup: int, scale: float) -> float:
    step = max(step, 1)
    return scale * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


class Adam:
    def __init__(self, params: ModelParams, beta1: float, beta2: float, eps: float):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.t = 0

    def update(self, params: ModelParams, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in params.tensors.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if not math.isfinite(norm):
        raise NumericError("non-finite gradient norm")
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


def bucket_batches(examples: Sequence[TrainingExample], batch_size: int) -> list[list[int]]:
    """Group example indices of similar length to keep padding small."""
    order = sorted(range(len(examples)), key=lambda i: (examples[i].features.n_frames, i))
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def split_train_valid(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_valid = int(round(n * fraction))
    if n_valid >= n:
        n_valid = n - 1
    return np.sort(perm[n_valid:]), np.sort(perm[:n_valid])


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    valid_loss: float | None
    lr: float
    steps: int


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochLog]
    best_epoch: int
    epoch_params: list[ModelParams] = field(default_factory=list)


def evaluate_loss(params: ModelParams, batches: Sequence[Batch]) -> float:
    """Mean per-example loss over pre-built batches, dropout off."""
    total, count = 0.0, 0
    for b in batches:
        logits, _ = forward_logits(params, b.features, b.lengths)
        total += seg_loss(logits, b.labels, params.config.w_s, b.mask)
        count += b.size
    return total / max(count, 1)


def frame_error_rate(params: ModelParams, batches: Sequence[Batch]) -> float:
    wrong, total = 0.0, 0.0
    for b in batches:
        pred = predict_labels(params, b)
        wrong += float(((pred != b.labels) * b.mask).sum())
        total += float(b.mask.sum())
    return wrong / max(total, 1.0)


def train(config: ModelConfig, dataset: Sequence[TrainingExample], opt: OptimizerConfig,
          init: ModelParams | None = None, keep_epoch_params: bool = False) -> TrainResult:
    """Train on ``dataset`` and return the parameters of the best epoch.

    The best epoch is chosen by validation loss, or by training loss when
    ``opt.valid_fraction`` leaves no validation examples.
    """
    if not dataset:
        raise DataError("cannot train on an empty dataset")
    params = init.copy() if init is not None else init_params(config, opt.seed)
    factor = config.subsampling
    train_idx, valid_idx = split_train_valid(len(dataset), opt.valid_fraction, opt.seed)
    train_set = [dataset[i] for i in train_idx]
    valid_batches = [
        make_batch([dataset[valid_idx[i]] for i in chunk], factor)
        for chunk in bucket_batches([dataset[i] for i in valid_idx], opt.batch_size)
    ] if len(valid_idx) else []
    train_batches = [make_batch([train_set[i] for i in chunk], factor)
                     for chunk in bucket_batches(train_set, opt.batch_size)]

    adam = Adam(params, opt.beta1, opt.beta2, opt.eps)
    order_rng = np.random.default_rng(opt.seed)
    history: list[EpochLog] = []
    snapshots: list[ModelParams] = []
    best, best_score, best_epoch = params.copy(), math.inf, 0
    micro = 0
    lr = 0.0
    for epoch in range(1, opt.epochs + 1):
        order = order_rng.permutation(len(train_batches))
        epoch_loss, epoch_n = 0.0, 0
        accum: dict[str, np.ndarray] | None = None
        n_accum = 0
        for pos, bi in enumerate(order):
            batch = train_batches[bi]
            loss, grads = loss_and_gradients(params, batch, seed=opt.seed, step=micro)
            micro += 1
            if not math.isfinite(loss):
                raise NumericError(f"loss diverged at epoch {epoch}, step {adam.t}")
            epoch_loss += loss * batch.size
            epoch_n += batch.size
            if accum is None:
                accum = grads
            else:
                for k in accum:
                    accum[k] += grads[k]
            n_accum += 1
            if n_accum == opt.accum_grad or pos == len(order) - 1:
                for g in accum.values():
                    g /= n_accum
                try:
                    clip_gradients(accum, opt.grad_clip)
                except NumericError as exc:
                    raise NumericError(f"{exc} at epoch {epoch}, step {adam.t}") from exc
                lr = noam_lr(adam.t + 1, config.d_model, opt.warmup_steps, opt.lr_scale)
                adam.update(params, accum, lr)
                accum, n_accum = None, 0

        train_loss = epoch_loss / epoch_n
        valid_loss = evaluate_loss(params, valid_batches) if valid_batches else None
        history.append(EpochLog(epoch, train_loss, valid_loss, lr, adam.t))
        log.info("epoch %d train %.4f valid %s lr %.2e", epoch, train_loss,
                 "-" if valid_loss is None else f"{valid_loss:.4f}", lr)
        if keep_epoch_params:
            snapshots.append(params.copy())
        score = valid_loss if valid_loss is not None else train_loss
        if score < best_score:
            best, best_score, best_epoch = params.copy(), score, epoch
    return TrainResult(best, history, best_epoch, snapshots)


def average_params(snapshots: Sequence[ModelParams]) -> ModelParams:
    """Element-wise mean of several parameter sets of the same model."""
    if not snapshots:
        raise DataError("nothing to average")
    first = snapshots[0]
    out = {}
    for name, t in first.tensors.items():
        acc = np.zeros(t.shape, dtype=np.float64)
        for s in snapshots:
            acc += s.tensors[name]
        out[name] = (acc / len(snapshots)).astype(t.dtype)
    return ModelParams(first.config, out)


def average_best(result: TrainResult, n_best: int = 5) -> ModelParams:
    """Average the ``n_best`` epochs with the lowest validation (or train) loss.

    Requires training with ``keep_epoch_params=True``.
    """
    if not result.epoch_params:
        raise DataError("no per-epoch parameters were kept")
    score = [h.valid_loss if h.valid_loss is not None else h.train_loss
             for h in result.history]
    ranked = sorted(range(len(score)), key=lambda i: (score[i], i))[:n_best]
    return average_params([result.epoch_params[i] for i in sorted(ranked)])
