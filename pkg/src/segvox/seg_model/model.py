"""Frame classifier: conv subsampler, post-norm Transformer encoder, linear+softmax.

Parameters live in a flat ``{name: ndarray}`` dict; gradients use the same keys.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from segvox.audio_features import FeatureMatrix
from segvox.corpus import TrainingExample, downsample_labels
from segvox.errors import AlignmentError, ConfigError, NumericError
from segvox.seg_model import layers as L
from segvox.seg_model.config import ModelConfig, output_length


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    @property
    def dtype(self):
        return self.tensors["out.weight"].dtype

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})


@dataclass
class LabelProbabilities:
    probs: np.ndarray
    frame_duration_s: float

    def __len__(self) -> int:
        return self.probs.shape[0]


@dataclass
class Batch:
    """Zero-padded features with per-example lengths and model-rate targets."""

    features: np.ndarray  # (B, N, D)
    lengths: np.ndarray  # (B,) valid feature frames
    labels: np.ndarray  # (B, N_out) in {0, 1}
    mask: np.ndarray  # (B, N_out) 1.0 where the frame counts toward the loss

    @property
    def size(self) -> int:
        return self.features.shape[0]


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, c = cfg.d_model, cfg.conv_channels
    shapes = {
        "conv1.weight": (3, 3, 1, c),
        "conv1.bias": (c,),
        "conv2.weight": (3, 3, c, c),
        "conv2.bias": (c,),
        "in_proj.weight": (cfg.conv_out_dim, d),
        "in_proj.bias": (d,),
    }
    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        for name in "qkvo":
            shapes[pre + f"attn.{name}.weight"] = (d, d)
            shapes[pre + f"attn.{name}.bias"] = (d,)
        shapes[pre + "norm1.gain"] = (d,)
        shapes[pre + "norm1.bias"] = (d,)
        shapes[pre + "ffn.w1"] = (d, cfg.ffn_dim)
        shapes[pre + "ffn.b1"] = (cfg.ffn_dim,)
        shapes[pre + "ffn.w2"] = (cfg.ffn_dim, d)
        shapes[pre + "ffn.b2"] = (d,)
        shapes[pre + "norm2.gain"] = (d,)
        shapes[pre + "norm2.bias"] = (d,)
    shapes["out.weight"] = (d, 2)
    shapes["out.bias"] = (2,)
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Xavier-uniform weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith("gain"):
            t = np.ones(shape)
        elif len(shape) == 1:
            t = np.zeros(shape)
        else:
            if len(shape) == 4:
                fan_in, fan_out = 9 * shape[2], 9 * shape[3]
            else:
                fan_in, fan_out = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            t = rng.uniform(-limit, limit, size=shape)
        tensors[name] = t.astype(dtype)
    return ModelParams(cfg, tensors)


def _check(name, x):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite activation in {name}")


def _lengths_after_conv(lengths):
    l1 = (lengths + 1) // 2
    return l1, (l1 + 1) // 2


def forward_logits(params: ModelParams, x, lengths, rng=None, keep_cache=False):
    """Batched forward pass to pre-softmax logits of shape (B, N_out, 2).

    ``rng`` enables dropout; ``None`` means inference behaviour.
    """
    cfg = params.config
    p = params.tensors
    dtype = params.dtype
    x = np.asarray(x, dtype=dtype)
    if x.ndim != 3 or x.shape[2] != cfg.input_dim:
        raise ConfigError(f"expected (B, N, {cfg.input_dim}) features, got {x.shape}")
    lengths = np.asarray(lengths)
    bsz, n, _ = x.shape
    if n < 4:
        raise ConfigError(f"need at least 4 input frames, got {n}")
    l1, l2 = _lengths_after_conv(lengths)
    n1, n2 = (n + 1) // 2, output_length(n)
    m1 = (np.arange(n1)[None, :] < l1[:, None]).astype(dtype)[:, :, None, None]
    m2 = (np.arange(n2)[None, :] < l2[:, None]).astype(dtype)[:, :, None, None]
    key_mask = np.arange(n2)[None, :] < l2[:, None]
    cache = {}

    c1, cache["conv1"] = L.conv_forward(x[..., None], p["conv1.weight"], p["conv1.bias"])
    a1 = np.maximum(c1, 0) * m1
    _check("conv1", a1)
    c2, cache["conv2"] = L.conv_forward(a1, p["conv2.weight"], p["conv2.bias"])
    a2 = np.maximum(c2, 0) * m2
    _check("conv2", a2)
    flat = a2.reshape(bsz, n2, -1)
    h = flat @ p["in_proj.weight"] + p["in_proj.bias"]
    h = h + L.sinusoidal_positions(n2, cfg.d_model, dtype)
    drop = L.dropout_mask(rng, h.shape, cfg.dropout, dtype)
    if drop is not None:
        h = h * drop
    _check("in_proj", h)
    cache["front"] = (c1, a1, c2, m1, m2, flat, drop)

    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        att, att_cache = L.attention_forward(h, p, pre + "attn.", cfg.n_heads, key_mask)
        drop1 = L.dropout_mask(rng, att.shape, cfg.dropout, dtype)
        if drop1 is not None:
            att = att * drop1
        h1, ln1 = L.layer_norm_forward(h + att, p[pre + "norm1.gain"], p[pre + "norm1.bias"])
        f1 = h1 @ p[pre + "ffn.w1"] + p[pre + "ffn.b1"]
        r1 = np.maximum(f1, 0)
        f2 = r1 @ p[pre + "ffn.w2"] + p[pre + "ffn.b2"]
        drop2 = L.dropout_mask(rng, f2.shape, cfg.dropout, dtype)
        if drop2 is not None:
            f2 = f2 * drop2
        h2, ln2 = L.layer_norm_forward(h1 + f2, p[pre + "norm2.gain"], p[pre + "norm2.bias"])
        _check(f"encoder layer {i}", h2)
        if keep_cache:
            cache[pre] = (att_cache, drop1, ln1, h1, f1, r1, drop2, ln2)
        h = h2

    logits = h @ p["out.weight"] + p["out.bias"]
    _check("output", logits)
    cache["top"] = h
    return logits, (cache if keep_cache else None)


def backward(params: ModelParams, cache, dlogits) -> dict[str, np.ndarray]:
    cfg = params.config
    p = params.tensors
    grads: dict[str, np.ndarray] = {}
    h = cache["top"]
    d = cfg.d_model
    grads["out.weight"] = h.reshape(-1, d).T @ dlogits.reshape(-1, 2)
    grads["out.bias"] = dlogits.reshape(-1, 2).sum(axis=0)
    dh = dlogits @ p["out.weight"].T

    for i in reversed(range(cfg.n_layers)):
        pre = f"layers.{i}."
        att_cache, drop1, ln1, h1, f1, r1, drop2, ln2 = cache[pre]
        dsum2, grads[pre + "norm2.gain"], grads[pre + "norm2.bias"] = L.layer_norm_backward(dh, ln2)
        dh1 = dsum2.copy()
        df2 = dsum2 if drop2 is None else dsum2 * drop2
        grads[pre + "ffn.w2"] = r1.reshape(-1, cfg.ffn_dim).T @ df2.reshape(-1, d)
        grads[pre + "ffn.b2"] = df2.reshape(-1, d).sum(axis=0)
        dr1 = (df2 @ p[pre + "ffn.w2"].T) * (f1 > 0)
        grads[pre + "ffn.w1"] = h1.reshape(-1, d).T @ dr1.reshape(-1, cfg.ffn_dim)
        grads[pre + "ffn.b1"] = dr1.reshape(-1, cfg.ffn_dim).sum(axis=0)
        dh1 += dr1 @ p[pre + "ffn.w1"].T
        dsum1, grads[pre + "norm1.gain"], grads[pre + "norm1.bias"] = L.layer_norm_backward(dh1, ln1)
        datt = dsum1 if drop1 is None else dsum1 * drop1
        dh = dsum1 + L.attention_backward(datt, att_cache, p, pre + "attn.", grads)

    c1, a1, c2, m1, m2, flat, drop = cache["front"]
    if drop is not None:
        dh = dh * drop
    grads["in_proj.weight"] = flat.reshape(-1, flat.shape[-1]).T @ dh.reshape(-1, d)
    grads["in_proj.bias"] = dh.reshape(-1, d).sum(axis=0)
    da2 = (dh @ p["in_proj.weight"].T).reshape(c2.shape)
    dc2 = da2 * m2 * (c2 > 0)
    da1, grads["conv2.weight"], grads["conv2.bias"] = L.conv_backward(dc2, cache["conv2"])
    dc1 = da1 * m1 * (c1 > 0)
    _, grads["conv1.weight"], grads["conv1.bias"] = L.conv_backward(dc1, cache["conv1"], need_dx=False)

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    return grads


def forward(params: ModelParams, features: FeatureMatrix, train_mode: bool = False,
            rng: np.random.Generator | None = None) -> LabelProbabilities:
    """Label posteriors for one feature matrix; rows are (P(inside), P(outside))."""
    if train_mode and rng is None:
        rng = np.random.default_rng(0)
    data = features.data
    logits, _ = forward_logits(
        params, data[None], np.array([data.shape[0]]), rng=rng if train_mode else None
    )
    probs = L.softmax(logits[0].astype(np.float64))
    factor = params.config.subsampling
    return LabelProbabilities(probs, features.frame_shift_s * factor)


def seg_loss(logits, labels, w_s: float, mask=None) -> float:
    """Class-weighted cross-entropy summed over frames.

    Outside-utterance frames (label 1) are weighted by ``w_s``, inside frames
    by ``1 - w_s``. Masked frames contribute nothing.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.shape[:-1] != labels.shape:
        raise AlignmentError(f"{logits.shape[:-1]} logits vs {labels.shape} labels")
    logp = L.log_softmax(logits)
    picked = np.take_along_axis(logp, labels[..., None].astype(np.intp), axis=-1)[..., 0]
    weight = np.where(labels == 1, w_s, 1.0 - w_s)
    if mask is not None:
        weight = weight * mask
    return float(-(weight * picked).sum())


def make_batch(examples: Sequence[TrainingExample], factor: int = 4, dtype=np.float32) -> Batch:
    """Pad examples to a common length and downsample their labels."""
    lengths = np.array([ex.features.n_frames for ex in examples])
    n = int(lengths.max())
    dim = examples[0].features.dim
    n_out = output_length(n)
    feats = np.zeros((len(examples), n, dim), dtype=dtype)
    labels = np.zeros((len(examples), n_out), dtype=np.int8)
    mask = np.zeros((len(examples), n_out), dtype=dtype)
    for b, ex in enumerate(examples):
        k = ex.features.n_frames
        feats[b, :k] = ex.features.data
        m = output_length(k)
        labels[b, :m] = downsample_labels(ex.labels, m, factor).labels
        mask[b, :m] = 1.0
    return Batch(feats, lengths, labels, mask)


def dropout_rng(seed: int, step: int) -> np.random.Generator:
    """Counter-based generator: the stream depends only on (seed, step)."""
    return np.random.Generator(np.random.Philox(key=[seed, step]))


def loss_and_gradients(params: ModelParams, batch: Batch, seed: int | None = None,
                       step: int = 0):
    """Batch loss (per-example frame sums, averaged over examples) and its gradients.

    Dropout is applied only when ``seed`` is given.
    """
    cfg = params.config
    rng = dropout_rng(seed, step) if seed is not None and cfg.dropout > 0 else None
    logits, cache = forward_logits(params, batch.features, batch.lengths, rng=rng, keep_cache=True)
    if logits.shape[:2] != batch.labels.shape:
        raise AlignmentError(f"logits {logits.shape[:2]} vs labels {batch.labels.shape}")
    bsz = batch.size
    loss = seg_loss(logits, batch.labels, cfg.w_s, batch.mask) / bsz
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")

    onehot = np.stack([batch.labels == 0, batch.labels == 1], axis=-1)
    weight = np.where(batch.labels == 1, cfg.w_s, 1.0 - cfg.w_s) * batch.mask
    dlogits = (weight[..., None] * (L.softmax(logits) - onehot) / bsz).astype(params.dtype)
    return loss, backward(params, cache, dlogits)


def predict_labels(params: ModelParams, batch: Batch) -> np.ndarray:
    logits, _ = forward_logits(params, batch.features, batch.lengths)
    return (logits[..., 1] > logits[..., 0]).astype(np.int8)


def relu_gates(params: ModelParams, batch: Batch) -> np.ndarray:
    """Concatenated on/off pattern of every ReLU unit for this batch."""
    _, cache = forward_logits(params, batch.features, batch.lengths, keep_cache=True)
    c1, _, c2, m1, m2, *_ = cache["front"]
    parts = [(c1 > 0) & (m1 > 0), (c2 > 0) & (m2 > 0)]
    parts += [cache[f"layers.{i}."][4] > 0 for i in range(params.config.n_layers)]
    return np.concatenate([p.ravel() for p in parts])
