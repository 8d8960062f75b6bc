"""Forward/backward pairs for the layers of the segmentation model.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache. Tensors are channels-last.
"""

from __future__ import annotations

import numpy as np

LN_EPS = 1e-5
MASK_FILL = -1e9


def conv_forward(x, w, b):
    """3x3 convolution, stride 2, zero padding 1.

    x: (B, H, W, Cin), w: (3, 3, Cin, Cout) -> (B, ceil(H/2), ceil(W/2), Cout)
    """
    bsz, h, wid, cin = x.shape
    ho, wo = (h + 1) // 2, (wid + 1) // 2
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((bsz, ho, wo, 3, 3, cin), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, :, :, i, j, :] = xp[:, i:i + 2 * ho:2, j:j + 2 * wo:2, :]
    cols = cols.reshape(bsz * ho * wo, 9 * cin)
    out = cols @ w.reshape(9 * cin, -1) + b
    return out.reshape(bsz, ho, wo, -1), (cols, x.shape, w)


def conv_backward(dout, cache, need_dx=True):
    cols, (bsz, h, wid, cin), w = cache
    ho, wo, cout = dout.shape[1:]
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(9 * cin, cout).T).reshape(bsz, ho, wo, 3, 3, cin)
    dxp = np.zeros((bsz, h + 2, wid + 2, cin), dtype=dout.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + 2 * ho:2, j:j + 2 * wo:2, :] += dcols[:, :, :, i, j, :]
    return dxp[:, 1:h + 1, 1:wid + 1, :], dw, db


def layer_norm_forward(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layer_norm_backward(dy, cache):
    xhat, inv, gain = cache
    axes = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=axes)
    dbias = dy.sum(axis=axes)
    dxhat = dy * gain
    d = dy.shape[-1]
    dx = inv / d * (
        d * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def attention_forward(h, p, prefix, n_heads, key_mask):
    """Multi-head self-attention over (B, N, d); padded keys get zero weight."""
    bsz, n, d = h.shape
    dk = d // n_heads

    def split(t):
        return t.reshape(bsz, n, n_heads, dk).transpose(0, 2, 1, 3)

    q = split(h @ p[prefix + "q.weight"] + p[prefix + "q.bias"])
    k = split(h @ p[prefix + "k.weight"] + p[prefix + "k.bias"])
    v = split(h @ p[prefix + "v.weight"] + p[prefix + "v.bias"])
    scale = 1.0 / np.sqrt(dk)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    scores = np.where(key_mask[:, None, None, :], scores, MASK_FILL)
    att = softmax(scores)
    ctx = (att @ v).transpose(0, 2, 1, 3).reshape(bsz, n, d)
    out = ctx @ p[prefix + "o.weight"] + p[prefix + "o.bias"]
    return out, (h, q, k, v, att, ctx, scale, key_mask)


def attention_backward(dout, cache, p, prefix, grads):
    h, q, k, v, att, ctx, scale, key_mask = cache
    bsz, n, d = h.shape
    n_heads, dk = q.shape[1], q.shape[3]
    flat = (-1, d)

    grads[prefix + "o.weight"] = ctx.reshape(flat).T @ dout.reshape(flat)
    grads[prefix + "o.bias"] = dout.reshape(flat).sum(axis=0)
    dctx = (dout @ p[prefix + "o.weight"].T).reshape(bsz, n, n_heads, dk).transpose(0, 2, 1, 3)

    datt = dctx @ v.transpose(0, 1, 3, 2)
    dv = att.transpose(0, 1, 3, 2) @ dctx
    dscores = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
    dscores = np.where(key_mask[:, None, None, :], dscores, 0.0) * scale
    dq = dscores @ k
    dk_ = dscores.transpose(0, 1, 3, 2) @ q

    dh = np.zeros_like(h)
    for name, dt in (("q", dq), ("k", dk_), ("v", dv)):
        dt = dt.transpose(0, 2, 1, 3).reshape(flat)
        grads[prefix + name + ".weight"] = h.reshape(flat).T @ dt
        grads[prefix + name + ".bias"] = dt.sum(axis=0)
        dh += (dt @ p[prefix + name + ".weight"].T).reshape(h.shape)
    return dh


def dropout_mask(rng, shape, rate, dtype):
    if rng is None or rate <= 0.0:
        return None
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / (1.0 - rate)


def sinusoidal_positions(n: int, d: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(n)[:, None]
    inv_freq = np.exp(-np.log(10000.0) * np.arange(0, d, 2) / d)
    table = np.zeros((n, d))
    table[:, 0::2] = np.sin(pos * inv_freq)
    table[:, 1::2] = np.cos(pos * inv_freq[: d // 2])
    return table.astype(dtype)
