"""Binary checkpoint format.

Layout (little-endian): magic ``SVCK``, u32 version, u32 config length and
that many bytes of JSON config, then tensors until end of file, each as
u32 name length, name bytes, u32 rank, u32 dims, float32 data.
"""

from __future__ import annotations

import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from segvox.errors import ConfigError, FormatError
from segvox.seg_model.config import ModelConfig
from segvox.seg_model.model import ModelParams, parameter_shapes

MAGIC = b"SVCK"
VERSION = 1
_U32 = struct.Struct("<I")


def encode_checkpoint(params: ModelParams) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_U32.pack(VERSION))
    cfg = json.dumps(params.config.to_dict(), sort_keys=True).encode()
    buf.write(_U32.pack(len(cfg)))
    buf.write(cfg)
    for name, t in params.tensors.items():
        raw = name.encode()
        buf.write(_U32.pack(len(raw)))
        buf.write(raw)
        buf.write(_U32.pack(t.ndim))
        for dim in t.shape:
            buf.write(_U32.pack(dim))
        buf.write(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(params: ModelParams, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(params))
    os.replace(tmp, path)


def _take(blob: bytes, pos: int, n: int, what: str) -> tuple[bytes, int]:
    if pos + n > len(blob):
        raise FormatError(f"checkpoint truncated while reading {what}")
    return blob[pos:pos + n], pos + n


def _u32(blob, pos, what):
    raw, pos = _take(blob, pos, 4, what)
    return _U32.unpack(raw)[0], pos


def decode_checkpoint(blob: bytes, expect: ModelConfig | None = None) -> ModelParams:
    magic, pos = _take(blob, 0, 4, "magic")
    if magic != MAGIC:
        raise FormatError(f"not a checkpoint (magic {magic!r})")
    version, pos = _u32(blob, pos, "version")
    if version != VERSION:
        raise FormatError(f"checkpoint version {version}, this build reads {VERSION}")
    n, pos = _u32(blob, pos, "config length")
    raw, pos = _take(blob, pos, n, "config")
    try:
        config = ModelConfig.from_dict(json.loads(raw))
    except (json.JSONDecodeError, TypeError) as exc:
        raise FormatError(f"unreadable checkpoint config: {exc}") from exc
    if expect is not None:
        diff = {k: (v, getattr(config, k)) for k, v in expect.to_dict().items()
                if getattr(config, k) != v}
        if diff:
            raise ConfigError(f"checkpoint config differs from expected: {diff}")

    tensors = {}
    while pos < len(blob):
        n, pos = _u32(blob, pos, "tensor name length")
        name_raw, pos = _take(blob, pos, n, "tensor name")
        rank, pos = _u32(blob, pos, "rank")
        dims = []
        for _ in range(rank):
            d, pos = _u32(blob, pos, "dims")
            dims.append(d)
        count = int(np.prod(dims, dtype=np.int64))
        data, pos = _take(blob, pos, 4 * count, "tensor data")
        tensors[name_raw.decode()] = np.frombuffer(data, dtype="<f4").reshape(dims).astype(np.float32)

    expected = parameter_shapes(config)
    if set(tensors) != set(expected):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise ConfigError(f"checkpoint tensors do not match config (missing {missing}, extra {extra})")
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise ConfigError(f"{name}: shape {tensors[name].shape}, config implies {shape}")
    return ModelParams(config, {name: tensors[name] for name in expected})


def load_checkpoint(path, expect: ModelConfig | None = None,
                    input_dim: int | None = None) -> ModelParams:
    """Read a checkpoint, optionally insisting on a config or feature dimension."""
    params = decode_checkpoint(Path(path).read_bytes(), expect)
    if input_dim is not None and params.config.input_dim != input_dim:
        raise ConfigError(
            f"checkpoint expects {params.config.input_dim}-dim features, got {input_dim}"
        )
    return params
