from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

from segvox.errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    """Classifier shape. Defaults are the full-size encoder; see
    :meth:`desk` for a configuration that trains in minutes on a CPU."""

    input_dim: int = 80
    conv_channels: int = 16
    conv_kernel: int = 3
    conv_stride: int = 2
    conv_layers: int = 2
    d_model: int = 256
    n_heads: int = 4
    ffn_dim: int = 2048
    n_layers: int = 12
    dropout: float = 0.1
    w_s: float = 0.9

    def __post_init__(self):
        if (self.conv_kernel, self.conv_stride, self.conv_layers) != (3, 2, 2):
            raise ConfigError("subsampler is fixed at two kernel-3 stride-2 conv layers")
        if self.input_dim < 1 or self.conv_channels < 1 or self.n_layers < 1:
            raise ConfigError("input_dim, conv_channels and n_layers must be >= 1")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 < self.w_s < 1.0:
            raise ConfigError(f"w_s must lie in (0, 1), got {self.w_s}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @classmethod
    def desk(cls, input_dim: int = 80, **overrides) -> "ModelConfig":
        base = dict(input_dim=input_dim, d_model=32, n_heads=2, ffn_dim=64, n_layers=2)
        base.update(overrides)
        return cls(**base)

    @property
    def subsampling(self) -> int:
        return self.conv_stride ** self.conv_layers

    @property
    def conv_out_dim(self) -> int:
        freq = self.input_dim
        for _ in range(self.conv_layers):
            freq = math.ceil(freq / 2)
        return freq * self.conv_channels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class OptimizerConfig:
    lr_scale: float = 5.0
    warmup_steps: int = 25000
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    grad_clip: float = 5.0
    batch_size: int = 32
    accum_grad: int = 4
    epochs: int = 45
    valid_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.warmup_steps < 1 or self.batch_size < 1 or self.accum_grad < 1:
            raise ConfigError("warmup_steps, batch_size and accum_grad must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0.0 <= self.valid_fraction < 1.0:
            raise ConfigError("valid_fraction must lie in [0, 1)")


def output_length(n_in: int) -> int:
    """Model frames produced from ``n_in`` feature frames (two stride-2 convs)."""
    if n_in < 4:
        raise ConfigError(f"need at least 4 input frames, got {n_in}")
    return -(-(-(-n_in // 2)) // 2)
