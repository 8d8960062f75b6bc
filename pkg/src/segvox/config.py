"""Pipeline configuration: INI-style ``[section]`` blocks of ``key = value``.

Example::

    [model]
    d_model = 32
    n_layers = 2

    [train]
    warmup_steps = 200
"""

from __future__ import annotations

import configparser
import dataclasses
import types
import typing
from dataclasses import dataclass, field, fields, replace

from segvox.audio_features import FeatureConfig
from segvox.decoder import DecodeConfig
from segvox.errors import ConfigError
from segvox.seg_model.config import ModelConfig, OptimizerConfig
from segvox.vad import VadConfig


@dataclass(frozen=True)
class PathsConfig:
    audio_dir: str = "."
    manifest: str = ""
    checkpoint: str = ""
    output: str = ""


@dataclass(frozen=True)
class GeneralConfig:
    seed: int = 0


@dataclass(frozen=True)
class PipelineConfig:
    feature: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: OptimizerConfig = field(default_factory=OptimizerConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    vad: VadConfig = field(default_factory=VadConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    general: GeneralConfig = field(default_factory=GeneralConfig)

    @property
    def seed(self) -> int:
        return self.general.seed


SECTIONS = {f.name for f in fields(PipelineConfig)}


def _convert(cls, key: str, raw: str):
    hints = typing.get_type_hints(cls)
    if key not in hints:
        known = ", ".join(f.name for f in fields(cls))
        raise ConfigError(f"unknown key {key!r} (known: {known})")
    tp = hints[key]
    args = typing.get_args(tp)
    if (typing.get_origin(tp) in (typing.Union, types.UnionType)) and type(None) in args:
        if raw.strip().lower() in ("", "none"):
            return None
        tp = next(a for a in args if a is not type(None))
    try:
        if tp is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return tp(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def apply_overrides(cfg: PipelineConfig, entries: dict[str, dict[str, str]]) -> PipelineConfig:
    """Return ``cfg`` with ``{section: {key: raw_value}}`` applied."""
    updates = {}
    for section, values in entries.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}] (known: {sorted(SECTIONS)})")
        current = getattr(cfg, section)
        changes = {k: _convert(type(current), k, v) for k, v in values.items()}
        try:
            updates[section] = replace(current, **changes)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc
    return replace(cfg, **updates)


def parse_config_text(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__unused__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    entries = {s: dict(parser.items(s)) for s in parser.sections()}
    return apply_overrides(base or PipelineConfig(), entries)


def load_config(path: str | None) -> PipelineConfig:
    if not path:
        return PipelineConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def parse_set_flags(flags: list[str]) -> dict[str, dict[str, str]]:
    """Turn repeated ``section.key=value`` flags into override entries."""
    out: dict[str, dict[str, str]] = {}
    for item in flags or ():
        name, sep, value = item.partition("=")
        section, dot, key = name.partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out.setdefault(section.strip(), {})[key.strip()] = value
    return out


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for section in fields(PipelineConfig):
        lines.append(f"[{section.name}]")
        for k, v in dataclasses.asdict(getattr(cfg, section.name)).items():
            lines.append(f"{k} = {'none' if v is None else v}")
        lines.append("")
    return "\n".join(lines)
