from pathlib import Path

import pytest

from segvox.config import (
    PipelineConfig,
    apply_overrides,
    dump_config,
    load_config,
    parse_config_text,
    parse_set_flags,
)
from segvox.errors import ConfigError


def test_defaults():
    cfg = load_config(None)
    assert cfg.model.d_model == 256 and cfg.model.w_s == 0.9
    assert cfg.decode.window_T_s == 20.0 and cfg.decode.maxlen_s == 10.0
    assert cfg.feature.num_mel_bins == 80


def test_parse_sections():
    cfg = parse_config_text("[model]\nd_model = 32\nn_heads = 2\n[feature]\ndither = yes\n"
                            "high_freq_hz = none\n[general]\nseed = 7\n")
    assert cfg.model.d_model == 32 and cfg.feature.dither is True
    assert cfg.feature.high_freq_hz is None and cfg.seed == 7


def test_unknown_key_and_section():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("[model]\nwidth = 3\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config_text("[nonsense]\nx = 1\n")


def test_bad_value():
    with pytest.raises(ConfigError):
        parse_config_text("[train]\nepochs = many\n")


def test_invalid_combination_reported_as_config_error():
    with pytest.raises(ConfigError):
        parse_config_text("[model]\nd_model = 30\nn_heads = 4\n")


def test_set_flags():
    entries = parse_set_flags(["decode.maxlen_s=5", "train.epochs=2"])
    cfg = apply_overrides(PipelineConfig(), entries)
    assert cfg.decode.maxlen_s == 5.0 and cfg.train.epochs == 2
    with pytest.raises(ConfigError):
        parse_set_flags(["maxlen=5"])


def test_dump_round_trip():
    cfg = parse_config_text("[model]\nd_model = 32\nn_heads = 2\n[vad]\naggressiveness = 3\n")
    assert parse_config_text(dump_config(cfg)) == cfg


def test_shipped_configs_load():
    root = Path(__file__).resolve().parent.parent / "configs"
    for path in sorted(root.glob("*.ini")):
        load_config(str(path))
