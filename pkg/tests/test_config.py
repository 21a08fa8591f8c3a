from pathlib import Path

import pytest

from bcnn_ctn.config import KEYS, ConfigError, config_from_dict, dump_config, load_config, parse_text
from bcnn_ctn.trainer import TrainConfig

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.mark.parametrize("name", ["default.cfg", "desk.cfg"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.margins.alpha_t == 0.55


def test_default_config_matches_dataclass_defaults():
    cfg = load_config(CONFIGS / "default.cfg")
    ref = TrainConfig()
    assert (cfg.learning_rate, cfg.momentum, cfg.margins, cfg.sampler) == \
        (ref.learning_rate, ref.momentum, ref.margins, ref.sampler)


def test_dump_parse_round_trip():
    cfg = load_config(CONFIGS / "desk.cfg")
    assert config_from_dict(parse_text(dump_config(cfg))) == cfg
    assert set(parse_text(dump_config(cfg))) == set(KEYS)


def test_missing_key_named():
    raw = parse_text(dump_config(TrainConfig()))
    del raw["mu2"]
    with pytest.raises(ConfigError, match="missing config key: mu2"):
        config_from_dict(raw)


def test_unknown_and_bad_values():
    raw = parse_text(dump_config(TrainConfig()))
    with pytest.raises(ConfigError, match="unknown"):
        config_from_dict({**raw, "gamma": "1"})
    with pytest.raises(ConfigError, match="conv_blocks"):
        config_from_dict({**raw, "conv_blocks": "8:x"})
    with pytest.raises(ConfigError):
        config_from_dict({**raw, "alpha_t": "2"})
    with pytest.raises(ConfigError, match="duplicate"):
        parse_text("a = 1\na = 2\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_text("just words\n")
