import pytest

from edgeaudio.compiler import OpSupportPolicy
from edgeaudio.config import load_config, parse_config
from edgeaudio.errors import ConfigError


def test_defaults():
    cfg = load_config(None)
    assert cfg.augment is None and cfg.policy == OpSupportPolicy() and cfg.run == {}


def test_sections(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("frontend:\n  noise_reduction_enabled: false\naugment:\n  preset: emotion\n  rng_seed: 3\n"
                 "policy:\n  param_cache_budget_bytes: 4096\nrun:\n  db_floor: -70.0\n")
    cfg = load_config(p)
    assert cfg.frontend.noise_reduction_enabled is False
    assert cfg.augment.rng_seed == 3 and cfg.augment.gaussian_prob == 0.15
    assert cfg.policy.param_cache_budget_bytes == 4096
    assert cfg.run == {"db_floor": -70.0}


@pytest.mark.parametrize("data", [
    {"extra": {}},
    {"policy": {"bogus": 1}},
    {"frontend": {"nope": 1}},
    {"augment": {"preset": "loud"}},
    {"run": [1, 2]},
    [1, 2],
])
def test_bad_configs(data):
    with pytest.raises(ConfigError):
        parse_config(data)


def test_unreadable_and_invalid(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    p = tmp_path / "bad.yaml"
    p.write_text("a: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(p)
