from importlib import resources

import pytest

from railmac.config import ConfigError, config_from_dict, dump_config, load_config, parse_config
from railmac.presets import reference_configs

MINIMAL = """
scheme = "dcf"
horizon_us = 200000
warmup_us = 0

[dcf]

[[nodes]]
group = "phones"
traffic = "voip"
count = 2
"""


def test_minimal_config_parses_with_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.scheme == "dcf" and cfg.seed == 1
    assert cfg.mac_params().cw_min == 31
    assert cfg.nodes[0].profile().payload_bytes == 160


def test_horizon_not_after_warmup_names_both_fields():
    with pytest.raises(ConfigError) as err:
        parse_config(MINIMAL.replace("warmup_us = 0", "warmup_us = 300000"))
    (msg,) = err.value.errors
    assert "horizon_us (200000)" in msg and "warmup_us (300000)" in msg


def test_scheme_section_must_match():
    text = MINIMAL.replace("[dcf]", "[bmac]")
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    msg = err.value.errors[0]
    assert "['bmac']" in msg and "[dcf]" in msg


def test_every_field_error_is_reported():
    text = MINIMAL.replace("count = 2", "count = 0").replace("warmup_us = 0", "warmup_us = -1")
    text = text.replace("[dcf]", "[dcf]\ncw_min = 30")
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    locs = sorted(e.split(":")[0] for e in err.value.errors)
    assert locs == ["dcf", "nodes.0.count", "warmup_us"]


def test_unknown_keys_and_bad_syntax():
    with pytest.raises(ConfigError) as err:
        parse_config(MINIMAL + "\nspeed = 3\n")
    assert err.value.errors[0].startswith("nodes.0.speed:")
    with pytest.raises(ConfigError) as err:
        parse_config("scheme = ")
    assert err.value.errors[0].startswith("syntax:")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")


def test_situation_requires_backoff_queue():
    data = reference_configs()["situation_demo"].model_dump(exclude_none=True)
    data["scheme"] = "dcf"
    data.pop("backoff_queue")
    data["dcf"] = {}
    with pytest.raises(ConfigError) as err:
        config_from_dict(data)
    assert "backoff_queue" in err.value.errors[0]


@pytest.mark.parametrize("name", sorted(reference_configs()))
def test_reference_configs_round_trip(name):
    cfg = reference_configs()[name]
    text = dump_config(cfg)
    assert parse_config(text) == cfg
    stored = resources.files("railmac").joinpath("data", f"{name}.toml").read_text()
    assert stored == text


def test_replace_revalidates():
    cfg = parse_config(MINIMAL)
    assert cfg.replace(seed=9).seed == 9
    with pytest.raises(Exception):
        cfg.replace(horizon_us=0)
