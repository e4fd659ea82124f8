import json
from pathlib import Path

import pytest

from macts.config import ConfigError, ScenarioConfig, TopologySpec, load_config, parse_override


def test_defaults_validate():
    c = ScenarioConfig()
    assert c.broadcast_period_s == 30 and c.xi_us == 5 and c.rho_v == 0.5
    assert c.d_fixed_us == 3.33 and c.delay_std_us == 0.07 and c.forward_latency_us == 500
    assert c.hops == 2


def test_ats_has_single_hop():
    assert ScenarioConfig(protocol="ats", H_initial=4).hops == 1


@pytest.mark.parametrize(
    "field,value",
    [
        ("delay_mean_us", 0),
        ("measurement_interval_s", 0),
        ("convergence_threshold_us", -1),
        ("rho_v", 1.0),
        ("H_initial", 0),
        ("protocol", "ftsp"),
        ("convergence_rule", "eventually"),
        ("loss_probability", 1.0),
    ],
)
def test_invalid_values_rejected(field, value):
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({field: value})


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config keys: bogus"):
        ScenarioConfig.from_dict({"bogus": 1})


def test_unknown_nested_key_rejected():
    with pytest.raises(ConfigError, match="topology.depth"):
        ScenarioConfig.from_dict({"topology": {"kind": "grid", "depth": 3}})


def test_bad_type_rejected():
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"H_initial": 2.5})


def test_json_round_trip():
    c = ScenarioConfig.from_dict({"topology": "random:20:0.4:3", "seed": 11, "H_initial": 3})
    assert ScenarioConfig.from_dict(json.loads(c.to_json())) == c


@pytest.mark.parametrize(
    "text,label",
    [("grid:5x5", "grid5x5"), ("line:9", "line9"), ("random:25:0.3:7", "random25_r0.3_s7")],
)
def test_topology_parse(text, label):
    assert TopologySpec.parse(text).label == label


@pytest.mark.parametrize("text", ["grid:5", "line:x", "torus:4", "random:3"])
def test_topology_parse_errors(text):
    with pytest.raises(ConfigError):
        TopologySpec.parse(text)


def test_override_matches_edited_file(tmp_path):
    base = {"topology": "grid:3x3", "H_initial": 2, "seed": 0}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(base))
    via_flag = load_config(p).with_overrides(dict([parse_override("H_initial=1"),
                                                   parse_override("topology.rows=4")]))
    edited = tmp_path / "d.json"
    edited.write_text(json.dumps({**base, "H_initial": 1, "topology": "grid:4x3"}))
    assert via_flag == load_config(edited)


def test_override_parsing():
    assert parse_override("protocol=ats") == ("protocol", "ats")
    assert parse_override("xi_us=4.5") == ("xi_us", 4.5)
    assert parse_override("stop_after_converged_s=null") == ("stop_after_converged_s", None)
    with pytest.raises(ConfigError):
        parse_override("no_equals")


def test_override_unknown_key():
    with pytest.raises(ConfigError):
        ScenarioConfig().with_overrides({"topology.nope": 1})


def test_load_errors_are_distinct(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        load_config(arr)


def test_shipped_configs_load():
    root = Path(__file__).resolve().parents[1] / "configs"
    assert load_config(root / "grid5.json").topology.label == "grid5x5"
    assert load_config(root / "line9.json").topology.label == "line9"
