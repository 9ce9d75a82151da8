import copy
import json

import numpy as np
import pytest

from dincikf.config import bundled_scenario, config_hash, load_config, parse_config
from dincikf.errors import ConfigError

BUNDLED = ["scenario1.json", "scenario2.json", "stability.json", "zero_noise.json", "tree3.json", "loop2.json"]


def minimal():
    return {"schema_version": 1, "n_agents": 2, "duration_s": 1.0, "edges": [[0, 1]], "agents": [{}, {}]}


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_parse(name):
    cfg = load_config(bundled_scenario(name))
    assert cfg.n_agents == len(cfg.agents)
    assert cfg.ratio * cfg.measurement_rate_hz == cfg.imu_rate_hz


def test_defaults():
    cfg = parse_config(minimal())
    assert cfg.imu_rate_hz == 100 and cfg.ratio == 2
    assert cfg.filter == "dincikf" and cfg.ci_weights == "trace_min"
    assert cfg.n_ticks == 100
    np.testing.assert_allclose(cfg.gravity, [0, 0, -9.81])


@pytest.mark.parametrize(
    "patch, path",
    [
        ({"schema_version": 2}, "schema_version"),
        ({"bogus": 1}, "bogus"),
        ({"n_agents": 0}, "n_agents"),
        ({"edges": [[0, 5]]}, "edges[0]"),
        ({"edges": [[1, 1]]}, "edges[0]"),
        ({"measurement_rate_hz": 30}, "measurement_rate_hz"),
        ({"filter": "ukf"}, "filter"),
        ({"ci_weights": "median"}, "ci_weights"),
        ({"duration_s": -1}, "duration_s"),
        ({"agents": [{}]}, "agents"),
        ({"agents": [{"noise": {"sigma_g": -1}}, {}]}, "agents[0].noise.sigma_g"),
        ({"agents": [{"visibility": {"mode": "sometimes"}}, {}]}, "agents[0].visibility.mode"),
    ],
)
def test_errors_name_the_field(patch, path):
    raw = minimal()
    raw.update(patch)
    with pytest.raises(ConfigError) as err:
        parse_config(raw)
    assert err.value.path == path


def test_missing_schema_version():
    raw = minimal()
    del raw["schema_version"]
    with pytest.raises(ConfigError, match="schema_version"):
        parse_config(raw)


def test_missing_file_names_path(tmp_path):
    p = tmp_path / "nope.json"
    with pytest.raises(ConfigError) as err:
        load_config(p)
    assert str(p) in str(err.value)


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)


def test_agent_overrides_merge_with_defaults():
    raw = minimal()
    raw["agent_defaults"] = {"noise": {"sigma_g": 0.1, "sigma_a": 0.2}}
    raw["agents"] = [{"noise": {"sigma_a": 0.5}}, {}]
    cfg = parse_config(raw)
    assert cfg.agents[0].noise.sigma_g == 0.1 and cfg.agents[0].noise.sigma_a == 0.5
    assert cfg.agents[1].noise.sigma_a == 0.2


def test_hash_tracks_content():
    a = minimal()
    b = copy.deepcopy(a)
    assert config_hash(a) == config_hash(json.loads(json.dumps(b)))
    b["seed"] = 3
    assert config_hash(a) != config_hash(b)


def test_overrides_revalidate():
    cfg = parse_config(minimal())
    assert cfg.with_overrides(seed=9).seed == 9
    assert cfg.with_overrides(seed=9).hash() != cfg.hash()
    with pytest.raises(ConfigError):
        cfg.with_overrides(filter="nope")


def test_visibility_modes():
    raw = minimal()
    raw["features"] = [{"position": [0, 0, 0]}]
    raw["agents"] = [{"visibility": {"mode": "every_k_ticks", "k": 3, "phase": 1}}, {"visibility": {"mode": "never"}}]
    cfg = parse_config(raw)
    vis = cfg.agents[0].visibility
    assert [vis.visible(m) for m in range(6)] == [False, True, False, False, True, False]
    assert cfg.feature_agents() == {0}
    assert cfg.feature_agents(persistent_only=True) == set()
