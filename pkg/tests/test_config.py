import json

import pytest

from slkd.config import DEFAULT_STUDENT, DEFAULT_TEACHER, NetConfig, RunConfig, parse_config
from slkd.errors import ConfigError


def test_minimal_config_defaults():
    cfg = parse_config('{"data": {"root": "ds"}}')
    assert cfg.loss.alpha1 == 0.5 and cfg.loss.alpha2 == 0.1
    assert (cfg.train.beta1, cfg.train.beta2, cfg.train.weight_decay) == (0.9, 0.999, 1e-4)
    assert (cfg.train.lr, cfg.train.lr_min) == (1e-4, 1e-6)
    assert cfg.net.teacher == DEFAULT_TEACHER and cfg.net.student == DEFAULT_STUDENT
    assert cfg.loss.teacherB_input == "clean"


def test_data_section_required():
    with pytest.raises(ConfigError, match="data"):
        parse_config("{}")


@pytest.mark.parametrize("text,path", [
    ('{"data": {"root": "d"}, "loss": {"alpha1": -1}}', "loss.alpha1"),
    ('{"data": {"root": "d"}, "loss": {"use_nk": true}}', "loss.use_nk"),
    ('{"data": {"root": "d"}, "train": {"steps": "10"}}', "train.steps"),
    ('{"data": {"root": "d"}, "net": {"student": {"levels": 3}}}', "net.student"),
    ('{"data": {"root": "d", "kind": "snow"}}', "data.kind"),
])
def test_rejections_name_json_path(text, path):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.path.startswith(path)
    assert path in str(exc.value)


def test_patch_divisibility_checked():
    with pytest.raises(ConfigError, match="patch"):
        parse_config('{"data": {"root": "d"}, "train": {"patch": 36}}')


def test_malformed_json():
    with pytest.raises(ConfigError, match="malformed"):
        parse_config("{data")


def test_round_trip():
    text = json.dumps({"data": {"root": "x", "count": 12, "params": {"sigma": 0.05}},
                       "net": {"student": {"levels": 2, "blocks": [1, 1], "base_dim": 8}},
                       "train": {"steps": 7, "patch": 16}, "loss": {"use_et": False}})
    cfg = parse_config(text)
    again = parse_config(cfg.to_json())
    assert again == cfg
    assert json.loads(again.to_json()) == json.loads(cfg.to_json())


def test_netconfig_invariants():
    with pytest.raises(ValueError):
        NetConfig(levels=3, blocks=(1, 1))
    with pytest.raises(ValueError):
        NetConfig(kernel=4)
    assert NetConfig().dim(3) == 64


def test_configs_are_frozen():
    cfg = parse_config('{"data": {"root": "d"}}')
    with pytest.raises(Exception):
        cfg.loss = None
    assert isinstance(cfg, RunConfig)
