import json

import numpy as np
import pytest
import yaml

from dockrl import network as nn
from dockrl.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from dockrl.config import (CONFIG_DIR_ENV, ConfigError, default_config_text, dump_config, load_config,
                           parse_config)
from dockrl.ppo import OptimizerState

from conftest import config_with


def _text_with(edit):
    doc = yaml.safe_load(default_config_text())
    edit(doc)
    return yaml.safe_dump(doc, sort_keys=False)


# -- config ---------------------------------------------------------------------

def test_default_config_matches_published_values(cfg):
    sc = cfg.scenario_config()
    assert np.array_equal(sc.f_max, [790.80] * 3) and np.array_equal(sc.l_max, [2534.91] * 3)
    assert np.array_equal(sc.r_c, [4.479, 0, 0]) and np.array_equal(sc.r_t, [-3.25, 0, 0])
    assert (sc.t_limit_train, sc.t_limit_test, sc.dt) == (150.0, 250.0, 1.0)
    assert cfg.network.policy_hidden == [130, 88, 60] and cfg.network.value_hidden == [130, 25, 5]
    assert cfg.ppo.kl_target == 0.001 and cfg.ppo.batch_episodes == 128
    assert cfg.scenario.mass_properties.placeholder is True


def test_type_error_reports_line():
    text = default_config_text().replace("kl_target: 0.001", "kl_target: lots")
    line = next(i for i, l in enumerate(text.splitlines(), 1) if "kl_target" in l)
    with pytest.raises(ConfigError, match=rf"my.yaml:{line}: ppo.kl_target"):
        parse_config(text, "my.yaml")


def test_unknown_key_rejected():
    text = _text_with(lambda d: d["ppo"].__setitem__("warp_factor", 9))
    with pytest.raises(ConfigError, match="warp_factor"):
        parse_config(text)


def test_missing_scenario_rejected():
    with pytest.raises(ConfigError, match="scenario"):
        parse_config("version: 1\n")


def test_yaml_syntax_error_reports_line():
    with pytest.raises(ConfigError, match=r"bad.yaml:\d+: YAML parse error"):
        parse_config("version: 1\nscenario: [unclosed\n", "bad.yaml")


@pytest.mark.parametrize("edit", [
    lambda d: d["scenario"].__setitem__("t_limit_test_s", 100.0),
    lambda d: d["reward"].__setitem__("gamma1", 0.999),
    lambda d: d["ppo"].__setitem__("epsilon", 1.5),
    lambda d: d["scenario"]["mass_properties"].__setitem__("mass_kg", -1.0),
    lambda d: d.__setitem__("version", 2),
    lambda d: d["scenario"]["actuators"].__setitem__("f_max_n", [1.0, 2.0]),
])
def test_semantic_errors_are_config_errors(edit):
    with pytest.raises(ConfigError):
        parse_config(_text_with(edit))


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.yaml")


def test_hash_ignores_run_section(cfg):
    other = config_with(**{"run.seed": 99, "run.workers": 8, "run.checkpoint_dir": "/elsewhere"})
    assert other.config_hash() == cfg.config_hash()
    assert config_with(**{"ppo.epsilon": 0.3}).config_hash() != cfg.config_hash()


def test_dump_round_trip(cfg):
    again = parse_config(dump_config(cfg))
    assert again == cfg and again.config_hash() == cfg.config_hash()


def test_config_dir_env_var(tmp_path, monkeypatch):
    text = default_config_text().replace("seed: 0", "seed: 4242")
    (tmp_path / "default.yaml").write_text(text)
    monkeypatch.setenv(CONFIG_DIR_ENV, str(tmp_path))
    assert "seed: 4242" in default_config_text()
    monkeypatch.delenv(CONFIG_DIR_ENV)
    assert "seed: 4242" not in default_config_text()


def test_gain_file_is_resolved_against_base_dir(tmp_path, cfg):
    from dockrl.lqr import TuningResult, save_design
    design = cfg.lqr_design()
    save_design(tmp_path / "gain.yaml", TuningResult(design, 1.0, 105.0, []))
    other = config_with(**{"lqr.gain_file": "gain.yaml"})
    assert np.array_equal(other.lqr_design(tmp_path).K, design.K)


# -- checkpoints ------------------------------------------------------------------

def _snapshot(seed=0):
    rng = np.random.default_rng(seed)
    norm = nn.RunningNormalizer().update(rng.normal(size=(50, 13)) * np.pi)
    return nn.Snapshot(nn.init_policy(rng, init_log_var=-0.123456789), nn.init_value(rng), norm, 100.0, False)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    snap = _snapshot()
    opt = OptimizerState.fresh(snap)
    grads = [np.random.default_rng(1).normal(size=a.shape) / 3 for a in snap.policy.arrays()]
    _, p_state = nn.adam_step(snap.policy.arrays(), grads, opt.policy, 1e-3)
    opt = OptimizerState(p_state, opt.value)
    save_checkpoint(tmp_path / "c.json", snap, "abc", {"k": 1}, {"update": 3}, opt)
    doc = load_checkpoint(tmp_path / "c.json")
    back = doc["snapshot"]
    for a, b in zip(snap.policy.arrays() + snap.value.arrays(), back.policy.arrays() + back.value.arrays()):
        assert a.dtype == b.dtype and np.array_equal(a, b)
    assert back.normalizer.count == snap.normalizer.count
    assert np.array_equal(back.normalizer.mean, snap.normalizer.mean)
    assert np.array_equal(back.normalizer.m2, snap.normalizer.m2)
    assert (back.value_scale, back.normalize_quaternion) == (100.0, False)
    assert doc["optimizer"].policy.t == 1
    for a, b in zip(opt.policy.m + opt.policy.v, doc["optimizer"].policy.m + doc["optimizer"].policy.v):
        assert np.array_equal(a, b)
    assert doc["config_hash"] == "abc" and doc["trainer"] == {"update": 3}


def test_checkpoint_save_is_atomic(tmp_path):
    save_checkpoint(tmp_path / "c.json", _snapshot(), "h")
    assert [p.name for p in tmp_path.iterdir()] == ["c.json"]


def test_bad_checkpoints(tmp_path):
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "missing.json")
    (tmp_path / "junk.json").write_text("{not json")
    with pytest.raises(CheckpointError, match="unreadable"):
        load_checkpoint(tmp_path / "junk.json")
    (tmp_path / "other.json").write_text(json.dumps({"format": "something-else"}))
    with pytest.raises(CheckpointError, match="not a"):
        load_checkpoint(tmp_path / "other.json")

    save_checkpoint(tmp_path / "c.json", _snapshot(), "h")
    doc = json.loads((tmp_path / "c.json").read_text())
    doc["version"] = 99
    (tmp_path / "v.json").write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v.json")

    doc["version"] = 1
    doc["snapshot"]["policy"]["log_var"]["data"] = doc["snapshot"]["policy"]["log_var"]["data"][:-1]
    (tmp_path / "cut.json").write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="corrupted"):
        load_checkpoint(tmp_path / "cut.json")
