import numpy as np
import pytest
import yaml

from dockrl.config import default_config, default_config_text, parse_config


@pytest.fixture(scope="session")
def cfg():
    return default_config()


@pytest.fixture(scope="session")
def scenario(cfg):
    return cfg.scenario_config()


@pytest.fixture(scope="session")
def task(cfg):
    return cfg.task()


def config_with(**overrides):
    """Default config with dotted-path overrides, e.g. ``{"ppo.batch_episodes": 4}``."""
    doc = yaml.safe_load(default_config_text())
    for path, value in overrides.items():
        node = doc
        keys = path.split(".")
        for k in keys[:-1]:
            node = node[k]
        node[keys[-1]] = value
    return parse_config(yaml.safe_dump(doc))


SMALL_RUN = {
    "scenario.t_limit_train_s": 12.0,
    "scenario.t_limit_test_s": 15.0,
    "ppo.batch_episodes": 4,
    "ppo.minibatch": 16,
    "ppo.value_minibatch": 16,
    "ppo.epochs_per_update": 2,
    "ppo.value_epochs": 2,
    "network.policy_hidden": [8, 6, 5],
    "network.value_hidden": [8, 4, 3],
    "run.checkpoint_interval": 1,
}


@pytest.fixture(scope="session")
def small_cfg():
    return config_with(**{k.replace("-", "_"): v for k, v in SMALL_RUN.items()})


def random_unit_quaternions(rng, n):
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
