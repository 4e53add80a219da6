"""YAML run configuration: schema, validation with line context, hashing and
conversion into the domain objects."""
from __future__ import annotations

import hashlib
import json
import os
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Annotated, List, Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import quaternion as quat
from .dynamics import MassProperties
from .lqr import LqrDesign, load_design, tune_gain
from .ppo import PpoHyperparams
from .reward import RewardWeights
from .rollout import DockingTask
from .scenario import DockingConditions, InitialConditionRange, ScenarioConfig

CONFIG_DIR_ENV = "DOCKRL_CONFIG_DIR"
DEFAULT_CONFIG_NAME = "default.yaml"
HASHED_SECTIONS = ("scenario", "reward", "lqr", "network", "ppo")

Vec3 = Annotated[List[float], Field(min_length=3, max_length=3)]


class ConfigError(Exception):
    """Invalid configuration file; message carries file and line context."""


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Actuators(_Model):
    f_max_n: Vec3
    l_max_nm: Vec3


class Geometry(_Model):
    r_c_m: Vec3
    r_t_m: Vec3
    box_y_m: float
    box_z_m: float
    box_depth_x_m: float = 7.0


class MassSection(_Model):
    placeholder: bool = True
    mass_kg: float
    inertia_kgm2: List[List[float]]


class DockingSection(_Model):
    r_p_tol_m: float = 0.15
    v_px_goal_mps: float = 0.1
    v_px_range_mps: List[float] = [0.05, 0.15]
    v_yz_tol_mps: float = 0.1
    euler_goal_deg: Vec3 = [-60.0, 0.0, 0.0]
    euler_tol_deg: float = 5.0
    w_tol_degps: float = 0.75


class IcSection(_Model):
    r_center_m: Vec3
    r_halfwidth_m: Vec3
    v_center_mps: Vec3
    v_halfwidth_mps: Vec3
    euler_center_deg: Vec3
    euler_halfwidth_deg: Vec3
    w_center_degps: Vec3
    w_halfwidth_degps: Vec3


class ScenarioSection(_Model):
    dt_s: float = 1.0
    t_limit_train_s: float = 150.0
    t_limit_test_s: float = 250.0
    omega_frame: Literal["inertial", "body"] = "inertial"
    actuators: Actuators
    geometry: Geometry
    mass_properties: MassSection
    docking: DockingSection = DockingSection()
    ic_test: IcSection
    ic_train: IcSection


class RewardSection(_Model):
    m_diag: Vec3 = [2e5, 2e5, 2e5]
    q_diag: List[float] = [20.0] * 6
    p_diag: List[float] = [10e-6] * 3 + [1.11e-6] * 3
    c: float = 10.0
    d: float = 1000.0
    gamma1: float = 0.98
    gamma2: float = 0.995
    euler_des_deg: Vec3 = [-60.0, 0.0, 0.0]
    w_des_degps: Vec3 = [0.0, 0.0, 0.0]


class LqrSection(_Model):
    target_arrival_s: float = 105.0
    tolerance_s: float = 2.0
    origin_offset_m: Vec3 = [3.0, 0.0, 0.0]
    nominal_r0_m: Vec3 = [-20.0, 0.0, 0.0]
    nominal_v0_mps: Vec3 = [0.0, 0.0, 0.0]
    tuning_horizon_s: float = 250.0
    gain_file: Optional[str] = None


class NetworkSection(_Model):
    policy_hidden: List[int] = [130, 88, 60]
    value_hidden: List[int] = [130, 25, 5]
    init_log_var: float = 0.0
    value_scale: float = 100.0
    normalize_quaternion: bool = True


class PpoSection(_Model):
    epsilon: float = 0.2
    lr_policy: float = 3e-4
    lr_value: float = 1e-3
    kl_target: float = 0.001
    batch_episodes: int = 128
    epochs_per_update: int = 10
    minibatch: int = 4096
    value_epochs: int = 10
    value_minibatch: int = 1024
    normalize_advantages: bool = True
    log_var_lr_scale: float = 1.0


class RunSection(_Model):
    seed: int = 0
    workers: int = Field(1, ge=1)
    episode_budget: int = Field(600_000, gt=0)
    checkpoint_dir: str = "runs/default"
    checkpoint_interval: int = Field(10, ge=1)
    corner_eval_interval: int = Field(1, ge=1)


class RunConfig(_Model):
    version: int = 1
    scenario: ScenarioSection
    reward: RewardSection = RewardSection()
    lqr: LqrSection = LqrSection()
    network: NetworkSection = NetworkSection()
    ppo: PpoSection = PpoSection()
    run: RunSection = RunSection()

    @model_validator(mode="after")
    def _check_version(self):
        if self.version != 1:
            raise ValueError(f"unsupported config version {self.version}")
        return self

    def hashed_dict(self) -> dict:
        dump = self.model_dump(mode="json")
        return {k: dump[k] for k in HASHED_SECTIONS}

    def config_hash(self) -> str:
        canon = json.dumps(self.hashed_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    # -- domain objects -------------------------------------------------
    def scenario_config(self) -> ScenarioConfig:
        s = self.scenario
        d = s.docking
        lo, hi = d.v_px_range_mps
        return ScenarioConfig(
            f_max=s.actuators.f_max_n,
            l_max=s.actuators.l_max_nm,
            r_c=s.geometry.r_c_m,
            r_t=s.geometry.r_t_m,
            box_y=s.geometry.box_y_m,
            box_z=s.geometry.box_z_m,
            box_depth_x=s.geometry.box_depth_x_m,
            mass_props=MassProperties(s.mass_properties.mass_kg, np.array(s.mass_properties.inertia_kgm2)),
            docking=DockingConditions(d.r_p_tol_m, d.v_px_goal_mps, lo, hi, d.v_yz_tol_mps,
                                      np.array(d.euler_goal_deg), d.euler_tol_deg, d.w_tol_degps),
            ic_test=_ic(s.ic_test),
            ic_train=_ic(s.ic_train),
            dt=s.dt_s,
            t_limit_train=s.t_limit_train_s,
            t_limit_test=s.t_limit_test_s,
            omega_frame=s.omega_frame,
        )

    def reward_weights(self) -> RewardWeights:
        r = self.reward
        return RewardWeights(
            M=np.diag(r.m_diag), Q=np.diag(r.q_diag), P=np.diag(r.p_diag), c=r.c, d=r.d,
            gamma1=r.gamma1, gamma2=r.gamma2,
            q_des=quat.from_euler_xyz(np.radians(r.euler_des_deg)),
            w_des=np.radians(r.w_des_degps),
        )

    def ppo_hyperparams(self) -> PpoHyperparams:
        return PpoHyperparams(**self.ppo.model_dump())

    def lqr_design(self, base_dir: Path | None = None) -> LqrDesign:
        sc = self.scenario_config()
        if self.lqr.gain_file:
            path = Path(self.lqr.gain_file)
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            return load_design(path)
        return _tuned_design(tuple(sc.docked_com_position()), tuple(self.lqr.nominal_r0_m),
                             tuple(self.lqr.nominal_v0_mps), self.lqr.target_arrival_s,
                             self.lqr.tolerance_s, sc.dt, tuple(self.lqr.origin_offset_m),
                             sc.docking.r_p_tol, self.lqr.tuning_horizon_s)

    def task(self, base_dir: Path | None = None) -> DockingTask:
        return DockingTask(self.scenario_config(), self.reward_weights(), self.lqr_design(base_dir))


@lru_cache(maxsize=16)
def _tuned_design(r_target, r0, v0, target, tol, dt, offset, position_tol, t_max) -> LqrDesign:
    return tune_gain(np.array(r_target), np.array(r0), np.array(v0), target_time=target,
                     tolerance=tol, dt=dt, t_max=t_max, origin_offset=np.array(offset),
                     position_tol=position_tol).design


def _ic(s: IcSection) -> InitialConditionRange:
    return InitialConditionRange(s.r_center_m, s.r_halfwidth_m, s.v_center_mps, s.v_halfwidth_mps,
                                 s.euler_center_deg, s.euler_halfwidth_deg, s.w_center_degps,
                                 s.w_halfwidth_degps)


# -- loading -------------------------------------------------------------

def _line_for(root, loc) -> Optional[int]:
    node = root
    line = None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == key:
                    nxt = v
                    line = k.start_mark.line + 1
                    break
            if nxt is None:
                return line if line is not None else (node.start_mark.line + 1)
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            break
    return line


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark is not None else source
        raise ConfigError(f"{where}: YAML parse error: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = err["loc"]
            line = _line_for(root, loc)
            where = f"{source}:{line}" if line else source
            lines.append(f"{where}: {'.'.join(str(p) for p in loc)}: {err['msg']}")
        raise ConfigError("\n".join(lines)) from None
    try:
        cfg.scenario_config()
        cfg.reward_weights()
        cfg.ppo_hyperparams()
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path))


def default_config_text() -> str:
    env_dir = os.environ.get(CONFIG_DIR_ENV)
    if env_dir:
        candidate = Path(env_dir) / DEFAULT_CONFIG_NAME
        if candidate.exists():
            return candidate.read_text()
    return resources.files("dockrl").joinpath("data").joinpath(DEFAULT_CONFIG_NAME).read_text()


def default_config_path() -> Path | None:
    env_dir = os.environ.get(CONFIG_DIR_ENV)
    if env_dir and (Path(env_dir) / DEFAULT_CONFIG_NAME).exists():
        return Path(env_dir) / DEFAULT_CONFIG_NAME
    return None


def default_config() -> RunConfig:
    return parse_config(default_config_text(), DEFAULT_CONFIG_NAME)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
