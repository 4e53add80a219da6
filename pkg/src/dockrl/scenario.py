"""Apollo transposition-and-docking scenario: limits, geometry, initial
conditions, docking check and collision check."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quaternion as quat
from .dynamics import ChaserState, MassProperties, port_state_batch
from .quaternion import InvalidInputError


def _vec3(x) -> np.ndarray:
    return np.array(x, dtype=float).reshape(3)


@dataclass(frozen=True)
class DockingConditions:
    r_p_tol: float = 0.15
    v_px_goal: float = 0.1
    v_px_lo: float = 0.05
    v_px_hi: float = 0.15
    v_yz_tol: float = 0.1
    euler_goal: np.ndarray = field(default_factory=lambda: np.array([-60.0, 0.0, 0.0]))
    euler_tol: float = 5.0
    w_tol: float = 0.75

    def __post_init__(self):
        object.__setattr__(self, "euler_goal", _vec3(self.euler_goal))
        if not self.v_px_lo < self.v_px_goal < self.v_px_hi:
            raise InvalidInputError("docking velocity window must satisfy lo < goal < hi")
        if min(self.r_p_tol, self.v_yz_tol, self.euler_tol, self.w_tol) <= 0:
            raise InvalidInputError("docking tolerances must be positive")

    @property
    def goal_quaternion(self) -> np.ndarray:
        return quat.from_euler_xyz(np.radians(self.euler_goal))


@dataclass(frozen=True)
class InitialConditionRange:
    """Box of initial conditions.  Angles in degrees, rates in deg/s."""

    r_center: np.ndarray
    r_halfwidth: np.ndarray
    v_center: np.ndarray
    v_halfwidth: np.ndarray
    euler_center: np.ndarray
    euler_halfwidth: np.ndarray
    w_center: np.ndarray
    w_halfwidth: np.ndarray

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            object.__setattr__(self, name, _vec3(getattr(self, name)))
        for name in ("r_halfwidth", "v_halfwidth", "euler_halfwidth", "w_halfwidth"):
            if np.any(getattr(self, name) < 0):
                raise InvalidInputError(f"{name} must be non-negative")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower/upper 12-vectors in sampling order ``[r, v, euler, w]``."""
        center = np.concatenate([self.r_center, self.v_center, self.euler_center, self.w_center])
        half = np.concatenate([self.r_halfwidth, self.v_halfwidth, self.euler_halfwidth,
                               self.w_halfwidth])
        return center - half, center + half


@dataclass(frozen=True)
class ScenarioConfig:
    f_max: np.ndarray
    l_max: np.ndarray
    r_c: np.ndarray
    r_t: np.ndarray
    box_y: float
    box_z: float
    box_depth_x: float
    mass_props: MassProperties
    docking: DockingConditions
    ic_test: InitialConditionRange
    ic_train: InitialConditionRange
    dt: float = 1.0
    t_limit_train: float = 150.0
    t_limit_test: float = 250.0
    omega_frame: str = "inertial"

    def __post_init__(self):
        for name in ("f_max", "l_max", "r_c", "r_t"):
            object.__setattr__(self, name, _vec3(getattr(self, name)))
        if np.any(self.f_max <= 0) or np.any(self.l_max <= 0):
            raise InvalidInputError("actuator limits must be strictly positive")
        if min(self.box_y, self.box_z, self.box_depth_x) < 0:
            raise InvalidInputError("collision box dimensions must be non-negative")
        if not self.dt > 0:
            raise InvalidInputError("dt must be positive")
        if not 0 < self.t_limit_train <= self.t_limit_test:
            raise InvalidInputError("need 0 < t_limit_train <= t_limit_test")
        if self.omega_frame not in ("inertial", "body"):
            raise InvalidInputError("omega_frame must be 'inertial' or 'body'")

    def max_steps(self, training: bool) -> int:
        limit = self.t_limit_train if training else self.t_limit_test
        return int(round(limit / self.dt))

    def docked_com_position(self) -> np.ndarray:
        """Centre-of-mass position that puts the ports together at the goal attitude."""
        return self.r_t - quat.rotate(self.docking.goal_quaternion, self.r_c)


def initial_state_from_sample(values: np.ndarray) -> np.ndarray:
    """Map stacked 12-vectors ``[r, v, euler_deg, w_deg_s]`` to 13-vector states."""
    values = np.asarray(values, dtype=float)
    q = quat.from_euler_xyz(np.radians(values[..., 6:9]))
    w = np.radians(values[..., 9:12])
    return np.concatenate([values[..., 0:6], q, w], axis=-1)


def sample_initial_condition(ic_range: InitialConditionRange, rng: np.random.Generator) -> ChaserState:
    lo, hi = ic_range.bounds()
    return ChaserState.from_vector(initial_state_from_sample(rng.uniform(lo, hi)))


def _wrap_deg(angle):
    return (angle + 180.0) % 360.0 - 180.0


@dataclass(frozen=True)
class DockingReport:
    success: bool
    conditions: dict
    r_p: np.ndarray
    v_p: np.ndarray
    euler_deg: np.ndarray
    w_deg_s: np.ndarray


def docking_conditions_batch(x: np.ndarray, cfg: ScenarioConfig) -> dict:
    """Per-condition pass flags (stacked) plus the measured quantities."""
    dock = cfg.docking
    r_p, v_p = port_state_batch(x, cfg.r_c, cfg.r_t, cfg.omega_frame)
    euler = np.degrees(quat.to_euler_xyz(x[..., 6:10]))
    w_deg = np.degrees(x[..., 10:13])
    flags = {
        "position": np.all(np.abs(r_p) <= dock.r_p_tol, axis=-1),
        "axial_velocity": (v_p[..., 0] >= dock.v_px_lo) & (v_p[..., 0] <= dock.v_px_hi),
        "lateral_velocity": np.all(np.abs(v_p[..., 1:3]) <= dock.v_yz_tol, axis=-1),
        "attitude": np.all(np.abs(_wrap_deg(euler - dock.euler_goal)) <= dock.euler_tol, axis=-1),
        "angular_velocity": np.all(np.abs(w_deg) <= dock.w_tol, axis=-1),
    }
    return {"flags": flags, "r_p": r_p, "v_p": v_p, "euler_deg": euler, "w_deg_s": w_deg}


def docked_batch(x: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    flags = docking_conditions_batch(x, cfg)["flags"]
    out = flags["position"]
    for key in ("axial_velocity", "lateral_velocity", "attitude", "angular_velocity"):
        out = out & flags[key]
    return out


def check_docking(state: ChaserState, cfg: ScenarioConfig) -> DockingReport:
    res = docking_conditions_batch(state.as_vector(), cfg)
    conditions = {k: bool(v) for k, v in res["flags"].items()}
    return DockingReport(
        success=all(conditions.values()),
        conditions=conditions,
        r_p=res["r_p"],
        v_p=res["v_p"],
        euler_deg=res["euler_deg"],
        w_deg_s=res["w_deg_s"],
    )


def max_collision_distance(cfg: ScenarioConfig) -> float:
    return float(np.hypot(0.5 * cfg.box_y, 0.5 * cfg.box_z))


def port_in_box(r_port: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    """Strict point-in-box test for inertial docking-port positions."""
    x_face = cfg.r_t[0]
    return (
        (r_port[..., 0] > x_face)
        & (r_port[..., 0] < x_face + cfg.box_depth_x)
        & (np.abs(r_port[..., 1]) < 0.5 * cfg.box_y)
        & (np.abs(r_port[..., 2]) < 0.5 * cfg.box_z)
    )


def collision_batch(x: np.ndarray, cfg: ScenarioConfig, docked: np.ndarray | None = None):
    """Stacked ``(collided, |r_p|)``; a docked state never counts as a collision."""
    r_p, _ = port_state_batch(x, cfg.r_c, cfg.r_t, cfg.omega_frame)
    inside = port_in_box(r_p + cfg.r_t, cfg)
    if docked is None:
        docked = docked_batch(x, cfg)
    return inside & ~docked, np.linalg.norm(r_p, axis=-1)


def check_collision(state: ChaserState, cfg: ScenarioConfig) -> tuple[bool, float]:
    collided, dist = collision_batch(state.as_vector(), cfg)
    return bool(collided), float(dist)
