"""Rigid-body 6-DOF chaser dynamics under zero-order-hold commands.

Translation is the exact ZOH solution of the double integrator.  Rotation
integrates quaternion kinematics plus Euler's equations with fixed-step RK4
(``SUBSTEPS`` per sample), renormalizing the quaternion after each substep.
Thrust and torque commands are inertial-frame vectors held constant over
the sample; the torque is re-expressed in the body frame at every RK4 stage.

The ``*_batch`` functions work on stacked arrays (leading axis = episode)
and are what the rollout code uses.  The dataclass API wraps them for
single states.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quaternion as quat
from .quaternion import InvalidInputError

SUBSTEPS = 12
STATE_DIM = 13


@dataclass(frozen=True)
class MassProperties:
    mass: float
    inertia: np.ndarray
    inertia_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        J = np.array(self.inertia, dtype=float)
        if not self.mass > 0:
            raise InvalidInputError(f"mass must be positive, got {self.mass}")
        if J.shape != (3, 3):
            raise InvalidInputError(f"inertia must be 3x3, got shape {J.shape}")
        if np.max(np.abs(J - J.T)) > 1e-12 * max(1.0, np.max(np.abs(J))):
            raise InvalidInputError("inertia tensor is not symmetric")
        if np.min(np.linalg.eigvalsh(J)) <= 0:
            raise InvalidInputError("inertia tensor is not positive definite")
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "inertia", J)
        object.__setattr__(self, "inertia_inv", np.linalg.inv(J))


@dataclass(frozen=True)
class ChaserState:
    """Chaser centre-of-mass state in the target-centred inertial frame.

    ``w`` is the body-frame angular velocity (rad/s); ``q`` is scalar-first
    and maps body to inertial.
    """

    r: np.ndarray
    v: np.ndarray
    q: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        for name, size in (("r", 3), ("v", 3), ("q", 4), ("w", 3)):
            arr = np.array(getattr(self, name), dtype=float).reshape(size)
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"state component {name} is not finite")
            object.__setattr__(self, name, arr)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.r, self.v, self.q, self.w])

    @classmethod
    def from_vector(cls, x) -> "ChaserState":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3], x[3:6], x[6:10], x[10:13])


@dataclass(frozen=True)
class ControlAction:
    """Inertial-frame thrust ``F`` (N) and torque ``L`` (N m)."""

    F: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "F", np.array(self.F, dtype=float).reshape(3))
        object.__setattr__(self, "L", np.array(self.L, dtype=float).reshape(3))

    @classmethod
    def clamped(cls, F, L, f_max, l_max) -> "ControlAction":
        f_max = np.asarray(f_max, dtype=float)
        l_max = np.asarray(l_max, dtype=float)
        return cls(np.clip(F, -f_max, f_max), np.clip(L, -l_max, l_max))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.F, self.L])


def omega_matrix(q) -> np.ndarray:
    """The 4x3 matrix with ``q_dot = 0.5 * Omega(q) @ w`` (body rates)."""
    return quat.omega_matrix_unchecked(quat.check_unit(q))


def body_force(q, F_inertial) -> np.ndarray:
    return quat.rotate_inverse(quat.check_unit(q), np.asarray(F_inertial, dtype=float))


def _rotational_rates(q, w, L_inertial, J, J_inv):
    q_dot = 0.5 * np.einsum("...ij,...j->...i", quat.omega_matrix_unchecked(q), w)
    L_body = quat.rotate_inverse(q, L_inertial)
    Jw = w @ J.T
    w_dot = (L_body - np.cross(w, Jw)) @ J_inv.T
    return q_dot, w_dot


def propagate_rotation(q, w, L_inertial, J, J_inv, dt, substeps=SUBSTEPS):
    h = dt / substeps
    for _ in range(substeps):
        k1q, k1w = _rotational_rates(q, w, L_inertial, J, J_inv)
        k2q, k2w = _rotational_rates(q + 0.5 * h * k1q, w + 0.5 * h * k1w, L_inertial, J, J_inv)
        k3q, k3w = _rotational_rates(q + 0.5 * h * k2q, w + 0.5 * h * k2w, L_inertial, J, J_inv)
        k4q, k4w = _rotational_rates(q + h * k3q, w + h * k3w, L_inertial, J, J_inv)
        q = q + (h / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        w = w + (h / 6.0) * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
        q = quat.normalize(q)
    return q, w


def step_batch(x: np.ndarray, u: np.ndarray, props: MassProperties, dt: float,
               substeps: int = SUBSTEPS) -> np.ndarray:
    """Propagate stacked 13-vectors ``x`` under stacked commands ``u = [F, L]``."""
    r, v, q, w = x[..., 0:3], x[..., 3:6], x[..., 6:10], x[..., 10:13]
    accel = u[..., 0:3] / props.mass
    r_next = r + v * dt + 0.5 * accel * dt * dt
    v_next = v + accel * dt
    q_next, w_next = propagate_rotation(q, w, u[..., 3:6], props.inertia, props.inertia_inv,
                                        dt, substeps)
    return np.concatenate([r_next, v_next, q_next, w_next], axis=-1)


def step(state: ChaserState, action: ControlAction, props: MassProperties, dt: float,
         substeps: int = SUBSTEPS) -> ChaserState:
    if not dt > 0:
        raise InvalidInputError(f"dt must be positive, got {dt}")
    x = step_batch(state.as_vector(), action.as_vector(), props, dt, substeps)
    return ChaserState.from_vector(x)


def port_state_batch(x: np.ndarray, r_c, r_t, omega_frame: str = "inertial"):
    """Relative docking-port position and velocity for stacked states."""
    r, v, q, w = x[..., 0:3], x[..., 3:6], x[..., 6:10], x[..., 10:13]
    arm = quat.rotate(q, np.broadcast_to(np.asarray(r_c, dtype=float), r.shape))
    r_p = r + arm - np.asarray(r_t, dtype=float)
    if omega_frame == "inertial":
        w_frame = quat.rotate(q, w)
    elif omega_frame == "body":
        w_frame = w
    else:
        raise InvalidInputError(f"omega_frame must be 'inertial' or 'body', got {omega_frame!r}")
    v_p = v + np.cross(w_frame, arm)
    return r_p, v_p


def relative_port_state(state: ChaserState, r_c, r_t, omega_frame: str = "inertial"):
    return port_state_batch(state.as_vector(), r_c, r_t, omega_frame)
