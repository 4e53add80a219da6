"""Dual reward: dense shaping penalty ``r1`` and sparse docking bonus ``r2``."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quaternion as quat
from .quaternion import InvalidInputError

TERM_NAMES = ("lqr", "attitude", "control", "collision")


def _is_pd(A) -> bool:
    A = np.asarray(A, dtype=float)
    return bool(np.allclose(A, A.T) and np.min(np.linalg.eigvalsh(A)) > 0)


@dataclass(frozen=True)
class RewardWeights:
    M: np.ndarray = field(default_factory=lambda: np.diag([2e5] * 3))
    Q: np.ndarray = field(default_factory=lambda: np.diag([20.0] * 6))
    P: np.ndarray = field(default_factory=lambda: np.diag([10e-6] * 3 + [1.11e-6] * 3))
    c: float = 10.0
    d: float = 1000.0
    gamma1: float = 0.98
    gamma2: float = 0.995
    q_des: np.ndarray = field(default_factory=lambda: quat.from_euler_xyz(np.radians([-60.0, 0, 0])))
    w_des: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name, shape in (("M", (3, 3)), ("Q", (6, 6)), ("P", (6, 6))):
            A = np.array(getattr(self, name), dtype=float)
            if A.shape != shape or not _is_pd(A):
                raise InvalidInputError(f"{name} must be a {shape[0]}x{shape[1]} positive definite matrix")
            object.__setattr__(self, name, A)
        if not (self.c > 0 and self.d > 0):
            raise InvalidInputError("collision coefficient c and docking bonus d must be positive")
        if not 0 < self.gamma1 < self.gamma2 < 1:
            raise InvalidInputError("discounts must satisfy 0 < gamma1 < gamma2 < 1")
        object.__setattr__(self, "q_des", quat.check_unit(np.array(self.q_des, dtype=float)))
        object.__setattr__(self, "w_des", np.array(self.w_des, dtype=float).reshape(3))


def error_quaternion(q, q_des) -> np.ndarray:
    """``q_des ⊗ q^-1`` with the sign fixed so the scalar part is non-negative.

    A zero scalar part is tie-broken on the first non-zero vector component
    so that ``q`` and ``-q`` always give the same result.
    """
    qe = quat.multiply(q_des, quat.conjugate(q))
    w = qe[..., 0]
    vec = qe[..., 1:]
    nz = vec != 0
    first = np.take_along_axis(vec, np.argmax(nz, axis=-1)[..., None], axis=-1)[..., 0]
    sign = np.where(w > 0, 1.0, np.where(w < 0, -1.0, np.where(first < 0, -1.0, 1.0)))
    return qe * sign[..., None]


def attitude_error_batch(q, w, q_des, w_des) -> np.ndarray:
    qe = error_quaternion(q, q_des)
    return np.concatenate([2.0 * qe[..., 1:], w - w_des], axis=-1)


def attitude_error(q, w, weights: RewardWeights) -> np.ndarray:
    q = quat.check_unit(q)
    return attitude_error_batch(q, np.asarray(w, dtype=float), weights.q_des, weights.w_des)


def collision_penalty(r_p_norm, r_col: float, c: float):
    """``c sin(pi/2 * |r_p| / r_col)`` with the ratio clamped to 1."""
    if not r_col > 0:
        raise InvalidInputError("r_col must be positive")
    ratio = np.minimum(np.asarray(r_p_norm, dtype=float) / r_col, 1.0)
    return c * np.sin(0.5 * np.pi * ratio)


def _quad(x, W):
    return np.einsum("...i,ij,...j->...", x, W, x)


def shaping_terms_batch(q, w, u, accel_actual, accel_ref, collided, r_p_norm, r_col,
                        weights: RewardWeights) -> np.ndarray:
    """Stacked penalty terms (each <= 0), columns ordered as ``TERM_NAMES``."""
    da = accel_actual - accel_ref
    alpha = attitude_error_batch(q, w, weights.q_des, weights.w_des)
    lqr_term = -_quad(da, weights.M)
    att_term = -_quad(alpha, weights.Q)
    ctrl_term = -_quad(u, weights.P)
    coll = np.where(collided, -collision_penalty(r_p_norm, r_col, weights.c), 0.0)
    return np.stack(np.broadcast_arrays(lqr_term, att_term, ctrl_term, coll), axis=-1)


def shaping_terms(state, action, accel_actual, accel_ref, collided, r_p_norm, r_col,
                  weights: RewardWeights) -> dict:
    q = quat.check_unit(state.q)
    terms = shaping_terms_batch(q, state.w, action.as_vector(), np.asarray(accel_actual, dtype=float),
                                np.asarray(accel_ref, dtype=float), bool(collided), r_p_norm,
                                r_col, weights)
    return dict(zip(TERM_NAMES, (float(t) for t in terms)))


def shaping_reward(state, action, accel_actual, accel_ref, collided, r_p_norm, r_col,
                   weights: RewardWeights) -> float:
    terms = shaping_terms(state, action, accel_actual, accel_ref, collided, r_p_norm, r_col, weights)
    return float(sum(terms.values()))


def terminal_bonus(dock_success, weights: RewardWeights):
    return np.where(dock_success, weights.d, 0.0) if np.ndim(dock_success) else (
        weights.d if dock_success else 0.0)
