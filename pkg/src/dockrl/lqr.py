"""Translational LQR reference used inside the shaping reward.

The plant is the continuous 3-axis double integrator ``x' = [r; v]``,
``x'_dot = A x' + B a``.  Gains come from Kleinman-Newton iteration on the
continuous algebraic Riccati equation; each Newton step solves a Lyapunov
equation.  The reference is never used as the controller, only as the
acceleration the policy is rewarded for tracking.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .quaternion import InvalidInputError

NEWTON_TOL = 1e-10
MAX_NEWTON_ITERS = 200

A_DI = np.block([[np.zeros((3, 3)), np.eye(3)], [np.zeros((3, 3)), np.zeros((3, 3))]])
B_DI = np.vstack([np.zeros((3, 3)), np.eye(3)])

# Base weights for the tuner.  Only the axial (x) position weight is scaled
# to set the nominal arrival time; the stiffer lateral weights pull y/z
# errors inside the docking tolerance before the axial approach completes.
BASE_POSITION_WEIGHT = 1e-6
BASE_VELOCITY_WEIGHT = 1e-3
LATERAL_POSITION_WEIGHT = 1e-5
LATERAL_VELOCITY_WEIGHT = 6e-3


class NumericalFailure(RuntimeError):
    """An iterative numerical routine did not converge."""


class DesignFileError(Exception):
    """A stored gain file is missing or malformed."""


@dataclass(frozen=True)
class LqrDesign:
    K: np.ndarray
    P: np.ndarray
    Q_lqr: np.ndarray
    R_lqr: np.ndarray
    origin_offset: np.ndarray = field(default_factory=lambda: np.array([3.0, 0.0, 0.0]))
    r_target: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def with_target(self, r_target, origin_offset=None) -> "LqrDesign":
        offset = self.origin_offset if origin_offset is None else origin_offset
        return LqrDesign(self.K, self.P, self.Q_lqr, self.R_lqr,
                         np.asarray(offset, dtype=float), np.asarray(r_target, dtype=float))

    @property
    def closed_loop(self) -> np.ndarray:
        return A_DI - B_DI @ self.K

    def riccati_residual(self) -> float:
        return riccati_residual(self.P, self.Q_lqr, self.R_lqr)


def riccati_residual(P, Q, R) -> float:
    Rinv = np.linalg.inv(R)
    res = A_DI.T @ P + P @ A_DI - P @ B_DI @ Rinv @ B_DI.T @ P + Q
    return float(np.max(np.abs(res)))


def _check_weights(Q, R):
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    if Q.shape != (6, 6) or R.shape != (3, 3):
        raise InvalidInputError("Q_lqr must be 6x6 and R_lqr 3x3")
    if np.max(np.abs(R - R.T)) > 1e-12 * max(1.0, np.max(np.abs(R))) or np.min(np.linalg.eigvalsh(R)) <= 0:
        raise InvalidInputError("R_lqr must be symmetric positive definite")
    if np.max(np.abs(Q - Q.T)) > 1e-12 * max(1.0, np.max(np.abs(Q))) or np.min(np.linalg.eigvalsh(Q)) < -1e-12:
        raise InvalidInputError("Q_lqr must be symmetric positive semidefinite")
    return Q, R


def _initial_gain(Q, R) -> np.ndarray:
    # per-axis stabilizing guess sized from the weights' magnitudes
    scale = np.sqrt(max(np.max(np.diag(Q)), 1e-300) / np.max(np.diag(R)))
    kp = max(scale, 1e-6)
    kd = 2.0 * np.sqrt(kp)
    return np.hstack([kp * np.eye(3), kd * np.eye(3)])


def design_gain(Q_lqr, R_lqr, tol: float = NEWTON_TOL, max_iter: int = MAX_NEWTON_ITERS) -> LqrDesign:
    Q, R = _check_weights(Q_lqr, R_lqr)
    Rinv = np.linalg.inv(R)
    K = _initial_gain(Q, R)
    for _ in range(max_iter):
        Acl = A_DI - B_DI @ K
        P = scipy.linalg.solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        P = 0.5 * (P + P.T)
        K_prev, K = K, Rinv @ B_DI.T @ P
        # the absolute residual alone is too loose when Q is tiny; also require the gain to settle
        settled = np.max(np.abs(K - K_prev)) <= 1e-12 * np.max(np.abs(K))
        if riccati_residual(P, Q, R) < tol and settled:
            return LqrDesign(K, P, Q, R)
    raise NumericalFailure(f"Kleinman-Newton did not converge in {max_iter} iterations")


def reference_accel(design: LqrDesign, r, v) -> np.ndarray:
    """``-K [r - r_target - offset; v]``; broadcasts over leading axes."""
    err = np.concatenate([np.asarray(r, dtype=float) - design.r_target - design.origin_offset,
                          np.asarray(v, dtype=float)], axis=-1)
    return -err @ design.K.T


@dataclass
class ReferenceTrajectory:
    t: np.ndarray
    r: np.ndarray
    v: np.ndarray
    a: np.ndarray
    arrival_step: int | None
    position_tol: float

    @property
    def arrival_time(self) -> float | None:
        return None if self.arrival_step is None else float(self.t[self.arrival_step])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "r_x", "r_y", "r_z", "v_x", "v_y", "v_z", "a_x", "a_y", "a_z"])
            for i in range(len(self.t)):
                writer.writerow([repr(float(self.t[i]))]
                                + [repr(float(c)) for c in self.r[i]]
                                + [repr(float(c)) for c in self.v[i]]
                                + [repr(float(c)) for c in self.a[i]])


def simulate_reference(design: LqrDesign, r0, v0, dt: float, t_max: float,
                       position_tol: float = 0.15) -> ReferenceTrajectory:
    """ZOH rollout of the double integrator driven by ``reference_accel``.

    Arrival is the first sample whose per-axis distance to the docked
    position is within ``position_tol``.  The rollout always runs to
    ``t_max``; a missing arrival is reported as ``arrival_step=None``.
    """
    n = int(round(t_max / dt))
    r = np.zeros((n + 1, 3))
    v = np.zeros((n + 1, 3))
    a = np.zeros((n + 1, 3))
    r[0] = r0
    v[0] = v0
    arrival = None
    for k in range(n + 1):
        if arrival is None and np.all(np.abs(r[k] - design.r_target) <= position_tol):
            arrival = k
        a[k] = reference_accel(design, r[k], v[k])
        if k < n:
            r[k + 1] = r[k] + v[k] * dt + 0.5 * a[k] * dt * dt
            v[k + 1] = v[k] + a[k] * dt
    return ReferenceTrajectory(np.arange(n + 1) * dt, r, v, a, arrival, position_tol)


def scaled_weights(scale: float, base_position: float = BASE_POSITION_WEIGHT,
                   base_velocity: float = BASE_VELOCITY_WEIGHT,
                   lateral_position: float = LATERAL_POSITION_WEIGHT,
                   lateral_velocity: float = LATERAL_VELOCITY_WEIGHT):
    """``(Q, R)`` with the axial position weight multiplied by ``scale``."""
    Q = np.diag([scale * base_position, lateral_position, lateral_position,
                 base_velocity, lateral_velocity, lateral_velocity])
    return Q, np.eye(3)


@dataclass
class TuningResult:
    design: LqrDesign
    scale: float
    arrival_time: float
    trace: list


def tune_gain(r_target, r0, v0=(0.0, 0.0, 0.0), *, target_time: float = 105.0,
              tolerance: float = 2.0, dt: float = 1.0, t_max: float = 250.0,
              origin_offset=(3.0, 0.0, 0.0), position_tol: float = 0.15,
              log_lo: float = -8.0, log_hi: float = 2.0, iterations: int = 60,
              weights: dict | None = None) -> TuningResult:
    """Choose the axial position-weight scale that makes the nominal arrival hit ``target_time``.

    Arrival time is a non-increasing step function of the scale (it is
    sampled every ``dt``).  One bisection finds where arrival first drops to
    ``<= target_time``, giving the arrival ``t*``; a second finds where it
    drops below ``t*``.  The returned scale is the log-midpoint of that
    plateau, so small perturbations of the gain do not change the arrival.
    """
    r_target = np.asarray(r_target, dtype=float)
    weights = weights or {}
    trace = []

    def arrival_for(log_scale):
        Q, R = scaled_weights(float(np.exp(log_scale)), **weights)
        design = design_gain(Q, R).with_target(r_target, origin_offset)
        ref = simulate_reference(design, r0, v0, dt, t_max, position_tol)
        t_arr = np.inf if ref.arrival_time is None else ref.arrival_time
        trace.append((float(np.exp(log_scale)), t_arr))
        return t_arr, design

    def boundary(pred):
        # smallest log-scale (to bisection precision) where pred(arrival) holds
        lo, hi = log_lo, log_hi
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            if pred(arrival_for(mid)[0]):
                hi = mid
            else:
                lo = mid
        return hi

    if arrival_for(log_hi)[0] > target_time or arrival_for(log_lo)[0] <= target_time:
        raise NumericalFailure(f"target arrival {target_time} s not bracketed; trace={trace}")
    first = boundary(lambda t: t <= target_time)
    t_star = arrival_for(first)[0]
    last = boundary(lambda t: t < t_star) if arrival_for(log_hi)[0] < t_star else log_hi
    t_arr, design = arrival_for(0.5 * (first + last))
    if abs(t_arr - target_time) > tolerance:
        raise NumericalFailure(
            f"best arrival {t_arr} s misses {target_time} +/- {tolerance} s; trace={trace}")
    return TuningResult(design, float(np.exp(0.5 * (first + last))), float(t_arr), trace)


def save_design(path, result: TuningResult, extra: dict | None = None) -> None:
    import yaml

    d = result.design
    doc = {
        "version": 1,
        "K": d.K.tolist(),
        "P": d.P.tolist(),
        "Q_lqr": d.Q_lqr.tolist(),
        "R_lqr": d.R_lqr.tolist(),
        "origin_offset_m": d.origin_offset.tolist(),
        "r_target_m": d.r_target.tolist(),
        "tuning": {
            "position_weight_scale": result.scale,
            "arrival_time_s": result.arrival_time,
            "riccati_residual": d.riccati_residual(),
            "closed_loop_eigenvalues_real": sorted(np.linalg.eigvals(d.closed_loop).real.tolist()),
            "bisection_trace": [[s, t] for s, t in result.trace],
        },
    }
    if extra:
        doc["tuning"].update(extra)
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def load_design(path, residual_tol: float = 1e-8) -> LqrDesign:
    import yaml

    try:
        doc = yaml.safe_load(Path(path).read_text())
        design = LqrDesign(
            K=np.array(doc["K"], dtype=float),
            P=np.array(doc["P"], dtype=float),
            Q_lqr=np.array(doc["Q_lqr"], dtype=float),
            R_lqr=np.array(doc["R_lqr"], dtype=float),
            origin_offset=np.array(doc["origin_offset_m"], dtype=float),
            r_target=np.array(doc["r_target_m"], dtype=float),
        )
    except OSError as exc:
        raise DesignFileError(f"{path}: cannot read gain file: {exc.strerror}") from None
    except (yaml.YAMLError, KeyError, TypeError, ValueError) as exc:
        raise DesignFileError(f"{path}: malformed gain file ({exc!r})") from None
    residual = design.riccati_residual()
    if residual >= residual_tol:
        raise NumericalFailure(f"stored LQR design fails the Riccati check (residual {residual:.3e})")
    return design
