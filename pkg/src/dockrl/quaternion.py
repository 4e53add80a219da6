"""Scalar-first quaternion helpers ``[w, x, y, z]``.

Every function broadcasts over leading axes, so the same code serves a
single attitude of shape ``(4,)`` and a batch of shape ``(n, 4)``.  The
rotation matrix ``R(q)`` maps body-frame vectors into the inertial frame.
"""
from __future__ import annotations

import numpy as np

UNIT_TOL = 1e-6


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's precondition."""


def check_unit(q: np.ndarray, tol: float = UNIT_TOL) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != 4:
        raise InvalidInputError(f"quaternion must have 4 components, got shape {q.shape}")
    dev = np.abs(np.linalg.norm(q, axis=-1) - 1.0)
    if np.any(~np.isfinite(dev)) or np.any(dev > tol):
        raise InvalidInputError(f"quaternion is not unit norm (deviation {np.max(dev):.3e})")
    return q


def normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def conjugate(q: np.ndarray) -> np.ndarray:
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def multiply(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamilton product ``p ⊗ q``."""
    pw, px, py, pz = np.moveaxis(np.asarray(p, dtype=float), -1, 0)
    qw, qx, qy, qz = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=-1,
    )


def to_dcm(q: np.ndarray) -> np.ndarray:
    """Rotation matrix (body -> inertial), shape ``(..., 3, 3)``."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
        ],
        axis=-2,
    )


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``R(q) v``: body vector expressed in the inertial frame."""
    return np.einsum("...ij,...j->...i", to_dcm(q), v)


def rotate_inverse(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``R(q)^T v``: inertial vector expressed in the body frame."""
    return np.einsum("...ji,...j->...i", to_dcm(q), v)


def omega_matrix_unchecked(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack(
        [
            np.stack([-x, -y, -z], axis=-1),
            np.stack([w, -z, y], axis=-1),
            np.stack([z, w, -x], axis=-1),
            np.stack([-y, x, w], axis=-1),
        ],
        axis=-2,
    )


def from_euler_xyz(angles: np.ndarray) -> np.ndarray:
    """Quaternion from intrinsic x-y-z (roll, pitch, yaw) angles in radians."""
    angles = np.asarray(angles, dtype=float)
    half = 0.5 * angles
    c = np.cos(half)
    s = np.sin(half)
    zeros = np.zeros_like(c[..., 0])
    qx = np.stack([c[..., 0], s[..., 0], zeros, zeros], axis=-1)
    qy = np.stack([c[..., 1], zeros, s[..., 1], zeros], axis=-1)
    qz = np.stack([c[..., 2], zeros, zeros, s[..., 2]], axis=-1)
    return multiply(multiply(qx, qy), qz)


def to_euler_xyz(q: np.ndarray) -> np.ndarray:
    """Intrinsic x-y-z angles (radians); pitch lies in [-pi/2, pi/2]."""
    R = to_dcm(q)
    pitch = np.arcsin(np.clip(R[..., 0, 2], -1.0, 1.0))
    roll = np.arctan2(-R[..., 1, 2], R[..., 2, 2])
    yaw = np.arctan2(-R[..., 0, 1], R[..., 0, 0])
    return np.stack([roll, pitch, yaw], axis=-1)


def rotation_angle(q: np.ndarray) -> np.ndarray:
    """Axis-angle magnitude in radians, in [0, pi]."""
    w = np.abs(np.asarray(q, dtype=float)[..., 0])
    vec = np.linalg.norm(np.asarray(q, dtype=float)[..., 1:], axis=-1)
    return 2.0 * np.arctan2(vec, w)
