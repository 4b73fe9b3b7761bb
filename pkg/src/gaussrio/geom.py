"""Quaternion, rotation and SE(3) primitives.

Quaternions are plain ``numpy`` arrays stored as ``(w, x, y, z)`` and kept in
the ``w >= 0`` hemisphere after normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: ArrayLike) -> NDArray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(q @ q))
    if not math.isfinite(n) or n == 0.0:
        raise ValueError(f"cannot normalize quaternion {q}")
    q = q / n
    return -q if q[0] < 0.0 else q


def quat_mul(a: ArrayLike, b: ArrayLike) -> NDArray:
    """Hamilton product ``a ⊗ b``."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q: ArrayLike) -> NDArray:
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_exp(half_angle_vec: ArrayLike) -> NDArray:
    """Exponential map taking the *half-angle* vector ``v`` to ``[cos|v|, sin|v| v/|v|]``.

    A rotation of angle ``theta`` about unit axis ``n`` is ``quat_exp(0.5 * theta * n)``.
    """
    v = np.asarray(half_angle_vec, dtype=float)
    a = math.sqrt(float(v @ v))
    if a < 1e-8:
        # second-order Taylor terms keep the result accurate near zero
        q = np.array([1.0 - 0.5 * a * a, *(v * (1.0 - a * a / 6.0))])
    else:
        q = np.array([np.cos(a), *(np.sin(a) / a * v)])
    return quat_normalize(q)


def quat_log(q: ArrayLike) -> NDArray:
    """Inverse of :func:`quat_exp`; returns the half-angle vector."""
    q = quat_normalize(q)
    vn = np.linalg.norm(q[1:])
    if vn < 1e-12:
        return q[1:].copy()
    return np.arctan2(vn, q[0]) / vn * q[1:]


def rotvec_to_quat(rotvec: ArrayLike) -> NDArray:
    return quat_exp(0.5 * np.asarray(rotvec, dtype=float))


def quat_to_rotvec(q: ArrayLike) -> NDArray:
    return 2.0 * quat_log(q)


def rotation_angle(q: ArrayLike) -> float:
    """Rotation angle ``2 acos|w|`` in radians, in ``[0, pi]``."""
    q = np.asarray(q, dtype=float)
    w = abs(q[0]) / np.linalg.norm(q)
    return 2.0 * float(np.arccos(min(1.0, w)))


def quat_to_rotmat(q: ArrayLike) -> NDArray:
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_to_rotmat_batch(q: NDArray) -> NDArray:
    """Rotation matrices for an ``(N, 4)`` array of (not necessarily unit) quaternions."""
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_to_quat(R: ArrayLike) -> NDArray:
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def yaw_quat(yaw: float) -> NDArray:
    return quat_exp([0.0, 0.0, 0.5 * yaw])


def skew(v: ArrayLike) -> NDArray:
    """Cross-product matrix: ``skew(v) @ u == np.cross(v, u)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform ``x -> R{q} x + t``."""

    t: NDArray = field(default_factory=lambda: np.zeros(3))
    q: NDArray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(3)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "q", quat_normalize(self.q))

    @classmethod
    def identity(cls) -> PoseSE3:
        return cls()

    @property
    def R(self) -> NDArray:
        return quat_to_rotmat(self.q)

    def compose(self, other: PoseSE3) -> PoseSE3:
        return pose_compose(self, other)

    def inverse(self) -> PoseSE3:
        return pose_inverse(self)

    def apply(self, points: ArrayLike) -> NDArray:
        """Transform an ``(M, 3)`` point array (or a single 3-vector)."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.R.T + self.t


def pose_compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    return PoseSE3(a.t + quat_to_rotmat(a.q) @ b.t, quat_mul(a.q, b.q))


def pose_inverse(a: PoseSE3) -> PoseSE3:
    qi = quat_conj(a.q)
    return PoseSE3(-(quat_to_rotmat(qi) @ a.t), qi)


def pose_relative(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """``b`` expressed in the frame of ``a``, i.e. ``a^-1 ∘ b``."""
    return pose_compose(pose_inverse(a), b)


def translation_distance(a: PoseSE3, b: PoseSE3) -> float:
    return float(np.linalg.norm(a.t - b.t))


def rotation_distance(a: PoseSE3, b: PoseSE3) -> float:
    return rotation_angle(quat_mul(quat_conj(a.q), b.q))
