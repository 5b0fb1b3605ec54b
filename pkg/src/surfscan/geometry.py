"""Rigid-transform primitives: unit quaternions, rotation matrices, poses.

Quaternions are stored as (w, x, y, z) numpy arrays and kept unit-norm.
All rotations are right-handed; vectors are plain (3,) float64 arrays in
metres.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNIT_TOL = 1e-12


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n < 1e-9:
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a*b, both (w, x, y, z)."""
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


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        raise ValueError("rotation axis must be non-zero")
    half = 0.5 * angle
    s = np.sin(half) / n
    return np.array([np.cos(half), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def quat_from_matrix(R) -> np.ndarray:
    """Rotation matrix -> unit quaternion (w >= 0).

    Shepperd's method: pick the largest of the four squared components
    so the division is always well conditioned.
    """
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    choices = np.array([tr, R[0, 0], R[1, 1], R[2, 2]])
    k = int(np.argmax(choices))
    if k == 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [
                0.25 * s,
                (R[2, 1] - R[1, 2]) / s,
                (R[0, 2] - R[2, 0]) / s,
                (R[1, 0] - R[0, 1]) / s,
            ]
        )
    elif k == 1:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [
                (R[2, 1] - R[1, 2]) / s,
                0.25 * s,
                (R[0, 1] + R[1, 0]) / s,
                (R[0, 2] + R[2, 0]) / s,
            ]
        )
    elif k == 2:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [
                (R[0, 2] - R[2, 0]) / s,
                (R[0, 1] + R[1, 0]) / s,
                0.25 * s,
                (R[1, 2] + R[2, 1]) / s,
            ]
        )
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [
                (R[1, 0] - R[0, 1]) / s,
                (R[0, 2] + R[2, 0]) / s,
                (R[1, 2] + R[2, 1]) / s,
                0.25 * s,
            ]
        )
    return quat_canonical(quat_normalize(q))


def quat_canonical(q) -> np.ndarray:
    """Flip sign so the scalar part is non-negative."""
    q = np.asarray(q, dtype=float)
    return -q if q[0] < 0.0 else q


def cross3(a, b) -> np.ndarray:
    """Cross product along the last axis.

    Same two-product expression np.cross evaluates, minus its axis
    bookkeeping, which dominates the cost on tiny inputs.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector v by unit quaternion q (equivalent to R(q) @ v)."""
    w, x, y, z = q
    u = np.array([x, y, z])
    uv = cross3(u, v)
    return np.asarray(v, dtype=float) + 2.0 * (w * uv + cross3(u, uv))


def skew(v) -> np.ndarray:
    """Cross-product matrix: skew(v) @ u == cross(v, u)."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation as unit quaternion (w, x, y, z), translation in m."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n} too far from 1")
        if abs(n - 1.0) > UNIT_TOL:
            q = q / n
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValueError("pose components must be finite")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_matrix(T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return Pose(quat_from_matrix(T[:3, :3]), T[:3, 3].copy())

    @staticmethod
    def from_rotation_matrix(R, t=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(quat_from_matrix(R), np.asarray(t, dtype=float))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation_matrix()
        T[:3, 3] = self.translation
        return T

    def transform_point(self, p) -> np.ndarray:
        return quat_rotate(self.rotation, p) + self.translation

    def transform_vector(self, v) -> np.ndarray:
        return quat_rotate(self.rotation, v)

    def inverse(self) -> "Pose":
        qi = quat_conjugate(self.rotation)
        return Pose(qi, -quat_rotate(qi, self.translation))

    def __matmul__(self, other: "Pose") -> "Pose":
        q = quat_normalize(quat_multiply(self.rotation, other.rotation))
        t = self.transform_point(other.translation)
        return Pose(q, t)


def plane_basis(normal) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal tangent pair (u, v) with u x v = normal.

    u is the projection of world x onto the plane (world y if the normal is
    within ~1e-6 of +-x), so a horizontal plane with normal +z gets
    u = x, v = y.
    """
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    seed = np.array([1.0, 0.0, 0.0])
    u = seed - np.dot(seed, n) * n
    if np.linalg.norm(u) < 1e-6:
        seed = np.array([0.0, 1.0, 0.0])
        u = seed - np.dot(seed, n) * n
    u = u / np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v
