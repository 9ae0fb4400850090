"""Rigid transforms, rotations and unit quaternions.

Conventions used everywhere in the package:

* column vectors, ``p' = R @ p + t``; chains of transforms read right to left
* quaternions are ``np.ndarray`` of shape (4,), scalar first ``(w, x, y, z)``,
  Hamilton product, canonical sign ``w >= 0``
* Euler angles are intrinsic X-Y-Z, i.e. ``R = Rx(rx) @ Ry(ry) @ Rz(rz)``
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateInputError, InvalidInputError

UNIT_TOL = 1e-6


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def cross(a, b) -> np.ndarray:
    """Cross product over the last axis; much cheaper than ``np.cross`` for
    the small arrays used here."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def rotvec_to_matrix(w) -> np.ndarray:
    """Rodrigues formula for a rotation vector (axis * angle)."""
    w = np.asarray(w, dtype=float)
    th = math.sqrt(float(w @ w))
    K = skew(w)
    if th < 1e-8:
        return np.eye(3) + K + 0.5 * (K @ K)
    return np.eye(3) + (math.sin(th) / th) * K + ((1.0 - math.cos(th)) / (th * th)) * (K @ K)


def matrix_to_rotvec(R) -> np.ndarray:
    # via the quaternion: stable near 0 and near pi
    q = quat_from_matrix(R)
    v = q[1:]
    s = math.sqrt(float(v @ v))
    if s < 1e-12:
        return 2.0 * v
    angle = 2.0 * math.atan2(s, q[0])
    return v * (angle / s)


def rotation_angle(R) -> float:
    """Angle (radians, in [0, pi]) of the rotation ``R``."""
    q = quat_from_matrix(R)
    return 2.0 * math.atan2(math.sqrt(float(q[1:] @ q[1:])), abs(q[0]))


def orthonormalize(M) -> np.ndarray:
    """Nearest proper rotation in the Frobenius sense (polar factor)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    return bool(np.abs(R.T @ R - np.eye(3)).max() <= tol and abs(np.linalg.det(R) - 1.0) <= tol)


@dataclass(frozen=True, eq=False)
class Transform:
    """Rigid transform; ``rotation`` is 3x3, ``translation`` is in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not is_rotation(R, UNIT_TOL):
            raise InvalidInputError("rotation is not orthonormal with det +1")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Transform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "Transform":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_rotation(cls, R) -> "Transform":
        return cls(R, np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> "Transform":
        return cls(np.eye(3), t)

    @classmethod
    def from_quat_pos(cls, q, p) -> "Transform":
        return cls(quat_to_matrix(q), p)

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    @property
    def quaternion(self) -> np.ndarray:
        return quat_from_matrix(self.rotation)

    def inverse(self) -> "Transform":
        Rt = self.rotation.T
        return Transform(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "Transform") -> "Transform":
        if not isinstance(other, Transform):
            return NotImplemented
        return Transform(self.rotation @ other.rotation,
                         self.rotation @ other.translation + self.translation)

    def apply(self, points) -> np.ndarray:
        """Transform a point (3,) or an array of points (N, 3)."""
        P = np.asarray(points, dtype=float)
        return P @ self.rotation.T + self.translation

    def rotate(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def allclose(self, other: "Transform", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
                    and np.allclose(self.translation, other.translation, atol=atol, rtol=0))

    def __repr__(self):
        e = euler_xyz_from_rotation(self.rotation)
        return (f"Transform(t={np.array2string(self.translation, precision=6)}, "
                f"euler_xyz=({e.rx:.6f}, {e.ry:.6f}, {e.rz:.6f}))")


# -- quaternions -------------------------------------------------------------

def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=float)


def quat_canonical(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return -q if q[0] < 0 else q.copy()


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(q @ q))
    if n < 1e-12:
        raise InvalidInputError("zero quaternion")
    return q / n


def check_unit(q, tol: float = UNIT_TOL) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise InvalidInputError(f"quaternion must have shape (4,), got {q.shape}")
    if abs(math.sqrt(float(q @ q)) - 1.0) > tol:
        raise InvalidInputError("quaternion is not unit norm")
    return q


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(R) -> np.ndarray:
    """Canonical (w >= 0) unit quaternion of a rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    m00, m11, m22 = R[0, 0], R[1, 1], R[2, 2]
    tr = m00 + m11 + m22
    if tr >= max(m00, m11, m22):
        s = 2.0 * math.sqrt(max(1.0 + tr, 0.0))
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif m00 >= m11 and m00 >= m22:
        s = 2.0 * math.sqrt(max(1.0 + m00 - m11 - m22, 0.0))
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif m11 >= m22:
        s = 2.0 * math.sqrt(max(1.0 + m11 - m00 - m22, 0.0))
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(max(1.0 + m22 - m00 - m11, 0.0))
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_canonical(quat_normalize(q))


def quat_from_rotvec(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    th = math.sqrt(float(w @ w))
    if th < 1e-12:
        return quat_normalize(np.array([1.0, 0.5 * w[0], 0.5 * w[1], 0.5 * w[2]]))
    s = math.sin(0.5 * th) / th
    return np.array([math.cos(0.5 * th), s * w[0], s * w[1], s * w[2]])


def quaternion_difference(q_o2, q_o1) -> np.ndarray:
    """Rotation taking orientation ``q_o1`` to ``q_o2``: ``q_o2 * q_o1^-1``.

    Both inputs must be unit quaternions (to 1e-6). The result is canonical,
    and ``quat_to_matrix(result) @ R(q_o1) == R(q_o2)``.
    """
    q_o2 = check_unit(q_o2)
    q_o1 = check_unit(q_o1)
    return quat_canonical(quat_normalize(quat_multiply(q_o2, quat_conjugate(q_o1))))


def slerp(q0, q1, frac: float) -> np.ndarray:
    """Spherical interpolation along the shorter arc; ``frac=0`` gives q0."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    d = float(q0 @ q1)
    if d < 0.0:
        q1, d = -q1, -d
    if d > 1.0 - 1e-12:
        # sin(th) ~ 0: the two are numerically the same rotation
        return quat_normalize(q0 + frac * (q1 - q0))
    th = math.acos(min(d, 1.0))
    s = math.sin(th)
    return (math.sin((1.0 - frac) * th) / s) * q0 + (math.sin(frac * th) / s) * q1


# -- symmetric objects -------------------------------------------------------

def symmetry_project(R) -> np.ndarray:
    """Nearest rotation (Frobenius norm) whose third row is exactly [0, 0, 1].

    Such rotations are the rotations about z, so only the upper 2x2 block
    matters; its polar factor is a planar rotation by ``atan2(m10 - m01, m00 + m11)``.
    """
    R = np.asarray(R, dtype=float)
    c = R[0, 0] + R[1, 1]
    s = R[1, 0] - R[0, 1]
    if math.hypot(c, s) < 1e-9:
        raise DegenerateInputError("third row antipodal to [0, 0, 1]; projection undefined")
    return rot_z(math.atan2(s, c))


# -- Euler XYZ ---------------------------------------------------------------

class EulerXYZ(NamedTuple):
    rx: float
    ry: float
    rz: float
    # set when |ry| is within 1e-3 of pi/2; rz is then forced to 0
    gimbal_lock: bool = False


GIMBAL_MARGIN = 1e-3


def rotation_from_euler_xyz(e) -> np.ndarray:
    rx, ry, rz = e[0], e[1], e[2]
    return rot_x(rx) @ rot_y(ry) @ rot_z(rz)


def euler_xyz_from_rotation(R) -> EulerXYZ:
    R = np.asarray(R, dtype=float)
    sy = max(-1.0, min(1.0, R[0, 2]))
    ry = math.asin(sy)
    if abs(ry) < math.pi / 2 - GIMBAL_MARGIN:
        rx = math.atan2(-R[1, 2], R[2, 2])
        rz = math.atan2(-R[0, 1], R[0, 0])
        return EulerXYZ(rx, ry, rz)
    # only rx +/- rz is observable here
    rx = math.atan2(R[2, 1], R[1, 1])
    return EulerXYZ(rx, ry, 0.0, True)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation matrix."""
    q = rng.normal(size=4)
    return quat_to_matrix(q / np.linalg.norm(q))
