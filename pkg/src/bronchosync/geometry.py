"""Quaternion and camera-frame helpers.

Conventions: quaternions are scipy order (x, y, z, w); the camera looks
along its local +Z axis with local +Y as the up vector. Euler angles
(alpha, beta, gamma) are extrinsic XYZ and exist only for I/O.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation, Slerp


def unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("zero-length vector")
    return v / n


def quat_from_forward_up(forward, up) -> np.ndarray:
    """Quaternion whose local +Z maps to `forward` and +Y to `up`.

    `up` is re-orthogonalized against `forward`; they must not be parallel.
    """
    f = unit(forward)
    u = np.asarray(up, dtype=float)
    u = u - np.dot(u, f) * f
    nu = np.linalg.norm(u)
    if nu < 1e-12:
        raise ValueError("up vector parallel to viewing direction")
    u = u / nu
    r = np.cross(u, f)  # right = up x forward keeps a right-handed frame
    m = np.column_stack([r, u, f])
    return Rotation.from_matrix(m).as_quat()


def forward_of(q: np.ndarray) -> np.ndarray:
    return Rotation.from_quat(q).as_matrix()[:, 2]


def up_of(q: np.ndarray) -> np.ndarray:
    return Rotation.from_quat(q).as_matrix()[:, 1]


def right_of(q: np.ndarray) -> np.ndarray:
    return Rotation.from_quat(q).as_matrix()[:, 0]


def slerp(q0: np.ndarray, q1: np.ndarray, t: float) -> np.ndarray:
    s = Slerp([0.0, 1.0], Rotation.from_quat(np.stack([q0, q1])))
    return s(float(np.clip(t, 0.0, 1.0))).as_quat()


def quat_angle(q0: np.ndarray, q1: np.ndarray) -> float:
    """Geodesic angle in radians between two rotations."""
    d = abs(float(np.dot(q0, q1)))
    return 2.0 * float(np.arccos(min(1.0, d)))


def euler_from_quat(q: np.ndarray) -> np.ndarray:
    return Rotation.from_quat(q).as_euler("xyz")


def quat_from_euler(angles) -> np.ndarray:
    return Rotation.from_euler("xyz", np.asarray(angles, dtype=float)).as_quat()


def rotate_quat(q: np.ndarray, axis, angle_rad: float) -> np.ndarray:
    """Apply a world-frame rotation of `angle_rad` about `axis` to q."""
    r = Rotation.from_rotvec(unit(axis) * angle_rad) * Rotation.from_quat(q)
    return r.as_quat()


def transport_up(prev_up: np.ndarray, new_forward: np.ndarray) -> np.ndarray:
    """Parallel-transport an up vector onto the plane orthogonal to new_forward."""
    f = unit(new_forward)
    u = prev_up - np.dot(prev_up, f) * f
    n = np.linalg.norm(u)
    if n < 1e-9:
        # direction swung across the up vector; fall back to a stable axis
        for axis in (np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0])):
            u = axis - np.dot(axis, f) * f
            n = np.linalg.norm(u)
            if n > 1e-9:
                break
    return u / n


def default_up_for(forward: np.ndarray) -> np.ndarray:
    """World +Y projected orthogonal to forward; +X when they are parallel."""
    f = unit(forward)
    for axis in (np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0])):
        u = axis - np.dot(axis, f) * f
        n = np.linalg.norm(u)
        if n > 1e-9:
            return u / n
    raise ValueError("degenerate forward vector")


def random_small_rotation(rng: np.random.Generator, sigma_rad: float) -> Rotation:
    """Random rotation with per-axis Gaussian rotation-vector components."""
    return Rotation.from_rotvec(rng.normal(0.0, sigma_rad, size=3))
