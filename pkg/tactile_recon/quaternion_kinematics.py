"""Quaternion algebra and the accelerometer-seeded initial orientation.

Storage order is scalar-first ``[w, x, y, z]``. Vectors are rotated in the
conjugated form ``q* ⊗ v ⊗ q``; with that convention the orientation seeded from
an accelerometer sample carries gravity ``g = (0, 0, 1)`` onto the sample, and
``rotate_vector(a ⊗ b, v) == rotate_vector(b, rotate_vector(a, v))``.
"""

import math
from dataclasses import dataclass

import numpy as np

from tactile_recon.errors import NumericalError


GRAVITY = np.array([0.0, 0.0, 1.0])

UNIT_TOLERANCE = 1e-6
ANTIPARALLEL_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, values) -> "Quaternion":
        w, x, y, z = (float(v) for v in values)
        return cls(w, x, y, z)

    @classmethod
    def pure(cls, v) -> "Quaternion":
        """Embed a 3-vector as a quaternion with zero scalar part."""
        x, y, z = (float(c) for c in v)
        return cls(0.0, x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def norm(self) -> float:
        return math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)

    def is_unit(self, tolerance: float = UNIT_TOLERANCE) -> bool:
        return abs(self.norm() - 1.0) <= tolerance

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        return hamilton_product(self, other)


def vec3(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).reshape(3)
    return v


def hamilton_product(a: Quaternion, b: Quaternion) -> Quaternion:
    return Quaternion(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )


def conjugate(q: Quaternion) -> Quaternion:
    return Quaternion(q.w, -q.x, -q.y, -q.z)


def normalize(q: Quaternion) -> Quaternion:
    n = q.norm()
    if not math.isfinite(n) or n == 0.0:
        raise NumericalError(f"cannot normalize quaternion {q}")
    return Quaternion(q.w / n, q.x / n, q.y / n, q.z / n)


def _require_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError("non-finite input to quaternion rotation")


def rotate_vector(q: Quaternion, v) -> np.ndarray:
    """Rotate ``v`` by the conjugated product ``q* ⊗ v ⊗ q``."""
    v = vec3(v)
    _require_finite(q.as_array(), v)
    if not q.is_unit():
        raise NumericalError(f"rotation quaternion is not unit-norm (|q| = {q.norm():.9g})")

    rotated = hamilton_product(hamilton_product(conjugate(q), Quaternion.pure(v)), q)
    return rotated.vector


def rotation_matrix(q: Quaternion) -> np.ndarray:
    """3x3 matrix M with ``M @ v == rotate_vector(q, v)``; used for batched points."""
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y + w * z), 2 * (x * z - w * y)],
            [2 * (x * y - w * z), 1 - 2 * (x * x + z * z), 2 * (y * z + w * x)],
            [2 * (x * z + w * y), 2 * (y * z - w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotate_points(q: Quaternion, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    _require_finite(q.as_array(), points)
    return points @ rotation_matrix(q).T


def quat_from_accel(a_s) -> Quaternion:
    """Orientation whose conjugation maps gravity onto the accelerometer direction.

    Built as the doubled rotation ``[g·a, a×g]`` halved by adding the identity and
    normalizing. An upside-down sample has no unique axis; a half turn about X is
    returned instead.
    """
    a = vec3(a_s)
    _require_finite(a)
    if abs(np.linalg.norm(a) - 1.0) > UNIT_TOLERANCE:
        raise NumericalError("accelerometer sample must be normalized before seeding")

    dot = float(a @ GRAVITY)
    if dot <= -1.0 + ANTIPARALLEL_TOLERANCE:
        return Quaternion(0.0, 1.0, 0.0, 0.0)

    axis = np.cross(a, GRAVITY)
    return normalize(Quaternion(1.0 + dot, axis[0], axis[1], axis[2]))


def quat_z_rotation(theta_z: float) -> Quaternion:
    if not math.isfinite(theta_z):
        raise NumericalError("theta_z must be finite")
    half = 0.5 * theta_z
    return Quaternion(math.cos(half), 0.0, 0.0, math.sin(half))


def compose_initial_orientation(q_rot: Quaternion, q_g_as: Quaternion) -> Quaternion:
    return normalize(hamilton_product(q_rot, q_g_as))


def rotation_angle_between(a: Quaternion, b: Quaternion) -> float:
    """Angle in radians of the relative rotation taking ``a`` to ``b``."""
    d = abs(float(a.as_array() @ b.as_array())) / (a.norm() * b.norm())
    return 2.0 * math.acos(min(1.0, d))
