"""Rigid transforms and iterative closest point alignment."""

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from tactile_recon.errors import NumericalError
from tactile_recon.models import PointCloud, TriangleMesh
from tactile_recon.quaternion_kinematics import Quaternion, normalize, rotate_points, rotation_matrix, vec3
from tactile_recon.spatial_index import SpatialIndex, TriangleIndex


DEFAULT_MAX_ITERS = 50
DEFAULT_TOL = 1e-9  # mm of RMS improvement


@dataclass(frozen=True)
class RigidTransform:
    rotation: Quaternion
    translation: np.ndarray

    def __post_init__(self):
        if not self.rotation.is_unit(1e-9):
            raise NumericalError("rigid transform rotation must be a unit quaternion")
        object.__setattr__(self, "translation", vec3(self.translation))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(Quaternion.identity(), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, translation) -> "RigidTransform":
        return cls(_quaternion_from_matrix(np.asarray(matrix, dtype=np.float64)), translation)

    @property
    def matrix(self) -> np.ndarray:
        return rotation_matrix(self.rotation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return rotate_points(self.rotation, points) + self.translation

    def apply_mesh(self, mesh: TriangleMesh) -> TriangleMesh:
        return mesh.transformed(self.matrix, self.translation)


def _quaternion_from_matrix(m: np.ndarray) -> Quaternion:
    """Quaternion whose ``rotation_matrix`` is ``m``."""
    a = m.T  # rotation_matrix is the transpose of the q ⊗ v ⊗ q* matrix
    trace = a[0, 0] + a[1, 1] + a[2, 2]
    if trace > 0:
        s = math.sqrt(trace + 1.0) * 2
        q = (0.25 * s, (a[2, 1] - a[1, 2]) / s, (a[0, 2] - a[2, 0]) / s, (a[1, 0] - a[0, 1]) / s)
    elif a[0, 0] > a[1, 1] and a[0, 0] > a[2, 2]:
        s = math.sqrt(1.0 + a[0, 0] - a[1, 1] - a[2, 2]) * 2
        q = ((a[2, 1] - a[1, 2]) / s, 0.25 * s, (a[0, 1] + a[1, 0]) / s, (a[0, 2] + a[2, 0]) / s)
    elif a[1, 1] > a[2, 2]:
        s = math.sqrt(1.0 + a[1, 1] - a[0, 0] - a[2, 2]) * 2
        q = ((a[0, 2] - a[2, 0]) / s, (a[0, 1] + a[1, 0]) / s, 0.25 * s, (a[1, 2] + a[2, 1]) / s)
    else:
        s = math.sqrt(1.0 + a[2, 2] - a[0, 0] - a[1, 1]) * 2
        q = ((a[1, 0] - a[0, 1]) / s, (a[0, 2] + a[2, 0]) / s, (a[1, 2] + a[2, 1]) / s, 0.25 * s)
    return normalize(Quaternion.from_array(q))


def best_fit_transform(source: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rotation and translation taking paired ``source`` rows onto ``target`` rows."""
    src_mean = source.mean(axis=0)
    dst_mean = target.mean(axis=0)
    H = (source - src_mean).T @ (target - dst_mean)
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    if np.linalg.det(Vt.T @ U.T) < 0:
        D[2, 2] = -1.0
    R = Vt.T @ D @ U.T
    return R, dst_mean - R @ src_mean


def check_registrable(points: np.ndarray) -> None:
    if len(points) < 3:
        raise NumericalError(f"ICP needs at least 3 source points, got {len(points)}")
    singular = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    if singular[0] == 0.0 or singular[1] <= 1e-9 * singular[0]:
        raise NumericalError("ICP source points are coincident or collinear")


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    residual: float  # RMS correspondence distance at the returned transform, mm
    iterations: int  # correspondence passes performed
    history: list[float] = field(default_factory=list)


def icp_align(
    source: PointCloud,
    target: Union[PointCloud, TriangleMesh],
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> IcpResult:
    src = source.points
    check_registrable(src)

    if isinstance(target, TriangleMesh):
        index = TriangleIndex(target)

        def correspond(points):
            return index.closest(points)[0]

    else:
        index = SpatialIndex(target.points)

        def correspond(points):
            return target.points[index.nearest(points)[0]]

    R = np.eye(3)
    t = np.zeros(3)
    moved = src
    matched = correspond(moved)
    rms = float(np.sqrt(np.mean(np.sum((moved - matched) ** 2, axis=1))))
    history = [rms]

    while len(history) < max_iters and rms > 0.0:
        R_step, t_step = best_fit_transform(moved, matched)
        R_next = R_step @ R
        t_next = R_step @ t + t_step

        moved_next = src @ R_next.T + t_next
        matched_next = correspond(moved_next)
        rms_next = float(np.sqrt(np.mean(np.sum((moved_next - matched_next) ** 2, axis=1))))
        if rms_next > rms:
            break

        R, t, moved, matched = R_next, t_next, moved_next, matched_next
        improvement = rms - rms_next
        rms = rms_next
        history.append(rms)
        if improvement < tol:
            break

    return IcpResult(RigidTransform.from_matrix(R, t), rms, len(history), history)
