"""Control point between two contacts from their tangent planes.

Each contact defines a tangent plane. Projecting each contact onto the other's
plane gives two tangent lines whose mutual closest points bracket the apex of
the quadratic span; their midpoint, pushed onto the vertical plane through the
contacts and pulled back within range, is the control point.
"""

import math
from dataclasses import dataclass

import numpy as np

from tactile_recon.errors import GeometryError
from tactile_recon.quaternion_kinematics import vec3


DEFAULT_DELTA = 1e-4
PARALLEL_TOLERANCE = 1e-9
Z_AXIS = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class Plane:
    origin: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        normal = vec3(self.normal)
        length = np.linalg.norm(normal)
        if length == 0.0:
            raise GeometryError("plane normal has zero length")
        object.__setattr__(self, "origin", vec3(self.origin))
        object.__setattr__(self, "normal", normal / length)


@dataclass(frozen=True)
class Line3:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        direction = vec3(self.direction)
        if np.linalg.norm(direction) <= 1e-12:
            raise GeometryError("line direction has zero length")
        object.__setattr__(self, "origin", vec3(self.origin))
        object.__setattr__(self, "direction", direction)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class ControlPoint:
    position: np.ndarray
    degenerate: bool = False  # tangent lines parallel, midpoint used
    adjusted: bool = False  # pulled back within range of the contacts


def _scale(*points) -> float:
    return max(1.0, max(float(np.max(np.abs(p))) for p in points))


def project_point_to_plane(p, plane: Plane) -> np.ndarray:
    p = vec3(p)
    return p - float((p - plane.origin) @ plane.normal) * plane.normal


def skew_line_closest_points(L1: Line3, L2: Line3) -> tuple[np.ndarray, np.ndarray, bool]:
    l1, l2 = L1.direction, L2.direction
    w0 = L1.origin - L2.origin

    if np.linalg.norm(np.cross(l1, l2)) < PARALLEL_TOLERANCE * np.linalg.norm(l1) * np.linalg.norm(l2):
        m = L1.origin.copy()
        n = L2.at(float(w0 @ l2) / float(l2 @ l2))
        return m, n, True

    a = float(l1 @ l1)
    b = float(l1 @ l2)
    c = float(l2 @ l2)
    d = float(l1 @ w0)
    e = float(l2 @ w0)
    den = a * c - b * b
    t1 = (b * e - c * d) / den
    t2 = (a * e - b * d) / den
    return L1.at(t1), L2.at(t2), False


def vertical_plane(p1, p2) -> Plane:
    """Plane containing both points and the vertical axis."""
    p1, p2 = vec3(p1), vec3(p2)
    normal = np.cross(p2 - p1, Z_AXIS)
    return Plane(p1, normal)


def adjust_control_point(p1, p2, cp, delta: float = DEFAULT_DELTA) -> np.ndarray:
    """Walk ``cp`` toward its farther contact in ``delta`` fractions until both are in range."""
    p1, p2, cp = vec3(p1), vec3(p2), vec3(cp)
    if not delta > 0:
        raise GeometryError(f"adjustment step must be positive, got {delta}")

    reach = float(np.linalg.norm(p1 - p2))
    d1 = float(np.linalg.norm(cp - p1))
    d2 = float(np.linalg.norm(cp - p2))
    if d1 <= reach and d2 <= reach:
        return cp

    l_aux = (p1 - cp) if d1 >= d2 else (p2 - cp)
    steps = np.arange(1, int(math.ceil(1.0 / delta)) + 1) * delta
    candidates = cp + steps[:, None] * l_aux
    inside = (np.linalg.norm(candidates - p1, axis=1) <= reach) & (np.linalg.norm(candidates - p2, axis=1) <= reach)
    if not np.any(inside):
        return candidates[-1]
    return candidates[int(np.argmax(inside))]


def control_point(p1, N1, p2, N2, delta: float = DEFAULT_DELTA) -> ControlPoint:
    p1, p2 = vec3(p1), vec3(p2)
    scale = _scale(p1, p2)
    chord = p2 - p1
    chord_length = float(np.linalg.norm(chord))
    if chord_length <= 1e-9 * scale:
        raise GeometryError(f"contacts {p1.tolist()} and {p2.tolist()} coincide")
    if np.linalg.norm(np.cross(chord, Z_AXIS)) <= 1e-9 * chord_length:
        raise GeometryError(f"contacts {p1.tolist()} and {p2.tolist()} are vertically aligned")

    midpoint = 0.5 * (p1 + p2)
    plane1 = Plane(p1, N1)
    plane2 = Plane(p2, N2)
    p1_on_2 = project_point_to_plane(p1, plane2)
    p2_on_1 = project_point_to_plane(p2, plane1)

    l1 = p2_on_1 - p1
    l2 = p1_on_2 - p2
    if min(np.linalg.norm(l1), np.linalg.norm(l2)) <= 1e-12 * scale:
        return ControlPoint(midpoint, degenerate=True)

    m, n, parallel = skew_line_closest_points(Line3(p1, l1), Line3(p2, l2))
    if parallel:
        return ControlPoint(midpoint, degenerate=True)

    cp = project_point_to_plane(0.5 * (m + n), vertical_plane(p1, p2))
    adjusted = adjust_control_point(p1, p2, cp, delta)
    return ControlPoint(adjusted, adjusted=not np.array_equal(adjusted, cp))


def central_control_point(cp1, cp2, cp3, cp4) -> np.ndarray:
    return (vec3(cp1) + vec3(cp2) + vec3(cp3) + vec3(cp4)) / 4.0
