"""Ground-truth surfaces: analytic heightfields, triangle meshes and the built-in catalog.

All surfaces are graphs ``z = f(x, y)`` over a rectangular extent
``[x0, x0 + width] x [y0, y0 + depth]``.
"""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from tactile_recon.errors import DataFormatError
from tactile_recon.models import SurfaceDescriptor, TriangleMesh


HeightFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]
GradientFunction = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]

EXTENT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Extent:
    x0: float
    y0: float
    width: float
    depth: float

    @property
    def x1(self) -> float:
        return self.x0 + self.width

    @property
    def y1(self) -> float:
        return self.y0 + self.depth

    def contains(self, x, y) -> np.ndarray:
        slack = EXTENT_TOLERANCE * max(1.0, abs(self.x0), abs(self.y0), self.width, self.depth)
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return (
            (x >= self.x0 - slack) & (x <= self.x1 + slack) & (y >= self.y0 - slack) & (y <= self.y1 + slack)
        )


class GroundTruthSurface:
    """Queryable surface. Subclasses implement ``_height`` and ``_normal`` on arrays."""

    kind: str = "surface"

    def __init__(self, name: str, extent: Extent):
        self.name = name
        self.extent = extent

    def _check_inside(self, x: np.ndarray, y: np.ndarray) -> None:
        inside = self.extent.contains(x, y)
        if not np.all(inside):
            bad = np.argwhere(~np.atleast_1d(inside))[0][0]
            bx, by = np.atleast_1d(x)[bad], np.atleast_1d(y)[bad]
            raise DataFormatError(f"point ({bx:.6g}, {by:.6g}) is outside the extent of {self.name}")

    def height(self, x, y) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        self._check_inside(x, y)
        return self._height(x, y)

    def normal(self, x, y) -> np.ndarray:
        """Unit upward normals with shape ``x.shape + (3,)``."""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        self._check_inside(x, y)
        return self._normal(x, y)

    def _height(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _normal(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class HeightfieldSurface(GroundTruthSurface):
    kind = "heightfield"

    def __init__(self, name: str, extent: Extent, f: HeightFunction, gradient: GradientFunction):
        super().__init__(name, extent)
        self._f = f
        self._gradient = gradient

    def _height(self, x, y):
        return np.asarray(self._f(x - self.extent.x0, y - self.extent.y0), dtype=np.float64) + np.zeros_like(x)

    def _normal(self, x, y):
        fx, fy = self._gradient(x - self.extent.x0, y - self.extent.y0)
        fx = np.asarray(fx, dtype=np.float64) + np.zeros_like(x)
        fy = np.asarray(fy, dtype=np.float64) + np.zeros_like(y)
        n = np.stack([-fx, -fy, np.ones_like(x)], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)


class MeshSurface(GroundTruthSurface):
    """Triangle-mesh surface answering queries by vertical ray casting (highest hit wins)."""

    kind = "mesh"

    def __init__(self, name: str, mesh: TriangleMesh):
        if len(mesh.triangles) == 0:
            raise DataFormatError(f"mesh surface {name} has no triangles")
        lo = mesh.vertices[:, :2].min(axis=0)
        hi = mesh.vertices[:, :2].max(axis=0)
        super().__init__(name, Extent(float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1])))
        self.mesh = mesh

        tri = mesh.corners()
        self._tri = tri
        self._centroids = tri[:, :, :2].mean(axis=1)
        self._radius = float(np.max(np.linalg.norm(tri[:, :, :2] - self._centroids[:, None, :], axis=2)))
        self._tree = cKDTree(self._centroids)
        normals = mesh.face_normals()
        self._normals = np.where(normals[:, 2:3] < 0, -normals, normals)

    def _ray_hits(self, x: float, y: float) -> tuple[float, int]:
        candidates = np.asarray(self._tree.query_ball_point([x, y], self._radius * (1 + 1e-9) + 1e-9), dtype=np.int64)
        if len(candidates) == 0:
            raise DataFormatError(f"vertical ray at ({x:.6g}, {y:.6g}) misses {self.name}")
        tri = self._tri[candidates]
        a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
        v0 = b[:, :2] - a[:, :2]
        v1 = c[:, :2] - a[:, :2]
        v2 = np.array([x, y]) - a[:, :2]
        den = v0[:, 0] * v1[:, 1] - v1[:, 0] * v0[:, 1]
        usable = np.abs(den) > 1e-15
        den = np.where(usable, den, 1.0)
        s = (v2[:, 0] * v1[:, 1] - v1[:, 0] * v2[:, 1]) / den
        t = (v0[:, 0] * v2[:, 1] - v2[:, 0] * v0[:, 1]) / den
        tol = 1e-9
        hit = usable & (s >= -tol) & (t >= -tol) & (s + t <= 1 + tol)
        if not np.any(hit):
            raise DataFormatError(f"vertical ray at ({x:.6g}, {y:.6g}) misses {self.name}")
        z = a[:, 2] + s * (b[:, 2] - a[:, 2]) + t * (c[:, 2] - a[:, 2])
        z = np.where(hit, z, -np.inf)
        best = int(np.argmax(z))
        return float(z[best]), int(candidates[best])

    def _height(self, x, y):
        flat = [self._ray_hits(px, py)[0] for px, py in zip(x.ravel(), y.ravel())]
        return np.asarray(flat, dtype=np.float64).reshape(x.shape)

    def _normal(self, x, y):
        faces = [self._ray_hits(px, py)[1] for px, py in zip(x.ravel(), y.ravel())]
        return self._normals[np.asarray(faces, dtype=np.int64)].reshape(x.shape + (3,))


def _wave(coord, wavelength: float, phase: float):
    if wavelength <= 0:
        return np.ones_like(coord), np.zeros_like(coord)
    k = 2.0 * math.pi / wavelength
    return np.sin(k * coord + phase), k * np.cos(k * coord + phase)


def _plane(d: SurfaceDescriptor, p: dict):
    h = p.get("height", 0.0)
    return (lambda x, y: np.full_like(x, h)), (lambda x, y: (np.zeros_like(x), np.zeros_like(y)))


def _ramp(d: SurfaceDescriptor, p: dict):
    offset, sx, sy = p.get("offset", 0.0), p.get("slope_x", 0.0), p.get("slope_y", 0.0)
    return (
        lambda x, y: offset + sx * x + sy * y,
        lambda x, y: (np.full_like(x, sx), np.full_like(y, sy)),
    )


def _sinusoid(d: SurfaceDescriptor, p: dict):
    offset = p.get("offset", 0.0)
    amplitude = p.get("amplitude", 1.0)
    lx, ly = p.get("wavelength_x", 0.0), p.get("wavelength_y", 0.0)
    px, py = p.get("phase_x", 0.0), p.get("phase_y", 0.0)

    def f(x, y):
        return offset + amplitude * _wave(x, lx, px)[0] * _wave(y, ly, py)[0]

    def gradient(x, y):
        wx, dwx = _wave(x, lx, px)
        wy, dwy = _wave(y, ly, py)
        return amplitude * dwx * wy, amplitude * wx * dwy

    return f, gradient


def _gaussian(d: SurfaceDescriptor, p: dict):
    offset = p.get("offset", 0.0)
    amplitude = p.get("amplitude", 1.0)
    sigma = p.get("sigma", 1.0)
    if sigma <= 0:
        raise DataFormatError("gaussian sigma must be positive")
    cx = p.get("center_x", (d.width or 0.0) / 2)
    cy = p.get("center_y", (d.depth or 0.0) / 2)

    def bump(x, y):
        return amplitude * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sigma**2))

    def gradient(x, y):
        b = bump(x, y)
        return -b * (x - cx) / sigma**2, -b * (y - cy) / sigma**2

    return (lambda x, y: offset + bump(x, y)), gradient


def _dome(d: SurfaceDescriptor, p: dict):
    offset = p.get("offset", 0.0)
    height = p.get("height", 1.0)
    period_x = p.get("period_x", d.width or 0.0)
    period_y = p.get("period_y", d.depth or 0.0)
    if period_x <= 0 or period_y <= 0:
        raise DataFormatError("dome periods must be positive")
    ax, ay = math.pi / period_x, math.pi / period_y

    def f(x, y):
        return offset + 0.5 * height * (np.sin(ax * x) ** 2 + np.sin(ay * y) ** 2)

    def gradient(x, y):
        return 0.5 * height * ax * np.sin(2 * ax * x), 0.5 * height * ay * np.sin(2 * ay * y)

    return f, gradient


def _saddle(d: SurfaceDescriptor, p: dict):
    offset = p.get("offset", 0.0)
    kx, ky = p.get("curvature_x", 1.0), p.get("curvature_y", 1.0)
    hx = p.get("half_width", (d.width or 2.0) / 2)
    hy = p.get("half_depth", (d.depth or 2.0) / 2)
    cx = p.get("center_x", (d.width or 0.0) / 2)
    cy = p.get("center_y", (d.depth or 0.0) / 2)

    def f(x, y):
        return offset + kx * ((x - cx) / hx) ** 2 - ky * ((y - cy) / hy) ** 2

    def gradient(x, y):
        return 2 * kx * (x - cx) / hx**2, -2 * ky * (y - cy) / hy**2

    return f, gradient


PARAMETRIC_KINDS = {
    "plane": _plane,
    "ramp": _ramp,
    "sinusoid": _sinusoid,
    "gaussian": _gaussian,
    "dome": _dome,
    "saddle": _saddle,
}


# Analogs of the five printed test surfaces at their printed dimensions.
BUILTIN_SURFACES: dict[str, SurfaceDescriptor] = {
    "surface1": SurfaceDescriptor(
        kind="dome",
        name="surface1",
        width=80.0,
        depth=80.0,
        params={"height": 30.0},
    ),
    "surface2": SurfaceDescriptor(
        kind="saddle",
        name="surface2",
        width=80.0,
        depth=80.0,
        params={"offset": 15.0, "curvature_x": 5.0, "curvature_y": 5.0},
    ),
    "surface3": SurfaceDescriptor(
        kind="sinusoid",
        name="surface3",
        width=160.0,
        depth=50.0,
        params={"offset": 17.5, "amplitude": 7.5, "wavelength_x": 160.0, "phase_x": math.pi / 2},
    ),
    "surface4": SurfaceDescriptor(
        kind="sinusoid",
        name="surface4",
        width=190.0,
        depth=40.0,
        params={"offset": 17.5, "amplitude": 7.5, "wavelength_x": 190.0, "phase_x": math.pi / 2},
    ),
    "surface5": SurfaceDescriptor(
        kind="sinusoid",
        name="surface5",
        width=200.0,
        depth=160.0,
        params={"offset": 5.0, "amplitude": 5.0, "wavelength_x": 200.0, "wavelength_y": 160.0},
    ),
}


def heightfield_from_descriptor(descriptor: SurfaceDescriptor) -> HeightfieldSurface:
    builder = PARAMETRIC_KINDS.get(descriptor.kind)
    if builder is None:
        raise DataFormatError(f"no analytic form for surface kind {descriptor.kind!r}")
    f, gradient = builder(descriptor, dict(descriptor.params))
    extent = Extent(descriptor.origin[0], descriptor.origin[1], descriptor.width, descriptor.depth)
    return HeightfieldSurface(descriptor.label, extent, f, gradient)


def surface_to_mesh(surface: GroundTruthSurface, step: float = 1.0) -> TriangleMesh:
    """Tessellate a surface on a regular lattice with roughly ``step`` mm spacing."""
    e = surface.extent
    nx = max(2, int(math.ceil(e.width / step)) + 1)
    ny = max(2, int(math.ceil(e.depth / step)) + 1)
    xs = np.linspace(e.x0, e.x1, nx)
    ys = np.linspace(e.y0, e.y1, ny)
    gx, gy = np.meshgrid(xs, ys)  # (ny, nx)
    gz = surface.height(gx, gy)
    vertices = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    return TriangleMesh(vertices, lattice_triangles(ny, nx))


def lattice_triangles(rows: int, cols: int) -> np.ndarray:
    """Two counter-clockwise triangles per cell of a row-major ``rows x cols`` vertex lattice."""
    r, c = np.meshgrid(np.arange(rows - 1), np.arange(cols - 1), indexing="ij")
    v00 = (r * cols + c).ravel()
    v10 = v00 + 1
    v01 = v00 + cols
    v11 = v01 + 1
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    return np.stack([lower, upper], axis=1).reshape(-1, 3)
