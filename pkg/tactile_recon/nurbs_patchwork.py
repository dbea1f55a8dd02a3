"""Biquadratic NURBS patches over a contact grid, and their tessellation.

Patch nets are indexed ``net[i][j]`` with ``i`` following ``u`` (grid columns,
+x) and ``j`` following ``v`` (grid rows, +y).
"""

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from tqdm.auto import tqdm

from tactile_recon.curvature_geometry import (
    DEFAULT_DELTA,
    ControlPoint,
    central_control_point,
    control_point,
    vertical_plane,
)
from tactile_recon.errors import DataFormatError, GeometryError
from tactile_recon.models import TriangleMesh
from tactile_recon.probe_simulation import ContactGrid
from tactile_recon.surfaces import lattice_triangles


DEGREE = 2
CLAMPED_KNOTS = (0.0, 0.0, 0.0, 1.0, 1.0, 1.0)
MIN_TRIANGLE_AREA = 1e-12


def basis_function(i: int, p: int, u: float, knots: Sequence[float]) -> float:
    """Cox-de Boor basis ``N_{i,p}(u)`` with the last span closed at its right end."""
    n_basis = len(knots) - p - 1
    if not 0 <= i < n_basis:
        raise IndexError(f"basis index {i} out of range for degree {p} and {len(knots)} knots")
    return _cox_de_boor(i, p, float(u), tuple(float(k) for k in knots))


def _cox_de_boor(i: int, p: int, u: float, knots: tuple) -> float:
    if p == 0:
        if knots[i] <= u < knots[i + 1]:
            return 1.0
        last = len(knots) - 1
        # u at the end of the knot vector belongs to the last non-empty span
        if u == knots[last] and knots[i] < knots[i + 1] == knots[last]:
            return 1.0
        return 0.0

    value = 0.0
    left_den = knots[i + p] - knots[i]
    if left_den > 0:
        value += (u - knots[i]) / left_den * _cox_de_boor(i, p - 1, u, knots)
    right_den = knots[i + p + 1] - knots[i + 1]
    if right_den > 0:
        value += (knots[i + p + 1] - u) / right_den * _cox_de_boor(i + 1, p - 1, u, knots)
    return value


def basis_matrix(us, p: int = DEGREE, knots: Sequence[float] = CLAMPED_KNOTS) -> np.ndarray:
    """``B[a, i] = N_{i,p}(us[a])`` evaluated for a whole parameter array."""
    us = np.atleast_1d(np.asarray(us, dtype=np.float64))
    knots = np.asarray(knots, dtype=np.float64)
    n_spans = len(knots) - 1
    last = knots[-1]

    B = np.zeros((len(us), n_spans))
    for i in range(n_spans):
        in_span = (knots[i] <= us) & (us < knots[i + 1])
        closes_end = (us == last) & (knots[i] < knots[i + 1]) & (knots[i + 1] == last)
        B[:, i] = (in_span | closes_end).astype(np.float64)

    for degree in range(1, p + 1):
        nxt = np.zeros((len(us), n_spans - degree))
        for i in range(n_spans - degree):
            left_den = knots[i + degree] - knots[i]
            if left_den > 0:
                nxt[:, i] += (us - knots[i]) / left_den * B[:, i]
            right_den = knots[i + degree + 1] - knots[i + 1]
            if right_den > 0:
                nxt[:, i] += (knots[i + degree + 1] - us) / right_den * B[:, i + 1]
        B = nxt
    return B


@dataclass(frozen=True)
class NurbsPatch:
    net: np.ndarray  # (3, 3, 3)
    weights: np.ndarray = field(default_factory=lambda: np.ones((3, 3)))
    knots_u: tuple = CLAMPED_KNOTS
    knots_v: tuple = CLAMPED_KNOTS

    def __post_init__(self):
        net = np.asarray(self.net, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if net.shape != (3, 3, 3) or weights.shape != (3, 3):
            raise DataFormatError("a biquadratic patch needs a 3 x 3 net and 3 x 3 weights")
        if np.any(weights <= 0):
            raise DataFormatError("patch weights must be positive")
        for knots in (self.knots_u, self.knots_v):
            if len(knots) != 6 or np.any(np.diff(knots) < 0):
                raise DataFormatError(f"invalid knot vector {knots}")
        object.__setattr__(self, "net", net)
        object.__setattr__(self, "weights", weights)


def evaluate_patch(patch: NurbsPatch, u: float, v: float) -> np.ndarray:
    return evaluate_patch_lattice(patch, [u], [v])[0, 0]


def evaluate_patch_lattice(patch: NurbsPatch, us, vs) -> np.ndarray:
    """Surface points ``S[a, b] = S(us[a], vs[b])``."""
    Bu = basis_matrix(us, DEGREE, patch.knots_u)
    Bv = basis_matrix(vs, DEGREE, patch.knots_v)
    weighted = patch.net * patch.weights[:, :, None]
    num = np.einsum("ai,bj,ijk->abk", Bu, Bv, weighted)
    den = np.einsum("ai,bj,ij->ab", Bu, Bv, patch.weights)
    return num / den[:, :, None]


EdgeInput = Union[ControlPoint, np.ndarray, Sequence[float]]


def _edge_position(edge: EdgeInput) -> np.ndarray:
    if isinstance(edge, ControlPoint):
        return edge.position
    return np.asarray(edge, dtype=np.float64).reshape(3)


def assemble_patch(sp: Sequence, cp_edges: Sequence[EdgeInput]) -> NurbsPatch:
    """Lay out one cell's net.

    ``sp`` are the corners at grid offsets (0,0), (1,0), (0,1), (1,1) as (row, col);
    ``cp_edges`` are the bottom, left, right and top edge control points.
    """
    if len(sp) != 4 or len(cp_edges) != 4:
        raise DataFormatError("a patch needs four corners and four edge control points")
    c00, c10, c01, c11 = (np.asarray(p, dtype=np.float64).reshape(3) for p in sp)
    bottom, left, right, top = (_edge_position(e) for e in cp_edges)

    scale = max(1.0, float(np.max(np.abs([c00, c10, c01, c11]))))
    for name, edge, a, b in (
        ("bottom", bottom, c00, c01),
        ("left", left, c00, c10),
        ("right", right, c01, c11),
        ("top", top, c10, c11),
    ):
        plane = vertical_plane(a, b)
        if abs(float((edge - plane.origin) @ plane.normal)) > 1e-6 * scale:
            raise DataFormatError(f"{name} control point does not belong to its cell edge")

    net = np.empty((3, 3, 3))
    net[0, 0], net[0, 2], net[2, 0], net[2, 2] = c00, c10, c01, c11
    net[1, 0], net[0, 1], net[2, 1], net[1, 2] = bottom, left, right, top
    net[1, 1] = central_control_point(bottom, left, right, top)
    return NurbsPatch(net)


@dataclass(frozen=True)
class PatchGrid:
    patches: list[list[NurbsPatch]]  # (rows - 1) x (cols - 1), row-major
    source: ContactGrid
    row_edges: list[list[ControlPoint]]  # between (r, c) and (r, c + 1)
    col_edges: list[list[ControlPoint]]  # between (r, c) and (r + 1, c)

    @property
    def cell_rows(self) -> int:
        return len(self.patches)

    @property
    def cell_cols(self) -> int:
        return len(self.patches[0]) if self.patches else 0

    @property
    def count(self) -> int:
        return self.cell_rows * self.cell_cols


def _edge_control_point(grid: ContactGrid, a: tuple[int, int], b: tuple[int, int], delta: float) -> ControlPoint:
    try:
        return control_point(grid.positions[a], grid.normals[a], grid.positions[b], grid.normals[b], delta)
    except GeometryError as e:
        raise GeometryError(str(e), edge=(a, b)) from e


def build_patch_grid(grid: ContactGrid, delta: float = DEFAULT_DELTA) -> PatchGrid:
    rows, cols = grid.rows, grid.cols
    row_edges = [[_edge_control_point(grid, (r, c), (r, c + 1), delta) for c in range(cols - 1)] for r in range(rows)]
    col_edges = [[_edge_control_point(grid, (r, c), (r + 1, c), delta) for c in range(cols)] for r in range(rows - 1)]

    p = grid.positions
    patches = []
    for r in range(rows - 1):
        patch_row = []
        for c in range(cols - 1):
            corners = [p[r, c], p[r + 1, c], p[r, c + 1], p[r + 1, c + 1]]
            edges = [row_edges[r][c], col_edges[r][c], col_edges[r][c + 1], row_edges[r + 1][c]]
            patch_row.append(assemble_patch(corners, edges))
        patches.append(patch_row)
    return PatchGrid(patches, grid, row_edges, col_edges)


def tessellate(patch_grid: PatchGrid, d: int, show_progress: bool = False) -> TriangleMesh:
    """Sample every patch on a d x d lattice and stitch the samples into one welded mesh.

    Neighbouring patches write the same global lattice vertices along their shared
    boundary, so the mesh has ``((cols-1)(d-1)+1) * ((rows-1)(d-1)+1)`` vertices.
    """
    if d < 2:
        raise DataFormatError(f"tessellation density must be at least 2, got {d}")
    step = d - 1
    grid_rows = patch_grid.cell_rows * step + 1
    grid_cols = patch_grid.cell_cols * step + 1
    params = np.linspace(0.0, 1.0, d)

    lattice = np.empty((grid_rows, grid_cols, 3))
    cells = [(r, c) for r in range(patch_grid.cell_rows) for c in range(patch_grid.cell_cols)]
    for r, c in tqdm(cells, desc="Tessellating", disable=not show_progress):
        samples = evaluate_patch_lattice(patch_grid.patches[r][c], params, params)  # [u, v]
        lattice[r * step : r * step + d, c * step : c * step + d] = samples.transpose(1, 0, 2)

    mesh = TriangleMesh(lattice.reshape(-1, 3), lattice_triangles(grid_rows, grid_cols))
    keep = mesh.face_areas() > MIN_TRIANGLE_AREA
    if np.all(keep):
        return mesh
    return TriangleMesh(mesh.vertices, mesh.triangles[keep])


def reconstruct_mesh(
    grid: ContactGrid, d: int, delta: float = DEFAULT_DELTA, show_progress: bool = False
) -> TriangleMesh:
    return tessellate(build_patch_grid(grid, delta), d, show_progress)
