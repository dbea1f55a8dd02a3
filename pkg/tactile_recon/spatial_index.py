"""Exact nearest-point and closest-triangle queries over k-d tree partitions.

The tree only prunes the search; the returned distances are recomputed with
plain numpy so they match a linear scan bit for bit, and exact ties resolve to
the lowest element index.
"""

import numpy as np
from scipy.spatial import cKDTree

from tactile_recon.errors import DataFormatError
from tactile_recon.models import TriangleMesh


DEFAULT_LEAF_CAPACITY = 16
QUERY_CHUNK = 2048


class SpatialIndex:
    """Point set index. ``leaf_capacity`` bounds how many points a tree leaf holds."""

    def __init__(self, points: np.ndarray, leaf_capacity: int = DEFAULT_LEAF_CAPACITY):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(points) == 0:
            raise DataFormatError("cannot index an empty point set")
        if not np.all(np.isfinite(points)):
            raise DataFormatError("point set has non-finite coordinates")
        self.points = points
        self.leaf_capacity = leaf_capacity
        self._tree = cKDTree(points, leafsize=leaf_capacity)

    def __len__(self) -> int:
        return len(self.points)

    def nearest(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Indices and distances of the nearest indexed point for each query row."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        k = min(4, len(self.points))
        _, candidates = self._tree.query(queries, k=k)
        candidates = np.asarray(candidates).reshape(len(queries), k)

        dist = np.linalg.norm(self.points[candidates] - queries[:, None, :], axis=2)
        # lowest index among the exact minima
        best_dist = dist.min(axis=1)
        masked = np.where(dist == best_dist[:, None], candidates, np.iinfo(np.int64).max)
        best = masked.min(axis=1)

        # every candidate tied: more tied points may exist outside the k returned
        crowded = np.nonzero((dist == best_dist[:, None]).all(axis=1) & (k < len(self.points)))[0]
        for qi in crowded:
            radius = best_dist[qi] * (1 + 1e-12) + 1e-300
            ball = np.asarray(self._tree.query_ball_point(queries[qi], radius), dtype=np.int64)
            ball_dist = np.linalg.norm(self.points[ball] - queries[qi], axis=1)
            tied = ball[ball_dist == ball_dist.min()]
            best[qi] = tied.min()
            best_dist[qi] = ball_dist.min()

        return best.astype(np.int64), best_dist

    def within(self, queries: np.ndarray, radii) -> list[list[int]]:
        """Indices of points inside each query ball, ascending."""
        return self._tree.query_ball_point(queries, radii, return_sorted=True)


def _dot(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    # elementwise, so results do not depend on operand strides
    return u[..., 0] * v[..., 0] + u[..., 1] * v[..., 1] + u[..., 2] * v[..., 2]


def closest_points_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Closest point to ``p`` on triangle ``abc``, broadcast over leading axes.

    Voronoi-region classification: vertex regions, then edge regions, then the face.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    bp = p - b
    cp = p - c

    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom

    regions = [
        (d1 <= 0) & (d2 <= 0),
        (d3 >= 0) & (d4 <= d3),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        (d6 >= 0) & (d5 <= d6),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
    ]
    choices = [
        a,
        b,
        a + t_ab[..., None] * ab,
        c,
        a + t_ac[..., None] * ac,
        b + t_bc[..., None] * (c - b),
    ]
    face = a + v[..., None] * ab + w[..., None] * ac
    conditions = [np.broadcast_to(r[..., None], face.shape) for r in regions]
    return np.select(conditions, [np.broadcast_to(ch, face.shape) for ch in choices], default=face)


class TriangleIndex:
    """Closest-point queries against a triangle mesh, pruned by triangle centroids."""

    def __init__(self, mesh: TriangleMesh, leaf_capacity: int = DEFAULT_LEAF_CAPACITY):
        if len(mesh.triangles) == 0:
            raise DataFormatError("cannot index a mesh without triangles")
        self.mesh = mesh
        self.leaf_capacity = leaf_capacity
        self._corners = mesh.corners()
        self._normals = mesh.face_normals()
        centroids = self._corners.mean(axis=1)
        self._radius = float(np.max(np.linalg.norm(self._corners - centroids[:, None, :], axis=2)))
        self._centroids = SpatialIndex(centroids, leaf_capacity)

    def __len__(self) -> int:
        return len(self._corners)

    def closest(self, queries: np.ndarray):
        """Closest mesh point, its face normal, distance and face index for each query."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        points = np.empty_like(queries)
        dists = np.empty(len(queries))
        face_ids = np.empty(len(queries), dtype=np.int64)

        for start in range(0, len(queries), QUERY_CHUNK):
            chunk = queries[start : start + QUERY_CHUNK]
            _, upper = self._centroids.nearest(chunk)
            radii = upper + self._radius
            radii = radii * (1 + 1e-9) + 1e-9
            lists = self._centroids.within(chunk, radii)
            width = max(len(ids) for ids in lists)
            candidates = np.full((len(chunk), width), -1, dtype=np.int64)
            for row, ids in enumerate(lists):
                candidates[row, : len(ids)] = ids

            valid = candidates >= 0
            safe = np.where(valid, candidates, 0)
            tri = self._corners[safe]  # (q, width, 3, 3)
            closest = closest_points_on_triangles(chunk[:, None, :], tri[:, :, 0], tri[:, :, 1], tri[:, :, 2])
            d = np.sqrt(_dot(closest - chunk[:, None, :], closest - chunk[:, None, :]))
            d = np.where(valid, d, np.inf)
            pick = np.argmin(d, axis=1)

            rows = np.arange(len(chunk))
            points[start : start + len(chunk)] = closest[rows, pick]
            dists[start : start + len(chunk)] = d[rows, pick]
            face_ids[start : start + len(chunk)] = candidates[rows, pick]

        return points, self._normals[face_ids], dists, face_ids


def brute_force_closest(mesh: TriangleMesh, queries: np.ndarray):
    """Linear scan over every triangle; the reference the index must agree with."""
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    tri = mesh.corners()
    closest = closest_points_on_triangles(queries[:, None, :], tri[None, :, 0], tri[None, :, 1], tri[None, :, 2])
    d = np.sqrt(_dot(closest - queries[:, None, :], closest - queries[:, None, :]))
    pick = np.argmin(d, axis=1)
    rows = np.arange(len(queries))
    return closest[rows, pick], mesh.face_normals()[pick], d[rows, pick], pick
