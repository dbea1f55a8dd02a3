"""Reconstruction error metrics: Hausdorff, cloud-to-cloud and signed/unsigned cloud-to-mesh."""

from typing import Union

import numpy as np

from tactile_recon.errors import DataFormatError
from tactile_recon.models import MetricsReport, PointCloud, TriangleMesh
from tactile_recon.registration import DEFAULT_MAX_ITERS, DEFAULT_TOL, IcpResult, icp_align
from tactile_recon.spatial_index import SpatialIndex, TriangleIndex


CloudLike = Union[PointCloud, np.ndarray]

FOOTPRINT_TOLERANCE = 1e-9


def _points(cloud: CloudLike, label: str) -> np.ndarray:
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise DataFormatError(f"{label} is empty")
    return points


def directed_hausdorff(A: CloudLike, B: CloudLike) -> float:
    """max over a in A of the distance to the nearest b in B."""
    a = _points(A, "first cloud")
    _, dist = SpatialIndex(_points(B, "second cloud")).nearest(a)
    return float(dist.max())


def hausdorff(A: CloudLike, B: CloudLike) -> float:
    return max(directed_hausdorff(A, B), directed_hausdorff(B, A))


def nearest_in_cloud(index: SpatialIndex, a) -> tuple[np.ndarray, float]:
    ids, dist = index.nearest(np.asarray(a, dtype=np.float64).reshape(1, 3))
    return index.points[ids[0]].copy(), float(dist[0])


def closest_point_on_mesh(
    mesh: Union[TriangleMesh, TriangleIndex], a
) -> tuple[np.ndarray, np.ndarray, float]:
    index = mesh if isinstance(mesh, TriangleIndex) else TriangleIndex(mesh)
    points, normals, dist, _ = index.closest(np.asarray(a, dtype=np.float64).reshape(1, 3))
    return points[0], normals[0], float(dist[0])


def cloud_to_cloud(A: CloudLike, B: CloudLike) -> tuple[float, float]:
    """Mean and population std of nearest-neighbour distances from A into B."""
    a = _points(A, "compared cloud")
    _, dist = SpatialIndex(_points(B, "reference cloud")).nearest(a)
    return float(dist.mean()), float(dist.std())


def signed_mesh_distances(A: CloudLike, mesh: TriangleMesh) -> np.ndarray:
    """Distance of every point to the mesh, positive on the side the face normal points to."""
    a = _points(A, "cloud")
    if len(mesh.triangles) == 0:
        raise DataFormatError("mesh has no triangles")
    closest, normals, dist, _ = TriangleIndex(mesh).closest(a)
    side = np.sign(np.einsum("ij,ij->i", a - closest, normals))
    return dist * side


def cloud_to_mesh(A: CloudLike, mesh: TriangleMesh) -> tuple[float, float, float, float]:
    """(scm_mean_abs, scm_std, ucm_mean, ucm_std)."""
    s = signed_mesh_distances(A, mesh)
    u = np.abs(s)
    return float(abs(s.mean())), float(s.std()), float(u.mean()), float(u.std())


def footprint_points(reference: PointCloud, mesh: TriangleMesh) -> PointCloud:
    """Reference points whose x-y lies inside the x-y bounding box of the mesh."""
    xy = mesh.vertices[:, :2]
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    slack = FOOTPRINT_TOLERANCE * max(1.0, float(np.abs(xy).max()))
    p = reference.points[:, :2]
    inside = np.all((p >= lo - slack) & (p <= hi + slack), axis=1)
    if not np.any(inside):
        raise DataFormatError("no reference point lies under the reconstruction")
    return PointCloud(reference.points[inside])


def compute_metrics(
    reconstruction: TriangleMesh,
    reference: PointCloud,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    footprint_only: bool = False,
) -> tuple[MetricsReport, IcpResult, TriangleMesh]:
    """Align the reconstruction to the reference cloud and measure what remains.

    With ``footprint_only`` the mesh-side measures (CM and Hausdorff) only see the
    reference points under the aligned reconstruction; ICP and CC use all of them.
    """
    if len(reference) == 0:
        raise DataFormatError("reference cloud is empty")
    icp = icp_align(PointCloud(reconstruction.vertices), reference, max_iters, tol)
    aligned = icp.transform.apply_mesh(reconstruction)
    measured = footprint_points(reference, aligned) if footprint_only else reference

    cc_mean, cc_std = cloud_to_cloud(aligned.vertices, reference)
    scm, scm_std, ucm_mean, ucm_std = cloud_to_mesh(measured, aligned)

    report = MetricsReport(
        ucm_mean=ucm_mean,
        ucm_std=ucm_std,
        scm=scm,
        scm_std=scm_std,
        cc_mean=cc_mean,
        cc_std=cc_std,
        hausdorff=hausdorff(aligned.vertices, measured),
        icp_residual=icp.residual,
        icp_iters=icp.iterations,
        reference_points=len(measured),
        reconstruction_points=len(aligned.vertices),
    )
    return report, icp, aligned
