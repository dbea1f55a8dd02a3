"""Readers and writers for every file the toolkit exchanges.

Meshes (STL binary/ASCII, PLY ASCII) carry float32 coordinates; every ASCII
number is printed with 9 significant digits so float32 values survive a round
trip and repeated runs produce identical bytes.
"""

import csv
import json
from pathlib import Path
from typing import Sequence, TypeVar, Union

import numpy as np
import yaml
from pydantic import BaseModel, ValidationError
from stl import mesh as stl_mesh

from tactile_recon.errors import DataFormatError
from tactile_recon.madgwick_filter import ImuReading
from tactile_recon.models import PointCloud, TriangleMesh


CONTACT_HEADER = ["row", "col", "x", "y", "z", "nx", "ny", "nz"]
TRACE_HEADER = ["t", "ax", "ay", "az", "gx", "gy", "gz"]
STL_HEADER = b"tactile_recon binary STL"

Model = TypeVar("Model", bound=BaseModel)


def fmt(value: float) -> str:
    return format(float(value), ".9g")


def _float32(values: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=np.float32)


# STL


def read_stl(path: Union[str, Path]) -> TriangleMesh:
    """Load an ASCII or binary STL and weld coincident corners into shared vertices."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"STL file not found: {path}")
    try:
        loaded = stl_mesh.Mesh.from_file(str(path))
    except Exception as e:
        raise DataFormatError(f"cannot parse STL {path}: {e}") from e

    corners = np.asarray(loaded.vectors, dtype=np.float64).reshape(-1, 3)
    if len(corners) == 0:
        raise DataFormatError(f"STL {path} contains no triangles")
    vertices, inverse = np.unique(corners, axis=0, return_inverse=True)
    return TriangleMesh(vertices, np.asarray(inverse).reshape(-1, 3))


def write_stl(mesh: TriangleMesh, path: Union[str, Path]) -> Path:
    """Binary STL: fixed 80-byte header, little-endian count, 50-byte records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    record = stl_mesh.Mesh.dtype.newbyteorder("<")
    data = np.zeros(len(mesh.triangles), dtype=record)
    data["normals"] = _float32(mesh.face_normals())
    data["vectors"] = _float32(mesh.corners())

    with path.open("wb") as f:
        f.write(STL_HEADER.ljust(80, b" "))
        f.write(np.array([len(data)], dtype="<u4").tobytes())
        f.write(data.tobytes())
    return path


def write_stl_ascii(mesh: TriangleMesh, path: Union[str, Path], name: str = "reconstruction") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    normals = _float32(mesh.face_normals())
    corners = _float32(mesh.corners())

    lines = [f"solid {name}"]
    for n, tri in zip(normals, corners):
        lines.append(f"  facet normal {fmt(n[0])} {fmt(n[1])} {fmt(n[2])}")
        lines.append("    outer loop")
        for v in tri:
            lines.append(f"      vertex {fmt(v[0])} {fmt(v[1])} {fmt(v[2])}")
        lines.append("    endloop")
        lines.append("  endfacet")
    lines.append(f"endsolid {name}")
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


# PLY


def write_ply(geometry: Union[TriangleMesh, PointCloud], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(geometry, TriangleMesh):
        vertices, triangles = geometry.vertices, geometry.triangles
    else:
        vertices, triangles = geometry.points, np.empty((0, 3), dtype=np.int64)

    lines = [
        "ply",
        "format ascii 1.0",
        "comment tactile_recon",
        f"element vertex {len(vertices)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if len(triangles):
        lines += [f"element face {len(triangles)}", "property list uchar int vertex_indices"]
    lines.append("end_header")
    for v in _float32(vertices):
        lines.append(f"{fmt(v[0])} {fmt(v[1])} {fmt(v[2])}")
    for t in triangles:
        lines.append(f"3 {t[0]} {t[1]} {t[2]}")
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def read_ply(path: Union[str, Path]) -> Union[TriangleMesh, PointCloud]:
    """ASCII PLY; files without faces come back as a point cloud."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"PLY file not found: {path}")
    lines = path.read_text(encoding="ascii", errors="replace").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise DataFormatError(f"{path} is not a PLY file")

    n_vertices = n_faces = 0
    vertex_props: list[str] = []
    current = None
    body_start = None
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if tokens[1:2] != ["ascii"]:
                raise DataFormatError(f"{path}:{lineno}: only ASCII PLY is supported")
        elif tokens[0] == "element":
            current = tokens[1]
            if current == "vertex":
                n_vertices = int(tokens[2])
            elif current == "face":
                n_faces = int(tokens[2])
        elif tokens[0] == "property" and current == "vertex":
            vertex_props.append(tokens[-1])
        elif tokens[0] == "end_header":
            body_start = lineno
            break
    if body_start is None:
        raise DataFormatError(f"{path}: missing end_header")
    try:
        axes = [vertex_props.index(a) for a in ("x", "y", "z")]
    except ValueError:
        raise DataFormatError(f"{path}: vertex element lacks x/y/z properties")

    body = lines[body_start:]
    if len(body) < n_vertices + n_faces:
        raise DataFormatError(f"{path}: expected {n_vertices} vertices and {n_faces} faces")

    vertices = np.empty((n_vertices, 3))
    for k in range(n_vertices):
        try:
            values = [float(v) for v in body[k].split()]
            vertices[k] = [values[a] for a in axes]
        except (ValueError, IndexError):
            raise DataFormatError(f"{path}:{body_start + k + 1}: malformed vertex line")

    if n_faces == 0:
        return PointCloud(vertices)

    triangles = np.empty((n_faces, 3), dtype=np.int64)
    for k in range(n_faces):
        lineno = body_start + n_vertices + k + 1
        tokens = body[n_vertices + k].split()
        if len(tokens) != 4 or tokens[0] != "3":
            raise DataFormatError(f"{path}:{lineno}: only triangular faces are supported")
        try:
            triangles[k] = [int(t) for t in tokens[1:]]
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: malformed face line")
    try:
        return TriangleMesh(vertices, triangles)
    except ValueError as e:
        raise DataFormatError(f"{path}: {e}") from e


def write_mesh(mesh: TriangleMesh, path: Union[str, Path], mesh_format: str = "stl") -> Path:
    if mesh_format == "stl":
        return write_stl(mesh, path)
    if mesh_format == "stl-ascii":
        return write_stl_ascii(mesh, path)
    if mesh_format == "ply":
        return write_ply(mesh, path)
    raise DataFormatError(f"unknown mesh format {mesh_format!r}")


def mesh_suffix(mesh_format: str) -> str:
    return ".ply" if mesh_format == "ply" else ".stl"


def read_geometry(path: Union[str, Path]) -> Union[TriangleMesh, PointCloud]:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".stl":
        return read_stl(path)
    if suffix == ".ply":
        return read_ply(path)
    raise DataFormatError(f"unsupported geometry file {path} (expected .stl or .ply)")


def read_mesh(path: Union[str, Path]) -> TriangleMesh:
    geometry = read_geometry(path)
    if not isinstance(geometry, TriangleMesh):
        raise DataFormatError(f"{path} holds points only, a mesh is required")
    return geometry


# contacts CSV


def write_contacts(grid, path: Union[str, Path]) -> Path:
    """Contact grid as ``row,col,x,y,z,nx,ny,nz`` rows in row-major order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CONTACT_HEADER)
        for r in range(grid.rows):
            for c in range(grid.cols):
                p = grid.positions[r, c]
                n = grid.normals[r, c]
                writer.writerow([r, c] + [fmt(v) for v in p] + [fmt(v) for v in n])
    return path


def read_contacts(path: Union[str, Path]):
    from tactile_recon.probe_simulation import ContactGrid

    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"contacts file not found: {path}")

    entries: dict[tuple[int, int], tuple[list[float], list[float]]] = {}
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CONTACT_HEADER:
            raise DataFormatError(f"{path}:1: expected header {','.join(CONTACT_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CONTACT_HEADER):
                raise DataFormatError(f"{path}:{lineno}: expected {len(CONTACT_HEADER)} fields, got {len(row)}")
            try:
                r, c = int(row[0]), int(row[1])
                values = [float(v) for v in row[2:]]
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: malformed number")
            if r < 0 or c < 0:
                raise DataFormatError(f"{path}:{lineno}: negative grid index")
            if not np.all(np.isfinite(values)):
                raise DataFormatError(f"{path}:{lineno}: non-finite value")
            normal = np.asarray(values[3:])
            length = np.linalg.norm(normal)
            if abs(length - 1.0) > 1e-6 or normal[2] <= 0:
                raise DataFormatError(f"{path}:{lineno}: normal must be a unit vector facing upward")
            if (r, c) in entries:
                raise DataFormatError(f"{path}:{lineno}: duplicate grid index ({r}, {c})")
            entries[(r, c)] = (values[:3], list(normal / length))

    if not entries:
        raise DataFormatError(f"{path}: no contacts")
    rows = max(r for r, _ in entries) + 1
    cols = max(c for _, c in entries) + 1
    missing = [(r, c) for r in range(rows) for c in range(cols) if (r, c) not in entries]
    if missing:
        raise DataFormatError(f"{path}: incomplete grid, missing {len(missing)} contacts starting at {missing[0]}")

    positions = np.array([[entries[(r, c)][0] for c in range(cols)] for r in range(rows)])
    normals = np.array([[entries[(r, c)][1] for c in range(cols)] for r in range(rows)])
    spacing = float(np.linalg.norm(positions[0, 1, :2] - positions[0, 0, :2])) if cols > 1 else 0.0
    return ContactGrid(rows, cols, spacing, positions, normals)


# IMU traces


def write_imu_trace(readings: Sequence, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    times = np.cumsum([r.dt for r in readings])
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for t, r in zip(times, readings):
            writer.writerow([fmt(t)] + [fmt(v) for v in r.accel] + [fmt(v) for v in r.gyro])
    return path


def read_imu_trace(path: Union[str, Path]) -> list:
    """Readings whose ``dt`` is the gap to the previous timestamp (the first gap starts at t = 0)."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"IMU trace not found: {path}")
    readings = []
    previous = 0.0
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRACE_HEADER:
            raise DataFormatError(f"{path}:1: expected header {','.join(TRACE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(TRACE_HEADER):
                raise DataFormatError(f"{path}:{lineno}: expected {len(TRACE_HEADER)} fields, got {len(row)}")
            try:
                t, ax, ay, az, gx, gy, gz = (float(v) for v in row)
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: malformed number")
            if not t > previous:
                raise DataFormatError(f"{path}:{lineno}: timestamps must increase")
            try:
                readings.append(ImuReading((ax, ay, az), (gx, gy, gz), t - previous))
            except DataFormatError as e:
                raise DataFormatError(f"{path}:{lineno}: {e}") from e
            previous = t
    if not readings:
        raise DataFormatError(f"{path}: no readings")
    return readings


# JSON / YAML documents


def load_document(path: Union[str, Path], model: type[Model]) -> Model:
    """Validate a JSON or YAML file against a pydantic model."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"file not found: {path}")
    try:
        with path.open("rt", encoding="utf-8") as f:
            data = json.load(f) if path.suffix.lower() == ".json" else yaml.safe_load(f)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise DataFormatError(f"cannot parse {path}: {e}") from e
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise DataFormatError(f"invalid {model.__name__} in {path}: {e}") from e


def save_document(document: BaseModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() in (".yaml", ".yml"):
        with path.open("wt", encoding="utf-8") as f:
            yaml.safe_dump(document.model_dump(mode="json", by_alias=True), f, sort_keys=False)
    else:
        path.write_text(document.model_dump_json(indent=2, by_alias=True) + "\n", encoding="utf-8")
    return path
