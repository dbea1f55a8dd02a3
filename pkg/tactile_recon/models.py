from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


SurfaceKind = Literal["builtin", "plane", "ramp", "sinusoid", "gaussian", "dome", "saddle", "stl"]

Vec3Tuple = tuple[float, float, float]


class SurfaceDescriptor(BaseModel):
    """What to build a ground-truth surface from. Lengths in millimeters."""

    kind: SurfaceKind
    name: Optional[str] = None  # catalog name for builtin, free label otherwise
    width: Optional[float] = Field(None, gt=0)  # extent along x
    depth: Optional[float] = Field(None, gt=0)  # extent along y
    origin: tuple[float, float] = (0.0, 0.0)
    params: dict[str, float] = Field(default_factory=dict)
    path: Optional[str] = None  # STL file for kind == "stl"

    @model_validator(mode="after")
    def _check_kind_fields(self):
        if self.kind == "builtin" and not self.name:
            raise ValueError("builtin surfaces need a catalog name")
        if self.kind == "stl" and not self.path:
            raise ValueError("stl surfaces need a path")
        if self.kind not in ("builtin", "stl"):
            if self.width is None or self.depth is None:
                raise ValueError(f"{self.kind} surfaces need width and depth")
        return self

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.path:
            return Path(self.path).stem
        return self.kind


class NoiseSpec(BaseModel):
    sigma_pos: float = Field(0.0, ge=0)  # mm, per coordinate
    sigma_normal: float = Field(0.0, ge=0)  # radians
    sigma_acc: float = Field(0.0, ge=0)  # normalized accelerometer units
    sigma_gyr: float = Field(0.0, ge=0)  # rad/s
    bias_acc: Vec3Tuple = (0.0, 0.0, 0.0)  # base frame
    bias_gyr: Vec3Tuple = (0.0, 0.0, 0.0)  # base frame, rad/s
    seed: int = Field(0, ge=0)

    @classmethod
    def typical_sensor(cls, seed: int = 0) -> "NoiseSpec":
        """MARG noise levels of a hobby-grade accelerometer/gyroscope pair."""
        return cls(sigma_acc=0.01, sigma_gyr=0.005, seed=seed)

    def is_noiseless(self) -> bool:
        sigmas = (self.sigma_pos, self.sigma_normal, self.sigma_acc, self.sigma_gyr)
        biases = self.bias_acc + self.bias_gyr
        return all(s == 0.0 for s in sigmas) and all(b == 0.0 for b in biases)


class FilterConfig(BaseModel):
    beta: float = Field(0.1, ge=0)
    grad_epsilon: float = Field(1e-12, gt=0)
    rate: float = Field(100.0, gt=0)  # Hz
    duration: float = Field(1.0, gt=0)  # seconds of static contact per probe
    rest_duration: float = Field(1.0, gt=0)  # seconds of calibration at the home pose


class PipelineConfig(BaseModel):
    surfaces: list[SurfaceDescriptor]
    spacing: float = Field(20.0, gt=0)  # mm
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    normal_source: Literal["oracle", "imu"] = "oracle"
    density: int = Field(20, ge=2)  # tessellation samples per patch direction
    cloud_density: int = Field(150, ge=2)  # ground-truth samples per axis
    filter: FilterConfig = Field(default_factory=FilterConfig)
    output_dir: Path = Path("runs")
    mesh_format: Literal["stl", "stl-ascii", "ply"] = "stl"
    ground_truth: Literal["descriptor", "stl"] = "descriptor"  # what the pipeline evaluates against
    stl_resolution: float = Field(1.0, gt=0)  # mm between generated STL lattice points
    seed: Optional[int] = None
    num_threads: int = Field(1, ge=1)
    icp_max_iters: int = Field(50, ge=1)
    icp_tol: float = Field(1e-9, ge=0)

    @model_validator(mode="after")
    def _propagate_seed(self):
        if self.seed is not None:
            self.noise = self.noise.model_copy(update={"seed": self.seed})
        return self


class MetricsReport(BaseModel):
    """Distances in millimeters, laid out like the hardware reference tables in report.py."""

    model_config = ConfigDict(populate_by_name=True)

    ucm_mean: float
    ucm_std: float
    scm_mean_abs: float = Field(alias="scm")
    scm_std: float
    cc_mean: float
    cc_std: float
    hausdorff: float
    icp_residual: float
    icp_iters: int
    reference_points: int
    reconstruction_points: int


class SurfaceResult(BaseModel):
    surface: str
    rows: int
    cols: int
    patches: int
    metrics: MetricsReport
    timings: dict[str, float] = Field(default_factory=dict)


class RunReport(BaseModel):
    config_hash: str
    versions: dict[str, str]
    normal_source: str
    spacing: float
    density: int
    results: list[SurfaceResult]


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (n, 3) mm

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return len(self.points)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.points)))


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (n, 3) mm
    triangles: np.ndarray  # (m, 3) vertex indices, counter-clockwise seen from +z

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(triangles) and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)

    def corners(self) -> np.ndarray:
        """(m, 3, 3) array of triangle corner coordinates."""
        return self.vertices[self.triangles]

    def face_normals(self) -> np.ndarray:
        tri = self.corners()
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        length = np.linalg.norm(cross, axis=1, keepdims=True)
        return np.divide(cross, length, out=np.zeros_like(cross), where=length > 0)

    def face_areas(self) -> np.ndarray:
        tri = self.corners()
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def transformed(self, matrix: np.ndarray, translation: np.ndarray) -> "TriangleMesh":
        return TriangleMesh(self.vertices @ np.asarray(matrix).T + translation, self.triangles)
