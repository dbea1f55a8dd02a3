"""Simulated tactile probing of ground-truth surfaces.

A vertical descent at every grid point registers the contact position; the
contact normal comes either straight from the surface (oracle) or from a
synthesized static IMU trace pushed through calibration and the orientation
filter (imu).
"""

import math
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FuturesTimeoutError
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from tqdm.auto import tqdm

from tactile_recon import mesh_io
from tactile_recon.errors import DataFormatError, NumericalError
from tactile_recon.madgwick_filter import CalibrationState, ImuReading, calibrate, estimate_normal
from tactile_recon.models import FilterConfig, NoiseSpec, PointCloud, SurfaceDescriptor
from tactile_recon.quaternion_kinematics import (
    Quaternion,
    compose_initial_orientation,
    quat_from_accel,
    quat_z_rotation,
    rotate_vector,
)
from tactile_recon.surfaces import (
    BUILTIN_SURFACES,
    GroundTruthSurface,
    MeshSurface,
    heightfield_from_descriptor,
)


NormalSource = Literal["oracle", "imu"]

MIN_UPWARD_Z = 1e-6
MAX_TILT_DRAWS = 1000


@dataclass(frozen=True)
class ContactSample:
    position: np.ndarray
    normal: np.ndarray
    grid_index: tuple[int, int]


@dataclass(frozen=True)
class ContactGrid:
    rows: int
    cols: int
    spacing: float
    positions: np.ndarray  # (rows, cols, 3)
    normals: np.ndarray  # (rows, cols, 3)

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=np.float64)
        normals = np.asarray(self.normals, dtype=np.float64)
        expected = (self.rows, self.cols, 3)
        if positions.shape != expected or normals.shape != expected:
            raise DataFormatError(f"contact grid arrays must have shape {expected}")
        if self.rows < 2 or self.cols < 2:
            raise DataFormatError(f"a {self.rows} x {self.cols} contact grid cannot form a patch")
        if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(normals))):
            raise DataFormatError("contact grid has missing or non-finite samples")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "normals", normals)

    def sample(self, row: int, col: int) -> ContactSample:
        return ContactSample(self.positions[row, col], self.normals[row, col], (row, col))

    @property
    def samples(self) -> list[ContactSample]:
        return [self.sample(r, c) for r in range(self.rows) for c in range(self.cols)]


def make_surface(descriptor: SurfaceDescriptor, base_dir: Optional[Path] = None) -> GroundTruthSurface:
    if descriptor.kind == "builtin":
        catalog_entry = BUILTIN_SURFACES.get(descriptor.name)
        if catalog_entry is None:
            known = ", ".join(sorted(BUILTIN_SURFACES))
            raise DataFormatError(f"unknown builtin surface {descriptor.name!r} (known: {known})")
        return heightfield_from_descriptor(catalog_entry.model_copy(update={"origin": descriptor.origin}))

    if descriptor.kind == "stl":
        path = Path(descriptor.path)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        mesh = mesh_io.read_stl(path)
        return MeshSurface(descriptor.label, mesh)

    return heightfield_from_descriptor(descriptor)


def grid_axes(surface: GroundTruthSurface, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Column x-coordinates and row y-coordinates of the probing grid."""
    if not spacing > 0:
        raise DataFormatError(f"grid spacing must be positive, got {spacing}")
    e = surface.extent
    cols = int(math.floor(e.width / spacing + 1e-9)) + 1
    rows = int(math.floor(e.depth / spacing + 1e-9)) + 1
    if rows < 2 or cols < 2:
        raise DataFormatError(
            f"{surface.name} ({e.width:g} x {e.depth:g} mm) admits only a {rows} x {cols} grid at {spacing:g} mm"
        )
    return e.x0 + spacing * np.arange(cols), e.y0 + spacing * np.arange(rows)


def point_rng(seed: int, row: int, col: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1, row, col]))


def rest_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 0]))


def perturb_normal(normal: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Tilt ``normal`` by a N(0, sigma) angle about a random perpendicular axis.

    Tilts that would leave the upper hemisphere are redrawn from ``rng``.
    """
    if sigma == 0.0:
        return normal
    for _ in range(MAX_TILT_DRAWS):
        v = rng.normal(size=3)
        axis = v - (v @ normal) * normal
        length = np.linalg.norm(axis)
        if length < 1e-12:
            axis = np.cross(normal, [1.0, 0.0, 0.0])
            length = np.linalg.norm(axis)
        axis = axis / length
        angle = rng.normal(0.0, sigma)
        tilted = normal * math.cos(angle) + np.cross(axis, normal) * math.sin(angle)
        tilted = tilted / np.linalg.norm(tilted)
        if tilted[2] > MIN_UPWARD_Z:
            return tilted
    raise NumericalError(f"no upward tilt of normal {normal.tolist()} in {MAX_TILT_DRAWS} draws at sigma {sigma:g}")


def synth_imu_trace(
    true_normal,
    theta_z: float,
    noise: NoiseSpec,
    duration: float,
    rate: float,
    rng: Optional[np.random.Generator] = None,
) -> list[ImuReading]:
    """Static IMU readings of a module resting on a contact with the given normal.

    Base-frame biases are rotated into the module frame by the true pose, so
    ``calibrate`` followed by ``correct_reading`` removes them.
    """
    normal = np.asarray(true_normal, dtype=np.float64)
    if normal[2] <= 0:
        raise NumericalError("contact normal must face upward")
    if rng is None:
        rng = np.random.default_rng(noise.seed)

    q_true = compose_initial_orientation(quat_z_rotation(theta_z), quat_from_accel(normal / np.linalg.norm(normal)))
    count = max(1, int(round(duration * rate)))
    dt = 1.0 / rate

    accel = np.tile(normal + rotate_vector(q_true, noise.bias_acc), (count, 1))
    gyro = np.tile(rotate_vector(q_true, noise.bias_gyr), (count, 1))
    if noise.sigma_acc > 0:
        accel = accel + rng.normal(0.0, noise.sigma_acc, size=(count, 3))
    if noise.sigma_gyr > 0:
        gyro = gyro + rng.normal(0.0, noise.sigma_gyr, size=(count, 3))

    return [ImuReading(a, g, dt) for a, g in zip(accel, gyro)]


def rest_calibration(noise: NoiseSpec, config: FilterConfig) -> CalibrationState:
    """Calibrate at the home pose (level, facing +x) before a probing run."""
    rest = synth_imu_trace((0.0, 0.0, 1.0), 0.0, noise, config.rest_duration, config.rate, rest_rng(noise.seed))
    return calibrate(rest, Quaternion.identity())


def approach_angle(x: float, y: float) -> float:
    """Base-joint yaw of an arm mounted at the origin reaching (x, y)."""
    if x == 0.0 and y == 0.0:
        return 0.0
    return math.atan2(y, x)


@dataclass(frozen=True)
class ProbeOutcome:
    position: np.ndarray
    normal: np.ndarray
    trace: Optional[list[ImuReading]] = None


class GridProber:
    def __init__(
        self,
        surface: GroundTruthSurface,
        spacing: float,
        noise: NoiseSpec,
        normal_source: NormalSource = "oracle",
        filter_config: Optional[FilterConfig] = None,
        num_threads: int = 1,
        keep_traces: bool = False,
        show_progress: bool = False,
    ):
        if normal_source not in ("oracle", "imu"):
            raise DataFormatError(f"unknown normal source {normal_source!r}")
        self.surface = surface
        self.spacing = spacing
        self.noise = noise
        self.normal_source = normal_source
        self.filter_config = filter_config or FilterConfig()
        self.num_threads = num_threads
        self.keep_traces = keep_traces
        self.show_progress = show_progress

        self.xs, self.ys = grid_axes(surface, spacing)
        self.calibration: Optional[CalibrationState] = None
        if normal_source == "imu":
            self.calibration = rest_calibration(noise, self.filter_config)
        self.traces: dict[tuple[int, int], list[ImuReading]] = {}

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.ys), len(self.xs)

    def _probe_single_point(self, row: int, col: int) -> ProbeOutcome:
        x, y = float(self.xs[col]), float(self.ys[row])
        rng = point_rng(self.noise.seed, row, col)

        position = np.array([x, y, float(self.surface.height(x, y))])
        if self.noise.sigma_pos > 0:
            position = position + rng.normal(0.0, self.noise.sigma_pos, size=3)

        normal = perturb_normal(self.surface.normal(x, y), self.noise.sigma_normal, rng)
        if self.normal_source == "oracle":
            return ProbeOutcome(position, normal)

        theta_z = approach_angle(x, y)
        trace = synth_imu_trace(normal, theta_z, self.noise, self.filter_config.duration, self.filter_config.rate, rng)
        _, estimated = estimate_normal(trace, self.calibration, theta_z, self.filter_config)
        if estimated[2] <= 0:
            raise NumericalError(f"estimated normal at grid point ({row}, {col}) faces downward")
        return ProbeOutcome(position, estimated, trace if self.keep_traces else None)

    def _progress(self, total: int):
        return tqdm(total=total, desc=f"Probing {self.surface.name}", disable=not self.show_progress)

    def probe(self) -> ContactGrid:
        rows, cols = self.shape
        points = [(r, c) for r in range(rows) for c in range(cols)]
        outcomes: dict[tuple[int, int], ProbeOutcome] = {}

        if self.num_threads == 1:
            with self._progress(len(points)) as progress:
                for point in points:
                    outcomes[point] = self._probe_single_point(*point)
                    progress.update()
        else:
            pool = ThreadPoolExecutor(max_workers=self.num_threads)
            interrupted = False
            try:
                with self._progress(len(points)) as progress:
                    futures = {}
                    for point in points:
                        future = pool.submit(self._probe_single_point, *point)
                        future.add_done_callback(lambda p: progress.update())
                        futures[point] = future

                    for point, future in futures.items():
                        while True:
                            try:
                                outcomes[point] = future.result(timeout=1.0)
                                break
                            except FuturesTimeoutError:
                                continue
            except KeyboardInterrupt:
                print("\nStopping...")
                interrupted = True
                pool.shutdown(wait=False, cancel_futures=True)
                raise
            finally:
                if not interrupted:
                    pool.shutdown(wait=True)

        positions = np.empty((rows, cols, 3))
        normals = np.empty((rows, cols, 3))
        for (r, c), outcome in outcomes.items():
            positions[r, c] = outcome.position
            normals[r, c] = outcome.normal
            if outcome.trace is not None:
                self.traces[(r, c)] = outcome.trace
        return ContactGrid(rows, cols, self.spacing, positions, normals)


def probe_grid(
    surface: GroundTruthSurface,
    spacing: float,
    noise: NoiseSpec,
    normal_source: NormalSource = "oracle",
    filter_config: Optional[FilterConfig] = None,
    num_threads: int = 1,
) -> ContactGrid:
    prober = GridProber(surface, spacing, noise, normal_source, filter_config, num_threads)
    return prober.probe()


def write_traces(traces: dict[tuple[int, int], list[ImuReading]], trace_dir: Path) -> list[Path]:
    """Dump per-contact IMU traces as ``trace_rXX_cYY.csv`` files."""
    trace_dir = Path(trace_dir)
    trace_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for (row, col) in sorted(traces):
        path = trace_dir / f"trace_r{row:02d}_c{col:02d}.csv"
        mesh_io.write_imu_trace(traces[(row, col)], path)
        written.append(path)
    return written


def sample_cloud(
    surface: GroundTruthSurface,
    n_per_axis: int,
    bounds: Optional[tuple[float, float, float, float]] = None,
) -> PointCloud:
    """Regular ``n_per_axis`` x ``n_per_axis`` sampling of the surface.

    ``bounds`` = (x_min, x_max, y_min, y_max) restricts the lattice to a sub-rectangle.
    """
    if n_per_axis < 2:
        raise DataFormatError("sample_cloud needs at least 2 samples per axis")
    e = surface.extent
    x_min, x_max, y_min, y_max = bounds if bounds is not None else (e.x0, e.x1, e.y0, e.y1)
    gx, gy = np.meshgrid(np.linspace(x_min, x_max, n_per_axis), np.linspace(y_min, y_max, n_per_axis))
    gz = surface.height(gx, gy)
    return PointCloud(np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1))
