"""Command-line orchestration: generate, probe, reconstruct, evaluate, pipeline, orient.

Every command reads its inputs from files and writes its outputs to files, so any
stage can be re-run on its own:

    uv run python -m tactile_recon.pipeline generate --builtin surface1 -o runs/gen
    uv run python -m tactile_recon.pipeline probe runs/gen/surface1.json -o runs/contacts.csv
    uv run python -m tactile_recon.pipeline reconstruct runs/contacts.csv -o runs/surface1.stl
    uv run python -m tactile_recon.pipeline evaluate runs/surface1.stl runs/gen/surface1.json
    uv run python -m tactile_recon.pipeline pipeline --config configs/builtin_surfaces.yaml
"""

import argparse
import hashlib
import json
import platform
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np
import questionary
from pydantic import ValidationError
from tqdm.auto import tqdm

from tactile_recon import mesh_io
from tactile_recon.cloud_metrics import compute_metrics
from tactile_recon.errors import DataFormatError, ReconstructionError, UsageError
from tactile_recon.madgwick_filter import calibrate, estimate_normal
from tactile_recon.models import (
    FilterConfig,
    MetricsReport,
    PipelineConfig,
    PointCloud,
    RunReport,
    SurfaceDescriptor,
    SurfaceResult,
    TriangleMesh,
)
from tactile_recon.nurbs_patchwork import build_patch_grid, tessellate
from tactile_recon.probe_simulation import GridProber, make_surface, sample_cloud, write_traces
from tactile_recon.quaternion_kinematics import Quaternion
from tactile_recon.report import render_table, write_pdf
from tactile_recon.surfaces import BUILTIN_SURFACES, GroundTruthSurface, MeshSurface, surface_to_mesh


PathLike = Union[str, Path]

DESCRIPTOR_SUFFIXES = (".json", ".yaml", ".yml")


def say(message: str, verbose: bool = True) -> None:
    if verbose:
        tqdm.write(message)


@contextmanager
def stage(label: str) -> Iterator[None]:
    """Prefix failures raised inside the block with ``[label]``."""
    try:
        yield
    except ReconstructionError as e:
        raise type(e)(f"[{label}] {e}") from e


# configuration


def load_config(path: PathLike) -> PipelineConfig:
    return mesh_io.load_document(path, PipelineConfig)


def apply_overrides(config: PipelineConfig, overrides: dict) -> PipelineConfig:
    """Return a copy of ``config`` with dotted keys (``noise.sigma_pos``) replaced."""
    data = config.model_dump()
    for key, value in overrides.items():
        if value is None:
            continue
        target = data
        *parents, leaf = key.split(".")
        for parent in parents:
            target = target[parent]
        target[leaf] = value
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise UsageError(f"invalid configuration: {e}") from e


def require_seed(config: PipelineConfig) -> None:
    if not config.noise.is_noiseless() and config.seed is None:
        raise UsageError("noisy runs need an explicit --seed (or seed: in the config)")


def config_hash(config: PipelineConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def collect_versions() -> dict[str, str]:
    versions = {"python": platform.python_version()}
    for package in ("tactile-surface-recon", "numpy", "scipy", "numpy-stl", "pydantic"):
        try:
            versions[package] = version(package)
        except PackageNotFoundError:
            versions[package] = "unknown"
    return versions


# surfaces


def resolve_surface(reference: str) -> tuple[SurfaceDescriptor, Optional[Path]]:
    """Builtin catalog name, descriptor file (.json/.yaml) or STL path."""
    if reference in BUILTIN_SURFACES:
        return SurfaceDescriptor(kind="builtin", name=reference), None
    path = Path(reference)
    suffix = path.suffix.lower()
    if suffix in DESCRIPTOR_SUFFIXES:
        return mesh_io.load_document(path, SurfaceDescriptor), path.parent
    if suffix == ".stl":
        return SurfaceDescriptor(kind="stl", path=str(path)), None
    known = ", ".join(sorted(BUILTIN_SURFACES))
    raise UsageError(f"cannot interpret surface {reference!r}: expected {known}, a descriptor file or an STL")


def resolved_descriptor(descriptor: SurfaceDescriptor) -> SurfaceDescriptor:
    """Replace a builtin reference by its full parametric entry."""
    if descriptor.kind != "builtin":
        return descriptor
    entry = BUILTIN_SURFACES.get(descriptor.name)
    if entry is None:
        known = ", ".join(sorted(BUILTIN_SURFACES))
        raise DataFormatError(f"unknown builtin surface {descriptor.name!r} (known: {known})")
    return entry.model_copy(update={"origin": descriptor.origin})


def prompt_for_surface_selection(names: Sequence[str]) -> Optional[str]:
    """Asks which builtin surface to generate."""
    if not names:
        return None
    return questionary.select(
        "Select a surface to generate",
        choices=[questionary.Choice(title=name, value=name) for name in names],
        default=names[0],
    ).ask()


def load_ground_truth(path: PathLike) -> Union[GroundTruthSurface, PointCloud]:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in DESCRIPTOR_SUFFIXES:
        descriptor = mesh_io.load_document(path, SurfaceDescriptor)
        return make_surface(descriptor, base_dir=path.parent)
    geometry = mesh_io.read_geometry(path)
    if isinstance(geometry, PointCloud):
        return geometry
    return MeshSurface(path.stem, geometry)


def reference_cloud(
    ground_truth: Union[GroundTruthSurface, PointCloud], reconstruction: TriangleMesh, n_per_axis: int
) -> PointCloud:
    """Lattice over the whole ground-truth extent plus ground-truth heights under the reconstruction.

    A mesh ground truth also contributes the vertices of its top surface.
    """
    if isinstance(ground_truth, PointCloud):
        return ground_truth

    xy = reconstruction.vertices[:, :2]
    inside = ground_truth.extent.contains(xy[:, 0], xy[:, 1])
    if not np.any(inside):
        raise DataFormatError(f"reconstruction does not overlap {ground_truth.name}")

    parts = [sample_cloud(ground_truth, n_per_axis).points]
    if isinstance(ground_truth, MeshSurface):
        v = ground_truth.mesh.vertices
        top = v[:, 2] >= ground_truth.height(v[:, 0], v[:, 1]) - 1e-9 * max(1.0, float(np.abs(v).max()))
        parts.append(v[top])
    parts.append(np.column_stack([xy[inside], ground_truth.height(xy[inside, 0], xy[inside, 1])]))
    return PointCloud(np.vstack(parts))


# commands


@dataclass(frozen=True)
class GeneratedSurface:
    stl_path: Path
    descriptor_path: Path
    descriptor: SurfaceDescriptor


def cmd_generate(
    descriptor: SurfaceDescriptor, output_dir: PathLike, resolution: float = 1.0, verbose: bool = True
) -> GeneratedSurface:
    """Write ``<label>.stl`` and ``<label>.json`` for a surface."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    descriptor = resolved_descriptor(descriptor)
    surface = make_surface(descriptor)

    label = descriptor.label
    stl_path = output_dir / f"{label}.stl"
    if isinstance(surface, MeshSurface):
        mesh = surface.mesh
    else:
        mesh = surface_to_mesh(surface, resolution)
    mesh_io.write_stl(mesh, stl_path)

    if descriptor.kind == "stl":
        descriptor = descriptor.model_copy(update={"path": str(Path(stl_path.name))})
    descriptor_path = mesh_io.save_document(descriptor, output_dir / f"{label}.json")

    e = surface.extent
    say(f"Generated {label}: {e.width:g} x {e.depth:g} mm, {len(mesh.triangles)} triangles", verbose)
    say(f"STL written to {stl_path}", verbose)
    return GeneratedSurface(stl_path, descriptor_path, descriptor)


def cmd_probe(
    config: PipelineConfig,
    descriptor: SurfaceDescriptor,
    output: PathLike,
    base_dir: Optional[Path] = None,
    trace_dir: Optional[PathLike] = None,
    verbose: bool = True,
):
    """Probe a surface on the configured grid and write the contacts CSV."""
    require_seed(config)
    surface = make_surface(descriptor, base_dir)
    prober = GridProber(
        surface,
        config.spacing,
        config.noise,
        normal_source=config.normal_source,
        filter_config=config.filter,
        num_threads=config.num_threads,
        keep_traces=trace_dir is not None,
        show_progress=verbose,
    )
    rows, cols = prober.shape
    say(f"Probing {surface.name} on a {rows} x {cols} grid ({config.normal_source} normals)...", verbose)
    grid = prober.probe()

    path = mesh_io.write_contacts(grid, output)
    say(f"Contacts written to {path}", verbose)
    if trace_dir is not None:
        written = write_traces(prober.traces, Path(trace_dir))
        say(f"{len(written)} IMU traces written to {trace_dir}", verbose)
    return grid, path


def cmd_reconstruct(
    contacts: PathLike, output: PathLike, d: int = 20, mesh_format: str = "stl", verbose: bool = True
):
    """Fit the patch grid to a contacts CSV and write the tessellated mesh."""
    grid = mesh_io.read_contacts(contacts)
    patch_grid = build_patch_grid(grid)
    mesh = tessellate(patch_grid, d, show_progress=verbose)
    path = mesh_io.write_mesh(mesh, output, mesh_format)
    say(
        f"Reconstructed {patch_grid.count} patches into {len(mesh.vertices)} vertices / "
        f"{len(mesh.triangles)} triangles",
        verbose,
    )
    say(f"Mesh written to {path}", verbose)
    return mesh, patch_grid, path


def cmd_evaluate(
    mesh_path: PathLike,
    ground_truth: PathLike,
    output: Optional[PathLike] = None,
    cloud_density: int = 150,
    max_iters: int = 50,
    tol: float = 1e-9,
    verbose: bool = True,
) -> MetricsReport:
    """Align a reconstruction to its ground truth and measure CC, CM and Hausdorff."""
    reconstruction = mesh_io.read_mesh(mesh_path)
    truth = load_ground_truth(ground_truth)
    reference = reference_cloud(truth, reconstruction, cloud_density)
    say(f"Evaluating {Path(mesh_path).name} against {len(reference)} reference points...", verbose)

    footprint_only = not isinstance(truth, PointCloud)
    metrics, icp, _ = compute_metrics(reconstruction, reference, max_iters, tol, footprint_only)
    say(
        f"uCM {metrics.ucm_mean:.4f} mm, sCM {metrics.scm_mean_abs:.4f} mm, CC {metrics.cc_mean:.4f} mm "
        f"(ICP {icp.iterations} passes, residual {icp.residual:.3g} mm)",
        verbose,
    )
    if output is not None:
        path = mesh_io.save_document(metrics, output)
        say(f"Metrics written to {path}", verbose)
    return metrics


def run_surface(
    config: PipelineConfig, descriptor: SurfaceDescriptor, surface_dir: Path, verbose: bool = True
) -> SurfaceResult:
    timings = {}

    started = time.perf_counter()
    with stage("generate"):
        generated = cmd_generate(descriptor, surface_dir, config.stl_resolution, verbose)
    timings["generate"] = time.perf_counter() - started

    started = time.perf_counter()
    with stage("probe"):
        probed = mesh_io.load_document(generated.descriptor_path, SurfaceDescriptor)
        _, contacts_path = cmd_probe(config, probed, surface_dir / "contacts.csv", surface_dir, verbose=verbose)
    timings["probe"] = time.perf_counter() - started

    started = time.perf_counter()
    with stage("reconstruct"):
        mesh_path = surface_dir / f"reconstruction{mesh_io.mesh_suffix(config.mesh_format)}"
        _, patch_grid, mesh_path = cmd_reconstruct(
            contacts_path, mesh_path, config.density, config.mesh_format, verbose
        )
    timings["reconstruct"] = time.perf_counter() - started

    started = time.perf_counter()
    with stage("evaluate"):
        truth_path = generated.stl_path if config.ground_truth == "stl" else generated.descriptor_path
        metrics = cmd_evaluate(
            mesh_path,
            truth_path,
            surface_dir / "metrics.json",
            config.cloud_density,
            config.icp_max_iters,
            config.icp_tol,
            verbose,
        )
    timings["evaluate"] = time.perf_counter() - started

    source = patch_grid.source
    return SurfaceResult(
        surface=generated.descriptor.label,
        rows=source.rows,
        cols=source.cols,
        patches=patch_grid.count,
        metrics=metrics,
        timings=timings,
    )


def cmd_pipeline(config: PipelineConfig, pdf: Optional[PathLike] = None, verbose: bool = True) -> RunReport:
    """generate -> probe -> reconstruct -> evaluate for every configured surface."""
    require_seed(config)
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    results = []
    for descriptor in config.surfaces:
        label = descriptor.label
        say(f"== {label} ==", verbose)
        results.append(run_surface(config, descriptor, output_dir / label, verbose))

    report = RunReport(
        config_hash=config_hash(config),
        versions=collect_versions(),
        normal_source=config.normal_source,
        spacing=config.spacing,
        density=config.density,
        results=results,
    )
    report_path = mesh_io.save_document(report, output_dir / "run_report.json")
    table = render_table(report)
    (output_dir / "report.txt").write_text(table + "\n", encoding="utf-8")
    say("", verbose)
    say(table, verbose)
    say(f"Run report written to {report_path}", verbose)
    if pdf is not None:
        pdf_path = write_pdf(report, pdf)
        say(f"PDF report written to {pdf_path}", verbose)
    return report


def cmd_orient(
    trace_path: PathLike,
    rest_path: Optional[PathLike] = None,
    theta_z: float = 0.0,
    filter_config: Optional[FilterConfig] = None,
    verbose: bool = True,
) -> tuple[Quaternion, np.ndarray]:
    """Estimate the contact normal from a recorded IMU trace."""
    trace = mesh_io.read_imu_trace(trace_path)
    calib = None
    if rest_path is not None:
        # rest traces are recorded at the level home pose
        calib = calibrate(mesh_io.read_imu_trace(rest_path), Quaternion.identity())
    q, normal = estimate_normal(trace, calib, theta_z, filter_config)
    say(f"orientation  w={q.w:.9f} x={q.x:.9f} y={q.y:.9f} z={q.z:.9f}", verbose)
    say(f"normal       {normal[0]:.9f} {normal[1]:.9f} {normal[2]:.9f}", verbose)
    return q, normal


# argument parsing


class ArgumentParser(argparse.ArgumentParser):
    """argparse that reports usage problems as ``UsageError`` instead of exiting."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-c", "--config", type=Path, help="Pipeline configuration (YAML or JSON).")
    parser.add_argument("--spacing", type=float, help="Grid spacing in mm.")
    parser.add_argument("--density", type=int, help="Tessellation samples per patch direction.")
    parser.add_argument("--cloud-density", type=int, help="Ground-truth samples per axis.")
    parser.add_argument("--normal-source", choices=["oracle", "imu"], help="Where contact normals come from.")
    parser.add_argument("--seed", type=int, help="Noise seed; required when any sigma is non-zero.")
    parser.add_argument("--sigma-pos", type=float, help="Contact position noise per coordinate, mm.")
    parser.add_argument("--sigma-normal", type=float, help="Contact normal tilt noise, radians.")
    parser.add_argument("--sigma-acc", type=float, help="Accelerometer noise (imu normals).")
    parser.add_argument("--sigma-gyr", type=float, help="Gyroscope noise in rad/s (imu normals).")
    parser.add_argument("--beta", type=float, help="Filter gain.")
    parser.add_argument("--threads", type=int, help="Worker threads for probing.")
    parser.add_argument("--mesh-format", choices=["stl", "stl-ascii", "ply"], help="Reconstruction mesh format.")
    parser.add_argument("-o", "--output-dir", type=Path, help="Directory for run artifacts.")


def effective_config(args: argparse.Namespace, surfaces: Optional[list[SurfaceDescriptor]] = None) -> PipelineConfig:
    if args.config is not None:
        config = load_config(args.config)
    else:
        config = PipelineConfig(surfaces=surfaces or [])
    overrides = {
        "spacing": args.spacing,
        "density": args.density,
        "cloud_density": args.cloud_density,
        "normal_source": args.normal_source,
        "seed": args.seed,
        "noise.sigma_pos": args.sigma_pos,
        "noise.sigma_normal": args.sigma_normal,
        "noise.sigma_acc": args.sigma_acc,
        "noise.sigma_gyr": args.sigma_gyr,
        "filter.beta": args.beta,
        "num_threads": args.threads,
        "mesh_format": args.mesh_format,
        "output_dir": args.output_dir,
    }
    if surfaces:
        overrides["surfaces"] = [s.model_dump() for s in surfaces]
    return apply_overrides(config, overrides)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="tactile-recon", description="Tactile surface reconstruction toolkit.")
    parser.add_argument("-q", "--quiet", action="store_true", help="No progress bars or stage lines.")
    commands = parser.add_subparsers(dest="command", parser_class=ArgumentParser)

    generate = commands.add_parser("generate", help="Write a ground-truth surface as STL plus descriptor JSON.")
    source = generate.add_mutually_exclusive_group()
    source.add_argument("--builtin", choices=sorted(BUILTIN_SURFACES), help="Builtin surface analog.")
    source.add_argument("--plane", nargs=3, type=float, metavar=("WIDTH", "DEPTH", "HEIGHT"), help="Flat plate.")
    source.add_argument("--descriptor", type=Path, help="Surface descriptor file.")
    generate.add_argument("--resolution", type=float, default=1.0, help="STL lattice step in mm.")
    generate.add_argument("-o", "--output-dir", type=Path, default=Path("surfaces"))

    probe = commands.add_parser("probe", help="Probe a surface and write the contacts CSV.")
    probe.add_argument("surface", help="Builtin name, descriptor file or STL.")
    _add_config_arguments(probe)
    probe.add_argument("--output", type=Path, default=Path("contacts.csv"))
    probe.add_argument("--trace-dir", type=Path, help="Dump per-contact IMU traces here (imu normals).")

    reconstruct = commands.add_parser("reconstruct", help="Fit patches to a contacts CSV and write a mesh.")
    reconstruct.add_argument("contacts", type=Path)
    reconstruct.add_argument("-d", "--density", type=int, default=20)
    reconstruct.add_argument("--mesh-format", choices=["stl", "stl-ascii", "ply"], default="stl")
    reconstruct.add_argument("--output", type=Path, default=Path("reconstruction.stl"))

    evaluate = commands.add_parser("evaluate", help="Compare a reconstruction with its ground truth.")
    evaluate.add_argument("mesh", type=Path)
    evaluate.add_argument("ground_truth", type=Path, help="Descriptor file, STL, or PLY cloud.")
    evaluate.add_argument("--cloud-density", type=int, default=150)
    evaluate.add_argument("--max-iters", type=int, default=50)
    evaluate.add_argument("--tol", type=float, default=1e-9)
    evaluate.add_argument("--output", type=Path, default=Path("metrics.json"))

    pipeline = commands.add_parser("pipeline", help="Run every stage for each configured surface.")
    pipeline.add_argument("--builtin", nargs="+", choices=sorted(BUILTIN_SURFACES), help="Surfaces to run.")
    _add_config_arguments(pipeline)
    pipeline.add_argument("--pdf", type=Path, help="Also render the report as PDF.")

    orient = commands.add_parser("orient", help="Estimate a contact normal from an IMU trace.")
    orient.add_argument("trace", type=Path)
    orient.add_argument("--rest", type=Path, help="Rest trace at the home pose for bias calibration.")
    orient.add_argument("--theta-z", type=float, default=0.0, help="Approach angle about z, radians.")
    orient.add_argument("--beta", type=float, default=0.1)

    return parser


def _generate_descriptor(args: argparse.Namespace) -> SurfaceDescriptor:
    if args.builtin:
        return SurfaceDescriptor(kind="builtin", name=args.builtin)
    if args.plane:
        width, depth, height = args.plane
        return SurfaceDescriptor(kind="plane", name="plane", width=width, depth=depth, params={"height": height})
    if args.descriptor:
        return mesh_io.load_document(args.descriptor, SurfaceDescriptor)
    if not sys.stdin.isatty():
        raise UsageError("generate needs --builtin, --plane or --descriptor")
    name = prompt_for_surface_selection(sorted(BUILTIN_SURFACES))
    if name is None:
        raise UsageError("no surface selected")
    return SurfaceDescriptor(kind="builtin", name=name)


def run(args: argparse.Namespace) -> None:
    verbose = not args.quiet

    if args.command == "generate":
        cmd_generate(_generate_descriptor(args), args.output_dir, args.resolution, verbose)
    elif args.command == "probe":
        descriptor, base_dir = resolve_surface(args.surface)
        config = effective_config(args, [descriptor])
        cmd_probe(config, descriptor, args.output, base_dir, args.trace_dir, verbose)
    elif args.command == "reconstruct":
        cmd_reconstruct(args.contacts, args.output, args.density, args.mesh_format, verbose)
    elif args.command == "evaluate":
        cmd_evaluate(args.mesh, args.ground_truth, args.output, args.cloud_density, args.max_iters, args.tol, verbose)
    elif args.command == "pipeline":
        surfaces = [SurfaceDescriptor(kind="builtin", name=name) for name in args.builtin or []]
        if args.config is None and not surfaces:
            surfaces = [SurfaceDescriptor(kind="builtin", name=name) for name in sorted(BUILTIN_SURFACES)]
        cmd_pipeline(effective_config(args, surfaces), args.pdf, verbose)
    elif args.command == "orient":
        cmd_orient(args.trace, args.rest, args.theta_z, FilterConfig(beta=args.beta), verbose)
    else:
        raise UsageError("missing command (generate, probe, reconstruct, evaluate, pipeline, orient)")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        run(args)
    except ReconstructionError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
