import io
import math
import shutil
import tempfile
import unittest
from pathlib import Path
from unittest.mock import MagicMock, patch

import numpy as np

from tactile_recon import mesh_io
from tactile_recon.errors import DataFormatError, GeometryError, UsageError
from tactile_recon.models import (
    FilterConfig,
    MetricsReport,
    NoiseSpec,
    PipelineConfig,
    PointCloud,
    SurfaceDescriptor,
    TriangleMesh,
)
from tactile_recon.pipeline import (
    apply_overrides,
    cmd_evaluate,
    cmd_generate,
    cmd_orient,
    cmd_pipeline,
    cmd_probe,
    cmd_reconstruct,
    config_hash,
    main,
    prompt_for_surface_selection,
    reference_cloud,
    require_seed,
    resolve_surface,
    stage,
)
from tactile_recon.probe_simulation import ContactGrid, make_surface, synth_imu_trace
from tactile_recon.surfaces import BUILTIN_SURFACES, MeshSurface, lattice_triangles


PLATE = SurfaceDescriptor(kind="plane", name="plate", width=100.0, depth=100.0, params={"height": 5.0})


def flat_contacts(rows=3, cols=3, spacing=10.0, height=2.0):
    ys, xs = np.meshgrid(np.arange(rows) * spacing, np.arange(cols) * spacing, indexing="ij")
    positions = np.stack([xs, ys, np.full_like(xs, height)], axis=-1)
    normals = np.tile([0.0, 0.0, 1.0], (rows, cols, 1))
    return ContactGrid(rows, cols, spacing, positions, normals)


def bowl_mesh():
    """Lattice with float32-exact coordinates: integer xy, z = (x - 20)^2 / 32."""
    ys, xs = np.meshgrid(np.arange(0.0, 41.0, 4.0), np.arange(0.0, 41.0, 4.0), indexing="ij")
    zs = (xs - 20.0) ** 2 / 32.0
    vertices = np.stack([xs, ys, zs], axis=-1).reshape(-1, 3)
    return TriangleMesh(vertices, lattice_triangles(11, 11))


class PipelineTestCase(unittest.TestCase):
    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def run_main(self, *argv):
        stderr = io.StringIO()
        with patch("sys.stderr", stderr):
            code = main(["-q", *argv])
        return code, stderr.getvalue()


class TestConfiguration(unittest.TestCase):
    def test_overrides(self):
        config = PipelineConfig(surfaces=[PLATE])
        updated = apply_overrides(config, {"spacing": 10.0, "noise.sigma_pos": 0.5, "seed": 4, "density": None})
        self.assertEqual(updated.spacing, 10.0)
        self.assertEqual(updated.noise.sigma_pos, 0.5)
        self.assertEqual(updated.noise.seed, 4)
        self.assertEqual(updated.density, config.density)
        self.assertEqual(config.spacing, 20.0)

    def test_invalid_override(self):
        with self.assertRaises(UsageError):
            apply_overrides(PipelineConfig(surfaces=[PLATE]), {"spacing": -1.0})

    def test_noisy_runs_need_a_seed(self):
        require_seed(PipelineConfig(surfaces=[PLATE]))
        require_seed(PipelineConfig(surfaces=[PLATE], noise=NoiseSpec(sigma_pos=0.5), seed=0))
        with self.assertRaises(UsageError):
            require_seed(PipelineConfig(surfaces=[PLATE], noise=NoiseSpec(sigma_pos=0.5)))

    def test_config_hash(self):
        a = PipelineConfig(surfaces=[PLATE])
        b = PipelineConfig.model_validate(a.model_dump(mode="json"))
        self.assertEqual(config_hash(a), config_hash(b))
        self.assertEqual(len(config_hash(a)), 64)
        self.assertNotEqual(config_hash(a), config_hash(apply_overrides(a, {"spacing": 10.0})))

    def test_stage_prefixes_errors(self):
        with self.assertRaises(DataFormatError) as ctx:
            with stage("probe"):
                raise DataFormatError("bad grid")
        self.assertEqual(str(ctx.exception), "[probe] bad grid")
        with self.assertRaises(GeometryError):
            with stage("reconstruct"):
                raise GeometryError("coincident contacts")


class TestSurfaceResolution(PipelineTestCase):
    def test_builtin_name(self):
        descriptor, base_dir = resolve_surface("surface3")
        self.assertEqual((descriptor.kind, descriptor.name), ("builtin", "surface3"))
        self.assertIsNone(base_dir)

    def test_descriptor_file(self):
        path = mesh_io.save_document(PLATE, self.temp_dir / "plate.yaml")
        descriptor, base_dir = resolve_surface(str(path))
        self.assertEqual(descriptor, PLATE)
        self.assertEqual(base_dir, self.temp_dir)

    def test_stl_path(self):
        descriptor, _ = resolve_surface("scan.stl")
        self.assertEqual((descriptor.kind, descriptor.path), ("stl", "scan.stl"))

    def test_unknown_reference(self):
        with self.assertRaises(UsageError):
            resolve_surface("teapot")

    @patch("tactile_recon.pipeline.questionary.select")
    def test_prompt(self, mock_select):
        mock_select.return_value.ask.return_value = "surface4"
        self.assertEqual(prompt_for_surface_selection(["surface1", "surface4"]), "surface4")
        kwargs = mock_select.call_args.kwargs
        self.assertEqual(kwargs["default"], "surface1")
        self.assertEqual([c.value for c in kwargs["choices"]], ["surface1", "surface4"])
        self.assertIsNone(prompt_for_surface_selection([]))


class TestGenerate(PipelineTestCase):
    def test_builtin(self):
        code, _ = self.run_main("generate", "--builtin", "surface1", "-o", str(self.temp_dir))
        self.assertEqual(code, 0)
        mesh = mesh_io.read_stl(self.temp_dir / "surface1.stl")
        np.testing.assert_array_equal(mesh.vertices[:, :2].min(axis=0), [0.0, 0.0])
        np.testing.assert_array_equal(mesh.vertices[:, :2].max(axis=0), [80.0, 80.0])
        self.assertEqual(mesh.vertices[:, 2].max(), 30.0)
        descriptor = mesh_io.load_document(self.temp_dir / "surface1.json", SurfaceDescriptor)
        self.assertEqual(descriptor.kind, "dome")
        self.assertEqual(descriptor.params, BUILTIN_SURFACES["surface1"].params)

    def test_plane(self):
        code, _ = self.run_main("generate", "--plane", "100", "100", "5", "-o", str(self.temp_dir))
        self.assertEqual(code, 0)
        mesh = mesh_io.read_stl(self.temp_dir / "plane.stl")
        np.testing.assert_array_equal(mesh.vertices[:, 2], 5.0)

    def test_stl_descriptor_points_next_to_output(self):
        first = cmd_generate(SurfaceDescriptor(kind="builtin", name="surface5"), self.temp_dir / "a", 4.0, False)
        source = SurfaceDescriptor(kind="stl", path=str(first.stl_path))
        copied = cmd_generate(source, self.temp_dir / "b", verbose=False)
        self.assertEqual(copied.stl_path, self.temp_dir / "b" / "surface5.stl")
        self.assertEqual(copied.descriptor.path, "surface5.stl")
        original, copy = mesh_io.read_stl(first.stl_path), mesh_io.read_stl(copied.stl_path)
        np.testing.assert_array_equal(copy.corners(), original.corners())

    def test_prompt_when_interactive(self):
        stdin = MagicMock()
        stdin.isatty.return_value = True
        with patch("tactile_recon.pipeline.sys.stdin", stdin), patch(
            "tactile_recon.pipeline.prompt_for_surface_selection", return_value="surface2"
        ) as mock_prompt:
            code, _ = self.run_main("generate", "-o", str(self.temp_dir))
        self.assertEqual(code, 0)
        mock_prompt.assert_called_once()
        self.assertTrue((self.temp_dir / "surface2.stl").exists())

    def test_cancelled_prompt(self):
        stdin = MagicMock()
        stdin.isatty.return_value = True
        with patch("tactile_recon.pipeline.sys.stdin", stdin), patch(
            "tactile_recon.pipeline.prompt_for_surface_selection", return_value=None
        ):
            code, err = self.run_main("generate", "-o", str(self.temp_dir))
        self.assertEqual(code, 1)
        self.assertIn("no surface selected", err)

    def test_no_surface_without_terminal(self):
        stdin = MagicMock()
        stdin.isatty.return_value = False
        with patch("tactile_recon.pipeline.sys.stdin", stdin):
            code, err = self.run_main("generate", "-o", str(self.temp_dir))
        self.assertEqual(code, 1)
        self.assertTrue(err.startswith("Error:"))


class TestProbe(PipelineTestCase):
    def test_builtin_contacts(self):
        output = self.temp_dir / "contacts.csv"
        code, _ = self.run_main("probe", "surface1", "--output", str(output))
        self.assertEqual(code, 0)
        lines = output.read_text().splitlines()
        self.assertEqual(len(lines), 26)
        self.assertEqual(lines[0], "row,col,x,y,z,nx,ny,nz")

    def test_plane_normals(self):
        path = mesh_io.save_document(PLATE, self.temp_dir / "plate.json")
        output = self.temp_dir / "contacts.csv"
        self.assertEqual(self.run_main("probe", str(path), "--spacing", "25", "--output", str(output))[0], 0)
        grid = mesh_io.read_contacts(output)
        self.assertEqual((grid.rows, grid.cols), (5, 5))
        np.testing.assert_array_equal(grid.normals[..., 2], 1.0)
        np.testing.assert_array_equal(grid.positions[..., 2], 5.0)

    def test_reruns_are_byte_identical(self):
        a, b = self.temp_dir / "a.csv", self.temp_dir / "b.csv"
        for output in (a, b):
            args = ("probe", "surface2", "--sigma-pos", "0.5", "--sigma-normal", "0.03", "--seed", "11")
            self.assertEqual(self.run_main(*args, "--output", str(output))[0], 0)
        self.assertEqual(a.read_bytes(), b.read_bytes())

    def test_noise_without_seed(self):
        output = self.temp_dir / "c.csv"
        code, err = self.run_main("probe", "surface1", "--sigma-pos", "0.5", "--output", str(output))
        self.assertEqual(code, 1)
        self.assertIn("--seed", err)
        self.assertFalse(output.exists())

    def test_trace_dump(self):
        config = PipelineConfig(surfaces=[PLATE], spacing=50.0, normal_source="imu", filter=FilterConfig(duration=0.05))
        trace_dir = self.temp_dir / "traces"
        grid, _ = cmd_probe(config, PLATE, self.temp_dir / "c.csv", trace_dir=trace_dir, verbose=False)
        self.assertEqual(len(list(trace_dir.glob("trace_r*_c*.csv"))), grid.rows * grid.cols)


class TestReconstruct(PipelineTestCase):
    def test_flat_grid(self):
        contacts = mesh_io.write_contacts(flat_contacts(), self.temp_dir / "contacts.csv")
        mesh, patch_grid, path = cmd_reconstruct(contacts, self.temp_dir / "mesh.stl", d=2, verbose=False)
        self.assertEqual(patch_grid.count, 4)
        self.assertEqual(len(mesh.vertices), 9)
        self.assertEqual(len(mesh.triangles), 8)
        np.testing.assert_allclose(mesh_io.read_stl(path).vertices[:, 2], 2.0, atol=1e-6)

    def test_ply_output(self):
        contacts = mesh_io.write_contacts(flat_contacts(), self.temp_dir / "contacts.csv")
        code, _ = self.run_main(
            "reconstruct", str(contacts), "-d", "4", "--mesh-format", "ply", "--output", str(self.temp_dir / "m.ply")
        )
        self.assertEqual(code, 0)
        self.assertIsInstance(mesh_io.read_ply(self.temp_dir / "m.ply"), TriangleMesh)

    def test_missing_contacts(self):
        code, err = self.run_main("reconstruct", str(self.temp_dir / "missing.csv"))
        self.assertEqual(code, 2)
        self.assertTrue(err.startswith("Error:"))


class TestEvaluate(PipelineTestCase):
    def test_against_its_own_vertices(self):
        mesh = bowl_mesh()
        mesh_path = mesh_io.write_stl(mesh, self.temp_dir / "bowl.stl")
        cloud_path = mesh_io.write_ply(PointCloud(mesh.vertices), self.temp_dir / "cloud.ply")
        metrics = cmd_evaluate(mesh_path, cloud_path, self.temp_dir / "metrics.json", verbose=False)
        self.assertLessEqual(metrics.ucm_mean, 1e-9)
        self.assertLessEqual(metrics.cc_mean, 1e-9)
        self.assertEqual(metrics.icp_iters, 1)
        saved = mesh_io.load_document(self.temp_dir / "metrics.json", MetricsReport)
        self.assertEqual(saved, metrics)

    def test_translated_cloud(self):
        mesh = bowl_mesh()
        mesh_path = mesh_io.write_stl(mesh, self.temp_dir / "bowl.stl")
        cloud_path = mesh_io.write_ply(PointCloud(mesh.vertices + [0.0, 0.0, 3.0]), self.temp_dir / "cloud.ply")
        metrics = cmd_evaluate(mesh_path, cloud_path, verbose=False)
        self.assertLessEqual(metrics.ucm_mean, 1e-6)
        self.assertLessEqual(metrics.cc_mean, 1e-6)
        self.assertGreater(metrics.icp_iters, 1)

    def test_reference_cloud_covers_the_extent(self):
        surface = make_surface(PLATE)
        recon = TriangleMesh(
            np.array([[10.0, 10.0, 5.0], [50.0, 10.0, 5.0], [10.0, 50.0, 5.0], [150.0, 150.0, 5.0]]),
            np.array([[0, 1, 2], [1, 3, 2]]),
        )
        cloud = reference_cloud(surface, recon, 5)
        self.assertEqual(len(cloud), 25 + 3)
        np.testing.assert_array_equal(cloud.points[:, :2].min(axis=0), [0.0, 0.0])
        np.testing.assert_array_equal(cloud.points[:, :2].max(axis=0), [100.0, 100.0])

    def test_reference_cloud_keeps_mesh_vertices(self):
        generated = cmd_generate(SurfaceDescriptor(kind="builtin", name="surface1"), self.temp_dir, 2.0, False)
        truth = mesh_io.read_stl(generated.stl_path)
        moved = TriangleMesh(truth.vertices + [3.0, 0.0, 0.0], truth.triangles)
        cloud = reference_cloud(MeshSurface("surface1", truth), moved, 20)
        # 41 x 41 mesh vertices; the shifted columns x + 3 <= 80 are 39 of 41
        self.assertEqual(len(cloud), 20 * 20 + 41 * 41 + 39 * 41)
        np.testing.assert_array_equal(cloud.points[:, :2].min(axis=0), [0.0, 0.0])
        np.testing.assert_array_equal(cloud.points[:, :2].max(axis=0), [80.0, 80.0])

    def test_sideways_shift_against_stl(self):
        generated = cmd_generate(SurfaceDescriptor(kind="builtin", name="surface1"), self.temp_dir, 2.0, False)
        truth = mesh_io.read_stl(generated.stl_path)
        moved = TriangleMesh(truth.vertices + [3.0, 0.0, 0.0], truth.triangles)
        moved_path = mesh_io.write_stl(moved, self.temp_dir / "moved.stl")
        metrics = cmd_evaluate(moved_path, generated.stl_path, max_iters=200, verbose=False)
        self.assertLessEqual(metrics.cc_mean, 0.01)
        self.assertLessEqual(metrics.ucm_mean, 0.01)
        self.assertLessEqual(metrics.scm_mean_abs, 0.01)

    def test_no_overlap(self):
        recon = TriangleMesh(np.array([[200.0, 200.0, 0.0], [210.0, 200.0, 0.0], [200.0, 210.0, 0.0]]), [[0, 1, 2]])
        with self.assertRaises(DataFormatError):
            reference_cloud(make_surface(PLATE), recon, 5)


class TestPipeline(PipelineTestCase):
    def config(self, surfaces, **kwargs):
        kwargs.setdefault("density", 8)
        kwargs.setdefault("cloud_density", 40)
        return PipelineConfig(surfaces=surfaces, output_dir=self.temp_dir / kwargs.pop("name", "run"), **kwargs)

    def test_plane_is_exact(self):
        report = cmd_pipeline(self.config([PLATE], spacing=25.0), verbose=False)
        metrics = report.results[0].metrics
        self.assertLessEqual(metrics.ucm_mean, 1e-9)
        self.assertLessEqual(metrics.cc_mean, 1e-9)
        self.assertEqual((report.results[0].rows, report.results[0].cols, report.results[0].patches), (5, 5, 16))

        surface_dir = self.temp_dir / "run" / "plate"
        for name in ("plate.stl", "plate.json", "contacts.csv", "reconstruction.stl", "metrics.json"):
            self.assertTrue((surface_dir / name).exists(), name)
        self.assertTrue((self.temp_dir / "run" / "run_report.json").exists())
        self.assertIn("plate", (self.temp_dir / "run" / "report.txt").read_text())

    def test_imu_normals_match_oracle(self):
        surfaces = [SurfaceDescriptor(kind="builtin", name="surface2")]
        oracle = cmd_pipeline(self.config(surfaces, name="oracle"), verbose=False)
        imu = cmd_pipeline(
            self.config(surfaces, name="imu", normal_source="imu", filter=FilterConfig(duration=0.2)), verbose=False
        )
        a, b = oracle.results[0].metrics, imu.results[0].metrics
        self.assertAlmostEqual(a.ucm_mean, b.ucm_mean, delta=1e-6)
        self.assertAlmostEqual(a.scm_mean_abs, b.scm_mean_abs, delta=1e-6)
        self.assertAlmostEqual(a.cc_mean, b.cc_mean, delta=1e-6)

    def test_runs_are_deterministic(self):
        surfaces = [SurfaceDescriptor(kind="builtin", name="surface5")]
        noise = NoiseSpec(sigma_pos=0.3, sigma_normal=0.02)
        for name in ("a", "b"):
            cmd_pipeline(self.config(surfaces, name=name, spacing=40.0, noise=noise, seed=5), verbose=False)
        for artifact in ("contacts.csv", "reconstruction.stl", "metrics.json"):
            a = (self.temp_dir / "a" / "surface5" / artifact).read_bytes()
            b = (self.temp_dir / "b" / "surface5" / artifact).read_bytes()
            self.assertEqual(a, b, artifact)

    def test_stl_ground_truth_and_pdf(self):
        surfaces = [SurfaceDescriptor(kind="builtin", name="surface3")]
        config = self.config(surfaces, ground_truth="stl", stl_resolution=2.0)
        report = cmd_pipeline(config, pdf=self.temp_dir / "report.pdf", verbose=False)
        self.assertLess(report.results[0].metrics.ucm_mean, 1.0)
        self.assertTrue((self.temp_dir / "report.pdf").exists())

    def test_config_file_from_the_command_line(self):
        config_path = self.temp_dir / "config.yaml"
        mesh_io.save_document(PipelineConfig(surfaces=[PLATE], spacing=50.0, density=4, cloud_density=20), config_path)
        code, _ = self.run_main("pipeline", "--config", str(config_path), "-o", str(self.temp_dir / "cli"))
        self.assertEqual(code, 0)
        self.assertTrue((self.temp_dir / "cli" / "plate" / "metrics.json").exists())


class TestBuiltinAcceptance(unittest.TestCase):
    """Noiseless oracle-normal run over the five builtin surfaces at 20 mm and d = 20."""

    @classmethod
    def setUpClass(cls):
        cls.temp_dir = Path(tempfile.mkdtemp())
        config = PipelineConfig(
            surfaces=[SurfaceDescriptor(kind="builtin", name=name) for name in sorted(BUILTIN_SURFACES)],
            output_dir=cls.temp_dir,
        )
        cls.report = cmd_pipeline(config, verbose=False)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.temp_dir)

    def test_five_rows(self):
        self.assertEqual([r.surface for r in self.report.results], sorted(BUILTIN_SURFACES))

    def test_millimeter_regime(self):
        ucm = [r.metrics.ucm_mean for r in self.report.results]
        for result in self.report.results:
            self.assertLessEqual(result.metrics.ucm_mean, 1.0, result.surface)
        self.assertLessEqual(sum(ucm) / len(ucm), 1.0)

    def test_no_systematic_offset(self):
        for result in self.report.results:
            m = result.metrics
            self.assertLessEqual(m.scm_mean_abs, 0.1 * m.ucm_mean, result.surface)


class TestNoiseRobustness(PipelineTestCase):
    """Ten seeds of position and normal noise at the acceptance grid and cloud settings."""

    def test_noisy_contacts(self):
        ucm = []
        for seed in range(1, 11):
            config = PipelineConfig(
                surfaces=[SurfaceDescriptor(kind="builtin", name=name) for name in sorted(BUILTIN_SURFACES)],
                noise=NoiseSpec(sigma_pos=0.5, sigma_normal=math.radians(2.0)),
                seed=seed,
                output_dir=self.temp_dir / f"seed{seed}",
            )
            ucm += [r.metrics.ucm_mean for r in cmd_pipeline(config, verbose=False).results]
        self.assertLessEqual(sum(ucm) / len(ucm), 1.5)
        self.assertLessEqual(max(ucm), 1.5)


class TestOrient(PipelineTestCase):
    def test_recorded_trace(self):
        normal = np.array([0.3, -0.2, 1.0])
        normal /= np.linalg.norm(normal)
        trace = synth_imu_trace(normal, 0.7, NoiseSpec(), 0.5, 100.0)
        rest = synth_imu_trace([0.0, 0.0, 1.0], 0.0, NoiseSpec(), 0.5, 100.0)
        trace_path = mesh_io.write_imu_trace(trace, self.temp_dir / "trace.csv")
        rest_path = mesh_io.write_imu_trace(rest, self.temp_dir / "rest.csv")
        _, estimated = cmd_orient(trace_path, rest_path, theta_z=0.7, verbose=False)
        np.testing.assert_allclose(estimated, normal, atol=1e-6)

    def test_from_the_command_line(self):
        trace = synth_imu_trace([0.0, 0.0, 1.0], 0.0, NoiseSpec(), 0.1, 100.0)
        trace_path = mesh_io.write_imu_trace(trace, self.temp_dir / "trace.csv")
        self.assertEqual(self.run_main("orient", str(trace_path))[0], 0)


class TestExitCodes(PipelineTestCase):
    def test_missing_command(self):
        code, err = self.run_main()
        self.assertEqual(code, 1)
        self.assertIn("missing command", err)

    def test_unknown_flag(self):
        self.assertEqual(self.run_main("probe", "surface1", "--wat")[0], 1)

    def test_unknown_builtin(self):
        self.assertEqual(self.run_main("generate", "--builtin", "surface9")[0], 1)


if __name__ == "__main__":
    unittest.main()
