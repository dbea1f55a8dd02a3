import math
import unittest

import numpy as np
from scipy.spatial import ConvexHull

from tactile_recon.errors import DataFormatError, GeometryError
from tactile_recon.models import NoiseSpec, SurfaceDescriptor
from tactile_recon.nurbs_patchwork import (
    CLAMPED_KNOTS,
    NurbsPatch,
    assemble_patch,
    basis_function,
    basis_matrix,
    build_patch_grid,
    evaluate_patch,
    evaluate_patch_lattice,
    reconstruct_mesh,
    tessellate,
)
from tactile_recon.probe_simulation import ContactGrid, make_surface, probe_grid


def bernstein(u):
    return np.stack([(1 - u) ** 2, 2 * u * (1 - u), u**2], axis=-1)


def flat_grid(rows, cols, spacing=10.0, height=0.0):
    ys, xs = np.meshgrid(np.arange(rows) * spacing, np.arange(cols) * spacing, indexing="ij")
    positions = np.stack([xs, ys, np.full_like(xs, height)], axis=-1)
    normals = np.tile([0.0, 0.0, 1.0], (rows, cols, 1))
    return ContactGrid(rows, cols, spacing, positions, normals)


def ridge_grid(alpha_degrees=45.0, n=5, spacing=20.0):
    """Roof ridge along y at the middle column, sides sloping at ``alpha``."""
    t = math.tan(math.radians(alpha_degrees))
    apex = spacing * (n - 1) / 2
    ys, xs = np.meshgrid(np.arange(n) * spacing, np.arange(n) * spacing, indexing="ij")
    zs = t * (apex - np.abs(xs - apex))
    positions = np.stack([xs, ys, zs], axis=-1)
    side = np.sign(apex - xs)
    normals = np.stack([-t * side, np.zeros_like(xs), np.ones_like(xs)], axis=-1)
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    return ContactGrid(n, n, spacing, positions, normals)


def smooth_grid(seed):
    rng = np.random.default_rng(seed)
    descriptor = SurfaceDescriptor(
        kind="sinusoid",
        width=80,
        depth=60,
        params={
            "offset": 10.0,
            "amplitude": float(rng.uniform(2, 8)),
            "wavelength_x": float(rng.uniform(60, 200)),
            "wavelength_y": float(rng.uniform(60, 200)),
            "phase_x": float(rng.uniform(0, 2 * math.pi)),
            "phase_y": float(rng.uniform(0, 2 * math.pi)),
        },
    )
    noise = NoiseSpec(sigma_pos=0.2, sigma_normal=0.02, seed=seed)
    return probe_grid(make_surface(descriptor), 20.0, noise)


class TestBasis(unittest.TestCase):
    def test_matches_bernstein(self):
        us = np.concatenate([np.linspace(0.0, 1.0, 998), [0.5, 1.0]])
        expected = bernstein(us)
        np.testing.assert_allclose(basis_matrix(us), expected, atol=1e-12, rtol=0)
        scalar = np.array([[basis_function(i, 2, u, CLAMPED_KNOTS) for i in range(3)] for u in us])
        np.testing.assert_allclose(scalar, expected, atol=1e-12, rtol=0)

    def test_end_of_knot_vector(self):
        self.assertEqual(basis_function(2, 2, 1.0, CLAMPED_KNOTS), 1.0)
        self.assertEqual(basis_function(0, 2, 1.0, CLAMPED_KNOTS), 0.0)

    def test_index_out_of_range(self):
        with self.assertRaises(IndexError):
            basis_function(3, 2, 0.5, CLAMPED_KNOTS)


class TestPatch(unittest.TestCase):
    def test_corner_interpolation_and_partition_of_unity(self):
        rng = np.random.default_rng(8)
        us = rng.uniform(0, 1, size=7)
        self.assertTrue(np.all(np.abs(basis_matrix(us).sum(axis=1) - 1.0) <= 1e-12))
        for _ in range(1000):
            net = rng.normal(scale=20.0, size=(3, 3, 3))
            patch = NurbsPatch(net)
            corners = evaluate_patch_lattice(patch, [0.0, 1.0], [0.0, 1.0])
            np.testing.assert_allclose(corners[0, 0], net[0, 0], atol=1e-12, rtol=0)
            np.testing.assert_allclose(corners[1, 0], net[2, 0], atol=1e-12, rtol=0)
            np.testing.assert_allclose(corners[0, 1], net[0, 2], atol=1e-12, rtol=0)
            np.testing.assert_allclose(corners[1, 1], net[2, 2], atol=1e-12, rtol=0)

    def test_constant_net_gives_constant_surface(self):
        patch = NurbsPatch(np.tile([1.0, 2.0, 3.0], (3, 3, 1)))
        samples = evaluate_patch_lattice(patch, np.linspace(0, 1, 9), np.linspace(0, 1, 9))
        np.testing.assert_allclose(samples, np.broadcast_to([1.0, 2.0, 3.0], samples.shape), atol=1e-12)

    def test_surface_stays_inside_the_net_hull(self):
        rng = np.random.default_rng(13)
        nets = [rng.normal(scale=20.0, size=(3, 3, 3)) for _ in range(200)]
        for seed in range(3):
            nets += [patch.net for row in build_patch_grid(smooth_grid(seed)).patches for patch in row]
        ts = np.linspace(0.0, 1.0, 21)
        for net in nets:
            hull = ConvexHull(net.reshape(9, 3))
            samples = evaluate_patch_lattice(NurbsPatch(net), ts, ts).reshape(-1, 3)
            outside = samples @ hull.equations[:, :3].T + hull.equations[:, 3]
            self.assertLessEqual(float(outside.max()), 1e-9 * max(1.0, float(np.abs(net).max())))

    def test_scalar_evaluation_matches_lattice(self):
        net = np.random.default_rng(1).normal(size=(3, 3, 3))
        patch = NurbsPatch(net)
        lattice = evaluate_patch_lattice(patch, [0.3], [0.8])
        np.testing.assert_array_equal(evaluate_patch(patch, 0.3, 0.8), lattice[0, 0])

    def test_weights_pull_the_surface(self):
        net = np.zeros((3, 3, 3))
        net[1, 1, 2] = 1.0
        weights = np.ones((3, 3))
        plain = evaluate_patch(NurbsPatch(net, weights), 0.5, 0.5)[2]
        weights[1, 1] = 4.0
        heavy = evaluate_patch(NurbsPatch(net, weights), 0.5, 0.5)[2]
        self.assertGreater(heavy, plain)

    def test_invalid_patches(self):
        with self.assertRaises(DataFormatError):
            NurbsPatch(np.zeros((2, 3, 3)))
        with self.assertRaises(DataFormatError):
            NurbsPatch(np.zeros((3, 3, 3)), weights=-np.ones((3, 3)))


class TestAssemble(unittest.TestCase):
    def test_layout(self):
        sp = [[0, 0, 0], [0, 10, 0], [10, 0, 0], [10, 10, 0]]
        edges = [[5, 0, 1], [0, 5, 2], [10, 5, 3], [5, 10, 4]]
        patch = assemble_patch(sp, edges)
        np.testing.assert_array_equal(patch.net[0, 0], [0, 0, 0])
        np.testing.assert_array_equal(patch.net[0, 2], [0, 10, 0])
        np.testing.assert_array_equal(patch.net[2, 0], [10, 0, 0])
        np.testing.assert_array_equal(patch.net[2, 2], [10, 10, 0])
        np.testing.assert_array_equal(patch.net[1, 0], [5, 0, 1])
        np.testing.assert_array_equal(patch.net[0, 1], [0, 5, 2])
        np.testing.assert_array_equal(patch.net[2, 1], [10, 5, 3])
        np.testing.assert_array_equal(patch.net[1, 2], [5, 10, 4])
        np.testing.assert_array_equal(patch.net[1, 1], [5, 5, 2.5])

    def test_misplaced_edge_rejected(self):
        sp = [[0, 0, 0], [0, 10, 0], [10, 0, 0], [10, 10, 0]]
        edges = [[0, 5, 2], [5, 0, 1], [10, 5, 3], [5, 10, 4]]
        with self.assertRaises(DataFormatError):
            assemble_patch(sp, edges)


class TestPatchGrid(unittest.TestCase):
    def test_counts(self):
        patch_grid = build_patch_grid(flat_grid(4, 6))
        self.assertEqual((patch_grid.cell_rows, patch_grid.cell_cols, patch_grid.count), (3, 5, 15))
        self.assertEqual(len(patch_grid.row_edges), 4)
        self.assertEqual(len(patch_grid.row_edges[0]), 5)
        self.assertEqual(len(patch_grid.col_edges), 3)
        self.assertEqual(len(patch_grid.col_edges[0]), 6)

    def test_shared_boundaries_agree(self):
        params = np.linspace(0.0, 1.0, 100)
        for seed in range(5):
            patch_grid = build_patch_grid(smooth_grid(seed))
            for r in range(patch_grid.cell_rows):
                for c in range(patch_grid.cell_cols):
                    here = patch_grid.patches[r][c]
                    if c + 1 < patch_grid.cell_cols:
                        right = patch_grid.patches[r][c + 1]
                        a = evaluate_patch_lattice(here, [1.0], params)[0]
                        b = evaluate_patch_lattice(right, [0.0], params)[0]
                        self.assertLessEqual(float(np.abs(a - b).max()), 1e-9)
                    if r + 1 < patch_grid.cell_rows:
                        above = patch_grid.patches[r + 1][c]
                        a = evaluate_patch_lattice(here, params, [1.0])[:, 0]
                        b = evaluate_patch_lattice(above, params, [0.0])[:, 0]
                        self.assertLessEqual(float(np.abs(a - b).max()), 1e-9)

    def test_failing_edge_is_reported(self):
        grid = flat_grid(2, 3)
        positions = grid.positions.copy()
        positions[0, 1, :2] = positions[0, 0, :2]
        positions[0, 1, 2] = 3.0
        broken = ContactGrid(2, 3, 10.0, positions, grid.normals)
        with self.assertRaises(GeometryError) as ctx:
            build_patch_grid(broken)
        self.assertEqual(ctx.exception.edge, ((0, 0), (0, 1)))


class TestTessellation(unittest.TestCase):
    def test_flat_grid_is_planar(self):
        mesh = reconstruct_mesh(flat_grid(3, 3, height=7.5), 10)
        np.testing.assert_allclose(mesh.vertices[:, 2], 7.5, atol=1e-9, rtol=0)

    def test_two_by_two_at_density_two(self):
        mesh = reconstruct_mesh(flat_grid(2, 2), 2)
        self.assertEqual(len(mesh.vertices), 4)
        self.assertEqual(len(mesh.triangles), 2)

    def test_vertex_count_is_welded(self):
        d = 6
        patch_grid = build_patch_grid(flat_grid(3, 4))
        mesh = tessellate(patch_grid, d)
        self.assertEqual(len(mesh.vertices), ((4 - 1) * (d - 1) + 1) * ((3 - 1) * (d - 1) + 1))
        self.assertEqual(len(mesh.triangles), 2 * (4 - 1) * (d - 1) * (3 - 1) * (d - 1))

    def test_ridge_mesh_interpolates_contacts(self):
        grid = ridge_grid(45.0)
        d = 9
        mesh = reconstruct_mesh(grid, d)
        lattice = mesh.vertices.reshape(4 * (d - 1) + 1, 4 * (d - 1) + 1, 3)
        corners = lattice[:: d - 1, :: d - 1]
        np.testing.assert_array_equal(corners, grid.positions)

    def test_normals_face_up(self):
        mesh = reconstruct_mesh(smooth_grid(3), 8)
        self.assertTrue(np.all(mesh.face_normals()[:, 2] > 0))

    def test_density_below_two(self):
        with self.assertRaises(DataFormatError):
            reconstruct_mesh(flat_grid(2, 2), 1)


if __name__ == "__main__":
    unittest.main()
