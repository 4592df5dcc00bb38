"""
Tests for ball pivoting, the SAT gap filter, the Poisson proxy, smoothing and cleanup
"""

import numpy as np
import pytest

from config.params import MeshParams
from modules import phantoms
from modules.errors import GeometryError, GridMismatchError, MeshingError
from modules.meshing import (auto_radii, ball_pivot, damped_laplacian_smooth, gap_filter, mesh_cleanup,
                             poisson_reconstruct, triangle_box_overlap)
from modules.proximity import closest_points
from modules.structures import PointCloud, TriangleMesh, VoxelGrid


def max_faces_per_edge(mesh: TriangleMesh) -> int:
    _, counts = mesh.unique_edges()
    return int(counts.max())


class TestBallPivot:
    def test_icosphere_vertices(self):
        sphere = phantoms.icosphere(2, 10.0)
        cloud = PointCloud(sphere.vertices, sphere.vertex_normals)
        mesh = ball_pivot(cloud, MeshParams())
        assert mesh.n_faces >= 0.9 * sphere.n_faces
        assert max_faces_per_edge(mesh) <= 2
        centres = mesh.vertices[mesh.faces].mean(axis=1)
        assert np.all(np.einsum('ij,ij->i', mesh.face_normals(), centres) > 0)
        source = mesh.channels['source_index'].astype(int)
        np.testing.assert_array_equal(cloud.points[source], mesh.vertices)

    def test_square_lattice(self):
        cloud = phantoms.plane_cloud(n_side=10, spacing=1.0)
        mesh = ball_pivot(cloud, MeshParams(radii_nm=[1.0]))
        assert mesh.n_vertices == len(cloud)
        assert mesh.n_faces >= 150
        assert np.all(mesh.face_normals()[:, 2] > 0.999)

    def test_plane_patch_is_a_disc(self):
        cloud = phantoms.plane_cloud(n_side=8, spacing=1.0)
        mesh = ball_pivot(cloud, MeshParams(radii_nm=[1.0]))
        assert mesh.n_vertices == 64
        assert mesh.n_faces == 2 * 7 * 7
        assert mesh.euler_characteristic() == 1
        assert max_faces_per_edge(mesh) <= 2

    def test_closed_sphere(self):
        sphere = phantoms.icosphere(2, 10.0)
        mesh = ball_pivot(PointCloud(sphere.vertices, sphere.vertex_normals), MeshParams())
        assert mesh.n_vertices == sphere.n_vertices
        assert not mesh.boundary_vertices().any()
        assert mesh.euler_characteristic() == 2

    def test_three_points_give_one_face(self):
        points = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        normals = np.tile([0.0, 0.0, 1.0], (3, 1))
        mesh = ball_pivot(PointCloud(points, normals), MeshParams(radii_nm=[1.0]))
        assert mesh.n_faces == 1
        assert mesh.face_normals()[0, 2] == pytest.approx(1.0)

    def test_radius_too_small_fails(self):
        cloud = phantoms.plane_cloud(n_side=5, spacing=1.0)
        with pytest.raises(MeshingError, match="radius scan failed"):
            ball_pivot(cloud, MeshParams(radii_nm=[0.4]))

    def test_needs_normals(self):
        with pytest.raises(GeometryError, match="normals"):
            ball_pivot(PointCloud(np.eye(3)), MeshParams(radii_nm=[1.0]))

    def test_auto_radii_scale_with_spacing(self):
        cloud = phantoms.plane_cloud(n_side=6, spacing=2.0)
        assert auto_radii(cloud, [1.0, 1.5]) == pytest.approx([2.0, 3.0])


class TestSeparatingAxis:
    def test_agrees_with_dense_sampling(self, rng):
        half = np.full(3, 0.5)
        steps = 60
        s, t = np.meshgrid(np.linspace(0, 1, steps + 1), np.linspace(0, 1, steps + 1))
        inside_triangle = s + t <= 1
        s, t = s[inside_triangle], t[inside_triangle]
        for _ in range(200):
            v0, v1, v2 = rng.uniform(-1.5, 1.5, size=(3, 3))
            overlap = triangle_box_overlap(v0[None], v1[None], v2[None], half)[0]
            samples = v0 + s[:, None] * (v1 - v0) + t[:, None] * (v2 - v0)
            excess = np.max(np.abs(samples) - half, axis=1)
            longest = max(np.linalg.norm(v1 - v0), np.linalg.norm(v2 - v0))
            if np.any(excess <= 0):
                assert overlap
            if overlap:
                assert excess.min() <= 2.0 * longest / steps

    def test_touching_counts_as_overlap(self):
        half = np.full(3, 0.5)
        tri = np.array([[0.5, -1.0, -1.0], [0.5, 1.0, -1.0], [0.5, 0.0, 1.0]])
        assert triangle_box_overlap(tri[None, 0], tri[None, 1], tri[None, 2], half)[0]
        shifted = tri + [1e-6, 0.0, 0.0]
        assert not triangle_box_overlap(shifted[None, 0], shifted[None, 1], shifted[None, 2], half)[0]


class TestGapFilter:
    @pytest.fixture
    def two_sheets(self):
        data = np.zeros((16, 16, 12), dtype=np.int32)
        data[:, :, 2:5] = 1
        data[:, :, 8:11] = 1
        support = VoxelGrid(data, np.ones(3), np.array([-7.5, -7.5, -3.0]))
        lower = phantoms.grid_mesh(n_side=10)
        upper = phantoms.grid_mesh(n_side=10, height=lambda x, y: np.full_like(x, 6.0))
        n = lower.n_vertices
        vertices = np.vstack([lower.vertices, upper.vertices])
        # bridging strip along the last row of both sheets
        row = np.arange(90, 100)
        bridge = np.concatenate([np.column_stack([row[:-1], row[1:], row[1:] + n]),
                                 np.column_stack([row[:-1], row[1:] + n, row[:-1] + n])])
        faces = np.vstack([lower.faces, upper.faces + n, bridge])
        return TriangleMesh(vertices, faces), support, len(lower.faces) + len(upper.faces)

    def test_bridging_faces_removed(self, two_sheets):
        mesh, support, sheet_faces = two_sheets
        filtered = gap_filter(mesh, support, MeshParams(gap_dist_nm=2.0))
        assert filtered.n_faces == sheet_faces
        heights = filtered.vertices[filtered.faces][..., 2]
        assert np.all(np.ptp(heights, axis=1) == 0)

    def test_labelled_support_removes_mixed_faces(self, two_sheets):
        mesh, support, sheet_faces = two_sheets
        labels = support.data.copy()
        labels[:, :, 8:11] = 2
        filtered = gap_filter(mesh, support.with_data(labels), MeshParams(gap_dist_nm=50.0))
        assert filtered.n_faces == sheet_faces

    def test_frame_mismatch(self, two_sheets):
        mesh, support, _ = two_sheets
        moved = TriangleMesh(mesh.vertices + 100.0, mesh.faces)
        with pytest.raises(GridMismatchError, match="frame mismatch"):
            gap_filter(moved, support, MeshParams())


class TestCleanupAndSmoothing:
    def test_cleanup_is_idempotent(self):
        grid = phantoms.grid_mesh(n_side=6)
        vertices = np.vstack([grid.vertices, grid.vertices[:1], [[50.0, 50.0, 50.0]]])
        extra = np.array([[0, 1, 1], [0, 1, 2], [grid.n_vertices, 6, 7], [2, 1, 0]])
        faces = np.vstack([grid.faces, extra])
        once = mesh_cleanup(TriangleMesh(vertices, faces))
        twice = mesh_cleanup(once)
        np.testing.assert_array_equal(once.faces, twice.faces)
        np.testing.assert_array_equal(once.vertices, twice.vertices)
        assert once.n_vertices == grid.n_vertices
        assert max_faces_per_edge(once) <= 2

    def test_zero_iterations_is_identity(self):
        mesh = phantoms.icosphere(2, 5.0)
        out = damped_laplacian_smooth(mesh, MeshParams(smooth_iterations=0))
        np.testing.assert_array_equal(out.vertices, mesh.vertices)
        np.testing.assert_array_equal(out.faces, mesh.faces)

    def test_smoothing_flattens_noise_and_pins_boundary(self, rng):
        grid = phantoms.grid_mesh(n_side=15)
        noisy = TriangleMesh(grid.vertices + np.column_stack([np.zeros((225, 2)), rng.normal(0, 0.2, 225)]),
                             grid.faces)
        out = damped_laplacian_smooth(noisy, MeshParams(smooth_lambda=0.5, smooth_iterations=10))
        boundary = noisy.boundary_vertices()
        np.testing.assert_array_equal(out.vertices[boundary], noisy.vertices[boundary])
        assert out.vertices[~boundary, 2].std() < 0.5 * noisy.vertices[~boundary, 2].std()


def test_poisson_proxy_of_sphere():
    cloud = phantoms.sphere_cloud(n=2000, radius=10.0)
    mesh = poisson_reconstruct(cloud, MeshParams(poisson_depth=5, density_trim_quantile=0.0))
    radius = np.linalg.norm(mesh.vertices, axis=1)
    assert abs(radius.mean() - 10.0) < 1.0
    assert 'density' in mesh.channels
    centres = mesh.vertices[mesh.faces].mean(axis=1)
    assert np.mean(np.einsum('ij,ij->i', mesh.face_normals(), centres) > 0) > 0.95


def test_poisson_needs_normals():
    with pytest.raises(GeometryError, match="oriented normals"):
        poisson_reconstruct(PointCloud(np.random.default_rng(0).normal(size=(20, 3))), MeshParams())


def test_poisson_proxy_extends_open_hemisphere():
    radius = 10.0
    cloud = phantoms.hemisphere_cloud(n=1500, radius=radius)
    mesh = poisson_reconstruct(cloud, MeshParams(poisson_depth=5, density_trim_quantile=0.0))
    assert closest_points(mesh, cloud.points).distance.max() < 2.0
    assert mesh.face_areas().sum() > 2.0 * np.pi * radius ** 2
