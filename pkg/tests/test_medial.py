"""
Tests for medial surface extraction and Poisson-disc homogenisation
"""

import numpy as np
import pytest
from scipy.spatial import cKDTree

from config.params import MedialParams
from modules import phantoms
from modules.errors import GeometryError
from modules.medial import (curvature_adaptive_densify, enforce_single_layer, extract_medial_surface, local_spacing,
                            medial_summary, mls_project, poisson_disc_homogenize, voxels_to_points)
from modules.structures import PointCloud, VoxelGrid


def random_cloud(rng, n: int = 2000, extent: float = 10.0) -> PointCloud:
    return PointCloud(rng.uniform(0, extent, size=(n, 3)))


class TestPoissonDisc:
    def test_subset_with_separation(self, rng):
        cloud = random_cloud(rng)
        result = poisson_disc_homogenize(cloud, 1.0, rng_seed=3)
        original = {tuple(p) for p in cloud.points}
        assert all(tuple(p) in original for p in result.points)
        dist, _ = cKDTree(result.points).query(result.points, k=2)
        assert dist[:, 1].min() >= 1.0

    def test_every_dropped_point_is_covered(self, rng):
        cloud = random_cloud(rng, 800)
        result = poisson_disc_homogenize(cloud, 1.5, rng_seed=0)
        dist, _ = cKDTree(result.points).query(cloud.points)
        assert dist.max() < 1.5

    def test_separated_input_is_returned_whole(self):
        cloud = phantoms.plane_cloud(n_side=12, spacing=1.0)
        result = poisson_disc_homogenize(cloud, 0.9)
        assert len(result) == len(cloud)
        assert {tuple(p) for p in result.points} == {tuple(p) for p in cloud.points}

    def test_seeded_and_order_independent(self, rng):
        cloud = random_cloud(rng, 1000)
        first = poisson_disc_homogenize(cloud, 1.2, rng_seed=7)
        again = poisson_disc_homogenize(cloud, 1.2, rng_seed=7)
        np.testing.assert_array_equal(first.points, again.points)
        shuffled = cloud.subset(rng.permutation(len(cloud)))
        permuted = poisson_disc_homogenize(shuffled, 1.2, rng_seed=7)
        np.testing.assert_array_equal(first.points, permuted.points)

    def test_variable_radius_uses_the_smaller_radius(self):
        cloud = PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0]]))
        assert len(poisson_disc_homogenize(cloud, np.array([2.0, 0.5]))) == 2
        assert len(poisson_disc_homogenize(cloud, np.array([2.0, 1.5]))) == 1

    def test_small_components_dropped(self, rng):
        lattice = phantoms.plane_cloud(n_side=10, spacing=1.0)
        stray = PointCloud(np.array([[50.0, 50.0, 50.0]]))
        cloud = PointCloud(np.vstack([lattice.points, stray.points]))
        result = poisson_disc_homogenize(cloud, 0.9, min_component_size=5)
        assert len(result) == len(lattice)

    def test_non_positive_radius_rejected(self, rng):
        with pytest.raises(GeometryError):
            poisson_disc_homogenize(random_cloud(rng, 10), 0.0)


class TestProjection:
    def test_mls_flattens_noisy_plane(self, rng):
        plane = phantoms.plane_cloud(n_side=20, spacing=1.0)
        noisy = plane.with_points(plane.points + np.column_stack([np.zeros((400, 2)), rng.normal(0, 0.1, 400)]))
        projected = mls_project(noisy, MedialParams(k_neighbors=16, mls_iterations=2))
        assert projected.points[:, 2].std() < 0.6 * noisy.points[:, 2].std()
        assert np.all(np.abs(projected.normals[:, 2]) > 0.95)
        assert 'fit_flagged' in projected.attributes

    def test_mls_needs_enough_points(self):
        with pytest.raises(GeometryError, match="at least"):
            mls_project(PointCloud(np.zeros((5, 3))), MedialParams(k_neighbors=8))

    def test_single_layer_drops_off_surface_point(self):
        plane = phantoms.plane_cloud(n_side=21, spacing=1.0)
        cloud = PointCloud(np.vstack([plane.points, [[0.3, 0.2, 5.0]]]))
        result = enforce_single_layer(cloud, MedialParams(k_neighbors=12))
        assert len(result) == len(plane)
        assert result.points[:, 2].max() == pytest.approx(0.0)

    def test_plane_spacing_is_the_upper_bound(self):
        cloud = phantoms.plane_cloud(n_side=15, spacing=1.0)
        params = MedialParams(k_neighbors=12)
        np.testing.assert_allclose(local_spacing(cloud, params), params.spacing_max_nm)

    def test_densify_keeps_only_supported_candidates(self):
        cloud = phantoms.plane_cloud(n_side=12, spacing=1.0)
        data = np.zeros((16, 16, 16), dtype=np.int32)
        data[4:12, 4:12, 6:10] = 1
        mask = VoxelGrid(data, np.ones(3), np.full(3, -7.5))
        params = MedialParams(k_neighbors=12)
        dense = curvature_adaptive_densify(cloud, mask, params)
        assert len(dense) > 0
        assert np.all(mask.labels_at(dense.points) > 0)
        assert np.abs(dense.points[:, :2]).max() <= 4.0 + 1e-9
        np.testing.assert_allclose(dense.attributes['spacing_nm'], params.spacing_max_nm)

    def test_densify_is_finer_on_tighter_curvature(self):
        params = MedialParams(k_neighbors=20)
        spacings = []
        for radius in (10.0, 40.0):
            size = int(2 * radius + 11)
            mask = VoxelGrid(np.ones((size, size, size), dtype=np.int32), np.ones(3),
                             np.full(3, -(size - 1) / 2.0))
            dense = curvature_adaptive_densify(phantoms.sphere_cloud(n=2000, radius=radius), mask, params)
            spacings.append(np.median(dense.attributes['spacing_nm']))
        assert spacings[0] == pytest.approx(1.0, rel=0.2)
        assert spacings[0] < spacings[1]

    def test_voxel_points_carry_labels(self):
        data = np.zeros((4, 4, 4), dtype=np.int32)
        data[1, 1, 1] = 3
        data[2, 3, 0] = 5
        cloud = voxels_to_points(VoxelGrid(data, np.full(3, 2.0)))
        np.testing.assert_array_equal(cloud.labels, [3, 5])
        np.testing.assert_allclose(cloud.points[0], [2.0, 2.0, 2.0])


def test_sphere_shell_medial_surface():
    radius = 14.0
    mask = phantoms.sphere_shell_mask(radius_nm=radius, thickness_nm=4.0, size=40)
    params = MedialParams(fit_radius_nm=5.0)
    cloud = extract_medial_surface(mask, params)
    r = np.linalg.norm(cloud.points, axis=1)
    assert abs(r.mean() - radius) < 0.5
    assert np.mean(np.abs(r - radius) <= 1.0) > 0.9
    assert mask.labels_at(cloud.points).min() > 0

    summary = medial_summary(cloud)
    assert summary['points'] == len(cloud)
    assert params.spacing_min_nm * 0.9 <= summary['nn_spacing_min_nm']
    assert summary['nn_spacing_mean_nm'] <= 2.0 * params.spacing_max_nm
