"""
Tests for stability-based radius selection and signed Monge curvature
"""

import numpy as np
import pytest

from config.params import CurvatureParams
from modules import phantoms
from modules.errors import ConfigError, GeometryError
from modules.metrics import curvature_monge, face_curvature, select_stable_radius, surface_area


class TestStableRadius:
    def test_first_agreeing_radius_is_chosen(self):
        params = CurvatureParams(radii_nm=[5.0, 10.0, 15.0])
        assert select_stable_radius([0.051, 0.050, 0.050], params) == (10.0, 1)

    def test_divergent_series_falls_back_to_largest(self):
        params = CurvatureParams(radii_nm=[5.0, 10.0, 15.0])
        assert select_stable_radius([0.1, 0.3, 0.9], params) == (15.0, 2)

    def test_largest_finite_radius_when_tail_is_nan(self):
        params = CurvatureParams(radii_nm=[5.0, 10.0, 15.0])
        assert select_stable_radius([0.1, 0.3, np.nan], params) == (10.0, 1)

    def test_no_finite_estimate(self):
        radius, index = select_stable_radius([np.nan, np.nan], CurvatureParams(radii_nm=[1.0, 2.0]))
        assert np.isnan(radius) and index == -1

    def test_absolute_tolerance_near_zero(self):
        params = CurvatureParams(radii_nm=[1.0, 2.0], delta_abs=1e-3)
        assert select_stable_radius([1e-5, -2e-4], params) == (2.0, 1)

    def test_length_mismatch(self):
        with pytest.raises(GeometryError):
            select_stable_radius([0.1], CurvatureParams(radii_nm=[1.0, 2.0]))


class TestCurvature:
    @pytest.fixture(scope='class')
    def sphere(self):
        return phantoms.icosphere(3, 20.0)

    @pytest.fixture(scope='class')
    def params(self):
        return CurvatureParams(radii_nm=[4.0, 6.0, 8.0])

    def test_sphere_mean_and_gaussian_curvature(self, sphere, params):
        report = curvature_monge(sphere, params)
        assert np.isfinite(report.H).all()
        assert np.median(report.H) == pytest.approx(1.0 / 20.0, rel=0.05)
        assert np.median(report.K) == pytest.approx(1.0 / 400.0, rel=0.1)
        assert not report.boundary_excluded.any()
        assert set(np.unique(report.r_used)) <= {4.0, 6.0, 8.0}

    def test_flipped_normals_negate_mean_curvature(self, sphere, params):
        flipped = sphere.with_normals(-sphere.vertex_normals)
        report = curvature_monge(sphere, params)
        mirrored = curvature_monge(flipped, params)
        np.testing.assert_allclose(mirrored.H, -report.H, atol=1e-9)
        np.testing.assert_allclose(mirrored.K, report.K, atol=1e-12)

    def test_plane_is_flat_and_boundary_excluded(self):
        mesh = phantoms.grid_mesh(n_side=21)
        report = curvature_monge(mesh, CurvatureParams(radii_nm=[2.0, 3.0, 4.0]))
        boundary = mesh.boundary_vertices()
        assert np.isnan(report.H[boundary]).all()
        np.testing.assert_array_equal(report.boundary_excluded, boundary)
        assert np.nanmax(np.abs(report.H)) < 1e-3

    def test_cylinder_mean_curvature(self):
        mesh = phantoms.cylinder_mesh(radius=10.0, length=24.0, n_along=25)
        report = curvature_monge(mesh, CurvatureParams(radii_nm=[3.0, 5.0, 7.0]))
        central = np.abs(mesh.vertices[:, 2]) < 6.0
        assert np.nanmedian(report.H[central]) == pytest.approx(0.05, rel=0.1)
        assert abs(np.nanmedian(report.K[central])) < 5e-4

    def test_sparse_patches_use_the_largest_finite_fit(self, sphere):
        report = curvature_monge(sphere, CurvatureParams(radii_nm=[4.0, 6.0, 8.0], min_neighbors=1000))
        assert report.low_confidence.all()
        np.testing.assert_array_equal(report.r_used, 8.0)
        assert np.median(report.H) == pytest.approx(1.0 / 20.0, rel=0.05)

    def test_report_outputs(self, sphere, params):
        report = curvature_monge(sphere, params)
        frame = report.to_frame()
        assert list(frame.columns[:7]) == ['vertex_id', 'x', 'y', 'z', 'H', 'K', 'r_used']
        summary = report.summary()
        assert summary['vertices'] == sphere.n_vertices
        assert sum(summary['radius_usage'].values()) == summary['estimated']
        coloured = report.apply_to(sphere)
        assert {'H', 'K', 'r_used', 'confidence'} <= set(coloured.channels)
        assert np.all((report.confidence >= 0) & (report.confidence <= 1))

    def test_needs_normals(self):
        mesh = phantoms.grid_mesh(n_side=5)
        with pytest.raises(GeometryError, match="normals"):
            curvature_monge(mesh.with_normals(None), CurvatureParams())

    def test_descending_radii_rejected(self):
        with pytest.raises(ConfigError, match="ascending"):
            CurvatureParams.from_dict({'radii_nm': [8.0, 4.0]})


def test_area_and_face_values(unit_sphere_mesh):
    assert surface_area(unit_sphere_mesh) == pytest.approx(4 * np.pi, rel=0.01)
    values = np.arange(unit_sphere_mesh.n_vertices, dtype=float)
    per_face = face_curvature(unit_sphere_mesh, values)
    np.testing.assert_allclose(per_face, values[unit_sphere_mesh.faces].mean(axis=1))
