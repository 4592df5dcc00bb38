"""
Tests for neighbourhoods, tangent frames and quadratic height fits
"""

import numpy as np
import pytest

from modules import phantoms
from modules.errors import GeometryError
from modules.local_fit import (evaluate_quadratic, fit_monge, fit_quadratic, frames_from_normals, gaussian_weights,
                               neighbourhoods, pca_frames, principal_curvatures, to_local)


def sphere_cap(radius: float, half_width: float, n: int, rng) -> np.ndarray:
    uv = rng.uniform(-half_width, half_width, size=(n, 2))
    w = np.sqrt(radius ** 2 - (uv ** 2).sum(axis=1)) - radius
    return np.column_stack([uv, w])


class TestQuadraticFit:
    def test_recovers_exact_quadratic(self, rng):
        coeffs = np.array([0.3, -0.2, 0.1, 0.05, -0.4, 1.5])
        u, v = rng.uniform(-2, 2, size=(2, 40))
        w = evaluate_quadratic(coeffs[None], u, v)
        fit = fit_quadratic(np.stack([u, v, w], axis=-1)[None], np.ones((1, 40)))
        assert fit.ok[0]
        np.testing.assert_allclose(fit.coeffs[0], coeffs, atol=1e-9)
        assert fit.residual[0] < 1e-9

    def test_without_offset_f_is_zero(self, rng):
        u, v = rng.uniform(-1, 1, size=(2, 30))
        w = 0.5 * u ** 2 - 0.25 * v ** 2
        fit = fit_quadratic(np.stack([u, v, w], axis=-1)[None], np.ones((1, 30)), offset=False)
        np.testing.assert_allclose(fit.coeffs[0], [0.5, 0.0, -0.25, 0.0, 0.0, 0.0], atol=1e-10)

    def test_collinear_neighbourhood_is_flagged(self):
        t = np.linspace(-1, 1, 12)
        local = np.stack([t, 2 * t, t ** 2], axis=-1)[None]
        fit = fit_quadratic(local, np.ones((1, 12)))
        assert not fit.ok[0]
        assert np.isnan(fit.coeffs[0]).all()

    def test_batched_fits_are_independent(self, rng):
        u, v = rng.uniform(-1, 1, size=(2, 25))
        good = np.stack([u, v, u * v], axis=-1)
        line = np.stack([u, u, u], axis=-1)
        fit = fit_quadratic(np.stack([good, line]), np.ones((2, 25)))
        np.testing.assert_array_equal(fit.ok, [True, False])
        assert fit.coeffs[0, 1] == pytest.approx(1.0)


class TestMonge:
    def test_sphere_cap_curvatures(self, rng):
        radius = 20.0
        monge = fit_monge(sphere_cap(radius, 2.0, 200, rng), offset=True)
        k1, k2 = monge.principal_curvatures()
        assert k1 == pytest.approx(-1.0 / radius, rel=0.02)
        assert k2 == pytest.approx(-1.0 / radius, rel=0.02)
        assert monge.k_max == pytest.approx(1.0 / radius, rel=0.02)

    def test_hessian_layout(self):
        u, v = np.meshgrid(np.linspace(-1, 1, 7), np.linspace(-1, 1, 7))
        u, v = u.ravel(), v.ravel()
        monge = fit_monge(np.column_stack([u, v, 0.5 * u ** 2 + 0.3 * u * v - 0.1 * v ** 2]))
        np.testing.assert_allclose(monge.hessian, [[1.0, 0.3], [0.3, -0.2]], atol=1e-10)

    def test_rank_deficient_raises(self):
        t = np.linspace(0, 1, 10)
        with pytest.raises(GeometryError, match="rank-deficient"):
            fit_monge(np.column_stack([t, t, np.zeros(10)]))

    @pytest.mark.parametrize('a,b,c', [(0.5, 0.0, 0.5), (0.0, 1.0, 0.0), (0.3, -0.4, -0.1)])
    def test_principal_curvatures_match_eigenvalues(self, a, b, c):
        k1, k2 = principal_curvatures(np.array([a]), np.array([b]), np.array([c]))
        expected = np.linalg.eigvalsh([[2 * a, b], [b, 2 * c]])
        np.testing.assert_allclose([k2[0], k1[0]], expected, atol=1e-12)


class TestNeighbourhoods:
    def test_query_is_its_own_first_neighbour(self, rng):
        points = rng.normal(size=(50, 3))
        nbr = neighbourhoods(points, 6)
        np.testing.assert_array_equal(nbr.idx[:, 0], np.arange(50))
        assert nbr.valid.all()

    def test_radius_limits_and_pads(self):
        points = np.array([[0.0, 0, 0], [0.5, 0, 0], [5.0, 0, 0]])
        nbr = neighbourhoods(points, 3, radius=1.0)
        assert nbr.valid[2].sum() == 1
        assert (nbr.idx < 3).all()
        weights, _ = gaussian_weights(nbr)
        assert np.all(weights[~nbr.valid] == 0)

    def test_empty_point_set(self):
        with pytest.raises(GeometryError):
            neighbourhoods(np.zeros((0, 3)), 4)


class TestFrames:
    def test_pca_normal_of_plane(self):
        cloud = phantoms.plane_cloud(n_side=8, spacing=1.0, z=2.0)
        neighbours = cloud.points[None]
        frames = pca_frames(neighbours, np.ones((1, len(cloud))))
        assert abs(frames.n[0, 2]) == pytest.approx(1.0)
        local = to_local(neighbours, frames)
        np.testing.assert_allclose(local[0, :, 2], 0.0, atol=1e-10)

    def test_frames_from_normals_are_orthonormal(self, rng):
        normals = rng.normal(size=(20, 3))
        frames = frames_from_normals(np.zeros((20, 3)), normals)
        basis = np.stack([frames.t1, frames.t2, frames.n], axis=1)
        np.testing.assert_allclose(np.einsum('nij,nkj->nik', basis, basis), np.broadcast_to(np.eye(3), (20, 3, 3)),
                                   atol=1e-12)
        np.testing.assert_allclose(np.linalg.det(basis), 1.0)
