"""
Tests for JET normals, graph orientation, geodesic smoothing and SDF orientation
"""

import numpy as np
import pytest

from config.params import OrientParams
from modules import phantoms
from modules.errors import GeometryError
from modules.fields import signed_distance_field
from modules.normals import (build_orientation_graph, edge_consistency, estimate_normals_jet, orient_cloud,
                             orient_normals_graph, orient_normals_sdf, smooth_normals_geodesic)
from modules.structures import PointCloud

PHANTOM_CLOUDS = {
    'sphere': lambda: phantoms.sphere_cloud(n=1500, radius=15.0),
    'cylinder': lambda: phantoms.cylinder_cloud(),
    'hemisphere': lambda: phantoms.hemisphere_cloud(n=1200, radius=15.0),
    'torus': lambda: phantoms.torus_cloud(),
}


def signs_against_truth(oriented: PointCloud, truth: PointCloud) -> np.ndarray:
    return np.sign(np.einsum('ij,ij->i', oriented.normals, truth.normals))


@pytest.mark.parametrize('kind', sorted(PHANTOM_CLOUDS))
def test_random_signs_are_made_consistent(kind):
    truth = PHANTOM_CLOUDS[kind]()
    scrambled = phantoms.randomize_signs(truth, rng_seed=5)
    params = OrientParams()
    graph = build_orientation_graph(scrambled, params)
    oriented = orient_normals_graph(scrambled, params, graph)
    assert edge_consistency(oriented, graph) == 1.0
    signs = signs_against_truth(oriented, truth)
    assert abs(signs.sum()) == len(truth)
    flipped = oriented.attributes['orientation_flipped'] > 0
    np.testing.assert_array_equal(flipped, np.einsum('ij,ij->i', oriented.normals, scrambled.normals) < 0)


def test_jet_normals_on_sphere():
    truth = phantoms.sphere_cloud(n=1500, radius=15.0)
    estimated = estimate_normals_jet(PointCloud(truth.points), k=12)
    alignment = np.abs(np.einsum('ij,ij->i', estimated.normals, truth.normals))
    assert alignment.min() > 0.999
    assert not estimated.attributes['normal_flagged'].any()


def test_orient_cloud_from_points_only():
    truth = phantoms.cylinder_cloud()
    oriented = orient_cloud(PointCloud(truth.points), OrientParams())
    signs = signs_against_truth(oriented, truth)
    assert abs(signs.sum()) == len(truth)


def test_components_oriented_independently():
    near = phantoms.sphere_cloud(n=600, radius=5.0)
    far = phantoms.sphere_cloud(n=600, radius=5.0)
    truth = PointCloud(np.vstack([near.points, far.points + [100.0, 0.0, 0.0]]),
                       np.vstack([near.normals, far.normals]))
    scrambled = phantoms.randomize_signs(truth, rng_seed=2)
    params = OrientParams()
    graph = build_orientation_graph(scrambled, params)
    assert len(graph.seeds) == 2
    oriented = orient_normals_graph(scrambled, params, graph)
    signs = signs_against_truth(oriented, truth)
    assert abs(signs[:600].sum()) == 600
    assert abs(signs[600:].sum()) == 600


def test_smoothing_never_flips(rng):
    truth = phantoms.sphere_cloud(n=1000, radius=10.0)
    noisy = truth.normals + rng.normal(0, 0.3, size=truth.normals.shape)
    cloud = truth.with_normals(noisy / np.linalg.norm(noisy, axis=1, keepdims=True))
    smoothed = smooth_normals_geodesic(cloud, OrientParams(alpha_smooth=0.5))
    assert np.all(np.einsum('ij,ij->i', smoothed.normals, cloud.normals) > 0)
    before = np.einsum('ij,ij->i', cloud.normals, truth.normals).mean()
    after = np.einsum('ij,ij->i', smoothed.normals, truth.normals).mean()
    assert after > before


def test_smoothing_disabled_at_alpha_one():
    cloud = phantoms.sphere_cloud(n=300, radius=10.0)
    smoothed = smooth_normals_geodesic(cloud, OrientParams(alpha_smooth=1.0))
    np.testing.assert_array_equal(smoothed.normals, cloud.normals)


def test_all_edges_rejected_is_an_error():
    cloud = phantoms.sphere_cloud(n=300, radius=10.0)
    with pytest.raises(GeometryError, match="disconnected"):
        build_orientation_graph(cloud, OrientParams(tau=1.0))


def test_sdf_orientation_points_outward():
    mask = phantoms.sphere_shell_mask(radius_nm=4.0, thickness_nm=8.0, size=24)
    field = signed_distance_field(mask)
    truth = phantoms.sphere_cloud(n=400, radius=8.0)
    scrambled = phantoms.randomize_signs(truth, rng_seed=9)
    oriented = orient_normals_sdf(scrambled, field, eps_nm=0.5)
    assert np.all(signs_against_truth(oriented, truth) > 0)
    assert not oriented.attributes['sdf_clamped'].any()
