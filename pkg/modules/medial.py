"""
SurfMorph Medial Surface
Mid-surface point clouds from thick segmentations: MLS projection, single-layer
enforcement, curvature-adaptive densification and Poisson-disc homogenisation
"""

import logging
from dataclasses import replace
from typing import Dict, NamedTuple, Optional, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from config.params import MedialParams
from modules import local_fit
from modules.errors import GeometryError
from modules.parallel import chunked_map
from modules.structures import PointCloud, VoxelGrid
from modules.volume import euclidean_distance_transform

logger = logging.getLogger(__name__)

# upper bound on neighbour slots per chunk, keeps batched design matrices small
CHUNK_BUDGET = 1_000_000
HEX_DIRECTIONS = np.array([[np.cos(a), np.sin(a)] for a in np.arange(6) * np.pi / 3])


class LocalFits(NamedTuple):
    frames: local_fit.Frames
    coeffs: np.ndarray
    ok: np.ndarray
    bandwidth: np.ndarray
    query_local: np.ndarray


def _fit_neighbourhoods(points: np.ndarray, queries: np.ndarray, k: int, radius: Optional[float] = None,
                        exclude_self: bool = False, threads: Optional[int] = None) -> LocalFits:
    """Weighted PCA frame + quadratic fit around every query, parallel over chunks"""
    tree = cKDTree(points)
    if radius is not None:
        counts = tree.query_ball_point(queries, r=radius, return_length=True)
        slots = max(int(k), int(np.max(counts)))
    else:
        slots = int(k)
    chunk = max(64, CHUNK_BUDGET // max(slots, 1))

    def fit_chunk(start: int, stop: int):
        q = queries[start:stop]
        nbr = local_fit.neighbourhoods(points, k + (1 if exclude_self else 0), radius, q, tree)
        if exclude_self:
            own = np.arange(start, stop)[:, None]
            nbr = nbr._replace(valid=nbr.valid & (nbr.idx != own))
        weights, bandwidth = local_fit.gaussian_weights(nbr)
        neighbours = points[nbr.idx]
        frames = local_fit.pca_frames(neighbours, weights)
        local = local_fit.to_local(neighbours, frames)
        fit = local_fit.fit_quadratic(local, weights, offset=True)
        query_local = local_fit.to_local(q[:, None, :], frames)[:, 0, :]
        return frames, fit, bandwidth, query_local

    parts = chunked_map(fit_chunk, len(queries), threads, chunk)
    frames = local_fit.Frames(*[np.concatenate([p[0][i] for p in parts]) for i in range(4)])
    return LocalFits(
        frames,
        np.concatenate([p[1].coeffs for p in parts]),
        np.concatenate([p[1].ok for p in parts]),
        np.concatenate([p[2] for p in parts]),
        np.concatenate([p[3] for p in parts]),
    )


def _lift(fits: LocalFits, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """World points on each fitted quadratic at local (u, v)"""
    w = local_fit.evaluate_quadratic(fits.coeffs, u, v)
    f = fits.frames
    return f.origin + u[:, None] * f.t1 + v[:, None] * f.t2 + w[:, None] * f.n


def _unit(vectors: np.ndarray) -> np.ndarray:
    return vectors / np.linalg.norm(vectors, axis=1, keepdims=True)


def voxels_to_points(mask: VoxelGrid) -> PointCloud:
    """One point per foreground voxel at its centre, labelled with the voxel label"""
    indices = np.argwhere(mask.foreground)
    if len(indices) == 0:
        raise GeometryError("no foreground in mask")
    labels = mask.data[tuple(indices.T)]
    return PointCloud(mask.world_coordinates(indices), labels=labels)


def mls_project(cloud: PointCloud, params: MedialParams, threads: Optional[int] = None) -> PointCloud:
    """Repeated moving-least-squares projection onto local quadratic fits"""
    k = int(params.k_neighbors)
    if len(cloud) < k + 1:
        raise GeometryError(f"mls projection needs at least {k + 1} points, got {len(cloud)}")
    points = cloud.points.copy()
    normals = None
    flagged = np.zeros(len(points), dtype=bool)
    for iteration in range(int(params.mls_iterations)):
        fits = _fit_neighbourhoods(points, points, k, params.fit_radius_nm, threads=threads)
        projected = _lift(fits, fits.query_local[:, 0], fits.query_local[:, 1])
        bad = ~fits.ok
        projected[bad] = points[bad]
        flagged |= bad
        shift = np.linalg.norm(projected - points, axis=1)
        logger.debug("mls iteration %d: mean shift %.4g nm", iteration + 1, float(shift.mean()))
        points = projected
        normals = fits.frames.n
    if flagged.any():
        logger.warning("mls projection: %d rank-deficient fits left unmoved", int(flagged.sum()))
    result = cloud.with_points(points)
    if normals is not None:
        result = result.with_normals(_unit(normals))
    return result.with_attribute('fit_flagged', flagged.astype(float))


def enforce_single_layer(cloud: PointCloud, params: MedialParams, threads: Optional[int] = None) -> PointCloud:
    """Drop off-surface points and merge points stacked along the local normal"""
    points = cloud.points
    k = int(params.k_neighbors)
    if len(points) < k + 2:
        return cloud
    fits = _fit_neighbourhoods(points, points, k, params.fit_radius_nm, exclude_self=True, threads=threads)
    tree = cKDTree(points)
    _, nbr_idx = tree.query(points, k=min(k + 1, len(points)))
    threshold = params.thickness_factor * np.median(fits.bandwidth[nbr_idx], axis=1)

    u, v, w = fits.query_local.T
    height = local_fit.evaluate_quadratic(fits.coeffs, u, v)
    displacement = np.where(fits.ok, np.abs(w - height), 0.0)
    keep = displacement <= threshold
    if (~keep).any():
        logger.info("single layer: %d points beyond the thickness threshold removed", int((~keep).sum()))

    kept = np.flatnonzero(keep)
    normals = fits.frames.n[kept]
    sub = points[kept]
    pairs = cKDTree(sub).query_pairs(params.layer_search, output_type='ndarray')
    if len(pairs):
        rel = sub[pairs[:, 1]] - sub[pairs[:, 0]]
        along = np.abs(np.einsum('ij,ij->i', rel, normals[pairs[:, 0]]))
        tangential = np.sqrt(np.maximum(np.einsum('ij,ij->i', rel, rel) - along ** 2, 0.0))
        stacked = (tangential < params.spacing_min_nm) & (along > threshold[kept][pairs[:, 0]])
        pairs = pairs[stacked]

    n_kept = len(kept)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n_kept, n_kept)) \
        if len(pairs) else coo_matrix((n_kept, n_kept))
    n_groups, group = connected_components(graph, directed=False)
    if n_groups == n_kept:
        return cloud.subset(kept)

    # merge each stack into its centroid, represented by its lowest-index member
    counts = np.bincount(group, minlength=n_groups)
    centroids = np.zeros((n_groups, 3))
    np.add.at(centroids, group, sub)
    centroids /= counts[:, None]
    representative = np.full(n_groups, n_kept, dtype=np.int64)
    np.minimum.at(representative, group, np.arange(n_kept))
    order = np.sort(representative)
    merged = cloud.subset(kept[order])
    logger.info("single layer: merged %d stacked points into %d",
                int(counts[counts > 1].sum()), int((counts > 1).sum()))
    return merged.with_points(centroids[group[order]])


def _curvature_fits(cloud: PointCloud, params: MedialParams, threads: Optional[int]):
    k = min(int(params.k_neighbors), len(cloud) - 1)
    if k < 5:
        raise GeometryError("too few points for curvature estimates")
    fits = _fit_neighbourhoods(cloud.points, cloud.points, k, params.fit_radius_nm, threads=threads)
    k1, k2 = local_fit.principal_curvatures(*fits.coeffs[:, :3].T)
    k_max = np.maximum(np.abs(k1), np.abs(k2))
    with np.errstate(divide='ignore', invalid='ignore'):
        spacing = params.curvature_spacing_scale / k_max
    spacing = np.where(np.isfinite(spacing) & fits.ok, spacing, params.spacing_max_nm)
    return fits, np.clip(spacing, params.spacing_min_nm, params.spacing_max_nm)


def local_spacing(cloud: PointCloud, params: MedialParams, threads: Optional[int] = None) -> np.ndarray:
    """Target spacing per point, scale / k_max clamped to the spacing bounds"""
    return _curvature_fits(cloud, params, threads)[1]


def curvature_adaptive_densify(cloud: PointCloud, mask: VoxelGrid, params: MedialParams,
                               threads: Optional[int] = None) -> PointCloud:
    """Hex-lattice tangent candidates at curvature-dependent spacing, kept where the mask supports them"""
    fits, spacing = _curvature_fits(cloud, params, threads)
    good = fits.ok
    offsets = np.vstack([[0.0, 0.0], HEX_DIRECTIONS])
    candidates, candidate_spacing = [], []
    for du, dv in offsets:
        u = fits.query_local[:, 0] + du * spacing
        v = fits.query_local[:, 1] + dv * spacing
        lifted = _lift(fits, u, v)
        lifted[~good] = cloud.points[~good] if du == 0 and dv == 0 else np.nan
        candidates.append(lifted)
        candidate_spacing.append(spacing)
    points = np.concatenate(candidates)
    spacing_all = np.concatenate(candidate_spacing)
    finite = np.all(np.isfinite(points), axis=1)
    supported = np.zeros(len(points), dtype=bool)
    supported[finite] = mask.labels_at(points[finite]) > 0
    logger.info("densify: %d of %d candidates supported by the mask", int(supported.sum()), len(points))
    return PointCloud(points[supported], attributes={'spacing_nm': spacing_all[supported]})


def _canonical_order(points: np.ndarray) -> np.ndarray:
    return np.lexsort((points[:, 2], points[:, 1], points[:, 0]))


def poisson_disc_homogenize(cloud: PointCloud, radius_nm: Union[float, np.ndarray], rng_seed: int = 0,
                            min_component_size: int = 0, reproject: Optional[MedialParams] = None,
                            threads: Optional[int] = None) -> PointCloud:
    """Greedy variable-radius Poisson-disc subset in a seeded order over canonically sorted points.

    Two points conflict when closer than the smaller of their radii. Small
    components and the final MLS reprojection only run when requested.
    """
    n = len(cloud)
    if n == 0:
        return cloud
    radii = np.broadcast_to(np.asarray(radius_nm, dtype=np.float64), (n,)).copy()
    if np.any(radii <= 0):
        raise GeometryError("poisson-disc radii must be positive")

    canonical = _canonical_order(cloud.points)
    points = cloud.points[canonical]
    radii = radii[canonical]
    visit = np.random.default_rng(int(rng_seed)).permutation(n)

    pairs = cKDTree(points).query_pairs(float(radii.max()), output_type='ndarray')
    if len(pairs):
        dist = np.linalg.norm(points[pairs[:, 0]] - points[pairs[:, 1]], axis=1)
        pairs = pairs[dist < np.minimum(radii[pairs[:, 0]], radii[pairs[:, 1]])]
    conflicts = coo_matrix((np.ones(len(pairs) * 2), (np.concatenate([pairs[:, 0], pairs[:, 1]]),
                                                      np.concatenate([pairs[:, 1], pairs[:, 0]]))),
                           shape=(n, n)).tocsr() if len(pairs) else None

    blocked = np.zeros(n, dtype=bool)
    selected = np.zeros(n, dtype=bool)
    for i in visit:
        if blocked[i]:
            continue
        selected[i] = True
        blocked[i] = True
        if conflicts is not None:
            blocked[conflicts.indices[conflicts.indptr[i]:conflicts.indptr[i + 1]]] = True

    chosen = canonical[np.flatnonzero(selected)]
    result = cloud.subset(chosen)
    chosen_radii = radii[np.flatnonzero(selected)]
    logger.debug("poisson disc kept %d of %d points", len(result), n)

    if min_component_size > 0 and len(result):
        result, chosen_radii = _drop_small_components(result, chosen_radii, int(min_component_size))
    if reproject is not None and len(result) > reproject.k_neighbors:
        result = mls_project(result, replace(reproject, mls_iterations=1), threads)
    return result


def _drop_small_components(cloud: PointCloud, radii: np.ndarray, min_size: int):
    pairs = cKDTree(cloud.points).query_pairs(2.0 * float(radii.max()), output_type='ndarray')
    n = len(cloud)
    if len(pairs):
        dist = np.linalg.norm(cloud.points[pairs[:, 0]] - cloud.points[pairs[:, 1]], axis=1)
        pairs = pairs[dist <= radii[pairs[:, 0]] + radii[pairs[:, 1]]]
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)) \
        if len(pairs) else coo_matrix((n, n))
    _, labels = connected_components(graph, directed=False)
    sizes = np.bincount(labels)
    keep = sizes[labels] >= min_size
    if (~keep).any():
        logger.info("removed %d points in components smaller than %d", int((~keep).sum()), min_size)
    return cloud.subset(keep), radii[keep]


def support_thickness(mask: VoxelGrid) -> float:
    """Twice the 95th percentile of the interior EDT, a robust membrane thickness"""
    edt = euclidean_distance_transform(mask).values
    inside = edt[mask.foreground]
    if inside.size == 0:
        raise GeometryError("no foreground in mask")
    return 2.0 * float(np.percentile(inside, 95))


def extract_medial_surface(mask: VoxelGrid, params: MedialParams, threads: Optional[int] = None) -> PointCloud:
    """Full medial chain from a binary support to a homogeneous single-layer cloud"""
    support = mask.with_data(mask.foreground.astype(np.int32))
    if params.fit_radius_nm is None:
        params = replace(params, fit_radius_nm=2.0 * support_thickness(support))
        logger.info("medial fit radius set to %.3g nm", params.fit_radius_nm)

    cloud = voxels_to_points(support)
    projected = mls_project(cloud, params, threads)
    single = enforce_single_layer(projected, params, threads)
    dense = curvature_adaptive_densify(single, support, params, threads)
    if len(dense) == 0:
        raise GeometryError("densification left no supported points")
    homogeneous = poisson_disc_homogenize(dense, dense.attributes['spacing_nm'], params.rng_seed,
                                          params.min_component_size, params, threads)
    inside = support.labels_at(homogeneous.points) > 0
    result = homogeneous.subset(inside)
    if len(result) == 0:
        raise GeometryError("medial surface is empty")
    logger.info("medial surface: %d voxels -> %d points", len(cloud), len(result))
    return result


def medial_summary(cloud: PointCloud) -> Dict[str, float]:
    """Point count and nearest-neighbour spacing statistics"""
    if len(cloud) < 2:
        return {'points': len(cloud)}
    dist, _ = cKDTree(cloud.points).query(cloud.points, k=2)
    return {
        'points': len(cloud),
        'nn_spacing_mean_nm': float(dist[:, 1].mean()),
        'nn_spacing_min_nm': float(dist[:, 1].min()),
        'nn_spacing_max_nm': float(dist[:, 1].max()),
    }
