"""
SurfMorph Meshing
Gap-aware face filtering, Poisson proxy reconstruction, damped smoothing and mesh cleanup
"""

import logging
from typing import NamedTuple, Optional, Union

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import cg
from scipy.spatial import cKDTree

from config.params import MeshParams
from modules.ball_pivot import auto_radii, ball_pivot, resolve_radii  # noqa: F401
from modules.errors import GeometryError, GridMismatchError, MeshingError
from modules.fields import marching_cubes, sample_field_points
from modules.parallel import chunked_map
from modules.structures import PointCloud, ScalarField, TriangleMesh, VoxelGrid

logger = logging.getLogger(__name__)

POISSON_TOLERANCE = 1e-8
POISSON_PADDING = 0.15
DEGENERATE_AREA = 1e-12
SAT_CHUNK = 4096


class Occupancy(NamedTuple):
    """Support rasterised on a regular grid; labels are 0 where unlabelled"""
    foreground: np.ndarray
    labels: Optional[np.ndarray]
    voxel_size: np.ndarray
    origin: np.ndarray


# ---------------------------------------------------------------- gap filter

def _median_spacing(points: np.ndarray) -> float:
    dist, _ = cKDTree(points).query(points, k=2)
    return float(np.median(dist[:, 1]))


def occupancy_from_support(support: Union[VoxelGrid, PointCloud], params: MeshParams) -> Occupancy:
    """Occupancy grid from a mask, or a padded rasterisation of a dense support cloud"""
    if isinstance(support, VoxelGrid):
        labels = support.data.astype(np.int64) if not support.is_binary() else None
        return Occupancy(support.foreground, labels, support.voxel_size.copy(), support.origin.copy())

    points = support.points
    if len(points) == 0:
        raise GeometryError("no foreground in support cloud")
    size = params.support_voxel_nm or (_median_spacing(points) if len(points) > 1 else 1.0)
    pad = int(np.ceil(params.gap_dist_nm / size)) + 2
    origin = points.min(axis=0) - pad * size
    idx = np.rint((points - origin) / size).astype(np.int64)
    dims = tuple(idx.max(axis=0) + pad + 1)
    foreground = np.zeros(dims, dtype=bool)
    foreground[tuple(idx.T)] = True
    labels = None
    if support.labels is not None:
        labels = np.zeros(dims, dtype=np.int64)
        labels[tuple(idx.T)] = support.labels
    return Occupancy(foreground, labels, np.full(3, float(size)), origin)


def gap_voxels(occupancy: Occupancy, gap_dist_nm: float) -> np.ndarray:
    """Background voxels at least gap_dist from every foreground voxel"""
    if not occupancy.foreground.any():
        raise GeometryError("no foreground in support")
    distance = ndimage.distance_transform_edt(~occupancy.foreground, sampling=occupancy.voxel_size)
    return ~occupancy.foreground & (distance >= gap_dist_nm)


def triangle_box_overlap(v0: np.ndarray, v1: np.ndarray, v2: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Separating-axis test of (M, 3) triangles given relative to box centres with half extents.

    Tests the 3 box axes, the face normal and the 9 edge/box-axis cross
    products; touching counts as overlap.
    """
    edges = (v1 - v0, v2 - v1, v0 - v2)
    axes = [np.broadcast_to(np.eye(3)[k], v0.shape) for k in range(3)]
    axes.append(np.cross(edges[0], edges[1]))
    for k in range(3):
        unit = np.eye(3)[k]
        axes.extend(np.cross(unit, edge) for edge in edges)
    overlap = np.ones(len(v0), dtype=bool)
    for axis in axes:
        p0 = np.einsum('ij,ij->i', v0, axis)
        p1 = np.einsum('ij,ij->i', v1, axis)
        p2 = np.einsum('ij,ij->i', v2, axis)
        r = np.abs(axis) @ half
        low = np.minimum(np.minimum(p0, p1), p2)
        high = np.maximum(np.maximum(p0, p1), p2)
        overlap &= ~((low > r) | (high < -r))
    return overlap


def _faces_hitting(mesh: TriangleMesh, mask: np.ndarray, occupancy: Occupancy, tolerance: float,
                   threads: Optional[int]) -> np.ndarray:
    """True for faces overlapping any voxel of mask (SAT over the voxels in each face AABB)"""
    size, origin = occupancy.voxel_size, occupancy.origin
    half = np.maximum(size / 2.0 - tolerance, 0.0)
    dims = np.asarray(mask.shape)
    corners = mesh.vertices[mesh.faces]

    def test(start: int, stop: int) -> np.ndarray:
        tri = corners[start:stop]
        lo = np.ceil((tri.min(axis=1) - origin - half) / size - 1e-9).astype(np.int64)
        hi = np.floor((tri.max(axis=1) - origin + half) / size + 1e-9).astype(np.int64)
        lo, hi = np.maximum(lo, 0), np.minimum(hi, dims - 1)
        extent = np.maximum(hi - lo + 1, 0)
        counts = extent.prod(axis=1)
        hits = np.zeros(stop - start, dtype=bool)
        total = int(counts.sum())
        if total == 0:
            return hits
        face = np.repeat(np.arange(stop - start), counts)
        offset = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        ext = extent[face]
        ix = offset // (ext[:, 1] * ext[:, 2])
        iy = (offset // ext[:, 2]) % ext[:, 1]
        iz = offset % ext[:, 2]
        voxel = lo[face] + np.stack([ix, iy, iz], axis=1)
        keep = mask[voxel[:, 0], voxel[:, 1], voxel[:, 2]]
        face, voxel = face[keep], voxel[keep]
        if len(face) == 0:
            return hits
        centre = origin + voxel * size
        t = tri[face]
        overlap = triangle_box_overlap(t[:, 0] - centre, t[:, 1] - centre, t[:, 2] - centre, half)
        hits[np.unique(face[overlap])] = True
        return hits

    if mesh.is_empty():
        return np.zeros(0, dtype=bool)
    return np.concatenate(chunked_map(test, mesh.n_faces, threads, SAT_CHUNK))


def _check_frame(mesh: TriangleMesh, occupancy: Occupancy):
    lo = occupancy.origin - occupancy.voxel_size
    hi = occupancy.origin + np.asarray(occupancy.foreground.shape) * occupancy.voxel_size
    outside = np.any((mesh.vertices < lo) | (mesh.vertices > hi), axis=1)
    if outside.any():
        raise GridMismatchError(f"frame mismatch: {int(outside.sum())} mesh vertices lie outside the support grid")


def _mixed_label_faces(mesh: TriangleMesh, occupancy: Occupancy) -> np.ndarray:
    """Faces whose vertices sit in voxels of more than one non-zero label"""
    idx = np.rint((mesh.vertices - occupancy.origin) / occupancy.voxel_size).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.asarray(occupancy.labels.shape)), axis=1)
    vertex_label = np.zeros(mesh.n_vertices, dtype=np.int64)
    vertex_label[inside] = occupancy.labels[tuple(idx[inside].T)]
    face_labels = vertex_label[mesh.faces]
    # zero stands for unlabelled and never conflicts
    lo = np.where(face_labels > 0, face_labels, np.iinfo(np.int64).max).min(axis=1)
    hi = face_labels.max(axis=1)
    return (hi > 0) & (lo != hi)


def remove_isolated_faces(mesh: TriangleMesh) -> TriangleMesh:
    """Drop faces that share no edge with another face, then orphaned vertices"""
    if mesh.is_empty():
        return mesh
    edges = np.sort(mesh.edges(), axis=1)
    _, inverse, counts = np.unique(edges, axis=0, return_inverse=True, return_counts=True)
    shared = (counts[inverse.reshape(-1)] > 1).reshape(3, -1).T
    return mesh.submesh(shared.any(axis=1))


def gap_filter(mesh: TriangleMesh, support: Union[VoxelGrid, PointCloud], params: MeshParams,
               threads: Optional[int] = None) -> TriangleMesh:
    """Remove faces overlapping gap voxels or straddling differently labelled support"""
    occupancy = occupancy_from_support(support, params)
    _check_frame(mesh, occupancy)
    gaps = gap_voxels(occupancy, params.gap_dist_nm)
    remove = _faces_hitting(mesh, gaps, occupancy, params.sat_tolerance_nm, threads)
    n_gap = int(remove.sum())
    if occupancy.labels is not None and not mesh.is_empty():
        remove |= _mixed_label_faces(mesh, occupancy)
    kept = remove_isolated_faces(mesh.submesh(~remove))
    logger.info("gap filter: %d gap faces, %d label faces, %d isolated faces removed",
                n_gap, int(remove.sum()) - n_gap, int((~remove).sum()) - kept.n_faces)
    return kept


# ---------------------------------------------------------------- Poisson proxy

def _neumann_laplacian(dims, spacing: np.ndarray) -> sparse.csr_matrix:
    """7-point Laplacian with zero-flux boundaries (negative semi-definite)"""
    def second_difference(n: int, h: float) -> sparse.csr_matrix:
        main = -2.0 * np.ones(n)
        main[[0, -1]] = -1.0
        return sparse.diags([np.ones(n - 1), main, np.ones(n - 1)], [-1, 0, 1]) / h ** 2

    eye = [sparse.identity(n, format='csr') for n in dims]
    dx, dy, dz = (second_difference(n, h) for n, h in zip(dims, spacing))
    return (sparse.kron(sparse.kron(dx, eye[1]), eye[2])
            + sparse.kron(sparse.kron(eye[0], dy), eye[2])
            + sparse.kron(sparse.kron(eye[0], eye[1]), dz)).tocsr()


def _splat(points: np.ndarray, values: np.ndarray, dims, origin: np.ndarray, spacing: float) -> np.ndarray:
    """Trilinear scatter of (N, C) values onto grid corners"""
    coords = (points - origin) / spacing
    base = np.clip(np.floor(coords).astype(np.int64), 0, np.asarray(dims) - 2)
    frac = coords - base
    out = np.zeros(tuple(dims) + (values.shape[1],))
    for corner in np.ndindex(2, 2, 2):
        offset = np.asarray(corner)
        weight = np.prod(np.where(offset == 1, frac, 1.0 - frac), axis=1)
        idx = base + offset
        np.add.at(out, (idx[:, 0], idx[:, 1], idx[:, 2]), weight[:, None] * values)
    return out


def _conjugate_gradient(matrix, rhs: np.ndarray, maxiter: int):
    try:
        return cg(matrix, rhs, rtol=POISSON_TOLERANCE, atol=0.0, maxiter=maxiter)
    except TypeError:
        # scipy < 1.12 spells the relative tolerance `tol`
        return cg(matrix, rhs, tol=POISSON_TOLERANCE, atol=0.0, maxiter=maxiter)


def trim_low_density(mesh: TriangleMesh, quantile: float) -> TriangleMesh:
    """Drop vertices whose density lies below the given quantile, with their faces"""
    if quantile <= 0 or mesh.n_vertices == 0:
        return mesh
    density = mesh.channels['density']
    keep_vertex = density >= np.quantile(density, quantile)
    return mesh.submesh(keep_vertex[mesh.faces].all(axis=1))


def poisson_reconstruct(cloud: PointCloud, params: MeshParams) -> TriangleMesh:
    """Indicator-function reconstruction on a regular grid with a per-vertex density channel"""
    if cloud.normals is None:
        raise GeometryError("Poisson reconstruction needs oriented normals")
    if len(cloud) < 4:
        raise GeometryError("Poisson reconstruction needs at least 4 points")
    points = cloud.points
    lo, hi = points.min(axis=0), points.max(axis=0)
    longest = float((hi - lo).max())
    if longest <= 0:
        raise GeometryError("point cloud has zero extent")
    pad = POISSON_PADDING * longest
    resolution = 2 ** int(params.poisson_depth)
    h = (longest + 2 * pad) / (resolution - 1)
    origin = lo - pad
    dims = tuple(int(np.ceil((hi[k] - lo[k] + 2 * pad) / h)) + 1 for k in range(3))

    splats = _splat(points, np.column_stack([cloud.normals, np.ones(len(points))]), dims, origin, h)
    sigma = max(1.0, _median_spacing(points) / h)
    smoothed = np.stack([ndimage.gaussian_filter(splats[..., c], sigma, mode='constant') for c in range(4)], axis=-1)
    vector, density = smoothed[..., :3], smoothed[..., 3]
    divergence = sum(np.gradient(vector[..., k], h, axis=k) for k in range(3))

    laplacian = _neumann_laplacian(dims, np.full(3, h))
    rhs = divergence.ravel()
    rhs = rhs - rhs.mean()
    # solve -L chi = -div V; -L is positive semi-definite with constant null space
    chi, info = _conjugate_gradient(-laplacian, -rhs, maxiter=max(1000, 20 * max(dims)))
    residual = float(np.linalg.norm(rhs - laplacian @ chi) / max(np.linalg.norm(rhs), 1e-300))
    if info != 0 or residual > 10 * POISSON_TOLERANCE:
        raise MeshingError(f"Poisson solver did not converge: relative residual {residual:.3e}")

    indicator = ScalarField(chi.reshape(dims), np.full(3, h), origin)
    samples, _ = sample_field_points(indicator, points)
    iso = float(samples.mean())
    mesh = marching_cubes(indicator, iso)
    if mesh.is_empty():
        raise MeshingError("Poisson indicator has no iso level at the samples")
    vertex_density, _ = sample_field_points(ScalarField(density, np.full(3, h), origin), mesh.vertices)
    mesh = mesh.with_channel('density', vertex_density)
    logger.info("Poisson proxy: grid %s, iso %.4g, %d vertices before trim", dims, iso, mesh.n_vertices)
    return mesh_cleanup(trim_low_density(mesh, params.density_trim_quantile))


# ---------------------------------------------------------------- smoothing and cleanup

def damped_laplacian_smooth(mesh: TriangleMesh, params: MeshParams) -> TriangleMesh:
    """Uniform-Laplacian damping of interior vertices; boundary vertices stay fixed"""
    iterations = int(params.smooth_iterations)
    if iterations == 0 or mesh.is_empty():
        return TriangleMesh(mesh.vertices.copy(), mesh.faces.copy(),
                            None if mesh.vertex_normals is None else mesh.vertex_normals.copy(),
                            dict(mesh.channels))
    adjacency = mesh.adjacency()
    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    movable = (degree > 0) & ~mesh.boundary_vertices()
    vertices = mesh.vertices.copy()
    lam = float(params.smooth_lambda)
    for _ in range(iterations):
        centroid = (adjacency @ vertices) / np.where(degree > 0, degree, 1.0)[:, None]
        vertices = np.where(movable[:, None], vertices + lam * (centroid - vertices), vertices)
    smoothed = TriangleMesh(vertices, mesh.faces.copy(), None, dict(mesh.channels))
    if mesh.vertex_normals is not None:
        smoothed = smoothed.with_normals(smoothed.compute_vertex_normals())
    return smoothed


def _merge_duplicate_vertices(mesh: TriangleMesh) -> TriangleMesh:
    """Collapse bitwise-identical vertex positions onto their first occurrence"""
    _, first, inverse = np.unique(mesh.vertices, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    if len(first) == mesh.n_vertices:
        return mesh
    representative = first[inverse]
    return TriangleMesh(mesh.vertices, representative[mesh.faces], mesh.vertex_normals, dict(mesh.channels))


def mesh_cleanup(mesh: TriangleMesh) -> TriangleMesh:
    """Remove degenerate, duplicate and non-manifold faces and unreferenced vertices; idempotent"""
    if mesh.is_empty():
        return mesh.remove_unreferenced()
    mesh = _merge_duplicate_vertices(mesh)
    f = mesh.faces

    repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
    edge_sq = np.max([np.sum((mesh.vertices[f[:, i]] - mesh.vertices[f[:, (i + 1) % 3]]) ** 2, axis=1)
                      for i in range(3)], axis=0)
    flat = mesh.face_areas() <= DEGENERATE_AREA * np.maximum(edge_sq, np.finfo(float).tiny)
    keep = ~(repeated | flat)

    _, first = np.unique(np.sort(f, axis=1), axis=0, return_index=True)
    unique_face = np.zeros(len(f), dtype=bool)
    unique_face[first] = True
    keep &= unique_face

    # more than two faces on an edge: the lowest-index two survive
    kept_idx = np.flatnonzero(keep)
    if len(kept_idx):
        edges = np.sort(np.concatenate([f[kept_idx][:, [0, 1]], f[kept_idx][:, [1, 2]], f[kept_idx][:, [2, 0]]]), axis=1)
        owner = np.tile(kept_idx, 3)
        order = np.lexsort((owner, edges[:, 1], edges[:, 0]))
        edges, owner = edges[order], owner[order]
        new_group = np.ones(len(edges), dtype=bool)
        new_group[1:] = np.any(edges[1:] != edges[:-1], axis=1)
        group_start = np.maximum.accumulate(np.where(new_group, np.arange(len(edges)), 0))
        rank = np.arange(len(edges)) - group_start
        keep[np.unique(owner[rank >= 2])] = False

    removed = int((~keep).sum())
    if removed:
        logger.debug("cleanup removed %d faces", removed)
    return TriangleMesh(mesh.vertices, f[keep], mesh.vertex_normals, dict(mesh.channels)).remove_unreferenced()
