"""
SurfMorph Fields
Signed distance fields, obstacle-constrained mean-curvature flow and isosurface extraction
"""

import logging
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy import ndimage
from skimage import measure

from config.params import FlowParams, IsoParams, MedialParams
from modules.errors import GeometryError
from modules.structures import PointCloud, ScalarField, TriangleMesh, VoxelGrid, empty_mesh
from modules.volume import euclidean_distance_transform

logger = logging.getLogger(__name__)

CLAMP_TOLERANCE = 1e-9


class IsosurfaceResult(NamedTuple):
    cloud: PointCloud
    mesh: TriangleMesh
    sdf: ScalarField


def resample_field(field: ScalarField, factor: int) -> ScalarField:
    """Trilinear refinement by an integer factor; new dims are (n - 1) * factor + 1"""
    factor = int(factor)
    if factor <= 1:
        return field.with_values(field.values.copy())
    axes = [np.arange((n - 1) * factor + 1) / factor for n in field.dims]
    grid = np.meshgrid(*axes, indexing='ij')
    values = ndimage.map_coordinates(field.values, grid, order=1, mode='nearest')
    return ScalarField(values, field.spacing / factor, field.origin)


def signed_distance_field(mask: VoxelGrid, upsample_factor: int = 1) -> ScalarField:
    """phi = EDT(background) - EDT(foreground); negative inside the support"""
    fg = mask.foreground
    if not fg.any():
        raise GeometryError("no foreground in mask")
    inside = euclidean_distance_transform(mask).values
    if fg.all():
        outside = np.zeros(mask.dims)
    else:
        outside = ndimage.distance_transform_edt(~fg, sampling=mask.voxel_size)
    sdf = ScalarField(outside - inside, mask.voxel_size, mask.origin)
    return resample_field(sdf, upsample_factor)


def _curvature_term(phi: np.ndarray, spacing: np.ndarray, grad_epsilon: float) -> np.ndarray:
    """|grad phi| * div(grad phi / |grad phi|) by central differences on an edge-padded grid"""
    p = np.pad(phi, 1, mode='edge')
    hx, hy, hz = spacing
    c = p[1:-1, 1:-1, 1:-1]

    def shifted(dx, dy, dz):
        return p[1 + dx:p.shape[0] - 1 + dx, 1 + dy:p.shape[1] - 1 + dy, 1 + dz:p.shape[2] - 1 + dz]

    px = (shifted(1, 0, 0) - shifted(-1, 0, 0)) / (2 * hx)
    py = (shifted(0, 1, 0) - shifted(0, -1, 0)) / (2 * hy)
    pz = (shifted(0, 0, 1) - shifted(0, 0, -1)) / (2 * hz)
    pxx = (shifted(1, 0, 0) - 2 * c + shifted(-1, 0, 0)) / hx ** 2
    pyy = (shifted(0, 1, 0) - 2 * c + shifted(0, -1, 0)) / hy ** 2
    pzz = (shifted(0, 0, 1) - 2 * c + shifted(0, 0, -1)) / hz ** 2
    pxy = (shifted(1, 1, 0) - shifted(1, -1, 0) - shifted(-1, 1, 0) + shifted(-1, -1, 0)) / (4 * hx * hy)
    pxz = (shifted(1, 0, 1) - shifted(1, 0, -1) - shifted(-1, 0, 1) + shifted(-1, 0, -1)) / (4 * hx * hz)
    pyz = (shifted(0, 1, 1) - shifted(0, 1, -1) - shifted(0, -1, 1) + shifted(0, -1, -1)) / (4 * hy * hz)

    numerator = (pxx * (py ** 2 + pz ** 2) + pyy * (px ** 2 + pz ** 2) + pzz * (px ** 2 + py ** 2)
                 - 2 * (px * py * pxy + px * pz * pxz + py * pz * pyz))
    grad_sq = np.maximum(px ** 2 + py ** 2 + pz ** 2, grad_epsilon ** 2)
    return numerator / grad_sq


def mean_curvature_flow(field: ScalarField, ref_field: Optional[ScalarField], params: FlowParams) -> ScalarField:
    """Gaussian pre-smoothing plus explicit mean-curvature flow held above an obstacle.

    After every step phi is projected onto phi >= ref_field; ref_field None
    runs the unconstrained flow.
    """
    if ref_field is not None:
        field.require_same_grid(ref_field)
    min_spacing = float(field.spacing.min())
    params.validate(min_spacing)
    dt = params.resolved_dt(min_spacing)

    phi = field.values.copy()
    if params.gaussian_sigma_nm == 0 and params.steps == 0:
        return field.with_values(phi)
    if params.gaussian_sigma_nm > 0:
        phi = ndimage.gaussian_filter(phi, sigma=params.gaussian_sigma_nm / field.spacing, mode='nearest')
    obstacle = None if ref_field is None else ref_field.values
    if obstacle is not None:
        phi = np.maximum(phi, obstacle)
    for _ in range(int(params.steps)):
        # fresh buffer per step
        phi = phi + dt * _curvature_term(phi, field.spacing, params.grad_epsilon)
        if obstacle is not None:
            phi = np.maximum(phi, obstacle)
    logger.debug("mean-curvature flow: %d steps, dt %.4g nm^2", params.steps, dt)
    return field.with_values(phi)


def sample_field_points(field: ScalarField, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Trilinear samples at (N, 3) nm points and a flag for clamped samples"""
    coords = (np.asarray(points, dtype=np.float64).reshape(-1, 3) - field.origin) / field.spacing
    upper = np.asarray(field.dims, dtype=np.float64) - 1
    clamped_coords = np.clip(coords, 0.0, upper)
    clamped = np.any(np.abs(clamped_coords - coords) > CLAMP_TOLERANCE, axis=1)
    if clamped.any():
        logger.warning("%d field samples outside the grid were clamped", int(clamped.sum()))
    values = ndimage.map_coordinates(field.values, clamped_coords.T, order=1, mode='nearest')
    return values, clamped


def sample_field(field: ScalarField, p) -> float:
    """Trilinear sample at one point, clamped to the grid"""
    values, _ = sample_field_points(field, np.asarray(p, dtype=np.float64).reshape(1, 3))
    return float(values[0])


def field_gradient(field: ScalarField, points: np.ndarray) -> np.ndarray:
    """Central-difference gradient sampled trilinearly at points"""
    grads = np.gradient(field.values, *field.spacing) if min(field.dims) > 1 else None
    if grads is None:
        raise GeometryError("gradient needs at least 2 samples per axis")
    coords = np.clip((np.asarray(points) - field.origin) / field.spacing, 0, np.asarray(field.dims) - 1).T
    return np.stack([ndimage.map_coordinates(g, coords, order=1, mode='nearest') for g in grads], axis=1)


def marching_cubes(field: ScalarField, iso: float = 0.0) -> TriangleMesh:
    """Triangulate the iso level; face normals point toward increasing values"""
    if min(field.dims) < 2:
        raise GeometryError(f"marching cubes needs dims >= 2 per axis, got {field.dims}")
    if not (field.values.min() < iso < field.values.max()):
        logger.info("iso level %.4g outside field range, empty mesh", iso)
        return empty_mesh()
    verts, faces, _, _ = measure.marching_cubes(field.values, level=iso, spacing=tuple(field.spacing),
                                                allow_degenerate=False)
    mesh = TriangleMesh(verts + field.origin, faces.astype(np.int64))
    if mesh.is_empty():
        return mesh
    centres = mesh.vertices[mesh.faces].mean(axis=1)
    alignment = np.einsum('ij,ij->i', mesh.face_cross(), field_gradient(field, centres))
    if alignment.sum() < 0:
        mesh = TriangleMesh(mesh.vertices, mesh.faces[:, [0, 2, 1]])
    return mesh.with_normals(mesh.compute_vertex_normals())


def smooth_mesh_normals(mesh: TriangleMesh, normals: np.ndarray, iterations: int) -> np.ndarray:
    """One-ring averaging of vertex normals over the mesh, renormalised each pass"""
    adjacency = mesh.adjacency()
    for _ in range(int(iterations)):
        summed = normals + adjacency @ normals
        norm = np.linalg.norm(summed, axis=1, keepdims=True)
        normals = np.where(norm > 0, summed / np.where(norm > 0, norm, 1.0), normals)
    return normals


def extract_isosurface_cloud(mask: VoxelGrid, flow: FlowParams, iso: IsoParams,
                             medial: Optional[MedialParams] = None, rng_seed: int = 0) -> IsosurfaceResult:
    """SDF, constrained flow, marching cubes, resampling and SDF-oriented normals"""
    # deferred: both modules sample fields
    from modules.medial import local_spacing, poisson_disc_homogenize
    from modules.normals import orient_normals_sdf

    phi_ref = signed_distance_field(mask, flow.upsample_factor)
    phi = mean_curvature_flow(phi_ref, phi_ref, flow)
    mesh = marching_cubes(phi, 0.0)
    if mesh.is_empty():
        raise GeometryError("isosurface is empty")
    normals = smooth_mesh_normals(mesh, mesh.vertex_normals, iso.normal_smoothing_iterations)
    dense = PointCloud(mesh.vertices, normals)

    if iso.adaptive:
        medial = medial or MedialParams()
        radii = local_spacing(dense, medial)
    else:
        radii = iso.spacing_nm
    sampled = poisson_disc_homogenize(dense, radii, rng_seed)
    oriented = orient_normals_sdf(sampled, phi, iso.eps_nm)
    logger.info("isosurface: %d mesh vertices resampled to %d points", mesh.n_vertices, len(oriented))
    return IsosurfaceResult(oriented, mesh.with_normals(normals), phi)
