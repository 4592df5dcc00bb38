"""
SurfMorph Phantoms
Synthetic masks, point clouds and meshes with known geometry
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from modules.errors import ConfigError
from modules.structures import PointCloud, TriangleMesh, VoxelGrid

logger = logging.getLogger(__name__)

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


# ---------------------------------------------------------------- voxel masks

def _grid_coordinates(size: int, voxel_size: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World coordinates (nm) of voxel centres, centred on the volume"""
    axis = (np.arange(size) - (size - 1) / 2.0) * voxel_size
    return np.meshgrid(axis, axis, axis, indexing='ij')


def _grid(mask: np.ndarray, voxel_size: float) -> VoxelGrid:
    size = mask.shape[0]
    origin = np.full(3, -(size - 1) / 2.0 * voxel_size)
    return VoxelGrid(mask.astype(np.int32), np.full(3, voxel_size), origin)


def sphere_shell_mask(radius_nm: float = 20.0, thickness_nm: float = 4.0, size: int = 64,
                      voxel_size: float = 1.0, open_below_nm: Optional[float] = None) -> VoxelGrid:
    """Spherical shell centred in the volume; open_below_nm cuts it into a cap above z = open_below_nm"""
    x, y, z = _grid_coordinates(size, voxel_size)
    r = np.sqrt(x ** 2 + y ** 2 + z ** 2)
    mask = np.abs(r - radius_nm) <= thickness_nm / 2.0
    if open_below_nm is not None:
        mask &= z >= open_below_nm
    return _grid(mask, voxel_size)


def concentric_shells_mask(radii_nm=(12.0, 20.0), thickness_nm: float = 3.0, size: int = 56,
                           voxel_size: float = 1.0) -> VoxelGrid:
    """Disjoint spherical shells sharing a centre"""
    x, y, z = _grid_coordinates(size, voxel_size)
    r = np.sqrt(x ** 2 + y ** 2 + z ** 2)
    mask = np.zeros(r.shape, dtype=bool)
    for radius in radii_nm:
        mask |= np.abs(r - radius) <= thickness_nm / 2.0
    return _grid(mask, voxel_size)


def two_sheet_mask(separation_nm: float = 20.0, thickness_nm: float = 4.0, size: int = 64,
                   voxel_size: float = 1.0, bend_radius_nm: Optional[float] = None,
                   roi_margin_nm: float = 4.0) -> Tuple[VoxelGrid, VoxelGrid]:
    """Two parallel sheets (a membrane contact site) and an ROI box enclosing both.

    Sheet mid-surfaces sit at z = +-separation/2, or on concentric cylinders of radii
    bend_radius -+ separation/2 about the y axis when bend_radius_nm is given, so the
    mid-surface separation is exact in both cases.
    Returns (segmentation, rois).
    """
    x, y, z = _grid_coordinates(size, voxel_size)
    half = separation_nm / 2.0
    if bend_radius_nm is None:
        level = z
        centre = 0.0
    else:
        level = np.sqrt(x ** 2 + (z + bend_radius_nm) ** 2)
        centre = bend_radius_nm
    sheets = (np.abs(level - (centre - half)) <= thickness_nm / 2.0) | \
             (np.abs(level - (centre + half)) <= thickness_nm / 2.0)
    extent = (size - 1) / 2.0 * voxel_size
    lateral = extent - roi_margin_nm
    rois = (np.abs(x) <= lateral) & (np.abs(y) <= lateral) & \
           (np.abs(level - centre) <= half + thickness_nm / 2.0 + roi_margin_nm)
    return _grid(sheets, voxel_size), _grid(rois, voxel_size)


def overlapping_spheres_mask(radius_vox: float = 8.0, centre_distance_vox: float = 12.0,
                             size: int = 40) -> VoxelGrid:
    """Two equal balls whose centres lie on the x axis; the neck plane is x = 0"""
    x, y, z = _grid_coordinates(size, 1.0)
    offset = centre_distance_vox / 2.0
    mask = ((x - offset) ** 2 + y ** 2 + z ** 2 <= radius_vox ** 2) | \
           ((x + offset) ** 2 + y ** 2 + z ** 2 <= radius_vox ** 2)
    return _grid(mask, 1.0)


# ---------------------------------------------------------------- point clouds

def sphere_cloud(n: int = 2000, radius: float = 20.0) -> PointCloud:
    """Fibonacci lattice on a sphere, outward normals"""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    rho = np.sqrt(1.0 - z ** 2)
    theta = GOLDEN_ANGLE * i
    normals = np.column_stack([rho * np.cos(theta), rho * np.sin(theta), z])
    return PointCloud(radius * normals, normals)


def hemisphere_cloud(n: int = 1500, radius: float = 20.0) -> PointCloud:
    """Upper half (z > 0) of a Fibonacci sphere, outward normals"""
    full = sphere_cloud(2 * n, radius)
    return full.subset(full.points[:, 2] > 0)


def cylinder_cloud(n_around: int = 60, n_along: int = 40, radius: float = 10.0,
                   length: float = 40.0) -> PointCloud:
    """Open cylinder along z, outward normals; rows staggered by half a step"""
    k = np.arange(n_along)
    j = np.arange(n_around)
    kk, jj = np.meshgrid(k, j, indexing='ij')
    theta = 2.0 * np.pi * (jj + 0.5 * (kk % 2)) / n_around
    z = (kk / max(n_along - 1, 1) - 0.5) * length
    normals = np.column_stack([np.cos(theta).ravel(), np.sin(theta).ravel(), np.zeros(kk.size)])
    points = np.column_stack([radius * normals[:, 0], radius * normals[:, 1], z.ravel()])
    return PointCloud(points, normals)


def torus_cloud(n_major: int = 80, n_minor: int = 30, major: float = 20.0, minor: float = 7.0) -> PointCloud:
    """Torus about the z axis, outward normals"""
    u, v = np.meshgrid(2.0 * np.pi * np.arange(n_major) / n_major,
                       2.0 * np.pi * np.arange(n_minor) / n_minor, indexing='ij')
    u, v = u.ravel(), v.ravel()
    normals = np.column_stack([np.cos(v) * np.cos(u), np.cos(v) * np.sin(u), np.sin(v)])
    centre = np.column_stack([major * np.cos(u), major * np.sin(u), np.zeros_like(u)])
    return PointCloud(centre + minor * normals, normals)


def plane_cloud(n_side: int = 30, spacing: float = 1.0, z: float = 0.0) -> PointCloud:
    """Square lattice in the plane z = const, normals +z"""
    axis = (np.arange(n_side) - (n_side - 1) / 2.0) * spacing
    xx, yy = np.meshgrid(axis, axis, indexing='ij')
    points = np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, z)])
    normals = np.tile([0.0, 0.0, 1.0], (len(points), 1))
    return PointCloud(points, normals)


def randomize_signs(cloud: PointCloud, rng_seed: int = 0) -> PointCloud:
    """Flip each normal with probability one half"""
    rng = np.random.default_rng(rng_seed)
    flips = np.where(rng.random(len(cloud)) < 0.5, -1.0, 1.0)
    return cloud.with_normals(cloud.normals * flips[:, None])


# ---------------------------------------------------------------- meshes

def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriangleMesh:
    """Subdivided icosahedron with outward winding and normals"""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    vertices = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
                [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
                [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    faces = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
             [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
             [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
             [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    vertices = [np.asarray(v, dtype=np.float64) / np.linalg.norm(v) for v in vertices]
    for _ in range(subdivisions):
        cache: Dict[Tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = vertices[a] + vertices[b]
                vertices.append(m / np.linalg.norm(m))
                cache[key] = len(vertices) - 1
            return cache[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = refined
    unit = np.asarray(vertices)
    return TriangleMesh(radius * unit, np.asarray(faces, dtype=np.int64), unit.copy())


def grid_mesh(n_side: int = 20, spacing: float = 1.0, height=None) -> TriangleMesh:
    """Triangulated square patch in the xy plane, counter-clockwise seen from +z.

    height, when given, is a function (x, y) -> z displacing the vertices.
    """
    axis = (np.arange(n_side) - (n_side - 1) / 2.0) * spacing
    xx, yy = np.meshgrid(axis, axis, indexing='ij')
    x, y = xx.ravel(), yy.ravel()
    z = np.zeros_like(x) if height is None else np.asarray(height(x, y), dtype=np.float64)
    index = np.arange(n_side * n_side).reshape(n_side, n_side)
    a, b = index[:-1, :-1].ravel(), index[1:, :-1].ravel()
    c, d = index[1:, 1:].ravel(), index[:-1, 1:].ravel()
    faces = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    mesh = TriangleMesh(np.column_stack([x, y, z]), faces)
    return mesh.with_normals(mesh.compute_vertex_normals())


def cylinder_mesh(radius: float = 10.0, length: float = 40.0, n_around: int = 64,
                  n_along: int = 41) -> TriangleMesh:
    """Open cylinder along z, outward winding and exact radial normals"""
    theta = 2.0 * np.pi * np.arange(n_around) / n_around
    z = np.linspace(-length / 2.0, length / 2.0, n_along)
    tt, zz = np.meshgrid(theta, z, indexing='ij')
    radial = np.column_stack([np.cos(tt).ravel(), np.sin(tt).ravel(), np.zeros(tt.size)])
    vertices = radial * radius + np.column_stack([np.zeros(tt.size), np.zeros(tt.size), zz.ravel()])
    index = np.arange(n_around * n_along).reshape(n_around, n_along)
    nxt = np.roll(index, -1, axis=0)
    a, b = index[:, :-1].ravel(), nxt[:, :-1].ravel()
    c, d = nxt[:, 1:].ravel(), index[:, 1:].ravel()
    faces = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return TriangleMesh(vertices, faces, radial)


# ---------------------------------------------------------------- writer

PHANTOMS = ('sphere-shell', 'hemisphere-shell', 'concentric-shells', 'two-sheet',
            'overlapping-spheres', 'sphere-cloud', 'cylinder-cloud', 'torus-cloud', 'hemisphere-cloud')


def write_phantom(kind: str, out_dir: Union[str, Path], size: int = 64, voxel_size: float = 1.0,
                  separation_nm: float = 20.0, radius_nm: float = 20.0, rng_seed: int = 0) -> Dict[str, Path]:
    """Write a named phantom to out_dir; returns the files written by role"""
    from modules import surface_io, volume_io

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: Dict[str, Path] = {}
    if kind == 'sphere-shell':
        written['segmentation'] = out / 'sphere_shell.mrc'
        volume_io.write_volume(written['segmentation'], sphere_shell_mask(radius_nm, 4.0, size, voxel_size))
    elif kind == 'hemisphere-shell':
        written['segmentation'] = out / 'hemisphere_shell.mrc'
        volume_io.write_volume(written['segmentation'],
                               sphere_shell_mask(radius_nm, 4.0, size, voxel_size, open_below_nm=0.0))
    elif kind == 'concentric-shells':
        written['segmentation'] = out / 'concentric_shells.mrc'
        volume_io.write_volume(written['segmentation'],
                               concentric_shells_mask((radius_nm * 0.6, radius_nm), 3.0, size, voxel_size))
    elif kind == 'two-sheet':
        segmentation, rois = two_sheet_mask(separation_nm, 4.0, size, voxel_size)
        written['segmentation'] = out / 'two_sheet.mrc'
        written['rois'] = out / 'two_sheet_rois.mrc'
        volume_io.write_volume(written['segmentation'], segmentation)
        volume_io.write_volume(written['rois'], rois)
    elif kind == 'overlapping-spheres':
        written['segmentation'] = out / 'overlapping_spheres.mrc'
        volume_io.write_volume(written['segmentation'], overlapping_spheres_mask(8.0, 12.0, size))
    elif kind.endswith('-cloud'):
        makers = {'sphere-cloud': lambda: sphere_cloud(2000, radius_nm),
                  'cylinder-cloud': lambda: cylinder_cloud(radius=radius_nm / 2.0),
                  'torus-cloud': lambda: torus_cloud(major=radius_nm, minor=radius_nm / 3.0),
                  'hemisphere-cloud': lambda: hemisphere_cloud(1500, radius_nm)}
        if kind not in makers:
            raise ConfigError(f"unknown phantom '{kind}' (choose from {', '.join(PHANTOMS)})")
        written['cloud'] = out / f"{kind.replace('-', '_')}.ply"
        surface_io.write_ply(written['cloud'], randomize_signs(makers[kind](), rng_seed))
    else:
        raise ConfigError(f"unknown phantom '{kind}' (choose from {', '.join(PHANTOMS)})")
    logger.info("phantom %s written to %s", kind, out)
    return written
