"""
SurfMorph Surface IO
PLY (ascii or binary, with float vertex channels), OBJ and XYZ codecs for meshes and point clouds
"""

import logging
from pathlib import Path
from typing import Dict, Union

import numpy as np
from plyfile import PlyData, PlyElement

from modules.errors import ExportError, GeometryError
from modules.structures import PointCloud, TriangleMesh

logger = logging.getLogger(__name__)

POSITION = ('x', 'y', 'z')
NORMAL = ('nx', 'ny', 'nz')
LABEL = 'label'
RESERVED = set(POSITION) | set(NORMAL) | {LABEL}


def _vertex_element(points: np.ndarray, normals, labels, channels: Dict[str, np.ndarray]) -> PlyElement:
    columns = [points[:, 0], points[:, 1], points[:, 2]]
    dtype = [(name, 'f8') for name in POSITION]
    if normals is not None:
        dtype += [(name, 'f8') for name in NORMAL]
        columns += [normals[:, 0], normals[:, 1], normals[:, 2]]
    if labels is not None:
        dtype.append((LABEL, 'i4'))
        columns.append(labels)
    for key in sorted(channels):
        if key in RESERVED:
            raise ExportError(f"channel name '{key}' collides with a reserved PLY property")
        dtype.append((key, 'f4'))
        columns.append(channels[key])
    data = np.empty(len(points), dtype=dtype)
    for (name, _), column in zip(dtype, columns):
        data[name] = column
    return PlyElement.describe(data, 'vertex')


def write_ply(path: Union[str, Path], item: Union[TriangleMesh, PointCloud], binary: bool = True):
    """Mesh or cloud to PLY; positions and normals as double, channels as float"""
    if isinstance(item, TriangleMesh):
        elements = [_vertex_element(item.vertices, item.vertex_normals, None, item.channels)]
        faces = np.empty(item.n_faces, dtype=[('vertex_indices', 'i4', (3,))])
        faces['vertex_indices'] = item.faces
        elements.append(PlyElement.describe(faces, 'face'))
    else:
        elements = [_vertex_element(item.points, item.normals, item.labels, item.attributes)]
    PlyData(elements, text=not binary, byte_order='<').write(str(path))


def _read_vertices(ply: PlyData):
    if 'vertex' not in ply:
        raise GeometryError("PLY file has no vertex element")
    v = ply['vertex'].data
    names = v.dtype.names
    if not all(p in names for p in POSITION):
        raise GeometryError("PLY vertex element must have x, y, z")
    points = np.column_stack([v[p] for p in POSITION]).astype(np.float64)
    normals = np.column_stack([v[p] for p in NORMAL]).astype(np.float64) if all(p in names for p in NORMAL) else None
    labels = np.asarray(v[LABEL], dtype=np.int64) if LABEL in names else None
    channels = {name: np.asarray(v[name], dtype=np.float64) for name in names if name not in RESERVED}
    return points, normals, labels, channels


def read_ply(path: Union[str, Path]) -> Union[TriangleMesh, PointCloud]:
    """PLY to a TriangleMesh when it has faces, else a PointCloud"""
    ply = PlyData.read(str(path))
    points, normals, labels, channels = _read_vertices(ply)
    if 'face' in ply and ply['face'].count > 0:
        face_data = ply['face'].data
        key = 'vertex_indices' if 'vertex_indices' in face_data.dtype.names else face_data.dtype.names[0]
        faces = np.vstack([np.asarray(f, dtype=np.int64) for f in face_data[key]])
        if faces.shape[1] != 3:
            raise GeometryError("only triangle faces are supported")
        return TriangleMesh(points, faces, normals, channels)
    if normals is not None:
        length = np.linalg.norm(normals, axis=1, keepdims=True)
        bad = np.abs(length[:, 0] - 1.0) > 1e-3
        if bad.any():
            # curated files may carry unnormalised normals
            logger.warning("%s: %d normals were not unit length and were renormalised", path, int(bad.sum()))
            normals = normals / np.where(length > 0, length, 1.0)
    return PointCloud(points, normals, labels, channels)


def read_mesh(path: Union[str, Path]) -> TriangleMesh:
    path = Path(path)
    item = read_obj(path) if path.suffix.lower() == '.obj' else read_ply(path)
    if not isinstance(item, TriangleMesh):
        raise GeometryError(f"{path} holds a point cloud, not a mesh")
    return item


def read_cloud(path: Union[str, Path]) -> PointCloud:
    path = Path(path)
    if path.suffix.lower() == '.xyz':
        return read_xyz(path)
    item = read_ply(path)
    return item.as_point_cloud() if isinstance(item, TriangleMesh) else item


def write_obj(path: Union[str, Path], mesh: TriangleMesh):
    """Geometry-only Wavefront OBJ (1-based face indices)"""
    with open(path, 'w', encoding='utf-8') as handle:
        np.savetxt(handle, mesh.vertices, fmt='v %.9g %.9g %.9g')
        if mesh.n_faces:
            np.savetxt(handle, mesh.faces + 1, fmt='f %d %d %d')


def read_obj(path: Union[str, Path]) -> TriangleMesh:
    vertices, faces = [], []
    with open(path, 'r', encoding='utf-8') as handle:
        for line in handle:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == 'v':
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == 'f':
                corners = [int(p.split('/')[0]) for p in parts[1:]]
                # fan-triangulate polygons
                for k in range(1, len(corners) - 1):
                    faces.append([corners[0], corners[k], corners[k + 1]])
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    n = len(vertices)
    faces = np.where(faces < 0, faces + n, faces - 1)
    return TriangleMesh(np.asarray(vertices, dtype=np.float64).reshape(-1, 3), faces)


def write_xyz(path: Union[str, Path], cloud: PointCloud):
    """Whitespace-separated x y z [nx ny nz] rows"""
    columns = cloud.points if cloud.normals is None else np.hstack([cloud.points, cloud.normals])
    np.savetxt(path, columns, fmt='%.9g')


def read_xyz(path: Union[str, Path]) -> PointCloud:
    data = np.atleast_2d(np.loadtxt(path, dtype=np.float64, ndmin=2))
    if data.shape[1] not in (3, 6):
        raise GeometryError(f"{path}: expected 3 or 6 columns, found {data.shape[1]}")
    normals = data[:, 3:6] if data.shape[1] == 6 else None
    if normals is not None:
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(data[:, :3], normals)
