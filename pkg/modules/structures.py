"""
SurfMorph Data Structures
Voxel grids, scalar fields, point clouds and triangle meshes in nm coordinates
"""

from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from modules.errors import GeometryError, GridMismatchError, VolumeFormatError

NORMAL_TOLERANCE = 1e-6


def _as_triplet(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64).reshape(-1)
    if arr.size == 1:
        arr = np.repeat(arr, 3)
    if arr.size != 3:
        raise VolumeFormatError(f"{name} must have 3 components, got {arr.size}")
    return arr


@dataclass
class VoxelGrid:
    """Labelled occupancy on a regular grid; data is indexed [i, j, k] = [x, y, z]"""

    data: np.ndarray
    voxel_size: np.ndarray = field(default_factory=lambda: np.ones(3))
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise VolumeFormatError(f"grid data must be 3-D with positive dims, got {self.data.shape}")
        if not np.issubdtype(self.data.dtype, np.integer):
            if not np.all(np.equal(np.mod(self.data, 1), 0)):
                raise VolumeFormatError("grid labels must be integers")
            self.data = self.data.astype(np.int32)
        if self.data.size and self.data.min() < 0:
            raise VolumeFormatError("grid labels must be non-negative")
        self.voxel_size = _as_triplet(self.voxel_size, "voxel_size")
        self.origin = _as_triplet(self.origin, "origin")
        if np.any(self.voxel_size <= 0):
            raise VolumeFormatError("non-positive voxel size")

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def foreground(self) -> np.ndarray:
        return self.data > 0

    def is_binary(self) -> bool:
        return bool(np.all((self.data == 0) | (self.data == 1)))

    def with_data(self, data: np.ndarray) -> "VoxelGrid":
        """Same frame, new voxel values"""
        return VoxelGrid(data, self.voxel_size.copy(), self.origin.copy())

    def world_coordinates(self, indices: np.ndarray) -> np.ndarray:
        """Voxel indices (N, 3) to nm coordinates of the voxel centres"""
        return self.origin + np.asarray(indices, dtype=np.float64) * self.voxel_size

    def voxel_indices(self, points: np.ndarray) -> np.ndarray:
        """nm coordinates to the indices of their containing voxels (may be out of bounds)"""
        return np.rint((np.asarray(points, dtype=np.float64) - self.origin) / self.voxel_size).astype(np.int64)

    def contains_indices(self, indices: np.ndarray) -> np.ndarray:
        indices = np.asarray(indices)
        return np.all((indices >= 0) & (indices < np.asarray(self.dims)), axis=1)

    def labels_at(self, points: np.ndarray) -> np.ndarray:
        """Label of the voxel containing each point; 0 outside the grid"""
        idx = self.voxel_indices(points)
        inside = self.contains_indices(idx)
        out = np.zeros(len(idx), dtype=self.data.dtype)
        good = idx[inside]
        out[inside] = self.data[good[:, 0], good[:, 1], good[:, 2]]
        return out

    def require_same_dims(self, other: "VoxelGrid"):
        if self.dims != other.dims:
            raise GridMismatchError(f"dims mismatch: {self.dims} vs {other.dims}")


@dataclass
class ScalarField:
    """Real-valued field on a regular grid; SDFs are negative inside the support"""

    values: np.ndarray
    spacing: np.ndarray = field(default_factory=lambda: np.ones(3))
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise VolumeFormatError(f"field must be 3-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise GeometryError("field contains non-finite values")
        self.spacing = _as_triplet(self.spacing, "spacing")
        self.origin = _as_triplet(self.origin, "origin")
        if np.any(self.spacing <= 0):
            raise VolumeFormatError("non-positive voxel size")

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.values.shape)

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(values, self.spacing.copy(), self.origin.copy())

    def require_same_grid(self, other: "ScalarField"):
        if (self.dims != other.dims or not np.allclose(self.spacing, other.spacing)
                or not np.allclose(self.origin, other.origin)):
            raise GridMismatchError("fields do not share a grid")

    def world_coordinates(self, indices: np.ndarray) -> np.ndarray:
        return self.origin + np.asarray(indices, dtype=np.float64) * self.spacing


@dataclass
class PointCloud:
    """Points in nm with optional unit normals, labels and named real channels"""

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    attributes: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != n:
                raise GeometryError("normals and points differ in length")
            if n and np.max(np.abs(np.linalg.norm(self.normals, axis=1) - 1.0)) > NORMAL_TOLERANCE:
                raise GeometryError("normals must have unit length")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(self.labels) != n:
                raise GeometryError("labels and points differ in length")
            if n and self.labels.min() < 0:
                raise GeometryError("labels must be non-negative")
        self.attributes = {key: np.asarray(value, dtype=np.float64).reshape(-1)
                           for key, value in self.attributes.items()}
        for key, value in self.attributes.items():
            if len(value) != n:
                raise GeometryError(f"attribute '{key}' and points differ in length")

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, index) -> "PointCloud":
        """Points selected by a boolean mask or index array, channels carried along"""
        index = np.asarray(index)
        return PointCloud(
            self.points[index],
            None if self.normals is None else self.normals[index],
            None if self.labels is None else self.labels[index],
            {key: value[index] for key, value in self.attributes.items()},
        )

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return replace(self, points=np.asarray(points, dtype=np.float64),
                       attributes=dict(self.attributes))

    def with_normals(self, normals: Optional[np.ndarray]) -> "PointCloud":
        return replace(self, points=self.points.copy(), normals=normals,
                       attributes=dict(self.attributes))

    def with_attribute(self, name: str, values: np.ndarray) -> "PointCloud":
        attributes = dict(self.attributes)
        attributes[name] = np.asarray(values, dtype=np.float64)
        return replace(self, points=self.points.copy(), attributes=attributes)


@dataclass
class TriangleMesh:
    """Indexed triangle surface with per-vertex channels"""

    vertices: np.ndarray
    faces: np.ndarray
    vertex_normals: Optional[np.ndarray] = None
    channels: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise GeometryError("face references an out-of-range vertex")
        if self.vertex_normals is not None:
            self.vertex_normals = np.asarray(self.vertex_normals, dtype=np.float64).reshape(-1, 3)
            if len(self.vertex_normals) != len(self.vertices):
                raise GeometryError("vertex normals and vertices differ in length")
        self.channels = {key: np.asarray(value, dtype=np.float64).reshape(-1)
                         for key, value in self.channels.items()}
        for key, value in self.channels.items():
            if len(value) != len(self.vertices):
                raise GeometryError(f"channel '{key}' and vertices differ in length")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def face_cross(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        return np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_normals(self) -> np.ndarray:
        cross = self.face_cross()
        norm = np.linalg.norm(cross, axis=1, keepdims=True)
        return np.divide(cross, norm, out=np.zeros_like(cross), where=norm > 0)

    def compute_vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals from the face winding"""
        cross = self.face_cross()
        normals = np.zeros_like(self.vertices)
        for corner in range(3):
            np.add.at(normals, self.faces[:, corner], cross)
        norm = np.linalg.norm(normals, axis=1, keepdims=True)
        out = np.divide(normals, norm, out=np.zeros_like(normals), where=norm > 0)
        out[norm[:, 0] == 0] = (0.0, 0.0, 1.0)
        return out

    def edges(self) -> np.ndarray:
        """Directed half-edges (3F, 2) in face order"""
        f = self.faces
        return np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])

    def unique_edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """Undirected edges and the number of faces incident to each"""
        if self.is_empty():
            return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
        edges = np.sort(self.edges(), axis=1)
        unique, counts = np.unique(edges, axis=0, return_counts=True)
        return unique, counts

    def boundary_vertices(self) -> np.ndarray:
        """True where the vertex touches an edge with exactly one incident face"""
        flags = np.zeros(self.n_vertices, dtype=bool)
        edges, counts = self.unique_edges()
        flags[edges[counts == 1].ravel()] = True
        return flags

    def euler_characteristic(self) -> int:
        referenced = np.unique(self.faces)
        edges, _ = self.unique_edges()
        return int(len(referenced) - len(edges) + self.n_faces)

    def adjacency(self):
        """Symmetric vertex adjacency (CSR) from face edges"""
        edges = self.edges()
        n = self.n_vertices
        data = np.ones(len(edges) * 2)
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        adj = coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
        adj.data[:] = 1.0
        return adj

    def face_components(self) -> Tuple[int, np.ndarray]:
        """Connected components of faces joined through shared vertices"""
        if self.is_empty():
            return 0, np.zeros(0, dtype=np.int64)
        n_comp, vertex_labels = connected_components(self.adjacency(), directed=False)
        face_labels = vertex_labels[self.faces[:, 0]]
        # renumber by first face so ordering is deterministic
        _, first = np.unique(face_labels, return_index=True)
        order = np.argsort(first)
        remap = np.full(n_comp, -1, dtype=np.int64)
        remap[np.unique(face_labels)[order]] = np.arange(order.size)
        return int(order.size), remap[face_labels]

    def submesh(self, face_mask) -> "TriangleMesh":
        """Mesh made of the selected faces; unreferenced vertices are dropped"""
        faces = self.faces[np.asarray(face_mask)]
        return TriangleMesh(self.vertices, faces, self.vertex_normals, dict(self.channels)).remove_unreferenced()

    def remove_unreferenced(self) -> "TriangleMesh":
        used = np.zeros(self.n_vertices, dtype=bool)
        used[self.faces.ravel()] = True
        remap = -np.ones(self.n_vertices, dtype=np.int64)
        remap[used] = np.arange(int(used.sum()))
        return TriangleMesh(
            self.vertices[used],
            remap[self.faces] if len(self.faces) else np.zeros((0, 3), dtype=np.int64),
            None if self.vertex_normals is None else self.vertex_normals[used],
            {key: value[used] for key, value in self.channels.items()},
        )

    def with_channel(self, name: str, values: np.ndarray) -> "TriangleMesh":
        channels = dict(self.channels)
        channels[name] = np.asarray(values, dtype=np.float64)
        return TriangleMesh(self.vertices, self.faces, self.vertex_normals, channels)

    def with_normals(self, normals: Optional[np.ndarray]) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.faces, normals, dict(self.channels))

    def as_point_cloud(self) -> PointCloud:
        normals = self.vertex_normals
        if normals is not None:
            normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        return PointCloud(self.vertices.copy(), normals, None, dict(self.channels))

    def mean_edge_length(self) -> float:
        edges, _ = self.unique_edges()
        if len(edges) == 0:
            return 0.0
        return float(np.mean(np.linalg.norm(self.vertices[edges[:, 0]] - self.vertices[edges[:, 1]], axis=1)))


def empty_mesh() -> TriangleMesh:
    return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
