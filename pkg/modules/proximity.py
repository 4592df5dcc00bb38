"""
SurfMorph Proximity
Exact closest points on triangle meshes, pruned with a face bounding-sphere index
"""

import logging
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial import cKDTree

from modules.errors import GeometryError
from modules.parallel import chunked_map
from modules.structures import TriangleMesh

logger = logging.getLogger(__name__)

QUERY_CHUNK = 1024
CANDIDATE_FACES = 8


class ClosestPoints(NamedTuple):
    """Per query: distance, closest face, closest point and its barycentric coordinates"""
    distance: np.ndarray
    face: np.ndarray
    point: np.ndarray
    barycentric: np.ndarray


def _dot(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.einsum('ij,ij->i', x, y)


def closest_point_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Closest points of (M, 3) queries on (M, 3) triangles by Voronoi-region classification.

    Returns (points, barycentric) with barycentric weights for (a, b, c).
    """
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = _dot(ab, ap), _dot(ac, ap)
    bp = p - b
    d3, d4 = _dot(ab, bp), _dot(ac, bp)
    cp = p - c
    d5, d6 = _dot(ab, cp), _dot(ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide='ignore', invalid='ignore'):
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom

    n = len(p)
    bary = np.empty((n, 3))
    bary[:] = np.column_stack([1.0 - v_in - w_in, v_in, w_in])
    regions = [
        (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), np.column_stack([np.zeros(n), 1.0 - t_bc, t_bc]),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0), np.column_stack([1.0 - t_ac, np.zeros(n), t_ac]),
        (d6 >= 0) & (d5 <= d6), np.tile([0.0, 0.0, 1.0], (n, 1)),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0), np.column_stack([1.0 - t_ab, t_ab, np.zeros(n)]),
        (d3 >= 0) & (d4 <= d3), np.tile([0.0, 1.0, 0.0], (n, 1)),
        (d1 <= 0) & (d2 <= 0), np.tile([1.0, 0.0, 0.0], (n, 1)),
    ]
    # later entries take precedence, matching the sequential region tests
    for mask, weights in zip(regions[::2], regions[1::2]):
        bary[mask] = weights[mask]
    bad = ~np.all(np.isfinite(bary), axis=1)
    if bad.any():
        # zero-area triangles: best of the three vertices
        corners = np.stack([a[bad], b[bad], c[bad]], axis=1)
        nearest = np.argmin(np.linalg.norm(corners - p[bad][:, None], axis=2), axis=1)
        bary[bad] = np.eye(3)[nearest]
    points = bary[:, :1] * a + bary[:, 1:2] * b + bary[:, 2:] * c
    return points, bary


class MeshProximity:
    """Closest-point queries against a fixed triangle mesh"""

    def __init__(self, mesh: TriangleMesh):
        if mesh.is_empty():
            raise GeometryError("closest-point queries need a non-empty mesh")
        self.mesh = mesh
        self.corners = mesh.vertices[mesh.faces]
        self.centres = self.corners.mean(axis=1)
        self.radii = np.linalg.norm(self.corners - self.centres[:, None], axis=2).max(axis=1)
        self.max_radius = float(self.radii.max())
        self.tree = cKDTree(self.centres)

    def _exact(self, points: np.ndarray, faces: np.ndarray):
        tri = self.corners[faces]
        closest, bary = closest_point_on_triangles(points, tri[:, 0], tri[:, 1], tri[:, 2])
        return np.linalg.norm(points - closest, axis=1), closest, bary

    def _query_chunk(self, points: np.ndarray):
        n = len(points)
        k = min(CANDIDATE_FACES, self.mesh.n_faces)
        _, near = self.tree.query(points, k=k)
        near = near.reshape(n, k)
        bound, _, _ = self._exact(np.repeat(points, k, axis=0), near.ravel())
        bound = bound.reshape(n, k).min(axis=1)
        # any closer face has its centre within bound + its bounding radius
        candidates = self.tree.query_ball_point(points, bound + self.max_radius)
        counts = np.fromiter((len(c) for c in candidates), dtype=np.int64, count=n)
        query = np.repeat(np.arange(n), counts)
        faces = np.fromiter((f for c in candidates for f in c), dtype=np.int64, count=int(counts.sum()))
        dist, closest, bary = self._exact(points[query], faces)
        order = np.lexsort((faces, dist, query))
        first = order[np.r_[0, np.flatnonzero(np.diff(query[order])) + 1]]
        return dist[first], faces[first], closest[first], bary[first]

    def query(self, points: np.ndarray, threads: Optional[int] = None) -> ClosestPoints:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(points) == 0:
            raise GeometryError("empty query set")
        parts = chunked_map(lambda s, e: self._query_chunk(points[s:e]), len(points), threads, QUERY_CHUNK)
        return ClosestPoints(*(np.concatenate(column) for column in zip(*parts)))

    def interpolate(self, result: ClosestPoints, values: np.ndarray) -> np.ndarray:
        """Barycentric interpolation of per-vertex values at the closest points"""
        corner_values = values[self.mesh.faces[result.face]]
        if corner_values.ndim == 2:
            return np.einsum('ij,ij->i', result.barycentric, corner_values)
        return np.einsum('ij,ijk->ik', result.barycentric, corner_values)


def closest_points(mesh: TriangleMesh, points: np.ndarray, threads: Optional[int] = None) -> ClosestPoints:
    return MeshProximity(mesh).query(points, threads)
