"""
SurfMorph Metrics
Point-to-mesh distances, multi-scale Monge curvature and surface area
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from config.params import CurvatureParams
from modules import local_fit
from modules.errors import GeometryError
from modules.geodesics import heat_geodesics_mesh
from modules.parallel import chunked_map
from modules.proximity import MeshProximity
from modules.structures import PointCloud, TriangleMesh

logger = logging.getLogger(__name__)

DISTANCE_PERCENTILES = (5, 25, 50, 75, 95)
MIN_FIT_NEIGHBOURS = 5
CURVATURE_CHUNK = 256


@dataclass
class DistanceReport:
    """Per-query distances to a target mesh with summary statistics"""

    distances: np.ndarray
    positions: np.ndarray
    source: str = 'source'
    target: str = 'target'

    @property
    def mean(self) -> float:
        return float(np.mean(self.distances))

    @property
    def std(self) -> float:
        return float(np.std(self.distances))

    @property
    def min(self) -> float:
        return float(np.min(self.distances))

    @property
    def max(self) -> float:
        return float(np.max(self.distances))

    def summary(self) -> Dict:
        percentiles = np.percentile(self.distances, DISTANCE_PERCENTILES)
        return {
            'source': self.source,
            'target': self.target,
            'count': int(len(self.distances)),
            'mean_nm': self.mean,
            'std_nm': self.std,
            'min_nm': self.min,
            'max_nm': self.max,
            'percentiles_nm': {f"p{p}": float(v) for p, v in zip(DISTANCE_PERCENTILES, percentiles)},
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'vertex_id': np.arange(len(self.distances)),
            'x': self.positions[:, 0],
            'y': self.positions[:, 1],
            'z': self.positions[:, 2],
            'd': self.distances,
        })


def _query_points(queries: Union[np.ndarray, PointCloud, TriangleMesh]) -> np.ndarray:
    if isinstance(queries, TriangleMesh):
        return queries.vertices
    if isinstance(queries, PointCloud):
        return queries.points
    return np.asarray(queries, dtype=np.float64).reshape(-1, 3)


def point_to_mesh_distance(queries, target: TriangleMesh, source_name: str = 'source',
                           target_name: str = 'target', threads: Optional[int] = None) -> DistanceReport:
    """Exact Euclidean distance from every query to the closest point of the target surface"""
    points = _query_points(queries)
    if len(points) == 0:
        raise GeometryError("empty query set")
    result = MeshProximity(target).query(points, threads)
    report = DistanceReport(result.distance, points.copy(), source_name, target_name)
    logger.info("distance %s -> %s: mean %.3f nm, sd %.3f nm over %d vertices",
                source_name, target_name, report.mean, report.std, len(points))
    return report


def surface_area(mesh: TriangleMesh) -> float:
    if mesh.is_empty():
        return 0.0
    return float(mesh.face_areas().sum())


def face_curvature(mesh: TriangleMesh, values: np.ndarray) -> np.ndarray:
    """Per-face value as the mean of its vertex values (NaN if any vertex is NaN)"""
    return np.asarray(values, dtype=np.float64)[mesh.faces].mean(axis=1)


# ---------------------------------------------------------------- curvature

def select_stable_radius(h_per_radius: Sequence[float], params: CurvatureParams) -> Tuple[float, int]:
    """Smallest radius whose estimate agrees with the previous radius; else the largest finite one.

    Returns (nan, -1) when no estimate is finite.
    """
    radii = list(params.radii_nm)
    h = np.asarray(h_per_radius, dtype=np.float64)
    if len(h) != len(radii):
        raise GeometryError("curvature estimates and radii differ in length")
    for s in range(1, len(h)):
        prev, cur = h[s - 1], h[s]
        if not (np.isfinite(prev) and np.isfinite(cur)):
            continue
        scale = max(abs(cur), abs(prev), params.epsilon)
        if abs(cur - prev) <= max(params.delta_rel * scale, params.delta_abs):
            return float(radii[s]), s
    finite = np.flatnonzero(np.isfinite(h))
    if len(finite) == 0:
        return float('nan'), -1
    return float(radii[finite[-1]]), int(finite[-1])


@dataclass
class CurvatureReport:
    """Per-vertex curvature at the selected radius; NaN where excluded"""

    H: np.ndarray
    K: np.ndarray
    r_used: np.ndarray
    confidence: np.ndarray
    boundary_excluded: np.ndarray
    low_confidence: np.ndarray
    n_neighbors: np.ndarray
    positions: np.ndarray
    radii: Sequence[float] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'vertex_id': np.arange(len(self.H)),
            'x': self.positions[:, 0],
            'y': self.positions[:, 1],
            'z': self.positions[:, 2],
            'H': self.H,
            'K': self.K,
            'r_used': self.r_used,
            'confidence': self.confidence,
            'boundary': self.boundary_excluded.astype(int),
            'low_confidence': self.low_confidence.astype(int),
        })

    def summary(self) -> Dict:
        finite = np.isfinite(self.H)
        stats = {}
        for name, values in (('H', self.H), ('K', self.K)):
            v = values[finite]
            stats[name] = {
                'mean': float(v.mean()) if v.size else None,
                'std': float(v.std()) if v.size else None,
                'min': float(v.min()) if v.size else None,
                'max': float(v.max()) if v.size else None,
            }
        used, counts = np.unique(self.r_used[finite], return_counts=True)
        return {
            'vertices': int(len(self.H)),
            'estimated': int(finite.sum()),
            'boundary_excluded': int(self.boundary_excluded.sum()),
            'low_confidence': int(self.low_confidence.sum()),
            'radii_nm': [float(r) for r in self.radii],
            'radius_usage': {f"{r:g}": int(c) for r, c in zip(used, counts)},
            'mean_confidence': float(self.confidence[finite].mean()) if finite.any() else None,
            **stats,
        }

    def apply_to(self, mesh: TriangleMesh) -> TriangleMesh:
        """Mesh carrying H, K, r_used and confidence vertex channels"""
        out = mesh
        for name in ('H', 'K', 'r_used', 'confidence'):
            out = out.with_channel(name, getattr(self, name))
        return out


def _patch(mesh: TriangleMesh, centre: int, members: np.ndarray) -> Tuple[TriangleMesh, np.ndarray, int]:
    """Faces with all corners among members, reindexed; returns (patch, global ids, local centre)"""
    inside = np.zeros(mesh.n_vertices, dtype=bool)
    inside[members] = True
    faces = mesh.faces[inside[mesh.faces].all(axis=1)]
    ids = np.unique(np.concatenate([faces.ravel(), [centre]]))
    remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
    remap[ids] = np.arange(len(ids))
    return TriangleMesh(mesh.vertices[ids], remap[faces]), ids, int(remap[centre])


def _vertex_curvature(mesh: TriangleMesh, normals: np.ndarray, tree: cKDTree, vertex: int,
                      params: CurvatureParams):
    """(H, K, residual, neighbour count) per radius for one interior vertex"""
    radii = np.asarray(params.radii_nm, dtype=np.float64)
    n_r = len(radii)
    h = np.full(n_r, np.nan)
    k = np.full(n_r, np.nan)
    res = np.full(n_r, np.nan)
    count = np.zeros(n_r, dtype=np.int64)

    # geodesic balls lie inside the Euclidean ball of the same radius
    members = np.asarray(tree.query_ball_point(mesh.vertices[vertex], radii[-1]), dtype=np.int64)
    patch, ids, centre = _patch(mesh, vertex, members)
    if patch.is_empty():
        return h, k, res, count
    geodesic = heat_geodesics_mesh(patch, [centre]).distance

    frame = local_fit.frames_from_normals(mesh.vertices[vertex][None], normals[vertex][None])
    local = local_fit.to_local(mesh.vertices[ids][None], frame)[0]
    within = geodesic[None, :] <= radii[:, None]
    count = within.sum(axis=1)
    sigma = radii / 2.0
    finite_d = np.where(np.isfinite(geodesic), geodesic, 0.0)
    weights = np.where(within, np.exp(-0.5 * (finite_d[None, :] / sigma[:, None]) ** 2), 0.0)
    fit = local_fit.fit_quadratic(np.broadcast_to(local, (n_r,) + local.shape), weights, offset=False)
    usable = fit.ok & (count >= MIN_FIT_NEIGHBOURS)
    a, b, c = fit.coeffs[:, 0], fit.coeffs[:, 1], fit.coeffs[:, 2]
    h = np.where(usable, -(a + c), np.nan)
    k = np.where(usable, 4.0 * a * c - b ** 2, np.nan)
    res = np.where(usable, fit.residual, np.nan)
    return h, k, res, count


def curvature_monge(mesh: TriangleMesh, params: CurvatureParams, threads: Optional[int] = None) -> CurvatureReport:
    """Signed mean and Gaussian curvature per interior vertex with stability-selected radii.

    Positive H means the surface bends away from the side its normals point to
    (a sphere with outward normals has H = 1/R).
    """
    if mesh.vertex_normals is None:
        raise GeometryError("curvature needs oriented vertex normals")
    if mesh.is_empty():
        raise GeometryError("curvature needs a non-empty mesh")
    params.validate()
    normals = mesh.vertex_normals / np.linalg.norm(mesh.vertex_normals, axis=1, keepdims=True)
    n = mesh.n_vertices
    boundary = mesh.boundary_vertices()
    referenced = np.zeros(n, dtype=bool)
    referenced[mesh.faces.ravel()] = True
    interior = np.flatnonzero(referenced & ~boundary)
    tree = cKDTree(mesh.vertices)
    radii = list(params.radii_nm)

    def run(start: int, stop: int):
        rows = []
        for vertex in interior[start:stop]:
            rows.append(_vertex_curvature(mesh, normals, tree, int(vertex), params))
        return rows

    per_vertex = [row for chunk in chunked_map(run, len(interior), threads, CURVATURE_CHUNK) for row in chunk]

    H = np.full(n, np.nan)
    K = np.full(n, np.nan)
    r_used = np.full(n, np.nan)
    confidence = np.zeros(n)
    low = np.zeros(n, dtype=bool)
    n_neighbors = np.zeros(n, dtype=np.int64)
    for vertex, (h, k, res, count) in zip(interior, per_vertex):
        n_neighbors[vertex] = count[-1]
        low[vertex] = count[-1] < params.min_neighbors
        if low[vertex]:
            # sparse patch: fall back to the largest finite fit
            finite = np.flatnonzero(np.isfinite(h))
            index = int(finite[-1]) if len(finite) else -1
            radius = float(radii[index]) if index >= 0 else float('nan')
        else:
            radius, index = select_stable_radius(h, params)
        if index < 0:
            low[vertex] = True
            continue
        H[vertex], K[vertex], r_used[vertex] = h[index], k[index], radius
        fit_term = 1.0 - res[index] / (params.delta_abs + abs(h[index]) * radius)
        support = min(1.0, count[index] / (3.0 * params.min_neighbors))
        confidence[vertex] = float(np.clip(fit_term, 0.0, 1.0)) * support

    if low.any():
        logger.warning("curvature: %d vertices with low confidence", int(low.sum()))
    logger.info("curvature: %d interior vertices, %d boundary excluded", len(interior), int(boundary.sum()))
    return CurvatureReport(H, K, r_used, confidence, boundary | ~referenced, low, n_neighbors,
                           mesh.vertices.copy(), radii)
