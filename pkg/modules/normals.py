"""
SurfMorph Normals
JET normal estimation and consistent orientation over a geodesically weighted graph
"""

import heapq
import logging
from typing import NamedTuple, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from config.params import OrientParams
from modules import local_fit
from modules.errors import GeometryError
from modules.fields import sample_field_points
from modules.geodesics import heat_geodesics_cloud, knn_graph
from modules.structures import PointCloud, ScalarField

logger = logging.getLogger(__name__)


class OrientationGraph(NamedTuple):
    """Retained k-NN edges (i < j) with reliability weights and seed geodesics"""
    edges: np.ndarray
    weights: np.ndarray
    geodesic: np.ndarray
    seeds: np.ndarray
    component: np.ndarray

    def matrix(self, n: int) -> sparse.csr_matrix:
        """Symmetric weight matrix"""
        i, j = self.edges.T
        w = sparse.coo_matrix((self.weights, (i, j)), shape=(n, n)).tocsr()
        return (w + w.T).tocsr()


def _unit(vectors: np.ndarray) -> np.ndarray:
    return vectors / np.linalg.norm(vectors, axis=1, keepdims=True)


def estimate_normals_jet(cloud: PointCloud, k: int = 12) -> PointCloud:
    """Unoriented normals from local quadratic fits with first-order slope correction"""
    k = int(k)
    if len(cloud) < k + 1:
        raise GeometryError(f"normal estimation needs at least {k + 1} points, got {len(cloud)}")
    points = cloud.points
    nbr = local_fit.neighbourhoods(points, k + 1)
    weights, _ = local_fit.gaussian_weights(nbr)
    neighbours = points[nbr.idx]
    frames = local_fit.pca_frames(neighbours, weights, origin=points)
    fit = local_fit.fit_quadratic(local_fit.to_local(neighbours, frames), weights, offset=True)

    d = np.where(fit.ok, fit.coeffs[:, 3], 0.0)
    e = np.where(fit.ok, fit.coeffs[:, 4], 0.0)
    normals = _unit(frames.n - d[:, None] * frames.t1 - e[:, None] * frames.t2)
    flagged = ~fit.ok
    if flagged.any():
        logger.warning("jet normals: %d degenerate neighbourhoods kept their PCA normal", int(flagged.sum()))
    return cloud.with_normals(normals).with_attribute('normal_flagged', flagged.astype(float))


def _seed_points(points: np.ndarray, component: np.ndarray, seed_vertex: Optional[int]) -> np.ndarray:
    """One seed per component: the point nearest its centroid"""
    n_comp = int(component.max()) + 1
    seeds = np.zeros(n_comp, dtype=np.int64)
    for comp in range(n_comp):
        members = np.flatnonzero(component == comp)
        centroid = points[members].mean(axis=0)
        seeds[comp] = members[np.argmin(np.linalg.norm(points[members] - centroid, axis=1))]
    if seed_vertex is not None:
        if not 0 <= int(seed_vertex) < len(points):
            raise GeometryError(f"seed_vertex {seed_vertex} out of range")
        seeds[component[int(seed_vertex)]] = int(seed_vertex)
    return seeds


def build_orientation_graph(cloud: PointCloud, params: OrientParams) -> OrientationGraph:
    """k-NN graph with misaligned edges dropped and geodesic reliability weights"""
    if cloud.normals is None:
        raise GeometryError("orientation needs normals")
    points, normals = cloud.points, cloud.normals
    knn = knn_graph(points, params.k_neighbors)
    _, component = connected_components(knn, directed=False)
    seeds = _seed_points(points, component, params.seed_vertex)
    geodesic = heat_geodesics_cloud(cloud, seeds, params.heat_time_factor, params.k_neighbors).distance

    upper = sparse.triu(knn, k=1).tocoo()
    i, j = upper.row.astype(np.int64), upper.col.astype(np.int64)
    dots = np.abs(np.einsum('ij,ij->i', normals[i], normals[j]))
    keep = dots >= params.tau
    i, j, dots = i[keep], j[keep], dots[keep]
    if len(i) == 0:
        raise GeometryError(f"orientation graph disconnected at τ={params.tau}")
    length = np.linalg.norm(points[i] - points[j], axis=1)
    spread = np.abs(geodesic[i] - geodesic[j])
    spread = np.where(np.isfinite(spread), spread, 0.0)
    weights = np.exp(-spread / (params.alpha_edge * np.maximum(length, 1e-12))) * dots
    order = np.lexsort((j, i))
    edges = np.stack([i, j], axis=1)[order]
    return OrientationGraph(edges, weights[order], geodesic, seeds, component)


def _spanning_tree_orient(normals: np.ndarray, graph: OrientationGraph) -> int:
    """Orient in place along a maximum-weight spanning forest; returns the flip count"""
    n = len(normals)
    w = graph.matrix(n)
    visited = np.zeros(n, dtype=bool)
    flips = 0
    # roots: the seeds first, then the point nearest its seed in every remaining piece
    by_distance = np.lexsort((np.arange(n), np.where(np.isfinite(graph.geodesic), graph.geodesic, np.inf)))
    roots = list(graph.seeds) + list(by_distance)
    for root in roots:
        if visited[root]:
            continue
        visited[root] = True
        heap = []

        def push(node):
            start, stop = w.indptr[node], w.indptr[node + 1]
            for other, weight in zip(w.indices[start:stop], w.data[start:stop]):
                if not visited[other]:
                    heapq.heappush(heap, (-weight, min(node, other), max(node, other), node, other))

        push(root)
        while heap:
            _, _, _, parent, child = heapq.heappop(heap)
            if visited[child]:
                continue
            visited[child] = True
            if np.dot(normals[parent], normals[child]) < 0:
                normals[child] = -normals[child]
                flips += 1
            push(child)
    return flips


def _sign_voting(normals: np.ndarray, graph: OrientationGraph, iterations: int) -> int:
    """Sequential weighted sign voting; stops early once a sweep flips nothing"""
    w = graph.matrix(len(normals))
    total = 0
    for sweep in range(int(iterations)):
        flips = 0
        for node in range(len(normals)):
            start, stop = w.indptr[node], w.indptr[node + 1]
            if start == stop:
                continue
            others = w.indices[start:stop]
            vote = np.dot(w.data[start:stop], np.sign(normals[others] @ normals[node]))
            if vote < 0:
                normals[node] = -normals[node]
                flips += 1
        total += flips
        logger.debug("sign voting sweep %d: %d flips", sweep + 1, flips)
        if flips == 0:
            break
    return total


def orient_normals_graph(cloud: PointCloud, params: OrientParams,
                         graph: Optional[OrientationGraph] = None) -> PointCloud:
    """Consistent orientation by spanning-tree propagation followed by sign voting"""
    if graph is None:
        graph = build_orientation_graph(cloud, params)
    original = cloud.normals
    normals = original.copy()
    tree_flips = _spanning_tree_orient(normals, graph)
    vote_flips = _sign_voting(normals, graph, params.voting_iterations)
    flipped = np.einsum('ij,ij->i', normals, original) < 0
    logger.info("orientation: %d tree flips, %d voting flips, %d components",
                tree_flips, vote_flips, len(graph.seeds))
    return cloud.with_normals(normals).with_attribute('orientation_flipped', flipped.astype(float))


def edge_consistency(cloud: PointCloud, graph: OrientationGraph) -> float:
    """Fraction of retained edges whose normals agree in sign"""
    i, j = graph.edges.T
    if len(i) == 0:
        return 1.0
    return float(np.mean(np.einsum('ij,ij->i', cloud.normals[i], cloud.normals[j]) > 0))


def smooth_normals_geodesic(cloud: PointCloud, params: OrientParams,
                            graph: Optional[OrientationGraph] = None) -> PointCloud:
    """Blend each normal with the reliability-weighted mean of its neighbours, never flipping it"""
    if params.alpha_smooth >= 1.0:
        return cloud.with_normals(cloud.normals.copy())
    if graph is None:
        graph = build_orientation_graph(cloud, params)
    normals = cloud.normals
    w = graph.matrix(len(normals))
    total = np.asarray(w.sum(axis=1)).ravel()
    averaged = w @ normals
    averaged = np.divide(averaged, total[:, None], out=normals.copy(), where=total[:, None] > 0)
    blended = params.alpha_smooth * normals + (1.0 - params.alpha_smooth) * averaged
    length = np.linalg.norm(blended, axis=1, keepdims=True)
    blended = np.divide(blended, length, out=normals.copy(), where=length > 0)
    reverted = np.einsum('ij,ij->i', blended, normals) <= 0
    blended[reverted] = normals[reverted]
    return cloud.with_normals(_unit(blended))


def orient_normals_sdf(cloud: PointCloud, field: ScalarField, eps_nm: float) -> PointCloud:
    """Flip normals that point toward decreasing signed distance"""
    if cloud.normals is None:
        raise GeometryError("SDF orientation needs normals")
    here, clamped_here = sample_field_points(field, cloud.points)
    ahead, clamped_ahead = sample_field_points(field, cloud.points + eps_nm * cloud.normals)
    flip = ahead < here
    normals = np.where(flip[:, None], -cloud.normals, cloud.normals)
    logger.debug("SDF orientation flipped %d of %d normals", int(flip.sum()), len(cloud))
    return (cloud.with_normals(normals)
            .with_attribute('orientation_flipped', flip.astype(float))
            .with_attribute('sdf_clamped', (clamped_here | clamped_ahead).astype(float)))


def orient_cloud(cloud: PointCloud, params: OrientParams) -> PointCloud:
    """JET normals, graph orientation and geodesic smoothing in one pass"""
    estimated = estimate_normals_jet(cloud, params.k_neighbors)
    graph = build_orientation_graph(estimated, params)
    oriented = orient_normals_graph(estimated, params, graph)
    smoothed = smooth_normals_geodesic(oriented, params, graph)
    logger.info("orientation edge consistency %.4f", edge_consistency(smoothed, graph))
    return smoothed
