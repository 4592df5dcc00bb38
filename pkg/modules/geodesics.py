"""
SurfMorph Geodesics
Heat-method geodesic distances on triangle meshes and point clouds, with a Dijkstra fallback
"""

import logging
from typing import NamedTuple, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree

from modules import local_fit
from modules.errors import GeometryError
from modules.structures import PointCloud, TriangleMesh

logger = logging.getLogger(__name__)

# relative diagonal shift that pins the null space of the Poisson step
POISSON_SHIFT = 1e-10


class GeodesicResult(NamedTuple):
    distance: np.ndarray
    fallback: bool


def cotangents(mesh: TriangleMesh) -> np.ndarray:
    """Cotangent of the interior angle at each face corner, (F, 3); degenerate corners give 0"""
    p = mesh.vertices[mesh.faces]
    cots = np.zeros((mesh.n_faces, 3))
    for corner in range(3):
        a = p[:, (corner + 1) % 3] - p[:, corner]
        b = p[:, (corner + 2) % 3] - p[:, corner]
        cross = np.linalg.norm(np.cross(a, b), axis=1)
        with np.errstate(divide='ignore', invalid='ignore'):
            cots[:, corner] = np.einsum('ij,ij->i', a, b) / cross
    cots[~np.isfinite(cots)] = 0.0
    return cots


def mesh_laplacian(mesh: TriangleMesh) -> Tuple[sparse.csr_matrix, np.ndarray]:
    """Cotangent stiffness W - V (negative semi-definite) and lumped vertex areas"""
    n = mesh.n_vertices
    f = mesh.faces
    cots = cotangents(mesh)
    rows, cols, vals = [], [], []
    for corner in range(3):
        i, j = f[:, (corner + 1) % 3], f[:, (corner + 2) % 3]
        rows += [i, j]
        cols += [j, i]
        vals += [0.5 * cots[:, corner]] * 2
    weights = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                shape=(n, n)).tocsr()
    degree = np.asarray(weights.sum(axis=1)).ravel()
    laplacian = (weights - sparse.diags(degree)).tocsr()
    mass = np.zeros(n)
    areas = mesh.face_areas() / 3.0
    for corner in range(3):
        np.add.at(mass, f[:, corner], areas)
    return laplacian, mass


def _face_gradient(mesh: TriangleMesh, u: np.ndarray) -> np.ndarray:
    """Piecewise-linear gradient of vertex values, one vector per face"""
    p = mesh.vertices[mesh.faces]
    cross = mesh.face_cross()
    double_area = np.linalg.norm(cross, axis=1)
    normal = np.divide(cross, double_area[:, None], out=np.zeros_like(cross), where=double_area[:, None] > 0)
    grad = np.zeros_like(cross)
    for corner in range(3):
        opposite = p[:, (corner + 2) % 3] - p[:, (corner + 1) % 3]
        grad += u[mesh.faces[:, corner]][:, None] * np.cross(normal, opposite)
    return np.divide(grad, double_area[:, None], out=np.zeros_like(grad), where=double_area[:, None] > 0)


def _vertex_divergence(mesh: TriangleMesh, field: np.ndarray, cots: np.ndarray) -> np.ndarray:
    """Integrated divergence of a per-face vector field at each vertex"""
    p = mesh.vertices[mesh.faces]
    div = np.zeros(mesh.n_vertices)
    for corner in range(3):
        j, k = (corner + 1) % 3, (corner + 2) % 3
        e_ij = p[:, j] - p[:, corner]
        e_ik = p[:, k] - p[:, corner]
        contrib = 0.5 * (cots[:, k] * np.einsum('ij,ij->i', e_ij, field)
                         + cots[:, j] * np.einsum('ij,ij->i', e_ik, field))
        np.add.at(div, mesh.faces[:, corner], contrib)
    return div


def _solve(matrix: sparse.spmatrix, rhs: np.ndarray) -> np.ndarray:
    solution = splu(sparse.csc_matrix(matrix)).solve(rhs)
    if not np.all(np.isfinite(solution)):
        raise RuntimeError("non-finite solution")
    return solution


def _source_indices(sources: Union[int, Sequence[int]], n: int) -> np.ndarray:
    idx = np.unique(np.atleast_1d(np.asarray(sources, dtype=np.int64)))
    if idx.size == 0 or idx.min() < 0 or idx.max() >= n:
        raise GeometryError("geodesic sources out of range")
    return idx


def _finalise(phi: np.ndarray, component: np.ndarray, sources: np.ndarray) -> np.ndarray:
    """Shift each source-bearing component so its sources sit at 0; others become +inf"""
    out = np.full(len(phi), np.inf)
    for comp in np.unique(component[sources]):
        members = component == comp
        own = sources[component[sources] == comp]
        out[members] = phi[members] - phi[own].min()
    return np.maximum(out, 0.0)


def _mesh_heat(mesh: TriangleMesh, sources: np.ndarray, time_factor: float) -> np.ndarray:
    laplacian, mass = mesh_laplacian(mesh)
    n = mesh.n_vertices
    used = mass > 0
    t = time_factor * mesh.mean_edge_length() ** 2
    heat = sparse.diags(mass) - t * laplacian
    delta = np.zeros(n)
    delta[sources] = 1.0
    # isolated vertices carry an identity row
    heat = (heat + sparse.diags((~used).astype(float))).tocsr()
    u = _solve(heat, delta)

    boundary = mesh.boundary_vertices()
    boundary[sources] = False
    if boundary.any():
        # average with the zero-Dirichlet solution near open boundaries
        free = np.flatnonzero(~boundary)
        u_dirichlet = np.zeros(n)
        u_dirichlet[free] = _solve(heat[free][:, free], delta[free])
        u = 0.5 * (u + u_dirichlet)

    grad = _face_gradient(mesh, u)
    norm = np.linalg.norm(grad, axis=1, keepdims=True)
    field = np.divide(-grad, norm, out=np.zeros_like(grad), where=norm > 0)
    cots = cotangents(mesh)
    div = _vertex_divergence(mesh, field, cots)
    shift = POISSON_SHIFT * max(float(mass[used].mean()), 1e-12)
    poisson = -laplacian + sparse.diags(np.where(used, shift * np.maximum(mass, 1e-12), 1.0))
    return _solve(poisson, -div)


def heat_geodesics_mesh(mesh: TriangleMesh, sources, time_factor: float = 1.0) -> GeodesicResult:
    """Heat-method distances over a triangle mesh from the source vertices"""
    if mesh.is_empty():
        raise GeometryError("geodesics need a non-empty mesh")
    sources = _source_indices(sources, mesh.n_vertices)
    _, component = connected_components(mesh.adjacency(), directed=False)
    try:
        phi = _mesh_heat(mesh, sources, time_factor)
        return GeodesicResult(_finalise(phi, component, sources), False)
    except RuntimeError as exc:
        logger.warning("heat geodesics failed (%s); using graph Dijkstra distances", exc)
        return GeodesicResult(dijkstra_distances(mesh_edge_graph(mesh), sources), True)


def knn_graph(points: np.ndarray, k: int) -> sparse.csr_matrix:
    """Symmetric k-NN graph with Euclidean edge lengths"""
    k = min(int(k), len(points) - 1)
    if k < 1:
        raise GeometryError("k-NN graph needs at least two points")
    dist, idx = cKDTree(points).query(points, k=k + 1)
    n = len(points)
    rows = np.repeat(np.arange(n), k)
    graph = sparse.coo_matrix((dist[:, 1:].ravel(), (rows, idx[:, 1:].ravel())), shape=(n, n)).tocsr()
    return graph.maximum(graph.T).tocsr()


def mesh_edge_graph(mesh: TriangleMesh) -> sparse.csr_matrix:
    edges, _ = mesh.unique_edges()
    n = mesh.n_vertices
    length = np.linalg.norm(mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1)
    graph = sparse.coo_matrix((length, (edges[:, 0], edges[:, 1])), shape=(n, n)).tocsr()
    return graph.maximum(graph.T).tocsr()


def dijkstra_distances(graph: sparse.csr_matrix, sources) -> np.ndarray:
    """Shortest-path distances to the nearest source"""
    return dijkstra(graph, directed=False, indices=np.atleast_1d(sources), min_only=True)


def _cloud_heat(points: np.ndarray, graph: sparse.csr_matrix, sources: np.ndarray,
                time_factor: float, k: int) -> np.ndarray:
    n = len(points)
    coo = graph.tocoo()
    mean_edge = float(coo.data.mean())
    weights_data = np.exp(-(coo.data / mean_edge) ** 2)
    weights = sparse.coo_matrix((weights_data, (coo.row, coo.col)), shape=(n, n)).tocsr()
    degree = np.asarray(weights.sum(axis=1)).ravel()
    laplacian = sparse.diags(degree) - weights

    delta = np.zeros(n)
    delta[sources] = 1.0
    # heat step with t = factor * h^2 against the graph Laplacian in 1/nm^2
    t = time_factor * mean_edge ** 2
    u = _solve(sparse.identity(n) + t * (laplacian / mean_edge ** 2), delta)

    # tangent-plane least-squares gradient of u at every point
    nbr = local_fit.neighbourhoods(points, k + 1)
    frame_w, _ = local_fit.gaussian_weights(nbr)
    frames = local_fit.pca_frames(points[nbr.idx], frame_w, origin=points)
    local = local_fit.to_local(points[nbr.idx], frames)[..., :2]
    du = u[nbr.idx] - u[:, None]
    lhs = np.einsum('nk,nki,nkj->nij', frame_w, local, local) + 1e-12 * np.eye(2)
    rhs = np.einsum('nk,nki,nk->ni', frame_w, local, du)
    g2 = np.linalg.solve(lhs, rhs[..., None])[..., 0]
    grad = g2[:, :1] * frames.t1 + g2[:, 1:] * frames.t2
    norm = np.linalg.norm(grad, axis=1, keepdims=True)
    field = np.divide(-grad, norm, out=np.zeros_like(grad), where=norm > 0)

    # integrate the unit field along graph edges in the least-squares sense
    rel = points[coo.col] - points[coo.row]
    one_form = 0.5 * np.einsum('ij,ij->i', field[coo.row] + field[coo.col], rel)
    rhs = -np.bincount(coo.row, weights=weights_data * one_form, minlength=n)
    shift = POISSON_SHIFT * max(float(degree.mean()), 1e-12)
    return _solve(laplacian + shift * sparse.identity(n), rhs)


def heat_geodesics_cloud(cloud: PointCloud, sources, time_factor: float = 1.0, k_neighbors: int = 12) -> GeodesicResult:
    """Heat-method distances over the symmetric k-NN graph of a point cloud"""
    points = cloud.points
    sources = _source_indices(sources, len(points))
    graph = knn_graph(points, k_neighbors)
    _, component = connected_components(graph, directed=False)
    try:
        phi = _cloud_heat(points, graph, sources, time_factor, min(int(k_neighbors), len(points) - 1))
        return GeodesicResult(_finalise(phi, component, sources), False)
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        logger.warning("heat geodesics failed (%s); using graph Dijkstra distances", exc)
        return GeodesicResult(dijkstra_distances(graph, sources), True)


def heat_geodesics(domain: Union[PointCloud, TriangleMesh], sources, time_factor: float = 1.0,
                   k_neighbors: int = 12) -> GeodesicResult:
    """Approximate geodesic distance from the sources; +inf on unreachable components"""
    if isinstance(domain, TriangleMesh):
        return heat_geodesics_mesh(domain, sources, time_factor)
    return heat_geodesics_cloud(domain, sources, time_factor, k_neighbors)
