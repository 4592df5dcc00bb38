"""
SurfMorph Partition
Split a membrane isosurface into inner and outer leaflets
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from modules.errors import GeometryError, GridMismatchError
from modules.proximity import MeshProximity
from modules.structures import ScalarField, TriangleMesh

logger = logging.getLogger(__name__)

# side values this close to zero (relative to the mean edge length) count as on the proxy
SIDE_TOLERANCE = 1e-9

INNER, OUTER = 0, 1


@dataclass
class LeafletPair:
    """Inner and outer leaflets of one isosurface"""

    inner: TriangleMesh
    outer: TriangleMesh
    method: str
    components: Dict[str, int]
    cut_curves: List[np.ndarray] = field(default_factory=list)
    cut_length_nm: float = 0.0
    ambiguous_faces: int = 0

    def summary(self) -> Dict:
        return {
            'method': self.method,
            'components': dict(self.components),
            'inner_faces': int(self.inner.n_faces),
            'outer_faces': int(self.outer.n_faces),
            'cut_curves': len(self.cut_curves),
            'cut_length_nm': float(self.cut_length_nm),
            'ambiguous_faces': int(self.ambiguous_faces),
        }


def proxy_side(vertices: np.ndarray, proxy: TriangleMesh) -> np.ndarray:
    """Signed offset <v - q, n_q> from the closest proxy point along its interpolated normal"""
    normals = proxy.vertex_normals if proxy.vertex_normals is not None else proxy.compute_vertex_normals()
    index = MeshProximity(proxy)
    closest = index.query(vertices)
    n_q = index.interpolate(closest, normals)
    length = np.linalg.norm(n_q, axis=1, keepdims=True)
    n_q = np.divide(n_q, length, out=proxy.face_normals()[closest.face], where=length > 0)
    return np.einsum('ij,ij->i', vertices - closest.point, n_q)


def _check_frame(iso: TriangleMesh, sdf: Optional[ScalarField]):
    if sdf is None:
        return
    lo = sdf.origin - sdf.spacing
    hi = sdf.origin + np.asarray(sdf.dims) * sdf.spacing
    if np.any((iso.vertices < lo) | (iso.vertices > hi)):
        raise GridMismatchError("frame mismatch: isosurface extends beyond the SDF grid")


def _labelled(mesh: TriangleMesh, leaflet: int, cut: np.ndarray) -> TriangleMesh:
    return (mesh.with_channel('cut', cut.astype(float))
            .with_channel('leaflet', np.full(mesh.n_vertices, float(leaflet))))


def _split_by_connectivity(iso: TriangleMesh, side: np.ndarray) -> LeafletPair:
    _, labels = iso.face_components()
    face_side = side[iso.faces].mean(axis=1)
    means = [face_side[labels == comp].mean() for comp in (0, 1)]
    inner_comp = int(np.argmin(means))
    inner = iso.submesh(labels == inner_comp)
    outer = iso.submesh(labels != inner_comp)
    return LeafletPair(_labelled(inner, INNER, np.zeros(inner.n_vertices)),
                       _labelled(outer, OUTER, np.zeros(outer.n_vertices)),
                       'connectivity', {'inner': 1, 'outer': 1})


def _interpolate_rows(values: Optional[np.ndarray], a: np.ndarray, b: np.ndarray, t: np.ndarray):
    if values is None:
        return None
    t = t.reshape((-1,) + (1,) * (values.ndim - 1))
    return (1.0 - t) * values[a] + t * values[b]


def _cut_mesh(iso: TriangleMesh, side: np.ndarray):
    """Insert zero-crossing vertices on sign-changing edges and retriangulate crossed faces.

    Returns (mesh, cut flag per vertex, leaflet per face, curve segments, ambiguous face count).
    """
    faces = iso.faces
    edges = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    edges = np.unique(edges, axis=0)
    crossing = edges[np.sign(side[edges[:, 0]]) * np.sign(side[edges[:, 1]]) < 0]
    n = iso.n_vertices
    t = side[crossing[:, 0]] / (side[crossing[:, 0]] - side[crossing[:, 1]])
    new_ids = n + np.arange(len(crossing))
    lookup = {(int(a), int(b)): int(k) for (a, b), k in zip(crossing, new_ids)}

    vertices = np.vstack([iso.vertices, _interpolate_rows(iso.vertices, crossing[:, 0], crossing[:, 1], t)])
    normals = None
    if iso.vertex_normals is not None:
        normals = np.vstack([iso.vertex_normals,
                             _interpolate_rows(iso.vertex_normals, crossing[:, 0], crossing[:, 1], t)])
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    channels = {key: np.concatenate([value, _interpolate_rows(value, crossing[:, 0], crossing[:, 1], t)])
                for key, value in iso.channels.items()}
    new_side = np.concatenate([side, np.zeros(len(crossing))])
    cut = np.zeros(len(vertices), dtype=bool)
    cut[n:] = True

    def mid(a, b):
        return lookup[(min(a, b), max(a, b))]

    sign = np.sign(side)
    out_faces, segments = [], []
    for face in faces:
        s = sign[face]
        if not ((s > 0).any() and (s < 0).any()):
            out_faces.append(tuple(face))
            continue
        zeros = np.flatnonzero(s == 0)
        if len(zeros) == 1:
            # rotate so the on-proxy vertex comes first
            r = int(zeros[0])
            a, b, c = face[r], face[(r + 1) % 3], face[(r + 2) % 3]
            m = mid(b, c)
            out_faces += [(a, b, m), (a, m, c)]
            cut[a] = True
            segments.append((a, m))
            continue
        # the vertex whose sign differs from the other two goes first
        odd = int(np.flatnonzero(s != np.sign(s.sum()))[0]) if s.sum() != 0 else 0
        a, b, c = face[odd], face[(odd + 1) % 3], face[(odd + 2) % 3]
        m_ab, m_ac = mid(a, b), mid(a, c)
        out_faces += [(a, m_ab, m_ac), (m_ab, b, c), (m_ab, c, m_ac)]
        segments.append((m_ab, m_ac))

    mesh = TriangleMesh(vertices, np.asarray(out_faces, dtype=np.int64).reshape(-1, 3), normals, channels)
    face_values = new_side[mesh.faces]
    positive = (face_values > 0).sum(axis=1)
    negative = (face_values < 0).sum(axis=1)
    face_side = np.where(positive > negative, OUTER, INNER)
    # faces lying entirely on the proxy, or touching it tangentially from both sides
    ambiguous = positive == negative
    if ambiguous.any():
        raw = np.concatenate([side, np.zeros(len(crossing))])[mesh.faces].sum(axis=1)
        face_side[ambiguous] = np.where(raw[ambiguous] > 0, OUTER, INNER)
    return mesh, cut, face_side, np.asarray(segments, dtype=np.int64).reshape(-1, 2), int(ambiguous.sum())


def chain_segments(vertices: np.ndarray, segments: np.ndarray) -> List[np.ndarray]:
    """Chain curve segments into polylines (closed loops repeat their first point)"""
    if len(segments) == 0:
        return []
    ids, local = np.unique(segments, return_inverse=True)
    local = local.reshape(-1, 2)
    m = len(ids)
    graph = sparse.coo_matrix((np.ones(len(local)), (local[:, 0], local[:, 1])), shape=(m, m)).tocsr()
    graph = ((graph + graph.T) > 0).tocsr()
    n_curves, labels = connected_components(graph, directed=False)
    degree = np.asarray(graph.sum(axis=1)).ravel()
    curves = []
    for curve in range(n_curves):
        members = np.flatnonzero(labels == curve)
        ends = members[degree[members] == 1]
        start = int(ends.min()) if len(ends) else int(members.min())
        order, previous, current = [start], -1, start
        while True:
            nxt = [int(x) for x in graph.indices[graph.indptr[current]:graph.indptr[current + 1]]
                   if x != previous and x not in order[1:]]
            if not nxt:
                break
            previous, current = current, min(nxt)
            if current == start:
                order.append(current)
                break
            order.append(current)
        curves.append(vertices[ids[order]])
    return curves


def split_isosurface(iso: TriangleMesh, proxy: TriangleMesh, sdf: Optional[ScalarField] = None) -> LeafletPair:
    """Inner and outer leaflets, by connectivity for two-piece surfaces, else by cutting along the proxy"""
    if iso.is_empty() or proxy.is_empty():
        raise GeometryError("partition needs non-empty isosurface and proxy meshes")
    _check_frame(iso, sdf)
    side = proxy_side(iso.vertices, proxy)
    n_components, _ = iso.face_components()
    if n_components == 2:
        pair = _split_by_connectivity(iso, side)
        logger.info("partition by connectivity")
        return pair

    tolerance = SIDE_TOLERANCE * max(iso.mean_edge_length(), 1e-12)
    side = np.where(np.abs(side) <= tolerance, 0.0, side)
    mesh, cut, face_side, segments, ambiguous = _cut_mesh(iso, side)
    inner_faces, outer_faces = face_side == INNER, face_side == OUTER
    if not inner_faces.any() or not outer_faces.any():
        raise GeometryError("cannot partition: no intersection curve between isosurface and proxy")
    if ambiguous:
        logger.warning("partition: %d faces resolved by side vote", ambiguous)

    curves = chain_segments(mesh.vertices, segments)
    length = float(np.linalg.norm(mesh.vertices[segments[:, 0]] - mesh.vertices[segments[:, 1]], axis=1).sum()) \
        if len(segments) else 0.0
    flagged = mesh.with_channel('cut', cut.astype(float))
    inner = flagged.submesh(inner_faces)
    outer = flagged.submesh(outer_faces)
    inner = inner.with_channel('leaflet', np.full(inner.n_vertices, float(INNER)))
    outer = outer.with_channel('leaflet', np.full(outer.n_vertices, float(OUTER)))
    components = {'inner': inner.face_components()[0], 'outer': outer.face_components()[0]}
    logger.info("partition by proxy: %d curves, %.2f nm cut, components %s", len(curves), length, components)
    return LeafletPair(inner, outer, 'proxy-split', components, curves, length, ambiguous)
