"""
SurfMorph Ball Pivoting
Multi-radius ball-pivoting reconstruction of oriented point clouds
"""

import logging
from collections import deque
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from config.params import MeshParams
from modules.errors import GeometryError, MeshingError
from modules.structures import PointCloud, TriangleMesh

logger = logging.getLogger(__name__)

EMPTY_BALL_TOLERANCE = 1e-7
ANGLE_TOLERANCE = 1e-9
# co-circular candidates within this angle are hit together
TIE_TOLERANCE = 1e-6
TWO_PI = 2.0 * np.pi


def auto_radii(cloud: PointCloud, multipliers: Sequence[float]) -> List[float]:
    """Scan radii as multiples of the median nearest-neighbour spacing"""
    if len(cloud) < 2:
        raise GeometryError("radius scan needs at least two points")
    dist, _ = cKDTree(cloud.points).query(cloud.points, k=2)
    spacing = float(np.median(dist[:, 1]))
    if spacing <= 0:
        raise GeometryError("duplicate points: median spacing is zero")
    return sorted(float(m) * spacing for m in multipliers)


def resolve_radii(cloud: PointCloud, params: MeshParams) -> List[float]:
    if isinstance(params.radii_nm, str):
        return auto_radii(cloud, params.radius_multipliers)
    return sorted(float(r) for r in params.radii_nm)


def _ball_centres(a: np.ndarray, b: np.ndarray, c: np.ndarray, radius: float):
    """Centres of radius balls touching triangles (a, b, c) on their winding-normal side.

    Returns (centres, face normals, valid) for (N, 3) corner arrays.
    """
    ab, ac = b - a, c - a
    cross = np.cross(ab, ac)
    cross_sq = np.einsum('ij,ij->i', cross, cross)
    valid = cross_sq > 1e-18 * np.maximum(np.einsum('ij,ij->i', ab, ab) * np.einsum('ij,ij->i', ac, ac), 1e-300)
    safe = np.where(valid, cross_sq, 1.0)
    to_centre = (np.einsum('ij,ij->i', ac, ac)[:, None] * np.cross(cross, ab)
                 + np.einsum('ij,ij->i', ab, ab)[:, None] * np.cross(ac, cross)) / (2.0 * safe[:, None])
    circum_sq = np.einsum('ij,ij->i', to_centre, to_centre)
    height_sq = radius ** 2 - circum_sq
    valid &= height_sq >= 0
    normal = cross / np.sqrt(safe)[:, None]
    centres = a + to_centre + np.sqrt(np.maximum(height_sq, 0.0))[:, None] * normal
    return centres, normal, valid


class BallPivot:
    """Front-advancing ball pivoting over ascending radii"""

    def __init__(self, cloud: PointCloud, radii: Sequence[float]):
        if cloud.normals is None:
            raise GeometryError("ball pivoting needs oriented normals")
        if len(cloud) < 3:
            raise GeometryError("ball pivoting needs at least 3 points")
        self.points = cloud.points
        self.normals = cloud.normals
        self.radii = sorted(float(r) for r in radii)
        self.tree = cKDTree(self.points)
        self.used = np.zeros(len(self.points), dtype=bool)
        self.faces: List[Tuple[int, int, int]] = []
        self.half_edges: set = set()
        # directed boundary edge (i, j) -> opposite vertex of its face
        self.front: Dict[Tuple[int, int], int] = {}
        self.front_degree = np.zeros(len(self.points), dtype=np.int64)

    # ------------------------------------------------------------ bookkeeping

    def _add_front(self, i: int, j: int, opposite: int):
        if (j, i) in self.front:
            # glue against the reverse boundary edge
            del self.front[(j, i)]
            self.front_degree[[i, j]] -= 1
            return
        self.front[(i, j)] = opposite
        self.front_degree[[i, j]] += 1

    def _add_face(self, a: int, b: int, c: int):
        self.faces.append((a, b, c))
        self.half_edges.update({(a, b), (b, c), (c, a)})
        self.used[[a, b, c]] = True

    def _ball_is_empty(self, centre: np.ndarray, radius: float, members: Tuple[int, int, int]) -> bool:
        inside = self.tree.query_ball_point(centre, radius * (1.0 - EMPTY_BALL_TOLERANCE))
        return all(idx in members for idx in inside)

    # ------------------------------------------------------------ seeding

    def _find_seed(self, radius: float, start: int) -> Tuple[Optional[Tuple[int, int, int]], int]:
        """Lowest-index valid triple of unused points with an empty ball"""
        n = len(self.points)
        for i in range(start, n):
            if self.used[i]:
                continue
            near = np.array(sorted(self.tree.query_ball_point(self.points[i], 2.0 * radius)), dtype=np.int64)
            near = near[(near != i) & ~self.used[near]]
            if len(near) < 2:
                continue
            jj, kk = np.triu_indices(len(near), k=1)
            j, k = near[jj], near[kk]
            a = np.repeat(self.points[i][None], len(j), axis=0)
            centres, normal, valid = _ball_centres(a, self.points[j], self.points[k], radius)
            vote = self.normals[i] + self.normals[j] + self.normals[k]
            swap = np.einsum('ij,ij->i', normal, vote) < 0
            if swap.any():
                # reversed winding puts the ball on the other side
                c2, n2, v2 = _ball_centres(a[swap], self.points[k[swap]], self.points[j[swap]], radius)
                centres[swap], normal[swap], valid[swap] = c2, n2, v2
            agree = np.ones(len(j), dtype=bool)
            for idx in (np.full(len(j), i), j, k):
                agree &= np.einsum('ij,ij->i', normal, self.normals[idx]) > 0
            for cand in np.flatnonzero(valid & agree):
                triple = (i, int(k[cand]), int(j[cand])) if swap[cand] else (i, int(j[cand]), int(k[cand]))
                if self._ball_is_empty(centres[cand], radius, triple):
                    return triple, i
        return None, n

    # ------------------------------------------------------------ pivoting

    def _pivot(self, i: int, j: int, opposite: int, radius: float) -> Optional[int]:
        """Roll the ball over edge i -> j away from its face.

        Returns the first point hit whose ball is empty and whose face keeps the mesh manifold;
        among co-circular hits the lowest acceptable index wins.
        """
        pi, pj, po = self.points[i], self.points[j], self.points[opposite]
        start, _, ok = _ball_centres(pi[None], pj[None], po[None], radius)
        if not ok[0]:
            return None
        mid = 0.5 * (pi + pj)
        axis = (pj - pi) / np.linalg.norm(pj - pi)
        near = np.array(self.tree.query_ball_point(mid, 2.0 * radius), dtype=np.int64)
        near = near[(near != i) & (near != j) & (near != opposite)]
        if len(near) == 0:
            return None
        count = len(near)
        centres, normal, valid = _ball_centres(np.repeat(pj[None], count, 0), np.repeat(pi[None], count, 0),
                                               self.points[near], radius)
        valid &= np.einsum('ij,ij->i', normal, self.normals[near]) > 0
        valid &= normal @ (self.normals[i] + self.normals[j]) > 0
        if not valid.any():
            return None
        a = start[0] - mid
        b = centres - mid
        angle = np.arctan2(np.einsum('ij,j->i', np.cross(a[None], b), axis), b @ a)
        angle = np.where(angle < -ANGLE_TOLERANCE, angle + TWO_PI, np.maximum(angle, 0.0))
        angle[~valid] = np.inf
        hit_angle = None
        for cand in np.lexsort((near, angle)):
            if not np.isfinite(angle[cand]):
                break
            if hit_angle is not None and angle[cand] > hit_angle + TIE_TOLERANCE:
                break
            x = int(near[cand])
            if not self._ball_is_empty(centres[cand], radius, (i, j, x)):
                continue
            if hit_angle is None:
                hit_angle = angle[cand]
            if self._accepts(i, j, x):
                return x
        return None

    def _accepts(self, i: int, j: int, x: int) -> bool:
        """Manifold checks for the new face (j, i, x)"""
        if self.used[x] and self.front_degree[x] == 0:
            return False
        for edge in ((j, i), (i, x), (x, j)):
            if edge in self.half_edges:
                return False
        return True

    def _expand(self, queue: deque, radius: float, dead: set):
        while queue:
            edge = queue.popleft()
            if edge not in self.front:
                continue
            i, j = edge
            x = self._pivot(i, j, self.front[edge], radius)
            if x is None:
                dead.add(edge)
                continue
            del self.front[edge]
            self.front_degree[[i, j]] -= 1
            self._add_face(j, i, x)
            for new_edge, opp in (((i, x), j), ((x, j), i)):
                before = new_edge in self.front or (new_edge[1], new_edge[0]) in self.front
                self._add_front(new_edge[0], new_edge[1], opp)
                if not before and new_edge in self.front:
                    queue.append(new_edge)

    def run(self) -> TriangleMesh:
        for radius in self.radii:
            dead: set = set()
            # re-pivot every open boundary edge at the larger radius
            self._expand(deque(sorted(self.front)), radius, dead)
            start = 0
            while True:
                seed, start = self._find_seed(radius, start)
                if seed is None:
                    break
                a, b, c = seed
                self._add_face(a, b, c)
                for edge, opp in (((a, b), c), ((b, c), a), ((c, a), b)):
                    self._add_front(edge[0], edge[1], opp)
                self._expand(deque([(a, b), (b, c), (c, a)]), radius, dead)
            logger.debug("ball pivot radius %.4g: %d faces, %d open edges", radius, len(self.faces), len(self.front))
        if not self.faces:
            raise MeshingError(f"radius scan failed: no seed triangle for radii {self.radii}")
        mesh = TriangleMesh(self.points, np.asarray(self.faces, dtype=np.int64), self.normals,
                            {'source_index': np.arange(len(self.points), dtype=float)})
        return mesh.remove_unreferenced()


def ball_pivot(cloud: PointCloud, params: MeshParams) -> TriangleMesh:
    """Ball-pivoting mesh over the configured (or automatically scanned) radii"""
    radii = resolve_radii(cloud, params)
    mesh = BallPivot(cloud, radii).run()
    logger.info("ball pivot: %d points -> %d vertices, %d faces (radii %s)",
                len(cloud), mesh.n_vertices, mesh.n_faces, ', '.join(f"{r:.3g}" for r in radii))
    return mesh
