"""
SurfMorph Local Surface Fitting
k-NN neighbourhoods, PCA tangent frames and weighted Monge (quadratic height) fits
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from modules.errors import GeometryError

logger = logging.getLogger(__name__)

# relative eigenvalue floor of the normal equations below which a fit is rank deficient
RANK_TOLERANCE = 1e-10


class Neighbourhood(NamedTuple):
    """Padded neighbour lists; invalid slots point at the query itself with zero weight"""
    dist: np.ndarray
    idx: np.ndarray
    valid: np.ndarray


class Frames(NamedTuple):
    origin: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    n: np.ndarray


class QuadraticFit(NamedTuple):
    """Batched fits of w = a u^2 + b uv + c v^2 + d u + e v + f"""
    coeffs: np.ndarray
    residual: np.ndarray
    ok: np.ndarray


@dataclass
class MongeCoeffs:
    """Monge patch w = a u^2 + b uv + c v^2 + d u + e v in the frame (t1, t2, n)"""

    a: float
    b: float
    c: float
    d: float
    e: float
    t1: np.ndarray
    t2: np.ndarray
    n: np.ndarray
    f: float = 0.0

    @property
    def hessian(self) -> np.ndarray:
        return np.array([[2 * self.a, self.b], [self.b, 2 * self.c]])

    def principal_curvatures(self) -> Tuple[float, float]:
        k1, k2 = principal_curvatures(np.array([self.a]), np.array([self.b]), np.array([self.c]))
        return float(k1[0]), float(k2[0])

    @property
    def k_max(self) -> float:
        return float(max(abs(k) for k in self.principal_curvatures()))


def principal_curvatures(a, b, c) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (k1 >= k2) of the height Hessian [[2a, b], [b, 2c]]"""
    mean = a + c
    disc = np.sqrt((a - c) ** 2 + b ** 2)
    return mean + disc, mean - disc


def neighbourhoods(points: np.ndarray, k: int, radius: Optional[float] = None,
                   queries: Optional[np.ndarray] = None, tree: Optional[cKDTree] = None) -> Neighbourhood:
    """k nearest neighbours (query included), optionally limited to a ball.

    With a radius, k is raised to the largest ball population so every ball
    member is returned.
    """
    points = np.asarray(points, dtype=np.float64)
    queries = points if queries is None else np.asarray(queries, dtype=np.float64)
    if tree is None:
        tree = cKDTree(points)
    n_points = len(points)
    if n_points == 0:
        raise GeometryError("cannot build neighbourhoods on an empty point set")
    k = min(int(k), n_points)
    if radius is not None:
        counts = tree.query_ball_point(queries, r=radius, return_length=True)
        k = min(n_points, max(k, int(np.max(counts)) if len(counts) else k))
        dist, idx = tree.query(queries, k=k, distance_upper_bound=radius)
    else:
        dist, idx = tree.query(queries, k=k)
    dist = np.asarray(dist, dtype=np.float64).reshape(len(queries), -1)
    idx = np.asarray(idx).reshape(len(queries), -1)
    valid = np.isfinite(dist) & (idx < n_points)
    # pad missing slots with the nearest hit so gathers stay in range
    first = np.where(valid[:, :1], idx[:, :1], 0)
    idx = np.where(valid, idx, first)
    dist = np.where(valid, dist, 0.0)
    return Neighbourhood(dist, idx.astype(np.int64), valid)


def gaussian_weights(nbr: Neighbourhood, bandwidth: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Gaussian weights exp(-(d/h)^2); h defaults to the mean neighbour distance"""
    if bandwidth is None:
        counts = np.maximum(nbr.valid.sum(axis=1) - 1, 1)
        bandwidth = nbr.dist.sum(axis=1) / counts
    bandwidth = np.broadcast_to(np.asarray(bandwidth, dtype=np.float64), (len(nbr.dist),)).copy()
    bandwidth[bandwidth <= 0] = 1.0
    weights = np.exp(-(nbr.dist / bandwidth[:, None]) ** 2)
    return np.where(nbr.valid, weights, 0.0), bandwidth


def pca_frames(neighbours: np.ndarray, weights: np.ndarray, origin: Optional[np.ndarray] = None) -> Frames:
    """Weighted PCA frames of (N, k, 3) neighbourhoods; n is the least-variance axis"""
    wsum = weights.sum(axis=1, keepdims=True)
    wsum[wsum == 0] = 1.0
    centroid = np.einsum('nk,nkd->nd', weights, neighbours) / wsum
    centred = neighbours - centroid[:, None, :]
    cov = np.einsum('nk,nki,nkj->nij', weights, centred, centred) / wsum[:, :, None]
    _, vectors = np.linalg.eigh(cov)
    normal = vectors[:, :, 0]
    t1 = vectors[:, :, 2]
    t2 = np.cross(normal, t1)
    return Frames(centroid if origin is None else np.asarray(origin, dtype=np.float64), t1, t2, normal)


def frames_from_normals(origin: np.ndarray, normals: np.ndarray) -> Frames:
    """Orthonormal frames whose third axis is the given normal"""
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    helper = np.tile([1.0, 0.0, 0.0], (len(normals), 1))
    helper[np.abs(normals[:, 0]) > 0.9] = (0.0, 1.0, 0.0)
    t1 = np.cross(helper, normals)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(normals, t1)
    return Frames(np.asarray(origin, dtype=np.float64), t1, t2, normals)


def to_local(neighbours: np.ndarray, frames: Frames) -> np.ndarray:
    """(N, k, 3) world points to (u, v, w) coordinates of each frame"""
    rel = neighbours - frames.origin[:, None, :]
    return np.stack([
        np.einsum('nkd,nd->nk', rel, frames.t1),
        np.einsum('nkd,nd->nk', rel, frames.t2),
        np.einsum('nkd,nd->nk', rel, frames.n),
    ], axis=-1)


def fit_quadratic(local: np.ndarray, weights: np.ndarray, offset: bool = True) -> QuadraticFit:
    """Weighted least-squares quadratic height fits, batched over neighbourhoods.

    Coordinates are normalised by the weighted RMS tangential radius before
    solving; coefficients are returned in the original units as columns
    (a, b, c, d, e, f), with f = 0 when offset is False.
    """
    n = len(local)
    u, v, w = local[..., 0], local[..., 1], local[..., 2]
    wsum = weights.sum(axis=1)
    wsum_safe = np.where(wsum > 0, wsum, 1.0)
    scale = np.sqrt((weights * (u ** 2 + v ** 2)).sum(axis=1) / wsum_safe)
    scale = np.where(scale > 0, scale, 1.0)
    us, vs, ws = u / scale[:, None], v / scale[:, None], w / scale[:, None]

    columns = [us ** 2, us * vs, vs ** 2, us, vs]
    if offset:
        columns.append(np.ones_like(us))
    design = np.stack(columns, axis=-1)
    normal = np.einsum('nk,nki,nkj->nij', weights, design, design)
    rhs = np.einsum('nk,nki,nk->ni', weights, design, ws)

    eig = np.linalg.eigvalsh(normal)
    top = np.maximum(eig[:, -1], np.finfo(float).tiny)
    ok = (eig[:, 0] / top > RANK_TOLERANCE) & (wsum > 0)
    regular = np.where(ok[:, None, None], normal, np.eye(design.shape[-1]))
    solution = np.linalg.solve(regular, np.where(ok[:, None], rhs, 0.0)[..., None])[..., 0]

    predicted = np.einsum('nki,ni->nk', design, solution)
    residual = np.sqrt((weights * (predicted - ws) ** 2).sum(axis=1) / wsum_safe) * scale

    coeffs = np.zeros((n, 6))
    coeffs[:, 0:3] = solution[:, 0:3] / scale[:, None]
    coeffs[:, 3:5] = solution[:, 3:5]
    if offset:
        coeffs[:, 5] = solution[:, 5] * scale
    coeffs[~ok] = np.nan
    residual[~ok] = np.nan
    return QuadraticFit(coeffs, residual, ok)


def evaluate_quadratic(coeffs: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    a, b, c, d, e, f = coeffs.T
    return a * u ** 2 + b * u * v + c * v ** 2 + d * u + e * v + f


def fit_monge(local: np.ndarray, weights: Optional[np.ndarray] = None, offset: bool = False,
              frame: Optional[Frames] = None) -> MongeCoeffs:
    """Single weighted Monge fit of (k, 3) local coordinates"""
    local = np.asarray(local, dtype=np.float64)[None]
    weights = np.ones(local.shape[1]) if weights is None else np.asarray(weights, dtype=np.float64)
    fit = fit_quadratic(local, weights[None], offset=offset)
    if not fit.ok[0]:
        raise GeometryError("rank-deficient Monge fit")
    a, b, c, d, e, f = fit.coeffs[0]
    if frame is None:
        t1, t2, n = np.eye(3)
    else:
        t1, t2, n = frame.t1[0], frame.t2[0], frame.n[0]
    return MongeCoeffs(a, b, c, d, e, t1, t2, n, f)


def gather(points: np.ndarray, nbr: Neighbourhood) -> np.ndarray:
    return points[nbr.idx]
