"""Fuzzy k-nearest-neighbor graph construction in the original sensor space.

Pipeline: exact (or kd-tree) neighbor search -> per-point bandwidth
calibration by binary search -> exponential edge weights -> probabilistic-OR
symmetrization. The calibration makes every point's outgoing weights sum to
log2(k), which equalizes effective neighborhood density across the dataset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "KnnResult",
    "SmoothKnn",
    "NeighborGraph",
    "knn_graph",
    "smooth_knn",
    "fuzzy_weights",
    "symmetrize",
    "build_neighbor_graph",
]

# distances below this are treated as exact duplicates
_DUPLICATE_EPS = 1e-12


@dataclass(frozen=True)
class KnnResult:
    """Per-point neighbor indices and distances, self excluded, ascending."""

    indices: np.ndarray    # (N, k) int64
    distances: np.ndarray  # (N, k) float64

    @property
    def k(self) -> int:
        return int(self.indices.shape[1])


@dataclass(frozen=True)
class SmoothKnn:
    """Calibration output: local connectivity radius and bandwidth per point."""

    rho: np.ndarray
    sigma: np.ndarray
    n_floored: int
    converged: np.ndarray  # bool mask; floored points are never converged


@dataclass(frozen=True)
class NeighborGraph:
    """The directed weighted graph W and its symmetrized adjacency A."""

    knn: KnnResult
    rho: np.ndarray
    sigma: np.ndarray
    n_sigma_floored: int
    weights: sp.csr_matrix     # directed W
    adjacency: sp.csr_matrix   # symmetric A


def _exact_knn(points, k, block_size=2048):
    n = points.shape[0]
    sq_norms = np.einsum("ij,ij->i", points, points)
    indices = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k), dtype=np.float64)
    for start in range(0, n, block_size):
        stop = min(start + block_size, n)
        d2 = sq_norms[start:stop, None] + sq_norms[None, :] - 2.0 * (points[start:stop] @ points.T)
        np.maximum(d2, 0.0, out=d2)
        d2[d2 < _DUPLICATE_EPS**2] = 0.0
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf  # mask self
        part = np.argpartition(d2, k, axis=1)[:, :k]
        part.sort(axis=1)  # pre-sort indices so the stable distance sort breaks ties by index
        part_d2 = np.take_along_axis(d2, part, axis=1)
        order = np.argsort(part_d2, axis=1, kind="stable")
        indices[start:stop] = np.take_along_axis(part, order, axis=1)
        distances[start:stop] = np.sqrt(np.take_along_axis(part_d2, order, axis=1))
    return indices, distances


def _kdtree_knn(points, k, eps):
    from scipy.spatial import cKDTree

    tree = cKDTree(points)
    dist, idx = tree.query(points, k=k + 1, eps=eps)
    n = points.shape[0]
    rows = np.arange(n)
    # remove the self hit; with exact duplicates it may appear anywhere in the row
    self_pos = np.argmax(idx == rows[:, None], axis=1)
    keep = np.ones_like(idx, dtype=bool)
    keep[rows, self_pos] = False
    return idx[keep].reshape(n, k).astype(np.int64), dist[keep].reshape(n, k)


def knn_graph(points, k, backend="exact", eps=0.0) -> KnnResult:
    """Find each row's k nearest neighbors (Euclidean), self excluded.

    ``backend="exact"`` runs a blocked brute-force search; ``"kdtree"`` uses a
    kd-tree and honors ``eps`` for approximate queries (neighbors within a
    factor 1+eps of the true ones) behind the same contract.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of points ({n})")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if backend == "exact":
        idx, dist = _exact_knn(points, k)
    elif backend == "kdtree":
        idx, dist = _kdtree_knn(points, k, eps)
    else:
        raise ValueError(f"unknown knn backend {backend!r}")
    return KnnResult(indices=idx, distances=dist)


def smooth_knn(distances, *, tol=1e-5, max_iter=64, sigma_floor=1e-3) -> SmoothKnn:
    """Calibrate per-point bandwidths so each weight row sums to log2(k).

    rho is the smallest strictly positive neighbor distance (0 when every
    neighbor is an exact duplicate). sigma comes from a vectorized binary
    search; points whose target sum is unreachable (e.g. all neighbors at
    distance <= rho) collapse to the configured floor and are counted.
    """
    d = np.asarray(distances, dtype=np.float64)
    n, k = d.shape
    target = np.log2(k)

    pos = np.where(d > 0, d, np.inf)
    rho = pos.min(axis=1)
    rho[~np.isfinite(rho)] = 0.0

    shifted = np.maximum(0.0, d - rho[:, None])

    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    mid = np.ones(n)
    done = np.zeros(n, dtype=bool)
    for _ in range(max_iter):
        active = ~done
        if not active.any():
            break
        s = np.exp(-shifted[active] / mid[active, None]).sum(axis=1)
        err_ok = np.abs(s - target) < tol
        idx = np.flatnonzero(active)
        done[idx[err_ok]] = True
        rest = idx[~err_ok]
        too_big = s[~err_ok] > target
        hi[rest[too_big]] = mid[rest[too_big]]
        lo[rest[~too_big]] = mid[rest[~too_big]]
        unbounded = np.isinf(hi[rest])
        mid[rest[unbounded]] = mid[rest[unbounded]] * 2.0
        mid[rest[~unbounded]] = (lo[rest[~unbounded]] + hi[rest[~unbounded]]) / 2.0

    sigma = mid
    floored = sigma < sigma_floor
    sigma = np.where(floored, sigma_floor, sigma)
    return SmoothKnn(
        rho=rho,
        sigma=sigma,
        n_floored=int(floored.sum()),
        converged=done & ~floored,
    )


def fuzzy_weights(knn: KnnResult, rho, sigma) -> sp.csr_matrix:
    """Directed edge weights w = exp(-max(0, d - rho) / sigma), in (0, 1]."""
    n, k = knn.indices.shape
    vals = np.exp(-np.maximum(0.0, knn.distances - np.asarray(rho)[:, None]) / np.asarray(sigma)[:, None])
    rows = np.repeat(np.arange(n, dtype=np.int64), k)
    w = sp.csr_matrix((vals.ravel(), (rows, knn.indices.ravel())), shape=(n, n))
    w.sort_indices()
    return w


def symmetrize(weights: sp.csr_matrix) -> sp.csr_matrix:
    """Probabilistic OR of the two edge directions: A = W + W^T - W o W^T."""
    wt = weights.T.tocsr()
    a = (weights + wt - weights.multiply(wt)).tocsr()
    a.sort_indices()
    return a


def build_neighbor_graph(points, k, backend="exact", eps=0.0) -> NeighborGraph:
    """Run the full graph phase: knn -> calibration -> weights -> symmetrize."""
    knn = knn_graph(points, k, backend=backend, eps=eps)
    sk = smooth_knn(knn.distances)
    w = fuzzy_weights(knn, sk.rho, sk.sigma)
    return NeighborGraph(
        knn=knn,
        rho=sk.rho,
        sigma=sk.sigma,
        n_sigma_floored=sk.n_floored,
        weights=w,
        adjacency=symmetrize(w),
    )
