"""Per-unit degradation trajectories and their DTW k-means clustering.

A trajectory is the cycle-ordered path of one unit's embedded points. Units
are clustered by dynamic time warping distance so that trajectories of the
same failure mode group together regardless of lifetime differences. The
centroid of a cluster is the pointwise mean after resampling every member to
a common length (the median member length).

Clustering is internally unit-id-ordered: feeding the same trajectories in
any order with the same seed yields identical labels.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataIntegrityError
from .metrics import clustering_diagnostics
from .umap.layout import _hash_uniform, _splitmix  # shared counter-based RNG


@dataclass(frozen=True)
class Trajectory:
    """Cycle-ordered embedded path of one unit."""

    unit_id: int
    points: np.ndarray  # (T, D)

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[0] < 2:
            raise ValueError(f"unit {self.unit_id}: a trajectory needs >= 2 points")
        if not np.isfinite(self.points).all():
            raise ValueError(f"unit {self.unit_id}: non-finite trajectory points")

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class ClusterResult:
    """DTW k-means output for one best-of-restarts run."""

    n_clusters: int
    labels: dict[int, int]            # unit_id -> cluster
    centroids: tuple[np.ndarray, ...]
    inertia: float
    seed: int
    best_restart: int
    iterations: int
    converged: bool
    inertia_trace: tuple[float, ...]  # per-iteration inertia of the winning restart


def build_trajectories(embedding) -> list[Trajectory]:
    """One trajectory per unit from an embedding, points in cycle order."""
    out = []
    for uid, (cycles, pts) in sorted(embedding.by_unit().items()):
        gaps = np.diff(cycles)
        if np.any(gaps != 1):
            raise DataIntegrityError(f"unit {uid}: cycle gap in embedded rows")
        out.append(Trajectory(unit_id=uid, points=np.asarray(pts, dtype=float)))
    return out


def _as_points(seq) -> np.ndarray:
    if isinstance(seq, Trajectory):
        return seq.points
    arr = np.asarray(seq, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def dtw(p, q) -> float:
    """Dynamic time warping distance with Euclidean point cost.

    Full window, steps {(1,0), (0,1), (1,1)}; evaluated over anti-diagonals
    so each wavefront is a vectorized update.
    """
    pp, qq = _as_points(p), _as_points(q)
    n, m = pp.shape[0], qq.shape[0]
    if n == 0 or m == 0:
        raise ValueError("dtw needs non-empty sequences")
    prev2 = np.full(n, np.inf)
    prev1 = np.full(n, np.inf)
    for d in range(n + m - 1):
        i_lo = max(0, d - m + 1)
        i_hi = min(n - 1, d)
        ii = np.arange(i_lo, i_hi + 1)
        cost = np.linalg.norm(pp[ii] - qq[d - ii], axis=1)
        cur = np.full(n, np.inf)
        if d == 0:
            cur[0] = cost[0]
        else:
            shifted = np.where(ii >= 1, prev1[np.maximum(ii - 1, 0)], np.inf)   # (i-1, j)
            stay = prev1[ii]                                                    # (i, j-1)
            diag = np.where(ii >= 1, prev2[np.maximum(ii - 1, 0)], np.inf)      # (i-1, j-1)
            cur[ii] = cost + np.minimum(np.minimum(shifted, stay), diag)
        prev2, prev1 = prev1, cur
    return float(prev1[n - 1])


def resample(points, target_len: int) -> np.ndarray:
    """Linear resampling on the normalized cycle index to ``target_len`` rows."""
    pts = _as_points(points)
    t = pts.shape[0]
    if target_len < 1:
        raise ValueError("target_len must be >= 1")
    x_src = np.linspace(0.0, 1.0, t)
    x_tgt = np.linspace(0.0, 1.0, target_len)
    return np.column_stack([np.interp(x_tgt, x_src, pts[:, j]) for j in range(pts.shape[1])])


def mean_trajectory(members, target_len=None) -> np.ndarray:
    """Pointwise mean after resampling members to a common length.

    Defaults to the median member length, which keeps the centroid at a
    representative temporal resolution.
    """
    members = [_as_points(mbr) for mbr in members]
    if not members:
        raise ValueError("mean_trajectory needs at least one member")
    if target_len is None:
        target_len = int(round(float(np.median([mbr.shape[0] for mbr in members]))))
    stacked = np.stack([resample(mbr, target_len) for mbr in members])
    return stacked.mean(axis=0)


def _pick_weighted(weights, u):
    """Index whose cumulative-weight interval contains u (order-stable)."""
    cum = np.cumsum(weights)
    total = cum[-1]
    if total <= 0:
        return int(np.argmax(weights >= weights.max()))
    return int(np.searchsorted(cum / total, u, side="right").clip(0, len(weights) - 1))


def _seeded_centroids(trajs, n_clusters, key):
    """k-means++-style seeding with DTW distances, driven by hashed uniforms."""
    n = len(trajs)
    first = _pick_weighted(np.ones(n), _hash_uniform(key, np.uint64(0), np.uint64(0)))
    chosen = [first]
    d2 = np.array([dtw(t, trajs[first]) ** 2 for t in trajs])
    for step in range(1, n_clusters):
        u = _hash_uniform(key, np.uint64(step), np.uint64(0))
        nxt = _pick_weighted(d2, float(u))
        if nxt in chosen:  # duplicate pick (remaining mass at zero): take farthest unused
            order = np.argsort(-d2, kind="stable")
            nxt = next(int(i) for i in order if int(i) not in chosen)
        chosen.append(nxt)
        d2 = np.minimum(d2, np.array([dtw(t, trajs[nxt]) ** 2 for t in trajs]))
    return [trajs[c].points.copy() for c in chosen]


def dtw_kmeans(trajectories, n_clusters, *, restarts=10, max_iter=100,
               tol=1e-4, seed=0) -> ClusterResult:
    """Cluster trajectories by DTW k-means, best inertia over restarts.

    Assignment minimizes DTW to the centroids; the update resamples members
    to their median length and averages pointwise. Because that average is
    not the exact DTW barycenter, an update that would increase inertia
    reverts to the previous state and stops, keeping the inertia trace
    non-increasing. An emptied cluster is reseeded with the trajectory
    farthest from its current centroid.
    """
    trajs = sorted(trajectories, key=lambda t: t.unit_id)
    n = len(trajs)
    if not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters must be in [1, {n}], got {n_clusters}")

    best = None
    for r in range(restarts):
        key = _splitmix(np.uint64(seed) ^ _splitmix(np.uint64(r)))
        centroids = _seeded_centroids(trajs, n_clusters, key)
        prev = None  # (assign, centroids, inertia)
        trace = []
        converged = False
        iterations = 0
        for it in range(max_iter):
            iterations = it + 1
            dists = np.array([[dtw(t, c) for c in centroids] for t in trajs])
            assign = dists.argmin(axis=1)
            for v in range(n_clusters):
                if not np.any(assign == v):
                    far = int(np.argmax(dists[np.arange(n), assign]))
                    assign[far] = v
                    dists[far, v] = 0.0  # it will seed the centroid exactly
            inertia = float((dists[np.arange(n), assign] ** 2).sum())

            if prev is not None and inertia > prev[2] + 1e-12:
                assign, centroids, inertia = prev  # revert the bad update
                converged = True
                break
            trace.append(inertia)
            if prev is not None:
                if np.array_equal(assign, prev[0]):
                    converged = True
                    break
                if prev[2] - inertia < tol * max(prev[2], 1e-12):
                    converged = True
                    break
            prev = (assign.copy(), [c.copy() for c in centroids], inertia)
            centroids = [
                mean_trajectory([trajs[i] for i in np.flatnonzero(assign == v)])
                for v in range(n_clusters)
            ]
        else:
            assign, centroids, inertia = prev

        if best is None or inertia < best[2]:
            best = (assign, centroids, inertia, r, iterations, converged, tuple(trace))

    assign, centroids, inertia, r, iterations, converged, trace = best
    labels = {t.unit_id: int(a) for t, a in zip(trajs, assign)}
    return ClusterResult(
        n_clusters=n_clusters,
        labels=labels,
        centroids=tuple(centroids),
        inertia=inertia,
        seed=seed,
        best_restart=r,
        iterations=iterations,
        converged=converged,
        inertia_trace=trace,
    )


def pairwise_dtw(trajectories) -> np.ndarray:
    """Symmetric DTW distance matrix in unit-id order."""
    trajs = sorted(trajectories, key=lambda t: t.unit_id)
    n = len(trajs)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = dtw(trajs[i], trajs[j])
    return d


def choose_mode_count(trajectories, candidates=(2, 3, 4), *, restarts=5,
                      seed=0, elbow_ratio=0.5) -> tuple[int, dict]:
    """Pick the cluster count when no visual count is supplied.

    Runs k-means for each candidate and takes the best silhouette over the
    DTW distance matrix; falls back to a single cluster when even the best
    split fails the inertia elbow (less than a ``1 - elbow_ratio`` relative
    drop from the one-cluster inertia).
    """
    trajs = sorted(trajectories, key=lambda t: t.unit_id)
    dist = pairwise_dtw(trajs)
    single = dtw_kmeans(trajs, 1, restarts=1, max_iter=20, seed=seed)
    scores = {}
    results = {}
    for v in candidates:
        if v < 2 or v > len(trajs):
            continue
        res = dtw_kmeans(trajs, v, restarts=restarts, seed=seed)
        labels = np.array([res.labels[t.unit_id] for t in trajs])
        diag = clustering_diagnostics(labels, distance_matrix=dist)
        scores[v] = diag.silhouette
        results[v] = res
    if not scores:
        return 1, {"silhouette": {}, "inertia_1": single.inertia}
    best_v = max(scores, key=lambda v: scores[v])
    if results[best_v].inertia > elbow_ratio * single.inertia:
        best_v = 1
    return best_v, {"silhouette": scores, "inertia_1": single.inertia,
                    "inertia_best": results.get(best_v, single).inertia}


def export_labels_csv(path, labels: dict[int, int]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "failure_mode"])
        for uid in sorted(labels):
            writer.writerow([uid, labels[uid]])
    return path


def export_centroids_csv(directory, centroids) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for v, c in enumerate(centroids):
        p = directory / f"centroid_mode{v}.csv"
        with open(p, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"y_{j + 1}" for j in range(c.shape[1])])
            for row in c:
                writer.writerow([repr(float(x)) for x in row])
        paths.append(p)
    return paths
