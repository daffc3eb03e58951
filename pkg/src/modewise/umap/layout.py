"""Low-dimensional graph layout: kernel fit, spectral init, SGD optimization.

The embedded-space edge weight is the smooth kernel b(d) = (1 + alpha *
d^beta)^-1, with (alpha, beta) least-squares-fitted to the piecewise target
that is 1 up to min_dist and decays exponentially beyond it. The layout is
optimized by sampling edges proportionally to their weight (attraction along
grad log b) plus uniform negative samples (repulsion along grad log(1-b)).

All sampling uses a counter-based hash RNG keyed by a per-point seed, the
epoch, and the sample's rank, so runs are bitwise reproducible and per-point
randomness travels with the point when rows are permuted (pass point_seeds
explicitly to exploit that).
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
from scipy.optimize import curve_fit, minimize_scalar
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import eigsh

log = logging.getLogger(__name__)

__all__ = [
    "kernel",
    "fit_curve_params",
    "spectral_init",
    "optimize_layout",
    "derive_point_seeds",
]


def kernel(d, alpha, beta):
    """Embedded-space edge weight b(d) = 1 / (1 + alpha * d^beta)."""
    d = np.asarray(d, dtype=np.float64)
    return 1.0 / (1.0 + alpha * np.power(d, beta))


def _kernel_target(d, min_dist):
    d = np.asarray(d, dtype=np.float64)
    return np.where(d <= min_dist, 1.0, np.exp(-(d - min_dist)))


def _grid_fit(xs, ys):
    best = (np.inf, 1.0, 1.0)
    for beta in np.linspace(0.5, 6.0, 120):
        def sse(a):
            r = 1.0 / (1.0 + a * np.power(xs, beta)) - ys
            return float(r @ r)
        res = minimize_scalar(sse, bounds=(1e-6, 1e3), method="bounded")
        if res.fun < best[0]:
            best = (res.fun, res.x, beta)
    return best[1], best[2]


def fit_curve_params(min_dist, n_samples=300, max_iter=500):
    """Fit (alpha, beta) to the piecewise min_dist target on [0, 3*(min_dist+1)].

    Damped least squares first; grid search over beta with a bounded 1-D
    alpha solve as the fallback when the solver does not converge.
    """
    if min_dist <= 0:
        raise ValueError(f"min_dist must be positive, got {min_dist}")
    xs = np.linspace(0.0, 3.0 * (min_dist + 1.0), n_samples)
    ys = _kernel_target(xs, min_dist)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        try:
            (alpha, beta), _ = curve_fit(kernel, xs, ys, p0=(1.0, 2.0), maxfev=max_iter)
        except RuntimeError:
            log.warning("kernel fit did not converge in %d evaluations; falling back to grid search", max_iter)
            alpha, beta = _grid_fit(xs, ys)
    if alpha <= 0 or beta <= 0:
        log.warning("kernel fit produced non-positive parameters; falling back to grid search")
        alpha, beta = _grid_fit(xs, ys)
    return float(alpha), float(beta)


# ---------------------------------------------------------------------------
# counter-based hashing (splitmix64), vectorized over uint64 arrays

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix(x):
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = x + _GOLDEN
        x = (x ^ (x >> np.uint64(30))) * _MIX1
        x = (x ^ (x >> np.uint64(27))) * _MIX2
        return x ^ (x >> np.uint64(31))


def _hash_uniform(key, a, b):
    """Uniforms in [0,1) from a keyed 2-level counter; broadcasts like numpy."""
    with np.errstate(over="ignore"):
        h = _splitmix(np.asarray(key, dtype=np.uint64) ^ _splitmix(a))
        h = _splitmix(h ^ np.asarray(b, dtype=np.uint64))
    return (h >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


def derive_point_seeds(seed, n):
    """Default per-point seed stream: a hash of (seed, row index)."""
    return _splitmix(_splitmix(np.uint64(seed)) ^ np.arange(n, dtype=np.uint64))


# ---------------------------------------------------------------------------


def spectral_init(adjacency, n_components, seed=0, point_seeds=None,
                  scale=10.0, jitter=1e-4) -> np.ndarray:
    """Initial layout from normalized-Laplacian eigenvectors, per component.

    Each connected component is embedded independently from the first
    n_components non-trivial eigenvectors of its symmetric normalized
    Laplacian, scaled into [-scale, scale], plus a small seeded jitter.
    Components too small for the eigenproblem, or eigensolver failures,
    fall back to seeded uniform coordinates in [-scale, scale].
    """
    a = sp.csr_matrix(adjacency)
    n = a.shape[0]
    if point_seeds is None:
        point_seeds = derive_point_seeds(seed, n)
    n_comp, labels = connected_components(a, directed=False)
    y0 = np.empty((n, n_components), dtype=np.float64)

    for comp in range(n_comp):
        idx = np.flatnonzero(labels == comp)
        block = None
        if idx.size > n_components + 1:
            sub = a[idx][:, idx].tocsr()
            deg = np.asarray(sub.sum(axis=1)).ravel()
            deg[deg <= 0] = 1.0
            inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
            lap = sp.eye(idx.size, format="csr") - inv_sqrt @ sub @ inv_sqrt
            # largest eigenpairs of 2I - L are the smallest of L; Lanczos
            # converges much faster at that end of the spectrum
            flipped = (sp.eye(idx.size, format="csr") * 2.0 - lap).tocsr()
            v0 = np.full(idx.size, 1.0 / np.sqrt(idx.size))
            try:
                _, vecs = eigsh(flipped, k=n_components + 1, which="LA", v0=v0,
                                maxiter=idx.size * 5, tol=1e-6)
                block = vecs[:, ::-1][:, 1:n_components + 1]
            except Exception as exc:  # ArpackNoConvergence and friends
                log.warning("spectral init failed for a component of size %d (%s); "
                            "using random fallback", idx.size, exc)
        if block is None:
            u = _hash_uniform(point_seeds[idx, None], np.uint64(0xFA11BACC),
                              np.arange(n_components, dtype=np.uint64)[None, :])
            block = (2.0 * u - 1.0) * scale
        else:
            peak = np.abs(block).max()
            if peak > 0:
                block = block * (scale / peak)
        u = _hash_uniform(point_seeds[idx, None], np.uint64(0x317733),
                          np.arange(n_components, dtype=np.uint64)[None, :])
        y0[idx] = block + (2.0 * u - 1.0) * jitter
    return y0


def optimize_layout(adjacency, y0, alpha, beta, *, epochs=500, learning_rate=1.0,
                    negative_sample_rate=5, seed=0, point_seeds=None,
                    grad_clip=4.0) -> np.ndarray:
    """Optimize the layout by per-epoch sampled attraction/repulsion.

    Every directed edge (i, j) is sampled with probability a_ij / max(a); a
    sampled edge pulls y_i along grad log b(d_ij) and additionally draws
    ``negative_sample_rate`` uniform non-neighbors that push y_i along
    grad log(1 - b(d)). Per-sample gradients are clipped at ``grad_clip``
    per component, updates within an epoch are accumulated against the
    epoch-start positions, and the learning rate decays linearly to zero.
    Deterministic given (seed | point_seeds).
    """
    a = sp.csr_matrix(adjacency)
    n = a.shape[0]
    y = np.array(y0, dtype=np.float64, copy=True)
    if y.shape[0] != n:
        raise ValueError(f"y0 has {y.shape[0]} rows for {n} graph nodes")
    if epochs == 0:
        return y
    if point_seeds is None:
        point_seeds = derive_point_seeds(seed, n)
    point_seeds = np.asarray(point_seeds, dtype=np.uint64)

    coo = a.tocoo()
    src = coo.row.astype(np.int64)
    dst = coo.col.astype(np.int64)
    weight = coo.data.astype(np.float64)
    if weight.size == 0:
        raise ValueError("adjacency has no edges")

    # permutation-invariant within-row edge order: by weight, ties by the
    # destination's own seed (which travels with the point)
    order = np.lexsort((point_seeds[dst], -weight, src))
    src, dst, weight = src[order], dst[order], weight[order]
    row_start = np.searchsorted(src, np.arange(n))
    rank = np.arange(src.size, dtype=np.uint64) - row_start[src].astype(np.uint64)

    edge_keys = np.sort(src * n + dst)  # membership index for negative filtering
    prob = weight / weight.max()
    nsr = int(negative_sample_rate)
    slot_stride = np.uint64(nsr + 1)
    half_beta = beta / 2.0

    for epoch in range(epochs):
        lr = learning_rate * (1.0 - epoch / epochs)
        epoch_tag = np.uint64(epoch)
        delta = np.zeros_like(y)

        u = _hash_uniform(point_seeds[src], epoch_tag, rank * slot_stride)
        hit = u < prob
        s_src, s_dst, s_rank = src[hit], dst[hit], rank[hit]

        diff = y[s_src] - y[s_dst]
        r2 = np.einsum("ij,ij->i", diff, diff)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            coef = -(alpha * beta * np.power(r2, half_beta - 1.0)) / (1.0 + alpha * np.power(r2, half_beta))
        coef = np.where(r2 > 0.0, coef, 0.0)
        np.add.at(delta, s_src, np.clip(coef[:, None] * diff, -grad_clip, grad_clip))

        if nsr > 0 and s_src.size:
            r_src = np.repeat(s_src, nsr)
            slots = (np.repeat(s_rank, nsr) * slot_stride
                     + np.uint64(1) + np.tile(np.arange(nsr, dtype=np.uint64), s_src.size))
            un = _hash_uniform(point_seeds[r_src], epoch_tag, slots)
            neg = (un * n).astype(np.int64)
            cand = r_src * n + neg
            pos = np.searchsorted(edge_keys, cand)
            member = (pos < edge_keys.size) & (edge_keys[np.minimum(pos, edge_keys.size - 1)] == cand)
            ok = (neg != r_src) & ~member
            r_src, neg = r_src[ok], neg[ok]
            diff_n = y[r_src] - y[neg]
            r2n = np.einsum("ij,ij->i", diff_n, diff_n)
            with np.errstate(over="ignore"):
                coef_n = beta / ((r2n + 1e-3) * (1.0 + alpha * np.power(r2n, half_beta)))
            np.add.at(delta, r_src, np.clip(coef_n[:, None] * diff_n, -grad_clip, grad_clip))

        y += lr * delta
        if not np.isfinite(y).all():
            raise ArithmeticError(
                f"non-finite embedding coordinates at epoch {epoch} "
                f"(lr={lr:.4g}); inputs are likely degenerate"
            )
    return y
