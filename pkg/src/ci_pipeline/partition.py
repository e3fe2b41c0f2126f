"""k-means++ / Lloyd clustering of reduced vectors into leaf partitions.

Determinism contract: for a fixed seed the result is reproducible bit for bit
and invariant to the order input rows are presented in. Rows are first put
into a canonical order keyed by a seed-keyed hash of their bytes; seeding and
all centroid accumulation then run over that order, so presentation order
never touches the arithmetic. The k-means++ sampling stream is a Philox
counter generator keyed by (seed, selection step).

Ties break toward the lowest centroid index everywhere.
"""
from __future__ import annotations

import hashlib

import numpy as np

from .errors import DataError


def _canonical_order(points: np.ndarray, seed: int) -> np.ndarray:
    """Indices that sort rows by a seed-keyed blake2b of their bytes.

    Equal rows hash equally; their relative order is irrelevant because they
    are interchangeable downstream.
    """
    key = int(seed).to_bytes(8, "little")
    digests = [
        hashlib.blake2b(row.tobytes(), key=key, digest_size=16).digest()
        for row in points
    ]
    return np.asarray(sorted(range(len(digests)), key=digests.__getitem__), dtype=np.intp)


def _uniforms(seed: int, step: int, count: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(step)))
    return gen.random(count)


def _nearest(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Labels and squared distances to the nearest centroid (ties: lowest index)."""
    sq = (
        np.sum(points**2, axis=1)[:, None]
        + np.sum(centroids**2, axis=1)[None, :]
        - 2.0 * points @ centroids.T
    )
    labels = np.argmin(sq, axis=1)
    # recompute the winner's distance in difference form: the expanded form
    # above cancels catastrophically when a point sits on its centroid
    d2 = np.sum((points - centroids[labels]) ** 2, axis=1)
    return labels, d2


def _seed_indices(points: np.ndarray, n_clusters: int, seed: int) -> list[int]:
    """Greedy k-means++: D^2 sampling with local trials, inverse CDF per draw.

    Each step draws 2 + log(k) candidates from its keyed stream and keeps the
    one that shrinks the total potential the most (ties: lowest row index).
    """
    n = len(points)
    n_trials = 2 + int(np.log(n_clusters))
    first = min(int(_uniforms(seed, 0, 1)[0] * n), n - 1)
    chosen = [first]
    d2 = np.sum((points - points[first]) ** 2, axis=1)
    for step in range(1, n_clusters):
        total = float(d2.sum())
        us = _uniforms(seed, step, n_trials)
        if total > 0.0:
            cumulative = np.cumsum(d2)
            best = None
            for u in us:
                idx = min(int(np.searchsorted(cumulative, u * total, side="right")), n - 1)
                cand_d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
                key = (float(cand_d2.sum()), idx)
                if best is None or key < best[0]:
                    best = (key, idx, cand_d2)
            _, idx, d2 = best
        else:
            # All remaining mass is zero (duplicate points); fall back to uniform.
            idx = min(int(us[0] * n), n - 1)
        chosen.append(idx)
    return chosen


def kmeans_fit(
    points,
    n_clusters: int,
    seed: int = 0,
    max_iters: int = 100,
    tol: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Cluster an n x r matrix into ``n_clusters`` partitions.

    Returns (centroids, labels, inertia). Empty clusters are repaired by
    reseeding them to the point farthest from its current centroid; a repair
    is skipped only when every point already sits exactly on its centroid.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("points must be an n x r matrix")
    n, r = X.shape
    if not np.all(np.isfinite(X)):
        raise DataError("points contain non-finite values")
    if n_clusters < 2:
        raise DataError(f"n_clusters must be >= 2, got {n_clusters}")
    if n < n_clusters:
        raise DataError(f"cannot split {n} points into {n_clusters} clusters")
    if max_iters < 1:
        raise DataError(f"max_iters must be >= 1, got {max_iters}")

    order = _canonical_order(X, seed)
    C = X[order]  # canonical view; all arithmetic happens in this order

    centroids = C[_seed_indices(C, n_clusters, seed)].copy()
    prev_inertia: float | None = None
    for _ in range(max_iters):
        labels, d2 = _nearest(C, centroids)
        inertia = float(d2.sum())
        assert prev_inertia is None or inertia <= prev_inertia * (1 + 1e-12) + 1e-12
        if prev_inertia is not None:
            if prev_inertia == 0.0 or (prev_inertia - inertia) < tol * prev_inertia:
                break
        prev_inertia = inertia

        sums = np.zeros((n_clusters, r))
        np.add.at(sums, labels, C)
        counts = np.bincount(labels, minlength=n_clusters)
        for k in np.flatnonzero(counts == 0):
            far = int(np.argmax(d2))
            if d2[far] == 0.0:
                break  # every point coincides with a centroid; nothing to move
            old = labels[far]
            sums[old] -= C[far]
            counts[old] -= 1
            sums[k] = C[far]
            counts[k] = 1
            labels[far] = k
            d2[far] = 0.0
        nonzero = counts > 0
        centroids[nonzero] = sums[nonzero] / counts[nonzero, None]

    final_labels, final_d2 = _nearest(C, centroids)
    inertia = float(final_d2.sum())
    out_labels = np.empty(n, dtype=np.intp)
    out_labels[order] = final_labels
    return centroids, out_labels, inertia


def assign(centroids, vectors) -> np.ndarray:
    """Label each row with its nearest centroid (Euclidean, ties: lowest index)."""
    C = np.asarray(centroids, dtype=np.float64)
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or C.ndim != 2 or X.shape[1] != C.shape[1]:
        raise DataError(
            f"dimension mismatch: vectors {X.shape} vs centroids {C.shape}"
        )
    labels, _ = _nearest(X, C)
    return labels
