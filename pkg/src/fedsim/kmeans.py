"""k-means with k-means++ seeding under squared-l2 or cosine geometry."""

from __future__ import annotations

import numpy as np

MAX_ITER = 100


def prepare(vectors, metric: str) -> np.ndarray:
    """Rows in the space the metric clusters in (unit-normalized for cosine).

    Zero rows stay zero under cosine and are then handled by plain l2 distance.
    """
    X = np.asarray(vectors, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if metric == "l2":
        return X.copy()
    if metric == "cosine":
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        return np.divide(X, norms, out=np.zeros_like(X), where=norms > 0)
    raise ValueError(f"unknown metric {metric!r}")


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def cost(X: np.ndarray, assignments: np.ndarray, k: int) -> float:
    """Within-cluster sum of squared distances to each cluster's mean."""
    total = 0.0
    for j in range(k):
        members = X[assignments == j]
        if len(members):
            total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


def _centroids(X: np.ndarray, assign: np.ndarray, previous: np.ndarray) -> np.ndarray:
    centers = previous.copy()
    for j in range(len(centers)):
        members = X[assign == j]
        if len(members):
            centers[j] = members.mean(axis=0)
    return centers


def _plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    for _ in range(1, k):
        d2 = _sq_dists(X, np.array(centers)).min(axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(n)])
        else:
            centers.append(X[rng.choice(n, p=d2 / total)])
    return np.array(centers)


def _lloyd(X: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = len(centers)
    assign = None
    for _ in range(MAX_ITER):
        new = np.argmin(_sq_dists(X, centers), axis=1)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for j in range(k):
            members = X[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:
                # reseed with the point farthest from its own centroid
                spread = ((X - centers[assign]) ** 2).sum(axis=1)
                far = int(np.argmax(spread))
                if spread[far] == 0:
                    continue
                centers[j] = X[far]
                assign = assign.copy()
                assign[far] = j
    for j in range(k):
        members = X[assign == j]
        if len(members):
            centers[j] = members.mean(axis=0)
    return assign, centers


def _hartigan(X: np.ndarray, assign: np.ndarray, k: int) -> np.ndarray:
    """Single-point transfers that lower the cost, until none remains.

    Lloyd stops at any fixed point; a transfer accounts for how both
    centroids move, so it escapes many of those local minima.
    """
    assign = assign.copy()
    counts = np.bincount(assign, minlength=k).astype(float)
    sums = np.zeros((k, X.shape[1]))
    np.add.at(sums, assign, X)
    for _ in range(MAX_ITER):
        moved = False
        for i, x in enumerate(X):
            a = assign[i]
            if counts[a] <= 1:
                continue
            mu_a = sums[a] / counts[a]
            loss = counts[a] / (counts[a] - 1) * ((x - mu_a) ** 2).sum()
            best, best_gain = a, 0.0
            for b in range(k):
                if b == a:
                    continue
                if counts[b] == 0:
                    gain = 0.0
                else:
                    mu_b = sums[b] / counts[b]
                    gain = counts[b] / (counts[b] + 1) * ((x - mu_b) ** 2).sum()
                if gain - loss < best_gain - 1e-12:
                    best, best_gain = b, gain - loss
            if best != a:
                counts[a] -= 1
                counts[best] += 1
                sums[a] -= x
                sums[best] += x
                assign[i] = best
                moved = True
        if not moved:
            break
    return assign


def kmeans(vectors, k: int, metric: str, rng: np.random.Generator, n_init: int = 8):
    """Cluster ``vectors`` into ``k`` groups.

    Returns ``(assignments, centroids)``; centroids live in the metric's space
    (unit-normalized inputs for cosine). Each of ``n_init`` k-means++ starts
    runs Lloyd, then Hartigan transfers, then Lloyd again; the cheapest is kept. With more clusters than vectors, every vector gets its
    own cluster and the spare centroids repeat existing points.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    X = prepare(vectors, metric)
    n = len(X)
    if n == 0:
        raise ValueError("need at least one vector")
    if k > n:
        centroids = np.array([X[j] if j < n else X[j % n] for j in range(k)])
        return np.arange(n), centroids

    best = None
    for _ in range(max(1, n_init)):
        assign, centers = _lloyd(X, _plusplus(X, k, rng))
        assign = _hartigan(X, assign, k)
        assign, centers = _lloyd(X, _centroids(X, assign, centers))
        c = cost(X, assign, k)
        if best is None or c < best[0]:
            best = (c, assign, centers)
    return best[1], best[2]
