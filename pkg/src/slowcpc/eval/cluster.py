"""k-means on frame features and the purity / NMI cluster-quality scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import LengthMismatch


@dataclass
class ClusterReport:
    k: int
    purity: float
    nmi: float
    contingency: np.ndarray


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x ** 2).sum(1)[:, None] - 2.0 * x @ c.T + (c ** 2).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans(features: np.ndarray, k: int, rng: np.random.Generator, max_iters: int = 300,
           tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm from a k-means++ start.

    Stops when no centroid moves by ``tol`` or more, or after ``max_iters``.
    An empty cluster is re-seeded at the point farthest from its own centroid.
    """
    x = np.asarray(features, dtype=np.float64)
    n = len(x)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= N; got k={k}, N={n}")
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    closest = _sq_dists(x, centroids[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            pick = rng.choice(n, p=closest / total)
        else:
            pick = rng.integers(n)
        centroids[j] = x[pick]
        closest = np.minimum(closest, _sq_dists(x, centroids[j:j + 1])[:, 0])
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        d = _sq_dists(x, centroids)
        assign = d.argmin(1)
        new = centroids.copy()
        for j in range(k):
            members = assign == j
            if members.any():
                new[j] = x[members].mean(0)
            else:
                own = d[np.arange(n), assign]
                far = int(own.argmax())
                new[j] = x[far]
                assign[far] = j
                d[far] = 0.0
        shift = np.sqrt(((new - centroids) ** 2).sum(1)).max()
        centroids = new
        if shift < tol:
            break
    assign = _sq_dists(x, centroids).argmin(1)
    return assign, centroids


def contingency(assignments, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Count matrix (clusters x labels) plus the sorted cluster ids and label values."""
    a = np.asarray(assignments)
    y = np.asarray(labels)
    if a.shape[0] != y.shape[0]:
        raise LengthMismatch(f"{a.shape[0]} assignments vs {y.shape[0]} labels")
    ca, ai = np.unique(a, return_inverse=True)
    cy, yi = np.unique(y, return_inverse=True)
    table = np.zeros((len(ca), len(cy)), dtype=np.int64)
    np.add.at(table, (ai.ravel(), yi.ravel()), 1)
    return table, ca, cy


def purity(assignments, labels) -> float:
    table, _, _ = contingency(assignments, labels)
    if table.sum() == 0:
        raise ValueError("purity needs at least one item")
    return float(table.max(1).sum() / table.sum())


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(assignments, labels) -> float:
    """Mutual information over the arithmetic mean of the two entropies (nats)."""
    table, _, _ = contingency(assignments, labels)
    n = table.sum()
    if n == 0:
        raise ValueError("nmi needs at least one item")
    h_a = _entropy(table.sum(1))
    h_y = _entropy(table.sum(0))
    nonzero = table > 0
    if (nonzero.sum(0) == 1).all() and (nonzero.sum(1) == 1).all():
        return 1.0
    if h_a == 0.0 or h_y == 0.0:
        return 0.0
    pij = table / n
    outer = np.outer(table.sum(1), table.sum(0)) / n ** 2
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    return float(min(1.0, max(0.0, mi / (0.5 * (h_a + h_y)))))


def cluster_report(features: np.ndarray, labels, k: int, rng: np.random.Generator) -> ClusterReport:
    assign, _ = kmeans(features, k, rng)
    classes, yi = np.unique(np.asarray(labels), return_inverse=True)
    table = np.zeros((k, len(classes)), dtype=np.int64)
    np.add.at(table, (assign, yi.ravel()), 1)
    return ClusterReport(k, purity(assign, labels), nmi(assign, labels), table)
