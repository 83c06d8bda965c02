"""Per-run Silhouette computation and ensemble aggregation.

Three interchangeable ways to score geometric fit per point and run:

* exact - mean distance to own-cluster members vs. the nearest other
  cluster's mean distance, O(n^2 d) per run. Distances are computed in
  row chunks and shared across all runs of an ensemble, which is what
  makes exact scoring viable at n in the tens of thousands.
* centroid - distances to cluster means instead of members, O(nkd); the
  standard proxy for centroidal base algorithms.
* kernel - the centroid form with distances taken in the feature space of
  a PSD kernel, for non-convex cluster shapes. The Gram matrix is built
  once and reused across runs.

Per-point scores from the R runs are then reduced to mean, std, and the
geometric reliability s_tilde = max(0, mean - std). Points whose cluster
is a singleton score 0 in every mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .cluster import Partition

__all__ = [
    "SilhouetteTable",
    "KernelGram",
    "silhouette_exact",
    "silhouette_exact_table",
    "silhouette_centroid",
    "cluster_means",
    "kernel_gram_self_tuning_rbf",
    "kernel_distance_sq",
    "silhouette_kernel",
    "aggregate",
    "save_gram",
    "load_gram",
]


@dataclass(frozen=True)
class SilhouetteTable:
    """Per-point per-run silhouettes plus their ensemble statistics."""

    s: np.ndarray  # (n, R) in [-1, 1]
    mu: np.ndarray
    sigma: np.ndarray
    s_tilde: np.ndarray  # in [0, 1]
    mode: str
    remap: bool = False


@dataclass(frozen=True)
class KernelGram:
    """n x n PSD kernel matrix, optionally with self-tuning bandwidths."""

    K: np.ndarray
    bandwidths: np.ndarray | None = None
    knn: int | None = None

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64)
        object.__setattr__(self, "K", K)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ValueError("Gram matrix must be square")
        if not np.allclose(K, K.T, atol=1e-9):
            raise ValueError("Gram matrix must be symmetric within 1e-9")
        if (np.diag(K) <= 0).any():
            raise ValueError("Gram diagonal must be positive")

    @property
    def n(self) -> int:
        return self.K.shape[0]


def _labels_of(partition) -> tuple[np.ndarray, int]:
    if isinstance(partition, Partition):
        return partition.labels, partition.k
    raise TypeError("expected a Partition")


def _silhouette_from_cluster_stats(labels, counts, own_stat, per_cluster_stat):
    """Assemble (b - a) / max(a, b) given per-point own-cluster and per-cluster stats.

    per_cluster_stat is (n, k): distance-like value from each point to each
    cluster; empty clusters must already be +inf. Singletons score 0.
    """
    n, k = per_cluster_stat.shape
    other = per_cluster_stat.copy()
    other[np.arange(n), labels] = np.inf
    b = other.min(axis=1)
    a = own_stat
    denom = np.maximum(a, b)
    s = np.zeros(n)
    ok = np.isfinite(b) & (denom > 0)
    s[ok] = (b[ok] - a[ok]) / denom[ok]
    singletons = counts[labels] == 1
    s[singletons] = 0.0
    return s


def silhouette_exact_table(data, labels_matrix, k: int, chunk_rows: int = 1024) -> np.ndarray:
    """Exact silhouettes for every column of an (n, R) label matrix at once.

    The n x n distance work is done once in row chunks; each run only adds
    one (chunk x n) @ (n x k) product to get its per-cluster distance sums.
    """
    X = np.asarray(data, dtype=np.float64)
    labels_matrix = np.asarray(labels_matrix, dtype=np.int64)
    if labels_matrix.ndim == 1:
        labels_matrix = labels_matrix[:, None]
    n, R = labels_matrix.shape
    if k < 2:
        raise ValueError("silhouette needs k >= 2")
    if X.shape[0] != n:
        raise ValueError("data and labels must cover the same points")

    onehots = [np.zeros((n, k)) for _ in range(R)]
    for r in range(R):
        onehots[r][np.arange(n), labels_matrix[:, r]] = 1.0
    counts = [oh.sum(axis=0) for oh in onehots]

    sums = [np.empty((n, k)) for _ in range(R)]
    for start in range(0, n, chunk_rows):
        stop = min(start + chunk_rows, n)
        D = cdist(X[start:stop], X)
        for r in range(R):
            sums[r][start:stop] = D @ onehots[r]

    out = np.empty((n, R))
    idx = np.arange(n)
    for r in range(R):
        labels = labels_matrix[:, r]
        cnt = counts[r]
        own_cnt = cnt[labels]
        a = np.zeros(n)
        multi = own_cnt > 1
        a[multi] = sums[r][idx[multi], labels[multi]] / (own_cnt[multi] - 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            mean_to = np.where(cnt > 0, sums[r] / cnt, np.inf)
        out[:, r] = _silhouette_from_cluster_stats(labels, cnt, a, mean_to)
    return out


def silhouette_exact(data, partition: Partition, chunk_rows: int = 1024) -> np.ndarray:
    """Classic silhouette: s_i = (b_i - a_i) / max(a_i, b_i)."""
    labels, k = _labels_of(partition)
    return silhouette_exact_table(data, labels, k, chunk_rows)[:, 0]


def cluster_means(data, labels, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-cluster means and counts; empty clusters get NaN means."""
    X = np.asarray(data, dtype=np.float64)
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.zeros((k, X.shape[1]))
    np.add.at(sums, labels, X)
    with np.errstate(invalid="ignore"):
        means = sums / counts[:, None]
    return means, counts


def silhouette_centroid(data, partition: Partition, centroids: np.ndarray | None = None) -> np.ndarray:
    """Centroid-proxy silhouette: distances to cluster means, not members.

    Centroids are recomputed from the labels by default, so imported label
    matrices and converged centroidal runs are treated identically; pass
    ``centroids`` to score against externally fitted centers.
    """
    X = np.asarray(data, dtype=np.float64)
    labels, k = _labels_of(partition)
    if k < 2:
        raise ValueError("silhouette needs k >= 2")
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    if centroids is None:
        if (counts == 0).any():
            empty = int(np.flatnonzero(counts == 0)[0])
            raise ValueError(f"cluster {empty} is empty; cannot form its centroid")
        centroids, _ = cluster_means(X, labels, k)
    centroids = np.asarray(centroids, dtype=np.float64)
    dist = cdist(X, centroids)
    a = dist[np.arange(X.shape[0]), labels]
    per_cluster = np.where(counts[None, :] > 0, dist, np.inf)
    return _silhouette_from_cluster_stats(labels, counts, a, per_cluster)


def kernel_gram_self_tuning_rbf(data, knn: int = 7) -> KernelGram:
    """Self-tuning RBF Gram: K_ij = exp(-||x_i - x_j||^2 / (sigma_i sigma_j)).

    sigma_i is the distance from x_i to its knn-th nearest *distinct*
    neighbor; zero-distance duplicates are skipped so bandwidths stay
    strictly positive.
    """
    X = np.asarray(data, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= knn < n:
        raise ValueError(f"need 1 <= knn < n, got knn={knn}, n={n}")
    d2 = cdist(X, X, "sqeuclidean")
    sigmas = np.empty(n)
    for i in range(n):
        positive = np.sort(d2[i][d2[i] > 0.0])
        if positive.size < knn:
            raise ValueError(f"point {i} has fewer than {knn + 1} distinct points around it")
        sigmas[i] = np.sqrt(positive[knn - 1])
    K = np.exp(-d2 / np.outer(sigmas, sigmas))
    return KernelGram(K, bandwidths=sigmas, knn=knn)


def linear_gram(data) -> KernelGram:
    """Plain inner-product Gram; kernel distances then reduce to euclidean ones."""
    X = np.asarray(data, dtype=np.float64)
    K = X @ X.T
    K = (K + K.T) / 2.0
    diag_floor = K.diagonal().copy()
    # keep the diagonal positive for points at the origin
    np.fill_diagonal(K, np.maximum(diag_floor, 1e-300))
    return KernelGram(K)


def kernel_distance_sq(gram: KernelGram, point_index: int, cluster_members) -> float:
    """Squared feature-space distance from one point to a cluster's mean."""
    members = np.asarray(cluster_members, dtype=np.int64)
    if members.size == 0:
        raise ValueError("cluster_members must be nonempty")
    K = gram.K
    i = int(point_index)
    value = (
        K[i, i]
        - 2.0 * K[i, members].mean()
        + K[np.ix_(members, members)].mean()
    )
    return max(float(value), 0.0)


def silhouette_kernel(gram: KernelGram, partition: Partition) -> np.ndarray:
    """Silhouette with distances to cluster means taken in kernel feature space."""
    labels, k = _labels_of(partition)
    if k < 2:
        raise ValueError("silhouette needs k >= 2")
    K = gram.K
    n = K.shape[0]
    if labels.size != n:
        raise ValueError("partition does not match Gram size")
    counts = np.bincount(labels, minlength=k).astype(np.float64)

    cross = np.full((n, k), np.inf)
    within = np.full(k, np.inf)
    for c in range(k):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            continue
        cross[:, c] = K[:, members].mean(axis=1)
        within[c] = K[np.ix_(members, members)].mean()
    diag = np.diag(K)
    with np.errstate(invalid="ignore"):
        d2 = diag[:, None] - 2.0 * cross + within[None, :]
    d2 = np.where(np.isfinite(d2), np.maximum(d2, 0.0), np.inf)
    dist = np.sqrt(d2)
    a = dist[np.arange(n), labels]
    return _silhouette_from_cluster_stats(labels, counts, a, dist)


def aggregate(per_run: np.ndarray, remap: bool = False, mode: str = "exact") -> SilhouetteTable:
    """Reduce an (n, R) silhouette table to mu, sigma (population), s_tilde.

    Default: s_tilde = max(0, mu - sigma). With ``remap`` the signal from
    negative means is preserved instead via ((mu - sigma) + 1) / 2, clamped
    to [0, 1].
    """
    s = np.atleast_2d(np.asarray(per_run, dtype=np.float64))
    if s.ndim != 2 or s.shape[1] < 1:
        raise ValueError("need an (n, R) table with R >= 1")
    mu = s.mean(axis=1)
    sigma = s.std(axis=1)  # population convention, divide by R
    raw = mu - sigma
    if remap:
        s_tilde = np.clip((raw + 1.0) / 2.0, 0.0, 1.0)
    else:
        s_tilde = np.maximum(raw, 0.0)
    return SilhouetteTable(s, mu, sigma, s_tilde, mode=mode, remap=remap)


def save_gram(path, gram: KernelGram) -> None:
    """Binary cache: int64 n header, then n*n row-major float64."""
    with open(path, "wb") as fh:
        fh.write(np.int64(gram.n).tobytes())
        fh.write(np.ascontiguousarray(gram.K, dtype=np.float64).tobytes())


def load_gram(path) -> KernelGram:
    with open(path, "rb") as fh:
        n = int(np.frombuffer(fh.read(8), dtype=np.int64)[0])
        K = np.frombuffer(fh.read(8 * n * n), dtype=np.float64).reshape(n, n).copy()
    return KernelGram(K)
