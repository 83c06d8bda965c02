"""Optimal label alignment between partitions and ensemble stability.

Cluster labels are arbitrary per run, so two partitions are compared
through the permutation of one run's labels that maximizes pointwise
agreement with the other. That permutation is the solution of a linear
sum assignment problem on the k x k contingency matrix; the per-point
stability score is then the fraction of unordered run pairs in which a
point keeps its (aligned) label. Alignment is recomputed per pair, never
chained through intermediate runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .cluster import LabelMatrix, Partition

__all__ = [
    "contingency",
    "hungarian_max",
    "align_labels",
    "align_partition",
    "StabilityVector",
    "stability",
    "pairwise_mean_agreement",
]


def contingency(a, b, k: int | None = None) -> np.ndarray:
    """k x k counts: entry (i, j) = number of points labeled i in a and j in b."""
    a_labels = a.labels if isinstance(a, Partition) else np.asarray(a, dtype=np.int64)
    b_labels = b.labels if isinstance(b, Partition) else np.asarray(b, dtype=np.int64)
    if a_labels.shape != b_labels.shape:
        raise ValueError("partitions must cover the same points")
    if k is None:
        if not (isinstance(a, Partition) and isinstance(b, Partition)):
            raise ValueError("pass k explicitly when giving bare label arrays")
        if a.k != b.k:
            raise ValueError(f"partitions must share k, got {a.k} and {b.k}")
        k = a.k
    counts = np.bincount(a_labels * k + b_labels, minlength=k * k)
    return counts.reshape(k, k)


def _assignment_value(M: np.ndarray) -> int:
    rows, cols = linear_sum_assignment(M, maximize=True)
    return int(M[rows, cols].sum())


def hungarian_max(M) -> tuple[np.ndarray, int]:
    """Maximum-agreement permutation of a square count matrix.

    Returns (perm, agreement) where perm[i] is the column matched to row i
    and agreement = sum_i M[i, perm[i]] is maximal. Solved as a min-cost
    assignment on (max entry - M). Among all maximizing permutations the
    lexicographically smallest one is returned, so aligned labelings are
    reproducible even when the optimum ties.
    """
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("hungarian_max needs a square matrix")
    k = M.shape[0]
    cost = M.max() - M if M.size else M
    rows, cols = linear_sum_assignment(cost)
    best = int(M[rows, cols].sum())

    # fix perm[0], perm[1], ... greedily to the smallest column that still
    # allows the optimum; each feasibility check is one assignment solve
    # on the remaining submatrix (cheap: k is the cluster count)
    perm = np.empty(k, dtype=np.int64)
    free_cols = list(range(k))
    prefix = 0
    for i in range(k):
        for j in free_cols:
            rest = [c for c in free_cols if c != j]
            tail = _assignment_value(M[np.ix_(range(i + 1, k), rest)]) if i + 1 < k else 0
            if prefix + int(M[i, j]) + tail == best:
                perm[i] = j
                prefix += int(M[i, j])
                free_cols.remove(j)
                break
        else:  # pragma: no cover - the optimum is always completable
            raise RuntimeError("assignment refinement failed")
    return perm, best


def _alignment_map(a_labels, b_labels, k: int) -> np.ndarray:
    """Map from b's labels into a's frame: aligned_b = map[b_labels]."""
    perm, _ = hungarian_max(contingency(a_labels, b_labels, k))
    inverse = np.empty(k, dtype=np.int64)
    inverse[perm] = np.arange(k)
    return inverse


def align_labels(b_labels, onto_labels, k: int) -> np.ndarray:
    return _alignment_map(onto_labels, b_labels, k)[b_labels]


def align_partition(b: Partition, onto: Partition) -> Partition:
    """Relabel b so it agrees maximally with ``onto``; idempotent when b == onto."""
    if b.n != onto.n or b.k != onto.k:
        raise ValueError("partitions must share n and k")
    mapping = _alignment_map(onto.labels, b.labels, b.k)
    centroids = None
    if b.centroids is not None:
        centroids = np.empty_like(b.centroids)
        centroids[mapping] = b.centroids
    return Partition(mapping[b.labels], b.k, centroids=centroids, inertia=b.inertia)


@dataclass(frozen=True)
class StabilityVector:
    """Per-point fraction of aligned run pairs that agree; an order-2 U-statistic."""

    c: np.ndarray
    pair_count: int

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64)
        object.__setattr__(self, "c", c)
        if self.pair_count < 1:
            raise ValueError("pair_count must be >= 1")
        if c.size and (c.min() < 0.0 or c.max() > 1.0):
            raise ValueError("stability values must lie in [0, 1]")


def stability(ensemble: LabelMatrix) -> StabilityVector:
    """Stability c_i over all unordered run pairs.

    For each pair (r1 < r2) the second run is aligned onto the first and
    each point contributes an agree/disagree indicator; c_i averages those
    indicators over the R(R-1)/2 pairs.
    """
    labels = ensemble.labels
    n, R = labels.shape
    k = ensemble.k
    agree = np.zeros(n, dtype=np.int64)
    for r1 in range(R - 1):
        for r2 in range(r1 + 1, R):
            aligned = align_labels(labels[:, r2], labels[:, r1], k)
            agree += labels[:, r1] == aligned
    pairs = R * (R - 1) // 2
    return StabilityVector(agree / pairs, pairs)


def pairwise_mean_agreement(ensemble: LabelMatrix) -> np.ndarray:
    """R x R symmetric matrix of mean aligned agreement between runs (diagonal 1)."""
    labels = ensemble.labels
    n, R = labels.shape
    out = np.eye(R)
    for r1 in range(R - 1):
        for r2 in range(r1 + 1, R):
            _, agreement = hungarian_max(contingency(labels[:, r1], labels[:, r2], ensemble.k))
            out[r1, r2] = out[r2, r1] = agreement / n
    return out
