"""Comparison signals: consensus agreement, vote entropy, bootstrap stability.

These are the agreement-only confidence heuristics the fused scores are
measured against, plus the rank-average fusion used for error discovery.
All of them share the alignment machinery with the stability component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import align
from .cluster import EnsembleConfig, LabelMatrix, Partition, cluster_once
from .rng import child_seed, substream

__all__ = [
    "ConsensusResult",
    "consensus",
    "VoteDistribution",
    "entropy_agreement",
    "BootstrapConfig",
    "BootstrapStability",
    "bootstrap_stability",
    "rank_average_fusion",
]

ENTROPY_EPS = 1e-12


@dataclass(frozen=True)
class ConsensusResult:
    """Majority-vote consensus over runs aligned to the medoid reference run."""

    reference_run: int
    labels: np.ndarray  # z*, the consensus partition
    per_point_agreement: np.ndarray  # fraction of aligned runs voting z*_i
    k: int

    def partition(self) -> Partition:
        return Partition(self.labels, self.k)


def _aligned_vote_counts(ensemble: LabelMatrix, onto: np.ndarray) -> np.ndarray:
    """(n, k) counts of aligned votes, aligning every run onto ``onto``."""
    n, R = ensemble.labels.shape
    k = ensemble.k
    votes = np.zeros((n, k), dtype=np.int64)
    rows = np.arange(n)
    for r in range(R):
        aligned = align.align_labels(ensemble.labels[:, r], onto, k)
        votes[rows, aligned] += 1
    return votes


def consensus(ensemble: LabelMatrix) -> ConsensusResult:
    """Consensus partition and per-point agreement.

    The reference is the medoid run: the one with the highest mean aligned
    agreement with all other runs (lowest index on ties). Every run is
    aligned onto it and each point takes the majority label, ties going to
    the lowest label index.
    """
    agreement = align.pairwise_mean_agreement(ensemble)
    R = ensemble.n_runs
    mean_to_others = (agreement.sum(axis=1) - 1.0) / (R - 1)
    reference = int(np.argmax(mean_to_others))

    votes = _aligned_vote_counts(ensemble, ensemble.labels[:, reference])
    z_star = np.argmax(votes, axis=1)  # argmax ties -> lowest label
    per_point = votes[np.arange(ensemble.n), z_star] / R
    return ConsensusResult(reference, z_star.astype(np.int64), per_point, ensemble.k)


@dataclass(frozen=True)
class VoteDistribution:
    """Aligned-vote fractions per point and the normalized-entropy score."""

    p: np.ndarray  # (n, k), rows sum to 1
    h_hat: np.ndarray  # 1 - H/log k, in [0, 1]


def entropy_agreement(ensemble: LabelMatrix, reference: ConsensusResult | None = None) -> VoteDistribution:
    """Entropy-based agreement: align runs to the consensus, score vote spread.

    h_hat_i = 1 - H_i / log k with H_i = -sum_l p_il log(p_il + eps);
    unanimous votes give 1, uniform votes give about 0.
    """
    if ensemble.k < 2:
        raise ValueError("entropy agreement needs k >= 2")
    if reference is None:
        reference = consensus(ensemble)
    votes = _aligned_vote_counts(ensemble, reference.labels)
    p = votes / ensemble.n_runs
    h = -(p * np.log(p + ENTROPY_EPS)).sum(axis=1)
    h = np.maximum(h, 0.0)
    h_hat = np.clip(1.0 - h / np.log(ensemble.k), 0.0, 1.0)
    return VoteDistribution(p, h_hat)


@dataclass(frozen=True)
class BootstrapConfig:
    """Subsample count B, subsample fraction, and the master seed."""

    n_boot: int = 20
    fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.n_boot < 2:
            raise ValueError("need B >= 2 bootstrap runs")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must lie in (0, 1]")


@dataclass(frozen=True)
class BootstrapStability:
    """Average aligned agreement over subsample pairs containing each point."""

    scores: np.ndarray
    pair_counts: np.ndarray  # pairs in which the point was shared
    low_coverage: np.ndarray  # points seen in fewer than 2 pairs (scored 0)


def bootstrap_stability(data, config: EnsembleConfig, boot: BootstrapConfig) -> BootstrapStability:
    """Stability from reclustering subsamples instead of reseeding runs.

    B subsamples of size floor(fraction * n) are clustered independently;
    for every subsample pair the second is aligned onto the first using
    only their shared points, and each shared point contributes an
    agree/disagree indicator. Pairs sharing fewer than k points are
    skipped (a k x k matching on them would be meaningless).
    """
    X = np.asarray(data, dtype=np.float64)
    n = X.shape[0]
    m = int(np.floor(boot.fraction * n))
    if m < config.k:
        raise ValueError(f"subsample size {m} is smaller than k={config.k}")

    subsets: list[np.ndarray] = []
    parts: list[np.ndarray] = []
    for b in range(boot.n_boot):
        rng = substream(boot.seed, "subsample", b)
        idx = np.sort(rng.choice(n, size=m, replace=False))
        part = cluster_once(X[idx], config, child_seed(boot.seed, "boot", b))
        subsets.append(idx)
        labels = np.full(n, -1, dtype=np.int64)
        labels[idx] = part.labels
        parts.append(labels)

    agree = np.zeros(n, dtype=np.float64)
    pair_counts = np.zeros(n, dtype=np.int64)
    for b1 in range(boot.n_boot - 1):
        for b2 in range(b1 + 1, boot.n_boot):
            shared = np.intersect1d(subsets[b1], subsets[b2], assume_unique=True)
            if shared.size < config.k:
                continue
            a = parts[b1][shared]
            b = parts[b2][shared]
            aligned = align.align_labels(b, a, config.k)
            agree[shared] += a == aligned
            pair_counts[shared] += 1

    low = pair_counts < 2
    scores = np.zeros(n)
    ok = ~low
    scores[ok] = agree[ok] / pair_counts[ok]
    return BootstrapStability(scores, pair_counts, low)


def rank_average_fusion(score_a, score_b) -> np.ndarray:
    """Average the two scores' fractional ranks, rescaled to [0, 1].

    Ties get average ranks, so the fusion of a score with its own reverse
    is constant 0.5.
    """
    a = np.asarray(score_a, dtype=np.float64)
    b = np.asarray(score_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("scores must be equal-length vectors")
    n = a.size
    if n == 1:
        return np.array([0.5])
    avg = (rankdata(a) + rankdata(b)) / 2.0
    return (avg - 1.0) / (n - 1.0)
