"""External evaluation battery for confidence scores.

Clustering metrics (ACC after optimal alignment, ARI, AMI, NMI), ranking
metrics (AUROC, average precision, risk-coverage area, Spearman of
percentile bins), and the experiment protocols built from them: filtered
reclustering, coverage-accuracy curves, consensus-correctness prediction,
and score convergence versus ensemble size.

Ground-truth noise points (label -1) take part in clustering but are
excluded from both numerator and denominator of every label-based metric.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln
from scipy.stats import rankdata
from scipy.stats import t as student_t

from . import align, baseline, geometry, score as score_mod
from .cluster import EnsembleConfig, LabelMatrix, Partition, build_ensemble, cluster_once
from .data import GroundTruth
from .rng import child_seed, substream

__all__ = [
    "MetricBundle",
    "Curve",
    "FilterSpec",
    "accuracy_after_alignment",
    "correctness_vector",
    "ari",
    "nmi",
    "ami",
    "auroc",
    "auprc",
    "consensus_correctness_labels",
    "coverage_accuracy",
    "aurc",
    "spearman_percentile",
    "filter_and_recluster",
    "convergence_study",
]


@dataclass(frozen=True)
class MetricBundle:
    acc: float
    ari: float
    ami: float
    nmi: float
    silhouette_mean: float

    def as_dict(self) -> dict:
        return {
            "acc": self.acc,
            "ari": self.ari,
            "ami": self.ami,
            "nmi": self.nmi,
            "silhouette_mean": self.silhouette_mean,
        }


@dataclass(frozen=True)
class Curve:
    """Ordered (x, y) pairs of one evaluation curve."""

    x: np.ndarray
    y: np.ndarray
    kind: str

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim != 1 or x.shape != y.shape:
            raise ValueError("curve needs matching x and y vectors")
        if (np.diff(x) <= 0).any():
            raise ValueError("curve x values must be strictly increasing")
        if not np.isfinite(y).all():
            raise ValueError("curve y values must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def to_csv(self, path, names: tuple[str, str] = ("x", "y")) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for xv, yv in zip(self.x, self.y):
                writer.writerow([format(xv, ".17g"), format(yv, ".17g")])


def _truth_arrays(truth) -> np.ndarray:
    if isinstance(truth, GroundTruth):
        return truth.labels
    return np.asarray(truth, dtype=np.int64)


def _pred_labels(pred) -> np.ndarray:
    if isinstance(pred, Partition):
        return pred.labels
    return np.asarray(pred, dtype=np.int64)


def _rect_contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rectangular count matrix for two nonnegative label vectors."""
    ka = int(a.max()) + 1 if a.size else 1
    kb = int(b.max()) + 1 if b.size else 1
    return np.bincount(a * kb + b, minlength=ka * kb).reshape(ka, kb)


def _pad_square(M: np.ndarray) -> np.ndarray:
    size = max(M.shape)
    out = np.zeros((size, size), dtype=M.dtype)
    out[: M.shape[0], : M.shape[1]] = M
    return out


def correctness_vector(pred, truth) -> np.ndarray:
    """1 where the aligned prediction matches ground truth, 0 elsewhere.

    The alignment is the maximum-agreement matching between predicted and
    true labels over non-noise points; noise points are always 0.
    """
    p = _pred_labels(pred)
    t = _truth_arrays(truth)
    if p.shape != t.shape:
        raise ValueError("prediction and truth must cover the same points")
    valid = t >= 0
    if not valid.any():
        raise ValueError("every point is noise; nothing to evaluate")
    # count over the full predicted label range: clusters that only cover
    # noise points still need a row in the matching
    kp = int(p.max()) + 1
    kt = int(t[valid].max()) + 1
    M = np.bincount(p[valid] * kt + t[valid], minlength=kp * kt).reshape(kp, kt)
    perm, _ = align.hungarian_max(_pad_square(M))
    return ((perm[p] == t) & valid).astype(np.int64)


def accuracy_after_alignment(pred, truth) -> float:
    """Fraction of non-noise points matched under the optimal label matching."""
    t = _truth_arrays(truth)
    valid = t >= 0
    correct = correctness_vector(pred, truth)
    return float(correct[valid].mean())


def _pair_metric_inputs(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = _pred_labels(pred)
    t = _truth_arrays(truth)
    if p.shape != t.shape:
        raise ValueError("prediction and truth must cover the same points")
    valid = t >= 0
    if not valid.any():
        raise ValueError("every point is noise; nothing to evaluate")
    # compact both sides to 0..k-1 over the evaluated points
    _, pv = np.unique(p[valid], return_inverse=True)
    _, tv = np.unique(t[valid], return_inverse=True)
    return pv, tv


def ari(pred, truth) -> float:
    """Adjusted Rand index via pair counting with expected-index correction."""
    pv, tv = _pair_metric_inputs(pred, truth)
    n = pv.size
    M = _rect_contingency(pv, tv)
    a = M.sum(axis=1)
    b = M.sum(axis=0)
    sum_comb = float((M * (M - 1) // 2).sum())
    a_comb = float((a * (a - 1) // 2).sum())
    b_comb = float((b * (b - 1) // 2).sum())
    total = n * (n - 1) / 2.0
    expected = a_comb * b_comb / total if total else 0.0
    max_index = (a_comb + b_comb) / 2.0
    if max_index == expected:
        # both partitions trivial (single cluster or all singletons)
        return 1.0
    return (sum_comb - expected) / (max_index - expected)


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def _mutual_information(M: np.ndarray, n: int) -> float:
    a = M.sum(axis=1)
    b = M.sum(axis=0)
    nz = M > 0
    i, j = np.nonzero(nz)
    nij = M[nz].astype(np.float64)
    return float((nij / n * np.log(n * nij / (a[i] * b[j]))).sum())


def nmi(pred, truth) -> float:
    """Normalized mutual information with arithmetic-mean normalization."""
    pv, tv = _pair_metric_inputs(pred, truth)
    n = pv.size
    M = _rect_contingency(pv, tv)
    hu = _entropy(M.sum(axis=1), n)
    hv = _entropy(M.sum(axis=0), n)
    if hu == 0.0 and hv == 0.0:
        return 1.0
    if hu == 0.0 or hv == 0.0:
        return 0.0
    return _mutual_information(M, n) / ((hu + hv) / 2.0)


def _expected_mutual_information(a: np.ndarray, b: np.ndarray, n: int) -> float:
    """Expected MI under the permutation (hypergeometric) model.

    Uses exact integer binomials for small n and log-gamma arithmetic above
    that, where exact combinatorics would be needlessly slow.
    """
    if n <= 64:
        emi = 0.0
        for ai in a:
            for bj in b:
                lo = max(1, ai + bj - n)
                hi = min(ai, bj)
                denom = math.comb(n, bj)
                for nij in range(lo, hi + 1):
                    prob = math.comb(ai, nij) * math.comb(n - ai, bj - nij) / denom
                    emi += prob * (nij / n) * math.log(n * nij / (ai * bj))
        return emi

    emi = 0.0
    log_n_fact = gammaln(n + 1)
    for ai in a:
        for bj in b:
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            if hi < lo:
                continue
            nij = np.arange(lo, hi + 1, dtype=np.float64)
            log_prob = (
                gammaln(ai + 1)
                + gammaln(bj + 1)
                + gammaln(n - ai + 1)
                + gammaln(n - bj + 1)
                - log_n_fact
                - gammaln(nij + 1)
                - gammaln(ai - nij + 1)
                - gammaln(bj - nij + 1)
                - gammaln(n - ai - bj + nij + 1)
            )
            emi += float((np.exp(log_prob) * (nij / n) * np.log(n * nij / (ai * bj))).sum())
    return emi


def ami(pred, truth) -> float:
    """Adjusted mutual information (permutation model, arithmetic mean)."""
    pv, tv = _pair_metric_inputs(pred, truth)
    n = pv.size
    M = _rect_contingency(pv, tv)
    a = M.sum(axis=1)
    b = M.sum(axis=0)
    if a.size == 1 and b.size == 1:
        return 1.0
    hu = _entropy(a, n)
    hv = _entropy(b, n)
    mi = _mutual_information(M, n)
    emi = _expected_mutual_information(a, b, n)
    denominator = (hu + hv) / 2.0 - emi
    if denominator < 0:
        denominator = min(denominator, -np.finfo(np.float64).eps)
    else:
        denominator = max(denominator, np.finfo(np.float64).eps)
    return (mi - emi) / denominator


# --- ranking metrics ------------------------------------------------------


def _check_binary(labels) -> np.ndarray:
    y = np.asarray(labels)
    if set(np.unique(y)) - {0, 1}:
        raise ValueError("labels must be binary 0/1")
    if y.min() == y.max():
        raise ValueError("need both classes present")
    return y.astype(bool)


def auroc(scores, binary_labels) -> float:
    """Rank-sum AUROC with average ranks on ties."""
    y = _check_binary(binary_labels)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auprc(scores, binary_labels) -> float:
    """Average precision: step-summed precision at each threshold group."""
    y = _check_binary(binary_labels)
    s = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order].astype(np.int64)
    # last index of every tied-score group
    boundary = np.flatnonzero(np.diff(s_sorted) != 0)
    group_end = np.append(boundary, y.size - 1)
    tp = np.cumsum(y_sorted)[group_end].astype(np.float64)
    counts = (group_end + 1).astype(np.float64)
    precision = tp / counts
    recall = tp / y.sum()
    recall_prev = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - recall_prev) * precision).sum())


def consensus_correctness_labels(
    ensemble: LabelMatrix, truth, consensus_result: baseline.ConsensusResult | None = None
) -> np.ndarray:
    """1 where the aligned consensus label matches ground truth."""
    if consensus_result is None:
        consensus_result = baseline.consensus(ensemble)
    return correctness_vector(consensus_result.labels, truth)


# --- selective-prediction curves ------------------------------------------


def _retained_order(scores: np.ndarray) -> np.ndarray:
    # descending score, ties broken by point index
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def _subset_accuracy(correct, valid, selected) -> float:
    chosen = selected[valid[selected]]
    if chosen.size == 0:
        raise ValueError("retained set contains no evaluable points")
    return float(correct[chosen].mean())


def coverage_accuracy(scores, pred, truth, coverages=None) -> Curve:
    """Accuracy of a fixed reference prediction on the top-c score fraction.

    The alignment to ground truth is computed once on the full data; each
    coverage keeps the ceil(c*n) highest-scored points.
    """
    if coverages is None:
        coverages = np.arange(0.1, 1.01, 0.1)
    coverages = np.sort(np.asarray(coverages, dtype=np.float64))
    if coverages.size == 0 or coverages[0] <= 0.0 or coverages[-1] > 1.0:
        raise ValueError("coverages must lie in (0, 1]")
    t = _truth_arrays(truth)
    correct = correctness_vector(pred, truth)
    valid = t >= 0
    order = _retained_order(scores)
    n = t.size
    accs = []
    for c in coverages:
        m = int(np.ceil(c * n))
        accs.append(_subset_accuracy(correct, valid, order[:m]))
    return Curve(coverages, np.array(accs), kind="coverage_accuracy")


def aurc(scores, pred, truth, grid: int = 100) -> float:
    """Area under risk-coverage, normalized to mean risk over c in [1/n, 1]."""
    t = _truth_arrays(truth)
    n = t.size
    coverages = np.linspace(1.0 / n, 1.0, grid)
    curve = coverage_accuracy(scores, pred, truth, coverages)
    risk = 1.0 - curve.y
    return float(np.trapezoid(risk, curve.x) / (1.0 - 1.0 / n))


def spearman_percentile(scores, pred, truth, bins: int = 10) -> float:
    """Spearman correlation between score-percentile bins and per-bin accuracy.

    Points are sorted by score (ties by index) and split into equal-count
    bins; within-bin accuracy uses the full-data alignment. Returns 0 when
    per-bin accuracy is constant (no ordering to correlate).
    """
    if bins < 2:
        raise ValueError("need at least 2 bins")
    s = np.asarray(scores, dtype=np.float64)
    t = _truth_arrays(truth)
    if s.size < bins:
        raise ValueError("more bins than points: some bins would be empty")
    correct = correctness_vector(pred, truth)
    valid = t >= 0
    order = np.argsort(s, kind="stable")
    accs = []
    for chunk in np.array_split(order, bins):
        chosen = chunk[valid[chunk]]
        if chosen.size == 0:
            raise ValueError("a percentile bin contains no evaluable points")
        accs.append(correct[chosen].mean())
    accs = np.asarray(accs)
    bin_ranks = np.arange(1.0, bins + 1.0)
    acc_ranks = rankdata(accs)
    if np.ptp(acc_ranks) == 0:
        return 0.0
    br = bin_ranks - bin_ranks.mean()
    ar = acc_ranks - acc_ranks.mean()
    return float((br * ar).sum() / np.sqrt((br**2).sum() * (ar**2).sum()))


# --- filtering protocol ----------------------------------------------------


@dataclass(frozen=True)
class FilterSpec:
    """Which score to filter by and how much to keep."""

    criterion: str  # random | consensus | c | s_tilde | cake_pr | cake_hm
    keep_fraction: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError("keep_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class MetricCI:
    mean: float
    half_width: float

    @property
    def lo(self) -> float:
        return self.mean - self.half_width

    @property
    def hi(self) -> float:
        return self.mean + self.half_width


@dataclass(frozen=True)
class FilterResult:
    criterion: str
    kept: np.ndarray
    metrics: dict[str, MetricCI]
    trial_values: dict[str, list[float]] = field(default_factory=dict)


_CRITERION_COLUMNS = {"consensus": "consensus_agree", "c": "c", "s_tilde": "s_tilde",
                      "cake_pr": "cake_pr", "cake_hm": "cake_hm"}


def select_kept(scores: score_mod.ScoreTable, spec: FilterSpec, n: int) -> np.ndarray:
    m = int(np.floor(spec.keep_fraction * n))
    if spec.criterion == "random":
        rng = substream(spec.seed, "filter_random")
        return np.sort(rng.choice(n, size=m, replace=False))
    if spec.criterion not in _CRITERION_COLUMNS:
        raise ValueError(f"unknown filter criterion {spec.criterion!r}")
    column = scores.column(_CRITERION_COLUMNS[spec.criterion])
    return np.sort(_retained_order(column)[:m])


def _t_interval(values: list[float]) -> MetricCI:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if arr.size < 2:
        return MetricCI(mean, 0.0)
    half = float(student_t.ppf(0.975, arr.size - 1) * arr.std(ddof=1) / np.sqrt(arr.size))
    return MetricCI(mean, half)


def filter_and_recluster(
    data,
    scores: score_mod.ScoreTable,
    spec: FilterSpec,
    recluster: EnsembleConfig,
    truth,
    trials: int = 10,
) -> FilterResult:
    """Keep the highest-scored fraction, recluster it fresh, report metrics.

    Each trial runs the base algorithm with an independent derived seed -
    separate from the scoring ensemble - and evaluates against ground
    truth on the kept subset; results are summarized as means with
    Student-t 95% intervals.
    """
    X = np.asarray(data, dtype=np.float64)
    n = X.shape[0]
    if trials < 2:
        raise ValueError("need trials >= 2 for confidence intervals")
    kept = select_kept(scores, spec, n)
    if kept.size < recluster.k:
        raise ValueError(f"kept {kept.size} points, fewer than k={recluster.k}")
    sub_X = X[kept]
    sub_truth = _truth_arrays(truth)[kept]

    per_metric: dict[str, list[float]] = {m: [] for m in ("acc", "ari", "ami", "nmi", "silhouette_mean")}
    for trial in range(trials):
        seed = child_seed(spec.seed, "filter_trial", spec.criterion, trial)
        part = cluster_once(sub_X, recluster, seed)
        per_metric["acc"].append(accuracy_after_alignment(part, sub_truth))
        per_metric["ari"].append(ari(part, sub_truth))
        per_metric["ami"].append(ami(part, sub_truth))
        per_metric["nmi"].append(nmi(part, sub_truth))
        if kept.size <= score_mod.EXACT_MODE_MAX_N:
            sil = geometry.silhouette_exact(sub_X, part)
        else:
            sil = geometry.silhouette_centroid(sub_X, part)
        per_metric["silhouette_mean"].append(float(sil.mean()))

    metrics = {name: _t_interval(vals) for name, vals in per_metric.items()}
    return FilterResult(spec.criterion, kept, metrics, per_metric)


# --- convergence protocol ---------------------------------------------------


@dataclass(frozen=True)
class ConvergencePoint:
    n_runs: int
    median_std: float
    q25: float
    q75: float


def convergence_study(
    data,
    config: EnsembleConfig,
    r_grid,
    n_subensembles: int = 10,
    pool_size: int | None = None,
    silhouette_mode: str = "centroid",
) -> list[ConvergencePoint]:
    """Per-point score variability versus ensemble size.

    A pool of ``pool_size`` runs is built once; for each R on the grid,
    ``n_subensembles`` sub-ensembles of R distinct runs are drawn and the
    harmonic-mean score recomputed, and the per-point std across them is
    summarized by median and quartiles. With pool_size == max(r_grid) the
    sub-ensembles at the top of the grid coincide, pinning the std at 0;
    pass a larger pool to measure true variability there.
    """
    r_grid = sorted(int(r) for r in r_grid)
    if n_subensembles < 2:
        raise ValueError("need at least 2 sub-ensembles")
    if r_grid[0] < 2:
        raise ValueError("sub-ensembles need R >= 2")
    if pool_size is None:
        pool_size = r_grid[-1]
    if pool_size < r_grid[-1]:
        raise ValueError("pool must be at least as large as max(r_grid)")

    pool = build_ensemble(data, replace(config, n_runs=pool_size))
    out = []
    for R in r_grid:
        scores = np.empty((n_subensembles, pool.n))
        for b in range(n_subensembles):
            rng = substream(config.seed, "convergence", R, b)
            cols = np.sort(rng.choice(pool_size, size=R, replace=False))
            sub = LabelMatrix(pool.labels[:, cols], pool.k)
            table = score_mod.compute_scores(data, sub, silhouette_mode=silhouette_mode)
            scores[b] = table.cake_hm
        stds = scores.std(axis=0)
        q25, med, q75 = np.percentile(stds, [25, 50, 75])
        out.append(ConvergencePoint(R, float(med), float(q25), float(q75)))
    return out
