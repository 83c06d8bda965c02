"""Base clustering algorithms and ensemble construction.

Everything here is deterministic given its seed: initial centers come
from the seed's own PCG64 stream, nearest-center ties break toward the
lowest cluster index, and empty clusters are repaired by reseeding at the
point farthest from its currently assigned center. An ensemble is R
independent runs whose seeds are split off one master seed, so the
resulting label matrix is a pure function of (data, config).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .rng import child_seed, make_rng

__all__ = [
    "Partition",
    "LabelMatrix",
    "EnsembleConfig",
    "GmmModel",
    "kmeans",
    "minibatch_kmeans",
    "kmedoids",
    "gmm_fit",
    "gmm_posteriors",
    "gmm_pmax",
    "cluster_once",
    "build_ensemble",
    "concat_ensembles",
    "import_labels",
    "export_labels",
    "ensemble_manifest",
]

ALGORITHMS = ("kmeans_random", "kmeans_plusplus", "minibatch_kmeans", "kmedoids", "gmm")


def _check_data(data) -> np.ndarray:
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError("data must be a non-empty 2-D matrix")
    if not np.isfinite(X).all():
        raise ValueError("data contains NaN or Inf")
    return X


@dataclass(frozen=True)
class Partition:
    """Hard assignment of n points to k clusters."""

    labels: np.ndarray
    k: int
    centroids: np.ndarray | None = None
    inertia: float | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if labels.ndim != 1:
            raise ValueError("labels must be a vector")
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise ValueError("labels must lie in [0, k)")
        if self.centroids is not None:
            cents = np.asarray(self.centroids, dtype=np.float64)
            if cents.shape[0] != self.k or not np.isfinite(cents).all():
                raise ValueError("centroids must be a finite (k, d) matrix")
            object.__setattr__(self, "centroids", cents)

    @property
    def n(self) -> int:
        return self.labels.size


@dataclass
class LabelMatrix:
    """n x R labels, one column per ensemble run, all runs sharing the same k."""

    labels: np.ndarray
    k: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 2:
            raise ValueError("label matrix must be 2-D (n points x R runs)")
        if labels.shape[1] < 2:
            raise ValueError("an ensemble needs R >= 2 runs")
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise ValueError("labels must lie in [0, k)")
        self.labels = labels

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def n_runs(self) -> int:
        return self.labels.shape[1]

    def column(self, r: int) -> Partition:
        return Partition(self.labels[:, r], self.k)

    @classmethod
    def from_partitions(cls, parts: list[Partition], meta: dict | None = None) -> "LabelMatrix":
        if len(parts) < 2:
            raise ValueError("an ensemble needs R >= 2 runs")
        k = parts[0].k
        n = parts[0].n
        if any(p.k != k or p.n != n for p in parts):
            raise ValueError("all runs must share the same n and k")
        return cls(np.column_stack([p.labels for p in parts]), k, meta=dict(meta or {}))


def concat_ensembles(a: LabelMatrix, b: LabelMatrix) -> LabelMatrix:
    """Heterogeneous ensemble: columns of a followed by columns of b."""
    if a.n != b.n or a.k != b.k:
        raise ValueError("ensembles must share n and k to concatenate")
    meta = {"concat_of": [a.meta, b.meta]}
    return LabelMatrix(np.hstack([a.labels, b.labels]), a.k, meta=meta)


@dataclass(frozen=True)
class EnsembleConfig:
    """Recipe for one ensemble: base algorithm, size R, and shared parameters."""

    algorithm: str
    n_runs: int
    k: int
    seed: int
    max_iter: int = 300
    tol: float = 1e-6
    batch_size: int | None = None
    covariance: str = "full"
    reg: float | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r} (known: {', '.join(ALGORITHMS)})")
        if self.n_runs < 2:
            raise ValueError("an ensemble needs R >= 2 runs")
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if self.covariance not in ("full", "diagonal"):
            raise ValueError("covariance must be 'full' or 'diagonal'")


# --- k-means -------------------------------------------------------------


def _assign(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # argmin breaks ties toward the lowest cluster index
    return np.argmin(cdist(X, centroids, "sqeuclidean"), axis=1)


def _repair_empty(X, centroids, labels, counts):
    """Reseed each empty cluster at the point farthest from its assigned center."""
    empties = np.flatnonzero(counts == 0)
    if empties.size == 0:
        return centroids
    dist_own = np.linalg.norm(X - centroids[labels], axis=1)
    taken: set[int] = set()
    for c in empties:
        order = np.argsort(-dist_own, kind="stable")
        pick = next(int(i) for i in order if int(i) not in taken)
        taken.add(pick)
        centroids[c] = X[pick]
        dist_own[pick] = -1.0
    return centroids


def _d2_seeding(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Squared-distance-proportional seeding (the k-means++ init)."""
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = cdist(X, centers[:1], "sqeuclidean")[:, 0]
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[j] = X[idx]
        np.minimum(d2, cdist(X, centers[j : j + 1], "sqeuclidean")[:, 0], out=d2)
    return centers


def kmeans(data, k: int, init: str = "random", seed: int = 0, max_iter: int = 300, tol: float = 1e-6) -> Partition:
    """Lloyd's algorithm; stops when the largest centroid shift drops below tol."""
    X = _check_data(data)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = make_rng(seed)
    if init == "random":
        centroids = X[rng.choice(n, size=k, replace=False)].copy()
    elif init == "d2_sampling":
        centroids = _d2_seeding(X, k, rng)
    else:
        raise ValueError(f"unknown init {init!r} (use 'random' or 'd2_sampling')")

    for _ in range(max_iter):
        labels = _assign(X, centroids)
        counts = np.bincount(labels, minlength=k)
        new_centroids = centroids.copy()
        nonempty = counts > 0
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, X)
        new_centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        new_centroids = _repair_empty(X, new_centroids, labels, counts)
        shift = np.linalg.norm(new_centroids - centroids, axis=1).max()
        centroids = new_centroids
        if shift < tol:
            break

    labels = _assign(X, centroids)
    inertia = float(((X - centroids[labels]) ** 2).sum())
    return Partition(labels, k, centroids=centroids, inertia=inertia)


def minibatch_kmeans(data, k: int, seed: int = 0, max_iter: int = 100, batch_size: int | None = None) -> Partition:
    """Mini-batch k-means with per-center learning rate 1/(points seen).

    Each batch update keeps every center at the exact running mean of all
    points ever assigned to it; final labels come from one full-data
    nearest-center pass.
    """
    X = _check_data(data)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if batch_size is None:
        batch_size = min(1024, n)
    if not 1 <= batch_size <= n:
        raise ValueError(f"need 1 <= batch_size <= n, got {batch_size}")
    rng = make_rng(seed)
    centroids = X[rng.choice(n, size=k, replace=False)].copy()
    seen = np.zeros(k)

    for _ in range(max_iter):
        batch = X[rng.choice(n, size=batch_size, replace=False)]
        labels = _assign(batch, centroids)
        counts = np.bincount(labels, minlength=k).astype(np.float64)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, batch)
        hit = counts > 0
        total = seen + counts
        centroids[hit] = (seen[hit, None] * centroids[hit] + sums[hit]) / total[hit, None]
        seen = total

    labels = _assign(X, centroids)
    inertia = float(((X - centroids[labels]) ** 2).sum())
    return Partition(labels, k, centroids=centroids, inertia=inertia)


def kmedoids(data, k: int, seed: int = 0, max_iter: int = 300) -> Partition:
    """Alternating assign/update k-medoids (medoid = member minimizing summed distance)."""
    X = _check_data(data)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = make_rng(seed)
    medoids = np.array(sorted(rng.choice(n, size=k, replace=False)))

    for _ in range(max_iter):
        labels = _assign(X, X[medoids])
        new_medoids = medoids.copy()
        for c in range(k):
            members = np.flatnonzero(labels == c)
            if members.size == 0:
                continue
            costs = cdist(X[members], X[members]).sum(axis=0)
            new_medoids[c] = members[np.argmin(costs)]
        if np.array_equal(new_medoids, medoids):
            break
        medoids = new_medoids

    labels = _assign(X, X[medoids])
    # k-medoids objective: total within-cluster distance to the medoid
    inertia = float(np.linalg.norm(X - X[medoids][labels], axis=1).sum())
    return Partition(labels, k, centroids=X[medoids].copy(), inertia=inertia)


# --- Gaussian mixture ----------------------------------------------------


@dataclass(frozen=True)
class GmmModel:
    """Fitted k-component Gaussian mixture."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray  # (k, d, d) for full, (k, d) for diagonal
    covariance_type: str
    log_likelihood: float  # mean per-sample log-likelihood at the last E step
    n_iter: int

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]


def _component_log_density(X, mean, cov, covariance_type, component):
    d = X.shape[1]
    centered = X - mean
    if covariance_type == "diagonal":
        if (cov <= 0).any():
            raise ValueError(f"covariance of component {component} collapsed despite regularization")
        maha = ((centered**2) / cov).sum(axis=1)
        logdet = float(np.log(cov).sum())
    else:
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError(f"covariance of component {component} collapsed despite regularization") from None
        sol = np.linalg.solve(chol, centered.T)
        maha = (sol**2).sum(axis=0)
        logdet = 2.0 * float(np.log(np.diag(chol)).sum())
    return -0.5 * (d * np.log(2.0 * np.pi) + logdet + maha)


def _log_prob_matrix(model_like, X):
    weights, means, covs, ctype = model_like
    parts = [
        np.log(weights[c]) + _component_log_density(X, means[c], covs[c], ctype, c)
        for c in range(means.shape[0])
    ]
    return np.column_stack(parts)


def default_gmm_reg(X: np.ndarray) -> float:
    """Default covariance regularizer: 1e-6 x mean feature variance."""
    return 1e-6 * float(np.trace(np.atleast_2d(np.cov(X, rowvar=False, bias=True)))) / X.shape[1]


def gmm_fit(
    data,
    k: int,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-7,
    covariance: str = "full",
    reg: float | None = None,
) -> GmmModel:
    """EM for a k-component Gaussian mixture.

    Stops once the gain in mean per-sample log-likelihood drops below tol.
    ``reg`` is added to covariance diagonals at every M step; a component
    whose covariance is still not positive definite raises, naming it.
    """
    X = _check_data(data)
    n, d = X.shape
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if covariance not in ("full", "diagonal"):
        raise ValueError("covariance must be 'full' or 'diagonal'")
    if reg is None:
        reg = default_gmm_reg(X)
    if reg < 0:
        raise ValueError("reg must be >= 0")

    rng = make_rng(seed)
    means = X[rng.choice(n, size=k, replace=False)].copy()
    base_cov = np.atleast_2d(np.cov(X, rowvar=False, bias=True)) + reg * np.eye(d)
    if covariance == "full":
        covs = np.repeat(base_cov[None, :, :], k, axis=0)
    else:
        covs = np.repeat(np.diag(base_cov)[None, :], k, axis=0)
    weights = np.full(k, 1.0 / k)

    ll = -np.inf
    n_iter = 0
    for it in range(max_iter):
        log_prob = _log_prob_matrix((weights, means, covs, covariance), X)
        log_norm = logsumexp(log_prob, axis=1)
        new_ll = float(log_norm.mean())
        resp = np.exp(log_prob - log_norm[:, None])

        nk = resp.sum(axis=0)
        if (nk < 1e-12).any():
            dead = int(np.argmin(nk))
            raise ValueError(f"component {dead} lost all responsibility mass during EM")
        means = (resp.T @ X) / nk[:, None]
        if covariance == "full":
            for c in range(k):
                centered = X - means[c]
                covs[c] = (resp[:, c, None] * centered).T @ centered / nk[c]
                covs[c][np.diag_indices(d)] += reg
        else:
            for c in range(k):
                centered = X - means[c]
                covs[c] = (resp[:, c] @ (centered**2)) / nk[c] + reg
        weights = nk / n

        n_iter = it + 1
        if new_ll - ll < tol:
            break
        ll = new_ll

    # log-likelihood of the final parameters
    log_prob = _log_prob_matrix((weights, means, covs, covariance), X)
    ll = float(logsumexp(log_prob, axis=1).mean())
    return GmmModel(weights, means, covs, covariance, ll, n_iter)


def gmm_posteriors(model: GmmModel, data) -> np.ndarray:
    """n x k responsibility matrix; rows sum to 1."""
    X = _check_data(data)
    if X.shape[1] != model.d:
        raise ValueError(f"model fitted on d={model.d}, got d={X.shape[1]}")
    log_prob = _log_prob_matrix(
        (model.weights, model.means, model.covariances, model.covariance_type), X
    )
    return np.exp(log_prob - logsumexp(log_prob, axis=1)[:, None])


def gmm_pmax(model: GmmModel, data) -> np.ndarray:
    """Max posterior per point, the classic soft-confidence baseline."""
    return gmm_posteriors(model, data).max(axis=1)


def gmm_labels(model: GmmModel, data) -> Partition:
    resp = gmm_posteriors(model, data)
    return Partition(np.argmax(resp, axis=1), model.k, centroids=model.means.copy())


# --- ensembles -----------------------------------------------------------


def cluster_once(data, config: EnsembleConfig, seed: int) -> Partition:
    """One base-algorithm run with the given seed, using config's shared parameters."""
    if config.algorithm == "kmeans_random":
        return kmeans(data, config.k, "random", seed, config.max_iter, config.tol)
    if config.algorithm == "kmeans_plusplus":
        return kmeans(data, config.k, "d2_sampling", seed, config.max_iter, config.tol)
    if config.algorithm == "minibatch_kmeans":
        return minibatch_kmeans(data, config.k, seed, config.max_iter, config.batch_size)
    if config.algorithm == "kmedoids":
        return kmedoids(data, config.k, seed, config.max_iter)
    if config.algorithm == "gmm":
        model = gmm_fit(data, config.k, seed, config.max_iter, config.tol, config.covariance, config.reg)
        return gmm_labels(model, data)
    raise ValueError(f"unknown algorithm {config.algorithm!r}")


def run_seeds(config: EnsembleConfig) -> list[int]:
    return [child_seed(config.seed, "run", r) for r in range(config.n_runs)]


def build_ensemble(data, config: EnsembleConfig, workers: int | None = None) -> LabelMatrix:
    """R independent runs, seeds split off config.seed.

    Runs are independent, so they may execute on a thread pool; results
    are collected by run index and identical to sequential execution.
    """
    X = _check_data(data)
    seeds = run_seeds(config)

    def one(args):
        r, s = args
        try:
            return cluster_once(X, config, s)
        except Exception as exc:
            raise RuntimeError(f"ensemble run {r} failed: {exc}") from exc

    jobs = list(enumerate(seeds))
    if workers is None or workers <= 1:
        parts = [one(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, jobs))
    meta = {
        "algorithm": config.algorithm,
        "k": config.k,
        "seed": config.seed,
        "run_seeds": seeds,
        "inertias": [p.inertia for p in parts],
    }
    return LabelMatrix.from_partitions(parts, meta=meta)


def ensemble_manifest(config: EnsembleConfig, ensemble: LabelMatrix) -> dict:
    runs = [
        {"run": r, "seed": s, "inertia": i}
        for r, (s, i) in enumerate(
            zip(ensemble.meta.get("run_seeds", []), ensemble.meta.get("inertias", []))
        )
    ]
    return {
        "algorithm": config.algorithm,
        "R": config.n_runs,
        "k": config.k,
        "seed": config.seed,
        "max_iter": config.max_iter,
        "tol": config.tol,
        "batch_size": config.batch_size,
        "covariance": config.covariance,
        "reg": config.reg,
        "n": ensemble.n,
        "runs": runs,
    }


def export_labels(path, ensemble: LabelMatrix) -> None:
    """Plain CSV, n rows x R integer columns, no header."""
    np.savetxt(path, ensemble.labels, fmt="%d", delimiter=",")


def import_labels(path) -> LabelMatrix:
    """Read an externally produced label matrix (n rows x R integer columns).

    Labels are re-encoded per column to 0..k-1 in first-occurrence order;
    every column must use the same number of distinct labels.
    """
    rows: list[list[str]] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(line.split(","))
    if not rows:
        raise ValueError(f"{path}: empty label file")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError(f"{path}: ragged rows")
    raw = np.empty((len(rows), width), dtype=np.int64)
    for i, row in enumerate(rows):
        for j, cell in enumerate(row):
            try:
                raw[i, j] = int(cell)
            except ValueError:
                raise ValueError(f"{path}: non-integer cell at row {i + 1}, column {j + 1}: {cell!r}") from None

    encoded = np.empty_like(raw)
    k = None
    for j in range(width):
        order: dict[int, int] = {}
        col = raw[:, j]
        for v in col:
            if int(v) not in order:
                order[int(v)] = len(order)
        encoded[:, j] = [order[int(v)] for v in col]
        kj = len(order)
        if k is None:
            k = kj
        elif kj != k:
            raise ValueError(f"{path}: column {j + 1} has {kj} labels, expected {k}")
    return LabelMatrix(encoded, int(k), meta={"source": str(path)})
