"""Synthetic dataset generation, CSV ingestion, and basic preprocessing.

Datasets are plain ``(n, d)`` float64 arrays. Ground truth travels
separately as integer class ids ``0..k_true-1`` with ``-1`` marking noise
points: noise is clustered like any other point but excluded from
label-based metrics.

The synthetic families S1-S7 are 2-D Gaussian mixtures with fixed sizes
and standard deviations; their cluster centers are frozen here (see
``FAMILIES``) so that generated datasets are bit-reproducible given a
seed. Center geometry is chosen so k-means at the true k is mostly stable
but still makes boundary mistakes, which is the regime the confidence
scores are designed to expose.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .rng import substream

__all__ = [
    "GroundTruth",
    "SyntheticSpec",
    "FAMILIES",
    "generate_synthetic",
    "gaussian_blobs",
    "load_csv",
    "save_csv",
    "standardize",
    "dataset_manifest",
]


@dataclass(frozen=True)
class GroundTruth:
    """True class ids per point; -1 flags noise/outlier points."""

    labels: np.ndarray
    k_true: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if self.k_true < 1:
            raise ValueError("k_true must be >= 1")
        valid = labels >= 0
        if not valid.any():
            raise ValueError("ground truth needs at least one non-noise point")
        if labels[valid].max() >= self.k_true:
            raise ValueError("non-noise labels must lie in [0, k_true)")

    @property
    def noise_mask(self) -> np.ndarray:
        return self.labels < 0


@dataclass(frozen=True)
class GaussianFamily:
    """Frozen geometry of one synthetic family."""

    name: str
    sizes: tuple[int, ...]
    stds: tuple[float, ...]
    centers: tuple[tuple[float, float], ...]
    noise_count: int = 0
    noise_box: tuple[tuple[float, float], tuple[float, float]] | None = None

    @property
    def n(self) -> int:
        return sum(self.sizes) + self.noise_count

    @property
    def k_true(self) -> int:
        return len(self.sizes)


# Versioned center constants. Separations are in units of the largest
# cluster std so each family lands in its intended difficulty regime.
FAMILIES: dict[str, GaussianFamily] = {
    # three equal, moderately overlapping blobs
    "s1": GaussianFamily(
        "s1",
        sizes=(1334, 1333, 1333),
        stds=(2.0, 2.0, 2.0),
        centers=((0.0, 0.0), (8.0, 0.0), (4.0, 7.0)),
    ),
    # unequal spreads
    "s2": GaussianFamily(
        "s2",
        sizes=(1000, 1000, 1000),
        stds=(2.0, 2.5, 1.5),
        centers=((0.0, 0.0), (9.0, 0.0), (4.5, 8.0)),
    ),
    # compact blobs in a sea of uniform noise
    "s3": GaussianFamily(
        "s3",
        sizes=(1000, 1000, 1000),
        stds=(1.0, 1.0, 1.0),
        centers=((0.0, 0.0), (10.0, 0.0), (5.0, 8.5)),
        noise_count=1500,
        noise_box=((-6.0, 16.0), (-6.0, 14.5)),
    ),
    # four wide blobs at square corners, mixing in the middle
    "s4": GaussianFamily(
        "s4",
        sizes=(750, 750, 750, 750),
        stds=(3.0, 3.0, 3.0, 3.0),
        centers=((0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (10.0, 10.0)),
    ),
    # strong density contrast
    "s5": GaussianFamily(
        "s5",
        sizes=(1334, 1333, 1333),
        stds=(0.2, 3.0, 1.0),
        centers=((0.0, 0.0), (10.0, 0.0), (5.0, 9.0)),
    ),
    # sparse central cluster overlapping two dense flankers
    "s6": GaussianFamily(
        "s6",
        sizes=(1334, 1333, 1333),
        stds=(0.4, 2.5, 0.4),
        centers=((-6.0, 0.0), (0.0, 0.0), (6.0, 0.0)),
    ),
    # sizes and spreads both increasing
    "s7": GaussianFamily(
        "s7",
        sizes=(500, 1000, 2500),
        stds=(0.3, 1.5, 2.5),
        centers=((0.0, 0.0), (6.5, 3.5), (12.0, -2.0)),
    ),
}

TWO_MOONS_N = 1200
TWO_MOONS_NOISE = 0.06
TWO_MOONS_OUTLIER_FRACTION = 0.03

_FAMILY_ALIASES = {name: name for name in FAMILIES} | {"twomoons": "twomoons", "two_moons": "twomoons"}


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one synthetic dataset: family, seed, optional size overrides."""

    family: str
    seed: int
    sizes: tuple[int, ...] | None = None
    noise_count: int | None = None

    def canonical_family(self) -> str:
        key = self.family.strip().lower().replace("-", "_")
        if key not in _FAMILY_ALIASES:
            known = ", ".join(sorted(_FAMILY_ALIASES))
            raise ValueError(f"unknown synthetic family {self.family!r} (known: {known})")
        return _FAMILY_ALIASES[key]


def _check_sizes(sizes) -> tuple[int, ...]:
    sizes = tuple(int(s) for s in sizes)
    if any(s <= 0 for s in sizes):
        raise ValueError(f"override sizes must be positive, got {sizes}")
    return sizes


def _generate_gaussian_family(fam: GaussianFamily, spec: SyntheticSpec):
    sizes = fam.sizes if spec.sizes is None else _check_sizes(spec.sizes)
    if len(sizes) != fam.k_true:
        raise ValueError(f"{fam.name} takes {fam.k_true} cluster sizes, got {len(sizes)}")
    noise_count = fam.noise_count if spec.noise_count is None else int(spec.noise_count)
    if noise_count < 0:
        raise ValueError("noise_count must be >= 0")

    blocks, labels = [], []
    for c, (size, std, center) in enumerate(zip(sizes, fam.stds, fam.centers)):
        rng = substream(spec.seed, fam.name, c)
        blocks.append(np.asarray(center) + std * rng.standard_normal((size, 2)))
        labels.append(np.full(size, c, dtype=np.int64))
    if noise_count:
        rng = substream(spec.seed, fam.name, "noise")
        (x0, x1), (y0, y1) = fam.noise_box
        pts = np.column_stack(
            [rng.uniform(x0, x1, noise_count), rng.uniform(y0, y1, noise_count)]
        )
        blocks.append(pts)
        labels.append(np.full(noise_count, -1, dtype=np.int64))
    data = np.concatenate(blocks)
    truth = GroundTruth(np.concatenate(labels), k_true=fam.k_true)
    return data, truth


def _generate_two_moons(spec: SyntheticSpec):
    n = TWO_MOONS_N if spec.sizes is None else sum(_check_sizes(spec.sizes))
    n_upper = n // 2
    n_lower = n - n_upper
    rng = substream(spec.seed, "twomoons", 0)
    t_up = rng.uniform(0.0, np.pi, n_upper)
    t_lo = rng.uniform(0.0, np.pi, n_lower)
    upper = np.column_stack([np.cos(t_up), np.sin(t_up)])
    lower = np.column_stack([1.0 - np.cos(t_lo), 0.5 - np.sin(t_lo)])
    data = np.concatenate([upper, lower])
    data += TWO_MOONS_NOISE * substream(spec.seed, "twomoons", "jitter").standard_normal(data.shape)
    labels = np.concatenate(
        [np.zeros(n_upper, dtype=np.int64), np.ones(n_lower, dtype=np.int64)]
    )

    n_out = int(round(TWO_MOONS_OUTLIER_FRACTION * n)) if spec.noise_count is None else int(spec.noise_count)
    if n_out:
        rng = substream(spec.seed, "twomoons", "noise")
        lo = data.min(axis=0) - 0.3
        hi = data.max(axis=0) + 0.3
        pts = np.column_stack([rng.uniform(lo[j], hi[j], n_out) for j in range(2)])
        data = np.concatenate([data, pts])
        labels = np.concatenate([labels, np.full(n_out, -1, dtype=np.int64)])
    return data, GroundTruth(labels, k_true=2)


def generate_synthetic(spec: SyntheticSpec) -> tuple[np.ndarray, GroundTruth]:
    """Generate one synthetic dataset; pure function of (family, seed, overrides)."""
    family = spec.canonical_family()
    if family == "twomoons":
        return _generate_two_moons(spec)
    return _generate_gaussian_family(FAMILIES[family], spec)


def gaussian_blobs(
    n: int, d: int, k: int, seed: int, cluster_std: float = 1.0, center_spread: float = 1.0
) -> tuple[np.ndarray, GroundTruth]:
    """Isotropic Gaussian blobs in d dimensions for benchmarks and scaling runs.

    Centers are drawn once as ``center_spread * N(0, I_d)``; sizes are as
    equal as n allows. The defaults give partially overlapping clusters,
    so per-point scores spread over [0, 1] instead of saturating.
    """
    if n < k:
        raise ValueError("need n >= k")
    centers = substream(seed, "blob_centers").standard_normal((k, d)) * center_spread
    sizes = np.full(k, n // k, dtype=np.int64)
    sizes[: n % k] += 1
    blocks, labels = [], []
    for c in range(k):
        rng = substream(seed, "blob", c)
        blocks.append(centers[c] + cluster_std * rng.standard_normal((sizes[c], d)))
        labels.append(np.full(sizes[c], c, dtype=np.int64))
    return np.concatenate(blocks), GroundTruth(np.concatenate(labels), k_true=k)


def standardize(data: np.ndarray) -> np.ndarray:
    """Column-wise zero mean / unit population std; constant columns become zeros."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("standardize needs a 2-D matrix with n >= 2")
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    out = data - mean
    nonconst = std > 0
    out[:, nonconst] /= std[nonconst]
    out[:, ~nonconst] = 0.0
    return out


# CSV layer: RFC-4180 subset, '.' decimal, 17 significant digits so that
# float64 values round-trip exactly.


def save_csv(path, data: np.ndarray, labels: np.ndarray | None = None, header: bool = True) -> None:
    data = np.asarray(data, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if header:
            cols = [f"x{j}" for j in range(data.shape[1])]
            if labels is not None:
                cols.append("label")
            writer.writerow(cols)
        for i in range(data.shape[0]):
            row = [format(v, ".17g") for v in data[i]]
            if labels is not None:
                row.append(str(int(labels[i])))
            writer.writerow(row)


def _encode_labels(raw: list[str]) -> tuple[np.ndarray, int]:
    """Map raw label strings to 0..k-1 in first-occurrence order; '-1' stays noise."""
    mapping: dict[str, int] = {}
    out = np.empty(len(raw), dtype=np.int64)
    for i, value in enumerate(raw):
        if value == "-1":
            out[i] = -1
            continue
        if value not in mapping:
            mapping[value] = len(mapping)
        out[i] = mapping[value]
    return out, len(mapping)


def load_csv(path, has_header: bool = True, label_column: int | None = None):
    """Load a numeric CSV as (data, ground_truth-or-None).

    ``label_column`` (0-based, may be negative) is split off and re-encoded
    to 0..k-1 preserving first-occurrence order; the literal value ``-1``
    is kept as noise.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if has_header and rows:
        rows = rows[1:]
    rows = [r for r in rows if r]
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    width = len(rows[0])
    label_idx = None
    if label_column is not None:
        label_idx = label_column if label_column >= 0 else width + label_column
        if not 0 <= label_idx < width:
            raise ValueError(f"label_column {label_column} out of range for {width} columns")

    values = np.empty((len(rows), width - (label_idx is not None)), dtype=np.float64)
    raw_labels: list[str] = []
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"{path}: ragged row {i + 1}: expected {width} cells, got {len(row)}")
        j_out = 0
        for j, cell in enumerate(row):
            if j == label_idx:
                raw_labels.append(cell.strip())
                continue
            try:
                values[i, j_out] = float(cell)
            except ValueError:
                raise ValueError(f"{path}: non-numeric cell at row {i + 1}, column {j + 1}: {cell!r}") from None
            j_out += 1
    if not np.isfinite(values).all():
        bad = np.argwhere(~np.isfinite(values))[0]
        raise ValueError(f"{path}: non-finite value at row {int(bad[0]) + 1}, column {int(bad[1]) + 1}")

    truth = None
    if label_idx is not None:
        labels, k = _encode_labels(raw_labels)
        truth = GroundTruth(labels, k_true=max(k, 1))
    return values, truth


def dataset_manifest(family: str, seed: int, data: np.ndarray, truth: GroundTruth) -> dict:
    return {
        "family": family,
        "seed": int(seed),
        "n": int(data.shape[0]),
        "d": int(data.shape[1]),
        "k_true": int(truth.k_true),
    }


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
