"""Fusion of assignment stability and geometric reliability into CAKE scores.

Both fusions map the stability component c and the geometric component
s_tilde, each in [0, 1], to a single confidence value in [0, 1]:

* product (PR): c * s_tilde - high only when both components are high,
  zero as soon as either collapses.
* harmonic mean (HM): 2 c s_tilde / (c + s_tilde) - the smoother
  trade-off, with 0/0 defined as 0 (no stability and no geometric
  support means no confidence).
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import align, geometry
from .cluster import LabelMatrix

__all__ = ["cake_pr", "cake_hm", "ScoreTable", "compute_scores"]

# above this n the exact per-run silhouette is replaced by the centroid
# proxy unless a mode is forced
EXACT_MODE_MAX_N = 5000


def _check_unit_interval(name, values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a vector")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def _check_pair(c, s_tilde) -> tuple[np.ndarray, np.ndarray]:
    c = _check_unit_interval("c", c)
    s = _check_unit_interval("s_tilde", s_tilde)
    if c.shape != s.shape:
        raise ValueError(f"length mismatch: {c.shape} vs {s.shape}")
    return c, s


def cake_pr(c, s_tilde) -> np.ndarray:
    """Product fusion: elementwise c * s_tilde."""
    c, s = _check_pair(c, s_tilde)
    return c * s


def cake_hm(c, s_tilde) -> np.ndarray:
    """Harmonic-mean fusion: 2 c s_tilde / (c + s_tilde), with 0/0 = 0."""
    c, s = _check_pair(c, s_tilde)
    total = c + s
    out = np.zeros_like(c)
    nz = total > 0
    out[nz] = 2.0 * c[nz] * s[nz] / total[nz]
    return out


@dataclass
class ScoreTable:
    """Per-point confidence scores plus any baseline columns."""

    c: np.ndarray
    s_tilde: np.ndarray
    cake_pr: np.ndarray
    cake_hm: np.ndarray
    baselines: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.c.size

    def column(self, name: str) -> np.ndarray:
        if name in ("c", "s_tilde", "cake_pr", "cake_hm"):
            return getattr(self, name)
        if name in self.baselines:
            return self.baselines[name]
        raise KeyError(f"no score column {name!r}")

    @property
    def column_names(self) -> list[str]:
        return ["c", "s_tilde", "cake_pr", "cake_hm", *self.baselines]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", *self.column_names])
            columns = [self.column(name) for name in self.column_names]
            for i in range(self.n):
                writer.writerow([i, *(format(col[i], ".17g") for col in columns)])

    @classmethod
    def from_csv(cls, path) -> "ScoreTable":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        if header[:5] != ["index", "c", "s_tilde", "cake_pr", "cake_hm"]:
            raise ValueError(f"{path}: unexpected score-table header {header!r}")
        body = np.array([[float(v) for v in row] for row in rows[1:]])
        baselines = {name: body[:, j + 1] for j, name in enumerate(header[1:]) if j >= 4}
        return cls(body[:, 1], body[:, 2], body[:, 3], body[:, 4], baselines=baselines)

    def to_json(self, path) -> None:
        payload = {
            "metadata": self.metadata,
            "columns": {name: self.column(name).tolist() for name in self.column_names},
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)
            fh.write("\n")


def ensemble_hash(ensemble: LabelMatrix) -> str:
    digest = hashlib.blake2s()
    digest.update(np.int64(ensemble.k).tobytes())
    digest.update(np.ascontiguousarray(ensemble.labels, dtype=np.int64).tobytes())
    return digest.hexdigest()


def per_run_silhouettes(
    data,
    ensemble: LabelMatrix,
    mode: str = "auto",
    gram: geometry.KernelGram | None = None,
) -> tuple[np.ndarray, str]:
    """(n, R) silhouette table for an ensemble in the requested mode."""
    if mode == "auto":
        mode = "exact" if ensemble.n <= EXACT_MODE_MAX_N else "centroid"
    if mode == "exact":
        table = geometry.silhouette_exact_table(data, ensemble.labels, ensemble.k)
    elif mode == "centroid":
        table = np.column_stack(
            [geometry.silhouette_centroid(data, ensemble.column(r)) for r in range(ensemble.n_runs)]
        )
    elif mode == "kernel":
        if gram is None:
            raise ValueError("kernel mode needs a precomputed KernelGram")
        table = np.column_stack(
            [geometry.silhouette_kernel(gram, ensemble.column(r)) for r in range(ensemble.n_runs)]
        )
    else:
        raise ValueError(f"unknown silhouette mode {mode!r}")
    return table, mode


def compute_scores(
    data,
    ensemble: LabelMatrix,
    silhouette_mode: str = "auto",
    remap: bool = False,
    gram: geometry.KernelGram | None = None,
) -> ScoreTable:
    """Full scoring pipeline: per-run silhouettes -> s_tilde, stability -> c, fuse.

    With the centroid proxy this costs O(R n k d) for geometry plus
    O(R^2 (n + k^3)) for the pairwise alignments.
    """
    t0 = time.perf_counter()
    table, mode = per_run_silhouettes(data, ensemble, silhouette_mode, gram)
    sil = geometry.aggregate(table, remap=remap, mode=mode)
    t_geometry = time.perf_counter() - t0

    t0 = time.perf_counter()
    stab = align.stability(ensemble)
    t_stability = time.perf_counter() - t0

    c = stab.c
    s_tilde = sil.s_tilde
    meta = {
        "ensemble_hash": ensemble_hash(ensemble),
        "silhouette_mode": mode,
        "remap": remap,
        "n": ensemble.n,
        "R": ensemble.n_runs,
        "k": ensemble.k,
        "seconds_geometry": t_geometry,
        "seconds_stability": t_stability,
    }
    return ScoreTable(c, s_tilde, cake_pr(c, s_tilde), cake_hm(c, s_tilde), metadata=meta)
