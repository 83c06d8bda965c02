"""Concentration bounds for the stability estimator and their Monte-Carlo checks.

The stability score of a point is an order-2 U-statistic over R runs, so
Hoeffding-type bounds control (i) the probability that two points with a
true stability margin gamma get mis-ranked, and (ii) the probability that
a uniform-noise point exceeds a threshold tau > 1/k. Both closed forms
are evaluated here and verified empirically against a synthetic label
process with a known pairwise agreement theta.

The label process: each run's label repeats a fixed anchor with
probability 1-p and redraws uniformly from {0..k-1} otherwise, giving
theta = (1-p)^2 + p(2-p)/k, which is solved for p. Labels are already in
a common frame, so the simulation scores agreement directly without the
alignment step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import substream

__all__ = [
    "misranking_bound",
    "false_positive_bound",
    "expected_noise_count",
    "sticky_redraw_probability",
    "sample_stability_scores",
    "MonteCarloEstimate",
    "simulate_misranking",
    "simulate_false_positive",
    "SweepRow",
    "misranking_sweep",
    "false_positive_sweep",
    "write_sweep_csv",
]


def misranking_bound(R: int, gamma: float) -> float:
    """2 exp(-R gamma^2 / 8): mis-ranking probability at true margin gamma."""
    if gamma <= 0:
        raise ValueError("margin gamma must be positive")
    return 2.0 * float(np.exp(-R * gamma * gamma / 8.0))


def false_positive_bound(R: int, k: int, tau: float, theta: float | None = None) -> float:
    """exp(-R/2 (tau - theta)^2): probability that stability exceeds tau.

    theta defaults to 1/k, the uniform-noise agreement; any theta >= 1/k is
    accepted for the generalized biased-noise form. Requires tau > theta.
    """
    if theta is None:
        theta = 1.0 / k
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    if tau <= theta:
        raise ValueError(f"threshold tau must exceed theta={theta:.6g}")
    return float(np.exp(-R / 2.0 * (tau - theta) ** 2))


def expected_noise_count(n: int, phi: float, R: int, k: int, tau: float) -> float:
    """Expected number of uniform-noise points (a phi fraction of n) above tau."""
    if not 0.0 <= phi <= 1.0:
        raise ValueError("phi must lie in [0, 1]")
    return n * phi * false_positive_bound(R, k, tau)


def sticky_redraw_probability(theta: float, k: int) -> float:
    """Redraw probability p such that the sticky process has agreement theta."""
    lo = 1.0 / k
    if not lo - 1e-12 <= theta <= 1.0:
        raise ValueError(f"theta={theta} infeasible for k={k}: needs 1/k <= theta <= 1")
    ratio = (max(theta, lo) - lo) / (1.0 - lo)
    return 1.0 - float(np.sqrt(ratio))


def sample_stability_scores(theta: float, R: int, k: int, trials: int, rng) -> np.ndarray:
    """Stability scores of one point under the sticky process, one per trial.

    Labels are i.i.d. across the R runs, so the pairwise-agreement count is
    sum_l C(m_l, 2) over per-trial label multiplicities m_l.
    """
    p = sticky_redraw_probability(theta, k)
    redraw = rng.random((trials, R)) < p
    labels = np.where(redraw, rng.integers(0, k, size=(trials, R)), 0)
    counts = (labels[:, :, None] == np.arange(k)).sum(axis=1)
    agree = (counts * (counts - 1) // 2).sum(axis=1)
    return agree / (R * (R - 1) / 2.0)


@dataclass(frozen=True)
class MonteCarloEstimate:
    probability: float
    stderr: float
    trials: int
    mean_score: float  # mean stability of the probe point across trials

    def within(self, bound: float, z: float = 3.0) -> bool:
        return self.probability <= bound + z * self.stderr


def _binomial_stderr(p_hat: float, trials: int) -> float:
    return float(np.sqrt(p_hat * (1.0 - p_hat) / trials))


def simulate_misranking(
    R: int, k: int, theta_i: float, theta_j: float, trials: int = 100_000, seed: int = 0
) -> MonteCarloEstimate:
    """Empirical Pr[c_i < c_j] for independent points with given agreements."""
    if theta_i < theta_j:
        raise ValueError("theta_i must be >= theta_j (i is the more stable point)")
    c_i = sample_stability_scores(theta_i, R, k, trials, substream(seed, "misrank", "i"))
    c_j = sample_stability_scores(theta_j, R, k, trials, substream(seed, "misrank", "j"))
    p_hat = float((c_i < c_j).mean())
    return MonteCarloEstimate(p_hat, _binomial_stderr(p_hat, trials), trials, float(c_i.mean()))


def simulate_false_positive(
    R: int, k: int, tau: float, trials: int = 100_000, seed: int = 0
) -> MonteCarloEstimate:
    """Empirical Pr[c_i > tau] for a uniform-noise point (theta = 1/k)."""
    if tau <= 1.0 / k:
        raise ValueError(f"threshold tau must exceed 1/k = {1.0 / k:.6g}")
    c = sample_stability_scores(1.0 / k, R, k, trials, substream(seed, "falsepos"))
    p_hat = float((c > tau).mean())
    return MonteCarloEstimate(p_hat, _binomial_stderr(p_hat, trials), trials, float(c.mean()))


@dataclass(frozen=True)
class SweepRow:
    R: int
    k: int
    gamma_or_tau: float
    empirical: float
    stderr: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.empirical <= self.bound + 3.0 * self.stderr


DEFAULT_R_GRID = (8, 16, 32, 64)
DEFAULT_GAMMAS = (0.2, 0.4)
DEFAULT_TAUS = (0.5, 0.7)
DEFAULT_KS = (2, 3, 5)


def misranking_sweep(
    r_grid=DEFAULT_R_GRID, gammas=DEFAULT_GAMMAS, ks=DEFAULT_KS, trials: int = 100_000, seed: int = 0
) -> list[SweepRow]:
    """Empirical mis-ranking vs. bound with theta_j = 1/k and theta_i = 1/k + gamma."""
    rows = []
    for k in ks:
        for gamma in gammas:
            theta_j = 1.0 / k
            theta_i = theta_j + gamma
            if theta_i > 1.0:
                continue
            for R in r_grid:
                est = simulate_misranking(R, k, theta_i, theta_j, trials, seed)
                rows.append(SweepRow(R, k, gamma, est.probability, est.stderr, misranking_bound(R, gamma)))
    return rows


def false_positive_sweep(
    r_grid=DEFAULT_R_GRID, taus=DEFAULT_TAUS, ks=DEFAULT_KS, trials: int = 100_000, seed: int = 0
) -> list[SweepRow]:
    """Empirical noise-point exceedance vs. bound; infeasible tau <= 1/k cells are skipped."""
    rows = []
    for k in ks:
        for tau in taus:
            if tau <= 1.0 / k:
                continue
            for R in r_grid:
                est = simulate_false_positive(R, k, tau, trials, seed)
                rows.append(SweepRow(R, k, tau, est.probability, est.stderr, false_positive_bound(R, k, tau)))
    return rows


def write_sweep_csv(path, rows: list[SweepRow]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["R", "k", "gamma_or_tau", "empirical", "stderr", "bound"])
        for row in rows:
            writer.writerow(
                [row.R, row.k, format(row.gamma_or_tau, ".17g"), format(row.empirical, ".17g"),
                 format(row.stderr, ".17g"), format(row.bound, ".17g")]
            )
