"""Evaluation metrics and the seeded Monte Carlo averaging machinery."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import permutations
from typing import Callable

import numpy as np

from ._rng import derive_key
from .estimators import EstimateMatrix, LabelFunction

PERMUTATION_CAP = 8


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MCEstimate:
    """Monte Carlo mean with its normal-approximation standard error."""

    mean: np.ndarray
    std_error: np.ndarray
    trials: int
    seed_base: int

    def scalar(self) -> tuple[float, float]:
        return float(np.asarray(self.mean).ravel()[0]), float(
            np.asarray(self.std_error).ravel()[0]
        )


def risk(est: EstimateMatrix, theta0: np.ndarray, f: LabelFunction) -> float:
    """Per-instance square loss (1/n^2) ||X_f - X_hat||_F^2 against the
    rank-one target X_f[u,v] = f(theta0_u) f(theta0_v)."""
    theta0 = np.asarray(theta0)
    n = theta0.size
    if est.n != n:
        raise MetricError("estimate size does not match theta0")
    phi = f.values[theta0]
    if est.factor is not None:
        a = est.factor
        # ||phi phi^T - a a^T||^2 expanded in inner products
        val = (phi @ phi) ** 2 - 2.0 * (phi @ a) ** 2 + (a @ a) ** 2
        return float(val) / n**2
    diff = np.outer(phi, phi) - est.dense_values
    return float((diff**2).sum()) / n**2


def joint_vertex_empirical(theta0: np.ndarray, theta_hat: np.ndarray, q: int) -> np.ndarray:
    """Normalized q x q count matrix of (theta0_u, theta_hat_u) pairs."""
    theta0 = np.asarray(theta0)
    theta_hat = np.asarray(theta_hat)
    if theta0.shape != theta_hat.shape:
        raise MetricError("length mismatch")
    counts = np.zeros((q, q))
    np.add.at(counts, (theta0, theta_hat), 1.0)
    return counts / theta0.size


def overlap(theta_hat: np.ndarray, theta0: np.ndarray, q: int | None = None) -> float:
    """Fraction of correct labels maximized over all label permutations."""
    theta_hat = np.asarray(theta_hat)
    theta0 = np.asarray(theta0)
    if theta_hat.shape != theta0.shape:
        raise MetricError("length mismatch")
    if q is None:
        q = int(max(theta_hat.max(initial=0), theta0.max(initial=0))) + 1
    if q > PERMUTATION_CAP:
        raise MetricError(
            f"q={q} above the permutation cap {PERMUTATION_CAP}; "
            "assignment-matrix relaxations are out of scope"
        )
    counts = np.zeros((q, q))
    np.add.at(counts, (theta0, theta_hat), 1.0)
    best = max(
        sum(counts[x, sigma[x]] for x in range(q)) for sigma in permutations(range(q))
    )
    return float(best) / theta0.size


def overlap_lower_bound(omega: np.ndarray) -> float:
    """q * sum omega(x,x')^2: a Birkhoff lower bound on the overlap."""
    omega = np.asarray(omega, dtype=np.float64)
    q = omega.shape[0]
    return float(q * (omega**2).sum())


def tv_distance(p: np.ndarray, r: np.ndarray) -> float:
    """Half L1 distance between two distributions of identical shape."""
    p = np.asarray(p, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if p.shape != r.shape:
        raise MetricError("shape mismatch")
    return 0.5 * float(np.abs(p - r).sum())


def _run_trial(args):
    experiment, seed_base, experiment_id, trial = args
    seed = derive_key(seed_base, experiment_id, trial) & ((1 << 63) - 1)
    try:
        return np.asarray(experiment(seed), dtype=np.float64)
    except Exception as exc:
        raise RuntimeError(f"trial {trial} (seed {seed}) failed: {exc}") from exc


def mc_average(
    experiment: Callable[[int], float | np.ndarray],
    trials: int,
    seed_base: int,
    jobs: int = 1,
    experiment_id: int = 0,
) -> MCEstimate:
    """Average an instance-level functional over independently seeded trials.

    The per-trial seed depends only on (seed_base, experiment_id, trial),
    and the reduction is an ordered fold over trial indices, so the result
    is bit-identical for any ``jobs`` value.
    """
    if trials < 1:
        raise MetricError("trials must be >= 1")
    tasks = [(experiment, seed_base, experiment_id, t) for t in range(trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_trial, tasks, chunksize=max(1, trials // (4 * jobs))))
    else:
        results = [_run_trial(t) for t in tasks]
    values = np.stack(results)
    mean = values.mean(axis=0)
    if trials >= 2:
        std_error = values.std(axis=0, ddof=1) / math.sqrt(trials)
    else:
        std_error = np.full_like(mean, math.inf)
    return MCEstimate(mean=mean, std_error=std_error, trials=trials, seed_base=seed_base)
