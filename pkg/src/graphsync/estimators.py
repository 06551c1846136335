"""Estimators: rank-one matrix estimators built from (local) marginals,
the Bayes-optimal matrix, marginal sampling, and the typical-set
exhaustive-search estimator with its edge empirical distribution."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal

logger = logging.getLogger(__name__)

import numpy as np

from ._rng import make_rng
from .graphs import Graph
from .inference import (
    DEFAULT_ENUM_CAP,
    BudgetError,
    enumerate_posterior,
    exact_posterior_marginals,
    local_marginal,
)
from .model import Instance, Kernel, edge_pair_law


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class LabelFunction:
    """Real-valued function on the label alphabet, stored as its q values."""

    values: np.ndarray
    zero_mean: bool = True
    unit_variance: bool = True

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        q = vals.size
        if self.zero_mean and abs(vals.sum()) > 1e-12 * max(1.0, np.abs(vals).max()):
            raise EstimatorError("label function flagged zero-mean is not")
        if self.unit_variance and abs((vals**2).sum() / q - 1.0) > 1e-12:
            raise EstimatorError("label function flagged unit-variance is not")

    @property
    def q(self) -> int:
        return int(self.values.size)

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())


def default_f(q: int) -> LabelFunction:
    """f = (+1, -1) for q=2, sqrt(2) cos(2 pi x / q) for q >= 3; both are
    zero-mean and unit-variance."""
    if q == 2:
        return LabelFunction(np.array([1.0, -1.0]))
    x = np.arange(q)
    return LabelFunction(np.sqrt(2.0) * np.cos(2.0 * np.pi * x / q))


@dataclass(eq=False)
class EstimateMatrix:
    """n x n estimate, stored as an outer-product factor when rank one."""

    n: int
    factor: np.ndarray | None = None  # (n,) -> matrix factor factor^T
    dense_values: np.ndarray | None = None

    def __post_init__(self):
        if (self.factor is None) == (self.dense_values is None):
            raise EstimatorError("exactly one of factor/dense must be given")

    @classmethod
    def rank_one(cls, factor: np.ndarray) -> "EstimateMatrix":
        factor = np.asarray(factor, dtype=np.float64)
        return cls(n=factor.size, factor=factor)

    @classmethod
    def dense(cls, values: np.ndarray) -> "EstimateMatrix":
        values = np.asarray(values, dtype=np.float64)
        return cls(n=values.shape[0], dense_values=values)

    @classmethod
    def zero(cls, n: int) -> "EstimateMatrix":
        return cls(n=n, factor=np.zeros(n))

    def to_dense(self) -> np.ndarray:
        if self.dense_values is not None:
            return self.dense_values
        return np.outer(self.factor, self.factor)

    def entry(self, u: int, v: int) -> float:
        if self.dense_values is not None:
            return float(self.dense_values[u, v])
        return float(self.factor[u] * self.factor[v])


def score_vector(marginals: np.ndarray, f: LabelFunction) -> np.ndarray:
    """a[u] = sum_x mu_u(x) f(x)."""
    marginals = np.asarray(marginals, dtype=np.float64)
    if marginals.shape[1] != f.q:
        raise EstimatorError("marginal width does not match label function")
    return marginals @ f.values


def matrix_local(
    g: Graph, kernel: Kernel, inst: Instance, l: int, f: LabelFunction,
    cap: int | None = None,
) -> EstimateMatrix:
    """Rank-one estimate from radius-l ball marginals at every vertex."""
    marg = np.stack([local_marginal(g, u, l, kernel, inst, cap=cap) for u in range(g.n)])
    return EstimateMatrix.rank_one(score_vector(marg, f))


def matrix_decoupled(
    g: Graph, kernel: Kernel, inst: Instance, f: LabelFunction, cap: int | None = None
) -> EstimateMatrix:
    """Rank-one estimate from the exact full-graph marginals."""
    marg = exact_posterior_marginals(g, kernel, inst, cap=cap)
    return EstimateMatrix.rank_one(score_vector(marg, f))


def matrix_bayes(
    g: Graph, kernel: Kernel, inst: Instance, f: LabelFunction, cap: int | None = None
) -> EstimateMatrix:
    """Posterior-mean estimate E[f(theta_u) f(theta_v) | observations]
    (dense; contracts the pairwise posteriors, diagonal from the
    single-vertex law)."""
    enum = enumerate_posterior(g, kernel, inst, cap=cap)
    return EstimateMatrix.dense(enum.fmoment_matrix(f.values))


def sample_labels(marginals: np.ndarray, seed: int) -> np.ndarray:
    """Independent per-vertex draws from the given marginal table."""
    marginals = np.asarray(marginals, dtype=np.float64)
    rng = make_rng(seed, 0x6C6162)
    u = rng.random(marginals.shape[0])
    cdf = np.cumsum(marginals, axis=1)
    labels = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(labels, marginals.shape[1] - 1).astype(np.int64)


def edge_empirical(
    g: Graph, labels: np.ndarray, y: np.ndarray, q: int, y_size: int
) -> np.ndarray:
    """Empirical distribution of (theta_u, theta_v, Y_uv) over directed
    edges; entries are multiples of 1/|E|."""
    if g.num_edges == 0:
        raise EstimatorError("edge empirical distribution needs at least one edge")
    labels = np.asarray(labels)
    y = np.asarray(y)
    counts = np.zeros((q, q, y_size))
    np.add.at(counts, (labels[g.edges[:, 0]], labels[g.edges[:, 1]], y), 1.0)
    return counts / g.num_edges


@dataclass(eq=False)
class TypicalSearchResult:
    labels: np.ndarray | None
    found: bool
    d_tv: float | None
    mode: str
    eta: float
    is_typical: bool | None = None  # for posterior-sample mode

    def labels_or_fallback(self, n: int) -> np.ndarray:
        """All-zeros reference configuration when the typical set is empty."""
        if self.labels is not None:
            return self.labels
        return np.zeros(n, dtype=np.int64)


def typical_set_estimator(
    g: Graph,
    kernel: Kernel,
    inst: Instance,
    eta: float,
    mode: Literal["first-lex", "best", "posterior-sample"] = "first-lex",
    cap: int | None = None,
    seed: int = 0,
) -> TypicalSearchResult:
    """Exhaustive scan of all q^n assignments against the typicality test
    d_TV(edge empirical, population edge law) <= eta.

    first-lex returns the lexicographically first typical assignment; best
    returns the assignment minimizing the distance (lexicographic
    tie-break); posterior-sample draws from the exact posterior and reports
    whether the draw is typical.
    """
    cap = DEFAULT_ENUM_CAP if cap is None else int(cap)
    n, q = g.n, kernel.q
    if mode == "posterior-sample":
        enum = enumerate_posterior(g, kernel, inst, cap=cap)
        theta = enum.sample(make_rng(seed, 0x74797073))
        nu = edge_empirical(g, theta, inst.y, q, kernel.y_size)
        d = 0.5 * float(np.abs(nu - edge_pair_law(kernel)).sum())
        return TypicalSearchResult(
            labels=theta, found=True, d_tv=d, mode=mode, eta=eta, is_typical=d <= eta
        )
    total = q**n
    if total > cap:
        raise BudgetError(f"typical-set scan needs q^{n} = {total} assignments, cap is {cap}")
    target = edge_pair_law(kernel).reshape(-1)
    ysz = kernel.y_size
    m_edges = g.num_edges
    eu, ev = g.edges[:, 0], g.edges[:, 1]
    yarr = np.asarray(inst.y, dtype=np.int64)
    best_d = math.inf
    best_idx = -1
    first_idx = -1
    chunk = 1 << 14
    start = 0
    while start < total:
        stop = min(start + chunk, total)
        idx = np.arange(start, stop, dtype=np.int64)
        dig = np.empty((idx.size, n), dtype=np.int64)
        for i in range(n):
            dig[:, n - 1 - i] = (idx // q**i) % q
        cells = (dig[:, eu] * q + dig[:, ev]) * ysz + yarr[None, :]
        counts = np.zeros((idx.size, q * q * ysz))
        np.add.at(counts, (np.repeat(np.arange(idx.size), m_edges), cells.ravel()), 1.0)
        d = 0.5 * np.abs(counts / m_edges - target[None, :]).sum(axis=1)
        if first_idx < 0:
            hits = np.flatnonzero(d <= eta)
            if hits.size:
                first_idx = start + int(hits[0])
                if mode == "first-lex":
                    best_idx, best_d = first_idx, float(d[hits[0]])
                    break
        mins = int(np.argmin(d))
        if d[mins] < best_d:
            best_d = float(d[mins])
            best_idx = start + mins
        logger.debug(
            "typical-set scan %d/%d assignments, best d_TV %.4f", stop, total, best_d
        )
        start = stop

    def config_labels(c: int) -> np.ndarray:
        out = np.empty(n, dtype=np.int64)
        for i in range(n - 1, -1, -1):
            out[i] = c % q
            c //= q
        return out

    if mode == "first-lex":
        if first_idx < 0:
            return TypicalSearchResult(None, False, None, mode, eta)
        return TypicalSearchResult(config_labels(first_idx), True, best_d, mode, eta)
    # mode == "best": the argmin always exists; found reports typicality
    labels = config_labels(best_idx)
    return TypicalSearchResult(labels, best_d <= eta, best_d, mode, eta)


def write_labels_csv(labels: np.ndarray, path) -> None:
    """Rows (vertex, label)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("vertex,label\n")
        for v, lab in enumerate(np.asarray(labels)):
            fh.write(f"{v},{int(lab)}\n")


def write_factor_csv(est: EstimateMatrix, path) -> None:
    """Rows (vertex, factor) for a rank-one estimate."""
    if est.factor is None:
        raise EstimatorError("dense estimates have no factor vector")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("vertex,factor\n")
        for v, val in enumerate(est.factor):
            fh.write(f"{v},{val:.17g}\n")
