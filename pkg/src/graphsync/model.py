"""Observation model: finite-alphabet edge kernels, the erasure side
channel, instance sampling, and exact channel information quantities.

All entropies are in nats.  The erasure symbol is the integer ``STAR``
(-1); a side observation is either STAR or the true label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import make_rng
from .graphs import Graph

STAR = -1
DEFAULT_ALPHABET_CAP = 16


class ModelError(ValueError):
    pass


@dataclass(eq=False)
class Kernel:
    """Conditional distribution table Q(y | x1, x2) over finite alphabets."""

    q: int
    y_size: int
    table: np.ndarray  # (q, q, y_size)
    zq_noise: float | None = None  # set when built by kernel_zq
    _log: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.table = np.ascontiguousarray(np.asarray(self.table, dtype=np.float64))
        if self.table.shape != (self.q, self.q, self.y_size):
            raise ModelError("kernel table shape mismatch")
        if self.q < 2 or self.y_size < 1:
            raise ModelError("alphabets must have q >= 2, y_size >= 1")
        if self.q > DEFAULT_ALPHABET_CAP or self.y_size > DEFAULT_ALPHABET_CAP:
            raise ModelError(f"alphabet above cap {DEFAULT_ALPHABET_CAP}")
        if np.any(self.table < 0):
            raise ModelError("negative kernel entries")
        rows = self.table.sum(axis=2)
        if np.max(np.abs(rows - 1.0)) > 1e-12:
            raise ModelError("kernel rows must sum to 1 within 1e-12")

    @property
    def log_table(self) -> np.ndarray:
        """log Q with -inf at zero entries."""
        if self._log is None:
            with np.errstate(divide="ignore"):
                self._log = np.log(self.table)
        return self._log

    def min_positive(self) -> float:
        pos = self.table[self.table > 0]
        return float(pos.min())

    def boundedness(self) -> float:
        """c_M = max(max entry, 1/min positive entry); inf if any entry is 0."""
        if np.any(self.table == 0):
            return math.inf
        return float(max(self.table.max(), 1.0 / self.table.min()))


@dataclass(eq=False)
class Instance:
    """One sampled triple: ground truth, edge observations, side channel."""

    theta0: np.ndarray  # (n,) labels in [0, q)
    y: np.ndarray       # (E,) observations in [0, y_size)
    xi: np.ndarray      # (n,) STAR or the true label

    def validate(self, g: Graph, kernel: Kernel) -> None:
        if self.theta0.shape != (g.n,) or self.xi.shape != (g.n,):
            raise ModelError("vertex array length mismatch")
        if self.y.shape != (g.num_edges,):
            raise ModelError("edge array length mismatch")
        if self.theta0.min(initial=0) < 0 or self.theta0.max(initial=0) >= kernel.q:
            raise ModelError("label out of range")
        revealed = self.xi != STAR
        if np.any(self.xi[revealed] != self.theta0[revealed]):
            raise ModelError("side channel must reveal the true label or nothing")


def kernel_zq(q: int, p: float) -> Kernel:
    """Cyclic-difference kernel: Y = x1 - x2 mod q with prob 1-p, else
    uniform noise; Q(y|x1,x2) = (1-p) 1{y = x1-x2 mod q} + p/q."""
    if q < 2:
        raise ModelError("q must be >= 2")
    if not 0.0 <= p <= 1.0:
        raise ModelError("p must lie in [0, 1]")
    x1 = np.arange(q).reshape(q, 1, 1)
    x2 = np.arange(q).reshape(1, q, 1)
    y = np.arange(q).reshape(1, 1, q)
    table = (1.0 - p) * (y == (x1 - x2) % q) + p / q
    return Kernel(q=q, y_size=q, table=table, zq_noise=float(p))


def sample_instance(g: Graph, kernel: Kernel, eps: float, seed: int) -> Instance:
    """Draw (theta0, Y, xi) for one graph.

    Draw order is fixed so seeds are portable: one uniform per vertex in
    ascending order for theta0 (floor(u*q)), one uniform per edge in list
    order for Y (inverse CDF of the kernel row), then one uniform per
    vertex for the side channel (revealed iff u < eps).
    """
    if not 0.0 <= eps <= 1.0:
        raise ModelError("eps must lie in [0, 1]")
    rng = make_rng(seed, 0x696E7374)
    u_theta = rng.random(g.n)
    theta0 = np.minimum((u_theta * kernel.q).astype(np.int64), kernel.q - 1)
    u_y = rng.random(g.num_edges)
    cdf = np.cumsum(kernel.table, axis=2)
    rows = cdf[theta0[g.edges[:, 0]], theta0[g.edges[:, 1]], :]
    y = (u_y[:, None] >= rows).sum(axis=1).astype(np.int64)
    np.minimum(y, kernel.y_size - 1, out=y)
    u_xi = rng.random(g.n)
    xi = np.where(u_xi < eps, theta0, STAR).astype(np.int64)
    return Instance(theta0=theta0, y=y, xi=xi)


def edge_pair_law(kernel: Kernel) -> np.ndarray:
    """Population edge law nu_e(x1, x2, y) = Q(y|x1,x2) / q**2 for uniform
    independent endpoints."""
    return kernel.table / kernel.q**2


def _entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64).ravel()
    pos = p[p > 0]
    return float(-(pos * np.log(pos)).sum())


def channel_mutual_information(kernel: Kernel) -> float:
    """I(x1, x2; Y) in nats under uniform independent endpoints."""
    nu = edge_pair_law(kernel)
    h_y = _entropy(nu.sum(axis=(0, 1)))
    h_y_given = _entropy(nu) - math.log(kernel.q**2)
    return h_y - h_y_given


def channel_statistics(kernel: Kernel) -> dict:
    """H(Y), H(Y | x1,x2), I, and the boundedness certificate c_M."""
    nu = edge_pair_law(kernel)
    h_y = _entropy(nu.sum(axis=(0, 1)))
    h_y_given = _entropy(nu) - math.log(kernel.q**2)
    return {
        "H_Y": h_y,
        "H_Y_given_theta": h_y_given,
        "I": h_y - h_y_given,
        "c_M": kernel.boundedness(),
    }


def write_kernel(kernel: Kernel, path) -> None:
    """Structured text: 'q y_size' header then row-major probabilities."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{kernel.q} {kernel.y_size}\n")
        for x1 in range(kernel.q):
            for x2 in range(kernel.q):
                fh.write(" ".join(f"{v:.17g}" for v in kernel.table[x1, x2]) + "\n")


def read_kernel(path) -> Kernel:
    with open(path, "r", encoding="utf-8") as fh:
        q, y_size = (int(t) for t in fh.readline().split())
        table = np.asarray(
            [[float(t) for t in fh.readline().split()] for _ in range(q * q)],
            dtype=np.float64,
        ).reshape(q, q, y_size)
    return Kernel(q=q, y_size=y_size, table=table)
