"""Analytic and variational thresholds: Kesten-Stigum coefficient, the
exhaustive-search degree threshold k*, the weak-recovery information
condition, the counting functional S, and the constrained maximization S*.

S* maximizes S over couplings Omega(x1, x~1, x2, x~2, y) whose two
(x, x, y)-marginals equal the population edge law and whose averaged pair
marginal equals a prescribed overlap distribution omega.  Because the
overlap constraint pins the pair-marginal entropy term, S restricted to
the feasible set is a constant plus (k/2) H(Omega); the landscape is
therefore concave, but the optimizer still reports a certified lower bound
with restarts rather than assuming global optimality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._rng import make_rng
from .model import Kernel, channel_mutual_information, edge_pair_law


class ThresholdError(ValueError):
    pass


def _entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64).ravel()
    pos = p[p > 0]
    return float(-(pos * np.log(pos)).sum())


def kesten_stigum(k: int, p: float) -> float:
    """kappa = (1-p)^2 (k-1); the tree recursion is stable iff kappa < 1."""
    if k < 2:
        raise ThresholdError("k must be >= 2")
    return (1.0 - p) ** 2 * (k - 1)


def k_star(p: float, q: int) -> float:
    """Degree threshold for exhaustive-search weak recovery on random
    regular graphs:

        k* = 2 log q / [ (1-p+p/q) log(p + q(1-p)) + (1-1/q) p log p ].
    """
    if not 0.0 < p < 1.0:
        raise ThresholdError("closed form degenerates at p in {0, 1}")
    if q < 2:
        raise ThresholdError("q must be >= 2")
    denom = (1.0 - p + p / q) * math.log(p + q * (1.0 - p)) + (1.0 - 1.0 / q) * p * math.log(p)
    return 2.0 * math.log(q) / denom


def weak_recovery_condition(kernel: Kernel, k: int) -> dict:
    """Checks (k/2) I(theta1, theta2; Y) >= log q."""
    lhs = 0.5 * k * channel_mutual_information(kernel)
    rhs = math.log(kernel.q)
    return {"lhs": lhs, "rhs": rhs, "satisfied": lhs >= rhs, "margin": lhs - rhs}


# ----------------------------------------------------------------------
# the counting functional S and its constrained maximization
# ----------------------------------------------------------------------

def pair_marginals(omega_joint: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """pi_1 (marginal of (x1, x~1)) and pi_2 (marginal of (x2, x~2))."""
    return omega_joint.sum(axis=(2, 3, 4)), omega_joint.sum(axis=(0, 1, 4))


def edge_marginals(omega_joint: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(x1, x2, y)-marginal and (x~1, x~2, y)-marginal."""
    return omega_joint.sum(axis=(1, 3)), omega_joint.sum(axis=(0, 2))


def s_functional(omega_joint: np.ndarray, k: int, kernel: Kernel) -> float:
    """S(Omega) = (k/2) H(Omega) - (k-1) H((pi1+pi2)/2)
                 - (k/2) H(nu_e) + (k-1) H(nu)   [nats]."""
    omega_joint = np.asarray(omega_joint, dtype=np.float64)
    q = kernel.q
    if omega_joint.shape != (q, q, q, q, kernel.y_size):
        raise ThresholdError("coupling shape mismatch")
    pi1, pi2 = pair_marginals(omega_joint)
    nu_v = 0.5 * (pi1 + pi2)
    nu_e = edge_pair_law(kernel)
    return (
        0.5 * k * _entropy(omega_joint)
        - (k - 1) * _entropy(nu_v)
        - 0.5 * k * _entropy(nu_e)
        + (k - 1) * math.log(q)
    )


@dataclass(eq=False)
class SStarResult:
    value: float
    argmax: np.ndarray
    upper_bound: float
    feasibility_residual: float
    restarts_used: int


def s_star_upper_bound(omega: np.ndarray, k: int, kernel: Kernel) -> float:
    """Entropy sub-additivity bound on S*(omega).

    At omega = uniform product this reduces to -(k/2) I + log q; the
    (k-1)(2 log q - H(omega)) correction keeps it a valid bound for
    non-uniform targets.
    """
    q = kernel.q
    mi = channel_mutual_information(kernel)
    return (
        -0.5 * k * mi
        + math.log(q)
        + (k - 1) * (2.0 * math.log(q) - _entropy(omega))
    )


def _support_mask(omega: np.ndarray, kernel: Kernel) -> np.ndarray:
    q, ysz = kernel.q, kernel.y_size
    nu_e = edge_pair_law(kernel)
    m = np.ones((q, q, q, q, ysz), dtype=bool)
    m &= nu_e[:, None, :, None, :] > 0
    m &= nu_e[None, :, None, :, :] > 0
    m &= (omega[:, :, None, None, None] > 0) | (omega[None, None, :, :, None] > 0)
    return m


def _fit_constraints(
    omega_joint: np.ndarray,
    omega: np.ndarray,
    kernel: Kernel,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> tuple[np.ndarray, float]:
    """Iterated proportional fitting onto the three marginal families.

    The two edge-law families are plain IPF block scalings; the averaged
    pair-marginal family uses the generalized (fractional-power) scaling
    since each cell carries the feature with weight 1/2 per coordinate.
    """
    w = np.array(omega_joint, dtype=np.float64)
    nu_e = edge_pair_law(kernel)
    residual = math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        for _ in range(max_iter):
            m1 = w.sum(axis=(1, 3))
            r1 = np.where(m1 > 0, nu_e / np.where(m1 > 0, m1, 1.0), 0.0)
            w *= r1[:, None, :, None, :]
            m2 = w.sum(axis=(0, 2))
            r2 = np.where(m2 > 0, nu_e / np.where(m2 > 0, m2, 1.0), 0.0)
            w *= r2[None, :, None, :, :]
            pi1, pi2 = pair_marginals(w)
            mv = 0.5 * (pi1 + pi2)
            rv = np.sqrt(np.where(mv > 0, omega / np.where(mv > 0, mv, 1.0), 0.0))
            w *= rv[:, :, None, None, None] * rv[None, None, :, :, None]
            m1 = w.sum(axis=(1, 3))
            m2 = w.sum(axis=(0, 2))
            mv = 0.5 * np.add(*pair_marginals(w))
            residual = max(
                float(np.abs(m1 - nu_e).max()),
                float(np.abs(m2 - nu_e).max()),
                float(np.abs(mv - omega).max()),
            )
            if residual <= tol:
                break
    return w, residual


def _s_gradient(w: np.ndarray, k: int) -> np.ndarray:
    pi1, pi2 = pair_marginals(w)
    nu_v = 0.5 * (pi1 + pi2)
    with np.errstate(divide="ignore"):
        logw = np.log(np.where(w > 0, w, 1.0))
        lognv = np.log(np.where(nu_v > 0, nu_v, 1.0))
    grad = 0.5 * k * (-logw - 1.0)
    grad -= (k - 1) * 0.5 * (
        (-lognv[:, :, None, None, None] - 1.0) + (-lognv[None, None, :, :, None] - 1.0)
    )
    return grad


def s_star(
    omega: np.ndarray,
    k: int,
    kernel: Kernel,
    restarts: int = 4,
    tol: float = 1e-8,
    seed: int = 0,
    max_steps: int = 400,
) -> SStarResult:
    """Maximize S over the constrained coupling polytope.

    Projected gradient ascent on log-weights with IPF re-projection after
    every step, multi-restart (uniform-fit, the two structured couplings,
    then random feasible points).  The reported value is a certified lower
    bound on S*; ``upper_bound`` is the analytic sub-additivity bound.
    """
    q, ysz = kernel.q, kernel.y_size
    omega = np.asarray(omega, dtype=np.float64)
    if omega.shape != (q, q):
        raise ThresholdError("omega must be q x q")
    row = omega.sum(axis=1)
    col = omega.sum(axis=0)
    if np.abs(row - 1.0 / q).max() > 1e-9 or np.abs(col - 1.0 / q).max() > 1e-9:
        raise ThresholdError("omega must have uniform single-coordinate marginals")
    nu_e = edge_pair_law(kernel)
    support = _support_mask(omega, kernel)

    starts: list[np.ndarray] = []
    uniform = np.where(support, 1.0, 0.0)
    uniform /= uniform.sum()
    starts.append(uniform)
    diag = np.zeros((q, q, q, q, ysz))
    for x1 in range(q):
        for x2 in range(q):
            diag[x1, x1, x2, x2, :] = nu_e[x1, x2, :]
    starts.append(diag)
    ymarg = nu_e.sum(axis=(0, 1))
    cond = np.where(
        ymarg[None, None, None, None, :] > 0,
        nu_e[:, None, :, None, :]
        * nu_e[None, :, None, :, :]
        / np.where(ymarg > 0, ymarg, 1.0)[None, None, None, None, :],
        0.0,
    )
    starts.append(cond)
    rng = make_rng(seed, 0x73737472)
    for _ in range(max(0, restarts - len(starts))):
        rnd = np.where(support, rng.random((q, q, q, q, ysz)) + 1e-3, 0.0)
        rnd /= rnd.sum()
        starts.append(rnd)
    starts = starts[: max(restarts, 1)]

    best_val = -math.inf
    best_w = None
    best_res = math.inf
    used = 0
    for w0 in starts:
        used += 1
        w, res = _fit_constraints(w0, omega, kernel)
        if res > 1e-6:
            continue  # this start cannot be fitted; skip it
        val = s_functional(w, k, kernel)
        step = 0.5
        for _ in range(max_steps):
            grad = _s_gradient(w, k)
            grad = np.where(w > 0, grad, 0.0)
            logw = np.log(np.where(w > 0, w, 1.0)) + step * grad
            cand = np.where(w > 0, np.exp(logw - logw.max()), 0.0)
            cand /= cand.sum()
            cand, res_c = _fit_constraints(cand, omega, kernel)
            val_c = s_functional(cand, k, kernel)
            if val_c > val + 1e-14 and res_c <= 1e-8:
                w, val, res = cand, val_c, res_c
            else:
                step *= 0.5
                if step < 1e-6:
                    break
        if val > best_val:
            best_val, best_w, best_res = val, w, res
    if best_w is None:
        raise ThresholdError("no feasible coupling found for the given omega")
    return SStarResult(
        value=best_val,
        argmax=best_w,
        upper_bound=s_star_upper_bound(omega, k, kernel),
        feasibility_residual=best_res,
        restarts_used=used,
    )


def uniform_overlap(q: int) -> np.ndarray:
    """The uniform product overlap target nu x nu."""
    return np.full((q, q), 1.0 / q**2)
