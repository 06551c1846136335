"""Root-marginal recursions on regular trees.

Monte Carlo traces of the deviation-from-uniformity sequences
z_l = E[mu_root,l(theta_root) | xi_root = star] - 1/q on the (k-1)-ary
tree (and the k-children root variant), their scalar-recursion residuals,
the reweighting-identity check, and the stability probe around the
Kesten-Stigum point kappa = (1-p)^2 (k-1) = 1.

Per-instance marginals come from exact sum-product, vectorized across
trials over the shared tree shape.  A separate exact engine enumerates the
full atom distribution of the root marginal at small depth (the number of
distinct observation outcomes is finite), which pins the recursion
residuals to machine precision where Monte Carlo noise would swamp their
second-order size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._rng import make_rng


class RecursionError(ValueError):
    pass


def _level_sizes(k: int, depth: int, tree: str) -> list[int]:
    if tree == "ary":
        widths = [1]
        for _ in range(depth):
            widths.append(widths[-1] * (k - 1))
    elif tree == "regular":
        widths = [1]
        if depth >= 1:
            widths.append(k)
        for _ in range(depth - 1):
            widths.append(widths[-1] * (k - 1))
    else:
        raise RecursionError("tree must be 'ary' or 'regular'")
    return widths


def _branching(k: int, level: int, tree: str) -> int:
    if tree == "regular" and level == 0:
        return k
    return k - 1


@dataclass(eq=False)
class _Sample:
    """One chunk of sampled trees, stored level by level."""

    theta: list[np.ndarray]     # (T, n_d) labels
    y: list[np.ndarray]         # (T, n_d) observation on the parent edge, d >= 1
    revealed: list[np.ndarray]  # (T, n_d) bool; root row is all False


def _sample_chunk(
    k: int, q: int, p: float, eps: float, depth: int, tree: str,
    size: int, rng: np.random.Generator, root_label: int | None = None,
) -> _Sample:
    widths = _level_sizes(k, depth, tree)
    theta, y, revealed = [], [None], [None]
    for d, w in enumerate(widths):
        th = np.minimum((rng.random((size, w)) * q).astype(np.int64), q - 1)
        if d == 0:
            if root_label is not None:
                th[:] = root_label
            theta.append(th)
            revealed[0] = np.zeros((size, w), dtype=bool)
            continue
        theta.append(th)
        b = _branching(k, d - 1, tree)
        parent = np.repeat(theta[d - 1], b, axis=1)
        aligned = rng.random((size, w)) < 1.0 - p
        noise = np.minimum((rng.random((size, w)) * q).astype(np.int64), q - 1)
        y.append(np.where(aligned, (parent - th) % q, noise))
        revealed.append(rng.random((size, w)) < eps)
    return _Sample(theta=theta, y=y, revealed=revealed)


def _evidence(sample: _Sample, level: int, q: int) -> np.ndarray:
    th = sample.theta[level]
    rev = sample.revealed[level]
    onehot = np.zeros(th.shape + (q,))
    np.put_along_axis(onehot, th[..., None], 1.0, axis=2)
    return np.where(rev[..., None], onehot, 1.0)


def _root_marginals(
    sample: _Sample, k: int, q: int, p: float, l: int, tree: str
) -> np.ndarray:
    """(T, q) exact root marginals using observations within depth l."""
    beta = _evidence(sample, l, q)
    for d in range(l, 0, -1):
        s = beta.sum(axis=2, keepdims=True)
        if np.any(s <= 0):
            raise RecursionError("zero-likelihood evidence in tree sample")
        bn = beta / s
        idx = (np.arange(q)[None, None, :] - sample.y[d][..., None]) % q
        msg = p / q + (1.0 - p) * np.take_along_axis(bn, idx, axis=2)
        b = _branching(k, d - 1, tree)
        t, w = msg.shape[0], msg.shape[1]
        agg = msg.reshape(t, w // b, b, q).prod(axis=2)
        beta = _evidence(sample, d - 1, q) * agg
    mu = beta[:, 0, :]
    return mu / mu.sum(axis=1, keepdims=True)


@dataclass(eq=False)
class RecursionTrace:
    """Per-level Monte Carlo estimates of the root statistics."""

    k: int
    q: int
    p: float
    eps: float
    tree: str                    # 'ary' (z_l) or 'regular' (z-hat_l)
    trials: int
    seed: int
    kappa: float                 # (1-p)^2 (k-1)
    recursion_coeff: float       # kappa for 'ary', k(1-p)^2 for 'regular'
    z_mean: np.ndarray = field(default=None)
    z_se: np.ndarray = field(default=None)
    dtv2_mean: np.ndarray = field(default=None)
    dtv2_se: np.ndarray = field(default=None)
    exact: bool = False

    @property
    def levels(self) -> int:
        return self.z_mean.size - 1


_CHUNK_CELLS = 4_000_000


def simulate_root_statistic(
    k: int,
    q: int,
    p: float,
    eps: float,
    l_max: int,
    trials: int,
    seed: int,
    tree: str = "ary",
    max_vertices: int = 1 << 22,
) -> RecursionTrace:
    """Monte Carlo trace of (z_l, E d_TV(mu_root, uniform)^2) for l <= l_max.

    Each trial samples (theta, Y, xi) on the depth-l_max tree conditioned
    on an erased root, computes the exact root marginal of every truncation
    radius by sum-product, and records mu(theta_root) - 1/q and the squared
    TV distance to uniform.  Chunking is fixed, so results depend only on
    (seed, trials).
    """
    if trials < 100:
        raise RecursionError("need at least 100 trials")
    widths = _level_sizes(k, l_max, tree)
    if sum(widths) > max_vertices:
        raise RecursionError(f"tree with {sum(widths)} vertices above cap {max_vertices}")
    chunk = max(1, min(trials, _CHUNK_CELLS // max(widths)))
    nlev = l_max + 1
    count = 0
    s_z = np.zeros(nlev)
    s_z2 = np.zeros(nlev)
    s_d = np.zeros(nlev)
    s_d2 = np.zeros(nlev)
    cidx = 0
    while count < trials:
        size = min(chunk, trials - count)
        rng = make_rng(seed, 0x74726163, cidx)
        sample = _sample_chunk(k, q, p, eps, l_max, tree, size, rng)
        root = sample.theta[0][:, 0]
        for l in range(nlev):
            mu = _root_marginals(sample, k, q, p, l, tree)
            zval = mu[np.arange(size), root] - 1.0 / q
            dval = (0.5 * np.abs(mu - 1.0 / q).sum(axis=1)) ** 2
            s_z[l] += zval.sum()
            s_z2[l] += (zval**2).sum()
            s_d[l] += dval.sum()
            s_d2[l] += (dval**2).sum()
        count += size
        cidx += 1
    mean_z = s_z / trials
    mean_d = s_d / trials
    var_z = np.maximum(s_z2 / trials - mean_z**2, 0.0) * trials / (trials - 1)
    var_d = np.maximum(s_d2 / trials - mean_d**2, 0.0) * trials / (trials - 1)
    coeff = (1.0 - p) ** 2 * ((k - 1) if tree == "ary" else k)
    return RecursionTrace(
        k=k, q=q, p=p, eps=eps, tree=tree, trials=trials, seed=seed,
        kappa=(1.0 - p) ** 2 * (k - 1), recursion_coeff=coeff,
        z_mean=mean_z, z_se=np.sqrt(var_z / trials),
        dtv2_mean=mean_d, dtv2_se=np.sqrt(var_d / trials),
    )


@dataclass(eq=False)
class ResidualReport:
    """Residuals of the scalar recursion z_{l+1} ~ (1-eps) c z_l
    + eps c (q-1)/q and the fitted envelope constant."""

    residuals: np.ndarray
    residual_se: np.ndarray
    envelope: np.ndarray        # z_l^2 + eps^2 per level
    c_fit: float
    coeff: float


def recursion_residual(trace: RecursionTrace) -> ResidualReport:
    """Per-level residuals with conservatively propagated standard errors
    and the least-squares fit of C in r_l <= C (z_l^2 + eps^2)."""
    if trace.levels < 1:
        raise RecursionError("trace needs at least 2 levels")
    c = trace.recursion_coeff
    eps = trace.eps
    z = trace.z_mean
    se = trace.z_se
    drift = eps * c * (trace.q - 1) / trace.q
    resid = np.abs(z[1:] - (1.0 - eps) * c * z[:-1] - drift)
    rse = np.sqrt(se[1:] ** 2 + ((1.0 - eps) * c * se[:-1]) ** 2)
    env = z[:-1] ** 2 + eps**2
    c_fit = _envelope_fit(resid, env)
    return ResidualReport(residuals=resid, residual_se=rse, envelope=env, c_fit=c_fit, coeff=c)


def _envelope_fit(resid: np.ndarray, env: np.ndarray) -> float:
    """Smallest C with r_l <= C * env_l at every level."""
    pos = env > 0
    if not pos.any():
        return 0.0
    return float((resid[pos] / env[pos]).max())


def paired_recursion_residual(
    regular: RecursionTrace, ary: RecursionTrace
) -> ResidualReport:
    """Residuals of the paired recursion: the k-children root statistic at
    level l+1 against the (k-1)-ary statistic at level l, with coefficient
    k (1-p)^2."""
    if regular.tree != "regular" or ary.tree != "ary":
        raise RecursionError("expected one regular-root trace and one ary trace")
    if regular.levels < 1 or ary.levels < regular.levels - 1:
        raise RecursionError("traces too short for the paired residual")
    c = regular.recursion_coeff
    eps = regular.eps
    nres = regular.levels
    zh = regular.z_mean
    z = ary.z_mean
    drift = eps * c * (regular.q - 1) / regular.q
    resid = np.abs(zh[1:nres + 1] - (1.0 - eps) * c * z[:nres] - drift)
    rse = np.sqrt(regular.z_se[1:nres + 1] ** 2 + ((1.0 - eps) * c * ary.z_se[:nres]) ** 2)
    env = z[:nres] ** 2 + eps**2
    c_fit = _envelope_fit(resid, env)
    return ResidualReport(residuals=resid, residual_se=rse, envelope=env, c_fit=c_fit, coeff=c)


# ----------------------------------------------------------------------
# reweighting identity
# ----------------------------------------------------------------------

@dataclass(eq=False)
class ReweightingReport:
    max_discrepancy: float
    max_sigmas: float           # discrepancy / combined standard error, worst case
    discrepancies: np.ndarray   # (q, 2q): psi = projections then squared projections
    combined_se: np.ndarray


def reweighting_check(
    k: int, q: int, p: float, eps: float, l: int, trials: int, seed: int
) -> ReweightingReport:
    """Checks E[psi(mu) q mu(x)] (erased root, unconditioned label) against
    E[psi(mu) | theta_root = x] (conditioned trials) for psi ranging over
    coordinate projections and their squares."""
    widths = _level_sizes(k, l, "regular")
    chunk = max(1, min(trials, _CHUNK_CELLS // max(widths)))

    def moments(root_label: int | None):
        count, cidx = 0, 0
        s = np.zeros((q, 2 * q))
        s2 = np.zeros((q, 2 * q))
        while count < trials:
            size = min(chunk, trials - count)
            stream = 0x72777463 if root_label is None else 0x636F6E64 + root_label
            rng = make_rng(seed, stream, cidx)
            sample = _sample_chunk(k, q, p, eps, l, "regular", size, rng, root_label=root_label)
            mu = _root_marginals(sample, k, q, p, l, "regular")
            psi = np.concatenate([mu, mu**2], axis=1)  # (T, 2q)
            if root_label is None:
                wgt = q * mu  # (T, q): density d law(mu | theta=x) / d law(mu)
                vals = wgt[:, :, None] * psi[:, None, :]
            else:
                vals = np.broadcast_to(psi[:, None, :], (size, q, 2 * q))
            s += vals.sum(axis=0)
            s2 += (vals**2).sum(axis=0)
            count += size
            cidx += 1
        mean = s / trials
        var = np.maximum(s2 / trials - mean**2, 0.0) * trials / (trials - 1)
        return mean, np.sqrt(var / trials)

    lhs, lhs_se = moments(None)
    rhs = np.zeros((q, 2 * q))
    rhs_se = np.zeros((q, 2 * q))
    for x in range(q):
        m, se = moments(x)
        rhs[x] = m[x]
        rhs_se[x] = se[x]
    disc = np.abs(lhs - rhs)
    comb = np.sqrt(lhs_se**2 + rhs_se**2)
    sigmas = disc / np.where(comb > 0, comb, 1.0)
    return ReweightingReport(
        max_discrepancy=float(disc.max()),
        max_sigmas=float(sigmas.max()),
        discrepancies=disc,
        combined_se=comb,
    )


# ----------------------------------------------------------------------
# Kesten-Stigum phase probe
# ----------------------------------------------------------------------

@dataclass(eq=False)
class PhaseReport:
    eps_list: list[float]
    below: dict
    above: dict

    def below_ratio_spread(self) -> float:
        r = [self.below[e]["plateau"] / e for e in self.eps_list]
        return max(r) / min(r)


def _plateau(trace: RecursionTrace, levels: int = 3) -> float:
    return float(trace.dtv2_mean[-levels:].mean())


def ks_phase_probe(
    k: int,
    q: int,
    p_below: float,
    p_above: float,
    eps_list: list[float],
    l_max: int,
    trials: int,
    seed: int,
) -> PhaseReport:
    """Plateau of E d_TV(mu_root, uniform)^2 at large depth, for a noise
    level below the Kesten-Stigum point and one above it."""
    kb = kappa_of(k, p_below)
    ka = kappa_of(k, p_above)
    if not (kb < 1.0 < ka):
        raise RecursionError("need kappa(p_below) < 1 < kappa(p_above)")
    below, above = {}, {}
    for i, eps in enumerate(eps_list):
        tb = simulate_root_statistic(k, q, p_below, eps, l_max, trials, seed + 2 * i, tree="regular")
        ta = simulate_root_statistic(k, q, p_above, eps, l_max, trials, seed + 2 * i + 1, tree="regular")
        below[eps] = {"plateau": _plateau(tb), "trace": tb}
        above[eps] = {"plateau": _plateau(ta), "trace": ta}
    return PhaseReport(eps_list=list(eps_list), below=below, above=above)


def kappa_of(k: int, p: float) -> float:
    return (1.0 - p) ** 2 * (k - 1)


# ----------------------------------------------------------------------
# exact root-marginal law at small depth
# ----------------------------------------------------------------------

def _dedup(atoms: np.ndarray, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    keys = np.round(atoms, 12)
    uniq, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    agg = np.zeros(uniq.shape[0])
    np.add.at(agg, inverse, probs)
    return atoms[first], agg


def _child_messages(
    atoms: np.ndarray, probs: np.ndarray, q: int, p: float, eps: float
) -> tuple[np.ndarray, np.ndarray]:
    """Message atoms from one child whose shifted-to-zero marginal law is
    (atoms, probs): mix in the reveal atom, then apply the shift kernel
    P(s=0) = 1-p+p/q, P(s!=0) = p/q."""
    point = np.zeros((1, q))
    point[0, 0] = 1.0
    base = np.concatenate([atoms * 1.0, point], axis=0)
    bprob = np.concatenate([probs * (1.0 - eps), [eps]])
    out_atoms, out_probs = [], []
    for s in range(q):
        ps = (1.0 - p + p / q) if s == 0 else p / q
        shifted = np.roll(base, s, axis=1)  # mu(x - s)
        out_atoms.append(p / q + (1.0 - p) * shifted)
        out_probs.append(bprob * ps)
    return _dedup(np.concatenate(out_atoms), np.concatenate(out_probs))


def _combine_children(
    msg_atoms: np.ndarray, msg_probs: np.ndarray, b: int, max_atoms: int
) -> tuple[np.ndarray, np.ndarray]:
    """Atom law of the normalized product of b iid message draws."""
    prod_atoms = np.ones((1, msg_atoms.shape[1]))
    prod_probs = np.ones(1)
    for j in range(b):
        na = prod_atoms.shape[0] * msg_atoms.shape[0]
        if na > max_atoms:
            raise RecursionError(f"atom count {na} above cap {max_atoms}")
        prod_atoms = prod_atoms[:, None, :] * msg_atoms[None, :, :]
        prod_probs = (prod_probs[:, None] * msg_probs[None, :]).ravel()
        prod_atoms = prod_atoms.reshape(-1, msg_atoms.shape[1])
        prod_atoms, prod_probs = _dedup(prod_atoms, prod_probs)
    mu = prod_atoms / prod_atoms.sum(axis=1, keepdims=True)
    return _dedup(mu, prod_probs)


@dataclass(eq=False)
class ExactRootLaw:
    """Exact atom distribution of the root marginal (shifted to root label
    0, root erased) per level, for both tree variants."""

    k: int
    q: int
    p: float
    eps: float
    ary_levels: list[tuple[np.ndarray, np.ndarray]]
    regular_levels: list[tuple[np.ndarray, np.ndarray]]

    def _z(self, levels, l) -> float:
        atoms, probs = levels[l]
        return float((probs * (atoms**2).sum(axis=1)).sum() - 1.0 / self.q)

    def z(self, l: int) -> float:
        """Exact z_l on the (k-1)-ary tree (erased root)."""
        return self._z(self.ary_levels, l)

    def z_hat(self, l: int) -> float:
        """Exact z-hat_l with k children at the root."""
        return self._z(self.regular_levels, l)

    def dtv2(self, l: int, tree: str = "regular") -> float:
        atoms, probs = (self.ary_levels if tree == "ary" else self.regular_levels)[l]
        d = 0.5 * np.abs(atoms - 1.0 / self.q).sum(axis=1)
        return float((probs * d**2).sum())

    def trace(self, tree: str = "ary") -> RecursionTrace:
        """Zero-noise trace usable by recursion_residual."""
        levels = self.ary_levels if tree == "ary" else self.regular_levels
        nlev = len(levels)
        z = np.array([self._z(levels, l) for l in range(nlev)])
        d = np.array([self.dtv2(l, tree) for l in range(nlev)])
        coeff = (1.0 - self.p) ** 2 * ((self.k - 1) if tree == "ary" else self.k)
        return RecursionTrace(
            k=self.k, q=self.q, p=self.p, eps=self.eps, tree=tree,
            trials=0, seed=0, kappa=(1.0 - self.p) ** 2 * (self.k - 1),
            recursion_coeff=coeff,
            z_mean=z, z_se=np.zeros(nlev), dtv2_mean=d, dtv2_se=np.zeros(nlev),
            exact=True,
        )


def exact_root_law(
    k: int, q: int, p: float, eps: float, depth: int, max_atoms: int = 3_000_000
) -> ExactRootLaw:
    """Enumerate the exact law of the root marginal up to ``depth``.

    Feasible for small depth only (the atom count grows doubly
    exponentially); at q=2, k=3 depth 3 stays below ~10^5 atoms.
    """
    uniform = np.full((1, q), 1.0 / q)
    one = np.ones(1)
    ary = [(uniform, one)]
    regular = [(uniform, one)]
    for _ in range(depth):
        cur_atoms, cur_probs = ary[-1]
        msg_a, msg_p = _child_messages(cur_atoms, cur_probs, q, p, eps)
        ary.append(_combine_children(msg_a, msg_p, k - 1, max_atoms))
        regular.append(_combine_children(msg_a, msg_p, k, max_atoms))
    return ExactRootLaw(k=k, q=q, p=p, eps=eps, ary_levels=ary, regular_levels=regular)
