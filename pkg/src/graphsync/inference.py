"""Exact posterior computations.

Three engines live here:

* exhaustive enumeration over label assignments (global marginals, pairwise
  joints, boundary-conditioned marginals, posterior sampling),
* sum-product on trees (one upward and one downward pass, exact), with a
  cyclic-shift fast path for difference kernels and a generic-kernel path
  that doubles as its oracle,
* an exact conditional mutual-information engine that enumerates the joint
  law of (labels, edge observations, reveal pattern) once per graph and
  answers every I(theta_u; theta_T | observations) query from a per-mask
  entropy table.

Probability accumulation is done on log-weights with a max-shift before
exponentiation, so products over hundreds of kernel entries cannot
underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ._kernels import fill_logweights
from .graphs import Ball, Graph, ball as make_ball
from .model import Instance, Kernel, STAR

DEFAULT_ENUM_CAP = 2**24
DEFAULT_CMI_BUDGET = 2**24


class InferenceError(ValueError):
    pass


class BudgetError(InferenceError):
    """Raised when an exact computation would exceed its configuration cap."""


class ZeroLikelihoodError(InferenceError):
    """The observation has probability zero under the model."""


# ----------------------------------------------------------------------
# exhaustive enumeration
# ----------------------------------------------------------------------

@dataclass(eq=False)
class PosteriorEnumeration:
    """Result of one exhaustive sweep: per-configuration weights over the
    unrevealed vertices, plus enough bookkeeping to answer marginal,
    pairwise, sampling, and moment queries."""

    n: int
    q: int
    free: np.ndarray          # unrevealed vertex ids, ascending
    pinned_labels: np.ndarray  # (n,) label for revealed vertices, else -1
    weights: np.ndarray       # (q**m,) posterior weights, normalized to sum 1
    log_const: float          # log-likelihood contribution of pinned-pinned edges
    log_z: float              # log of the summed weight (before normalization)

    @property
    def num_free(self) -> int:
        return int(self.free.size)

    def _axis_of(self, vertex: int) -> int:
        pos = np.searchsorted(self.free, vertex)
        if pos >= self.free.size or self.free[pos] != vertex:
            raise InferenceError("vertex is revealed; no enumeration axis")
        return int(pos)

    def marginals(self) -> np.ndarray:
        """(n, q) posterior marginals; revealed vertices are point masses."""
        out = np.zeros((self.n, self.q))
        m = self.num_free
        w = self.weights.reshape((self.q,) * m) if m else self.weights
        for pos, v in enumerate(self.free):
            axes = tuple(i for i in range(m) if i != pos)
            out[v] = w.sum(axis=axes) if axes else w
        for v in range(self.n):
            lab = self.pinned_labels[v]
            if lab >= 0:
                out[v, lab] = 1.0
        return out

    def pairwise(self, u: int, v: int) -> np.ndarray:
        """(q, q) joint posterior of (theta_u, theta_v)."""
        if u == v:
            return np.diag(self.marginals()[u])
        out = np.zeros((self.q, self.q))
        lu, lv = self.pinned_labels[u], self.pinned_labels[v]
        if lu >= 0 and lv >= 0:
            out[lu, lv] = 1.0
            return out
        if lu >= 0:
            out[lu, :] = self.marginals()[v]
            return out
        if lv >= 0:
            out[:, lv] = self.marginals()[u]
            return out
        m = self.num_free
        w = self.weights.reshape((self.q,) * m)
        pu, pv = self._axis_of(u), self._axis_of(v)
        axes = tuple(i for i in range(m) if i not in (pu, pv))
        joint = w.sum(axis=axes) if axes else w
        if pu > pv:
            joint = joint.T
        return joint

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """One label vector drawn from the exact posterior."""
        theta = np.array(self.pinned_labels, dtype=np.int64)
        m = self.num_free
        if m:
            c = int(rng.choice(self.weights.size, p=self.weights))
            for pos in range(m - 1, -1, -1):
                theta[self.free[pos]] = c % self.q
                c //= self.q
        return theta

    def fmoment_matrix(self, fvals: np.ndarray) -> np.ndarray:
        """(n, n) matrix of E[f(theta_u) f(theta_v) | observations].

        Entries are contractions of the pairwise posteriors with f; the
        diagonal uses the single-vertex law.
        """
        fvals = np.asarray(fvals, dtype=np.float64)
        marg = self.marginals()
        score = marg @ fvals
        out = np.outer(score, score)
        m = self.num_free
        if m:
            w = self.weights
            digits = _digit_table(m, self.q, w.size)
            gmat = fvals[digits]  # (configs, m)
            out[np.ix_(self.free, self.free)] = (gmat * w[:, None]).T @ gmat
        np.fill_diagonal(out, marg @ (fvals**2))
        return out


_digit_cache: dict[tuple[int, int], np.ndarray] = {}


def _digit_table(m: int, q: int, size: int) -> np.ndarray:
    key = (m, q)
    tab = _digit_cache.get(key)
    if tab is None or tab.shape[0] != size:
        idx = np.arange(size, dtype=np.int64)
        tab = np.empty((size, m), dtype=np.int64)
        for i in range(m):
            tab[:, m - 1 - i] = (idx // q**i) % q
        _digit_cache[key] = tab
    return tab


def enumerate_posterior(
    g: Graph,
    kernel: Kernel,
    inst: Instance,
    cap: int | None = None,
    extra_pins: dict[int, int] | None = None,
) -> PosteriorEnumeration:
    """Exact posterior over all assignments consistent with the side channel
    (and any extra pinned labels), weighted by the product of edge kernels."""
    cap = DEFAULT_ENUM_CAP if cap is None else int(cap)
    inst.validate(g, kernel)
    q = kernel.q
    pinned = np.array(inst.xi, dtype=np.int64)
    if extra_pins:
        for v, lab in extra_pins.items():
            if pinned[v] != STAR and pinned[v] != lab:
                raise InferenceError("pin conflicts with revealed label")
            pinned[v] = lab
    free = np.flatnonzero(pinned == STAR)
    m = free.size
    cost = q**m
    if cost > cap:
        raise BudgetError(
            f"enumeration needs q^{m} = {cost} weighted configurations, cap is {cap}"
        )
    pos = {int(v): i for i, v in enumerate(free)}
    logq_tab = kernel.log_table
    unary = np.zeros((m, q))
    log_const = 0.0
    free_u, free_v, slices = [], [], []
    for eid, (a, b) in enumerate(g.edges):
        a, b = int(a), int(b)
        yv = int(inst.y[eid])
        tab = logq_tab[:, :, yv]
        a_free, b_free = pinned[a] == STAR, pinned[b] == STAR
        if a_free and b_free:
            free_u.append(pos[a])
            free_v.append(pos[b])
            slices.append(tab)
        elif a_free:
            unary[pos[a]] += tab[:, pinned[b]]
        elif b_free:
            unary[pos[b]] += tab[pinned[a], :]
        else:
            log_const += tab[pinned[a], pinned[b]]
    if math.isinf(log_const):
        raise ZeroLikelihoodError("observation has zero likelihood")
    out = np.empty(cost)
    eu = np.asarray(free_u, dtype=np.intc)
    ev = np.asarray(free_v, dtype=np.intc)
    elogq = (
        np.ascontiguousarray(np.stack(slices))
        if slices
        else np.zeros((0, q, q))
    )
    bad = ~np.isfinite(unary)
    if bad.any():
        # zero kernel entries: keep the -inf semantics but protect the kernel
        unary[bad] = -1e300
    neg = ~np.isfinite(elogq)
    if neg.any():
        elogq = np.where(neg, -1e300, elogq)
    fill_logweights(unary, eu, ev, elogq, out)
    shift = float(out.max())
    if shift < -1e290:
        raise ZeroLikelihoodError("observation has zero likelihood")
    w = np.exp(out - shift)
    z = float(w.sum())
    if z == 0.0 or not math.isfinite(z):
        raise ZeroLikelihoodError("observation has zero likelihood")
    w /= z
    return PosteriorEnumeration(
        n=g.n,
        q=q,
        free=free,
        pinned_labels=pinned,
        weights=w,
        log_const=log_const,
        log_z=math.log(z) + shift + log_const,
    )


def exact_posterior_marginals(
    g: Graph, kernel: Kernel, inst: Instance, cap: int | None = None
) -> np.ndarray:
    """(n, q) marginals by exact summation over all consistent assignments."""
    return enumerate_posterior(g, kernel, inst, cap=cap).marginals()


def restrict_instance(inst: Instance, b: Ball) -> Instance:
    """Observations of the parent instance restricted to a ball."""
    return Instance(
        theta0=inst.theta0[b.vertices],
        y=inst.y[b.edge_ids],
        xi=inst.xi[b.vertices],
    )


def local_marginal(
    g: Graph, u: int, l: int, kernel: Kernel, inst: Instance, cap: int | None = None
) -> np.ndarray:
    """Posterior of theta_u from observations in the radius-l ball only."""
    b = make_ball(g, u, l)
    sub_inst = restrict_instance(inst, b)
    marg = exact_posterior_marginals(b.subgraph, kernel, sub_inst, cap=cap)
    return marg[0]


def pairwise_posterior(
    g: Graph, kernel: Kernel, inst: Instance, u: int, v: int, cap: int | None = None
) -> np.ndarray:
    """(q, q) joint posterior of (theta_u, theta_v) given all observations."""
    return enumerate_posterior(g, kernel, inst, cap=cap).pairwise(u, v)


def boundary_conditioned_marginal(
    g: Graph,
    u: int,
    S: Iterable[int],
    kernel: Kernel,
    inst: Instance,
    boundary_labels: dict[int, int],
    cap: int | None = None,
) -> np.ndarray:
    """Posterior of theta_u given observations inside S and fixed labels on
    the supplied boundary vertices.  Everything outside S is ignored, which
    is exactly the spatial Markov property of the model."""
    order = sorted(set(int(v) for v in S))
    if u not in order:
        raise InferenceError("query vertex must lie in S")
    index = {v: i for i, v in enumerate(order)}
    for v in boundary_labels:
        if int(v) not in index:
            raise InferenceError("boundary label outside S")
    keep = [
        eid
        for eid, (a, b) in enumerate(g.edges)
        if int(a) in index and int(b) in index
    ]
    sub_edges = np.asarray(
        [[index[int(a)], index[int(b)]] for a, b in g.edges[keep]], dtype=np.int64
    ).reshape(-1, 2)
    sub = Graph(n=len(order), edges=sub_edges, simple=False)
    sub_inst = Instance(
        theta0=inst.theta0[order],
        y=inst.y[keep],
        xi=inst.xi[order],
    )
    pins = {index[int(v)]: int(lab) for v, lab in boundary_labels.items()}
    enum = enumerate_posterior(sub, kernel, sub_inst, cap=cap, extra_pins=pins)
    return enum.marginals()[index[u]]


# ----------------------------------------------------------------------
# sum-product on trees
# ----------------------------------------------------------------------

def _tree_structure(g: Graph) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[int]]:
    """Rooted (at 0) BFS structure: parent, parent edge id, edge direction
    flag (1 when the edge is stored child->parent), and traversal order."""
    if g.num_edges != g.n - 1:
        raise InferenceError("input graph is not a tree")
    offsets, nbrs, eids, head = g.csr()
    parent = np.full(g.n, -1, dtype=np.int64)
    pedge = np.full(g.n, -1, dtype=np.int64)
    pflip = np.zeros(g.n, dtype=np.int8)
    order = [0]
    seen = np.zeros(g.n, dtype=bool)
    seen[0] = True
    qh = 0
    while qh < len(order):
        v = order[qh]
        qh += 1
        for i in range(offsets[v], offsets[v + 1]):
            w = int(nbrs[i])
            if not seen[w]:
                seen[w] = True
                parent[w] = v
                pedge[w] = eids[i]
                # head[i]==1 means v is the head, i.e. the edge is stored
                # child->parent: that is the flipped orientation
                pflip[w] = 1 if head[i] == 1 else 0
                order.append(w)
    if not seen.all():
        raise InferenceError("input graph is not a tree (disconnected)")
    return parent, pedge, pflip, order


def _evidence(inst: Instance, q: int) -> np.ndarray:
    ev = np.ones((inst.xi.size, q))
    revealed = inst.xi != STAR
    ev[revealed] = 0.0
    ev[np.flatnonzero(revealed), inst.xi[revealed]] = 1.0
    return ev


def bp_tree_marginals(
    tree: Graph, kernel: Kernel, inst: Instance, method: str = "auto"
) -> np.ndarray:
    """Exact marginals on a tree via one upward and one downward message
    pass.

    ``method='zq'`` uses the cyclic-shift form of the messages,
    mu_o(x) proportional to prod_u (p/q + (1-p) mu_u(x - Y_ou)); 'generic'
    runs the table-based sum-product for arbitrary kernels.  'auto' picks
    'zq' when the kernel is a cyclic-difference kernel.
    """
    inst.validate(tree, kernel)
    if method == "auto":
        method = "zq" if kernel.zq_noise is not None else "generic"
    q = kernel.q
    parent, pedge, pflip, order = _tree_structure(tree)
    ev = _evidence(inst, q)
    up = np.ones((tree.n, q))  # message from v to its parent
    if method == "zq":
        p = kernel.zq_noise
        if p is None:
            raise InferenceError("zq method requires a cyclic-difference kernel")
    table = kernel.table

    def edge_pass(msg: np.ndarray, eid: int, to_parent: bool, flip: int) -> np.ndarray:
        """Propagate ``msg`` across edge ``eid``.

        ``flip``: 0 when the stored edge runs parent->child, 1 otherwise;
        with ``to_parent`` this fixes which kernel axis is summed.
        """
        yv = int(inst.y[eid])
        if method == "zq":
            # stored (a, b): Y = theta_a - theta_b + noise; the p/q term
            # carries the total mass, so the incoming message is normalized
            s = msg.sum()
            if s <= 0.0:
                raise ZeroLikelihoodError("zero-likelihood evidence on the tree")
            shift = yv if (to_parent ^ bool(flip)) else -yv
            return p / q + (1.0 - p) * np.roll(msg / s, shift)
        tab = table[:, :, yv]
        if to_parent ^ bool(flip):
            return tab @ msg
        return tab.T @ msg

    for v in reversed(order):
        if parent[v] < 0:
            continue
        beta = ev[v].copy()
        for w in tree.neighbors(v):
            w = int(w)
            if w != parent[v]:
                beta *= up[w]
        msg = edge_pass(beta, int(pedge[v]), True, int(pflip[v]))
        s = msg.sum()
        if s <= 0.0:
            raise ZeroLikelihoodError("zero-likelihood evidence on the tree")
        up[v] = msg / s

    down = np.ones((tree.n, q))  # message from parent(v) to v
    marg = np.empty((tree.n, q))
    for v in order:
        prod = ev[v] * down[v]
        children = [int(w) for w in tree.neighbors(v) if int(w) != parent[v]]
        for w in children:
            prod *= up[w]
        s = prod.sum()
        if s <= 0.0:
            raise ZeroLikelihoodError("zero-likelihood evidence on the tree")
        marg[v] = prod / s
        for w in children:
            ratio = prod / np.where(up[w] > 0, up[w], 1.0)
            exact = ev[v] * down[v]
            for w2 in children:
                if w2 != w:
                    exact *= up[w2]
            use = exact if np.any(up[w] <= 0) else ratio
            msg = edge_pass(use, int(pedge[w]), False, int(pflip[w]))
            s2 = msg.sum()
            if s2 <= 0.0:
                raise ZeroLikelihoodError("zero-likelihood evidence on the tree")
            down[w] = msg / s2
    return marg


# ----------------------------------------------------------------------
# exact conditional mutual information
# ----------------------------------------------------------------------

def _theta_digits(n: int, q: int) -> np.ndarray:
    idx = np.arange(q**n, dtype=np.int64)
    tab = np.empty((q**n, n), dtype=np.int64)
    for i in range(n):
        tab[:, n - 1 - i] = (idx // q**i) % q
    return tab


@dataclass(eq=False)
class CMITable:
    """Per-reveal-mask entropy table for one (graph, kernel) pair.

    For a mask M of revealed vertices let f_Y(M, vals) be the total kernel
    likelihood of observations Y summed over assignments agreeing with
    ``vals`` on M, and G(M) = sum_Y sum_vals f log f.  Every conditional
    entropy and mutual information of label sets given (Y, side channel)
    is a weighted combination of G values, with weights polynomial in the
    reveal probabilities; this table answers all of them exactly.
    """

    g: Graph
    kernel: Kernel
    G: np.ndarray  # (2**n,)

    def _mask_weights(self, eps) -> np.ndarray:
        n = self.g.n
        eps_vec = np.broadcast_to(np.asarray(eps, dtype=np.float64), (n,))
        masks = np.arange(2**n, dtype=np.int64)
        w = np.ones(2**n)
        for i in range(n):
            bit = (masks >> i) & 1
            w *= np.where(bit == 1, eps_vec[i], 1.0 - eps_vec[i])
        return w

    @staticmethod
    def _to_mask(T: int | Iterable[int]) -> int:
        if isinstance(T, (int, np.integer)):
            return 1 << int(T)
        m = 0
        for v in T:
            m |= 1 << int(v)
        return m

    def conditional_entropy(self, eps, T: int | Iterable[int]) -> float:
        """H(theta_T | Y, xi) in nats; eps may be scalar or per-vertex."""
        w = self._mask_weights(eps)
        masks = np.arange(2**self.g.n, dtype=np.int64)
        mt = self._to_mask(T)
        qn = self.kernel.q**self.g.n
        return float((w * (self.G[masks] - self.G[masks | mt])).sum() / qn)

    def cmi(self, eps, u: int, T: int | Iterable[int]) -> float:
        """I(theta_u; theta_T | Y, xi) in nats."""
        w = self._mask_weights(eps)
        masks = np.arange(2**self.g.n, dtype=np.int64)
        mu = 1 << int(u)
        mt = self._to_mask(T)
        comb = (
            self.G[masks]
            + self.G[masks | mu | mt]
            - self.G[masks | mu]
            - self.G[masks | mt]
        )
        qn = self.kernel.q**self.g.n
        return float((w * comb).sum() / qn)


def _spanning_tree_edges(g: Graph) -> np.ndarray:
    offsets, nbrs, eids, _ = g.csr()
    seen = np.zeros(g.n, dtype=bool)
    seen[0] = True
    frontier = [0]
    tree: list[int] = []
    while frontier:
        v = frontier.pop()
        for i in range(offsets[v], offsets[v + 1]):
            w = int(nbrs[i])
            if not seen[w]:
                seen[w] = True
                tree.append(int(eids[i]))
                frontier.append(w)
    if not seen.all():
        raise InferenceError("graph must be connected for the CMI table")
    return np.asarray(sorted(tree), dtype=np.int64)


def cmi_table(g: Graph, kernel: Kernel, budget: int | None = None) -> CMITable:
    """Build the reveal-mask entropy table by exact enumeration of the joint
    law of (labels, observations).

    For cyclic-difference kernels the likelihood satisfies
    L(theta, Y + dB) = L(theta - d, Y) for any vertex shift d (B maps vertex
    shifts to edge differences), so the per-Y entropy summands are constant
    on cosets of the cut space; only gauge-fixed representatives with Y = 0
    on a spanning tree are enumerated, a q^(n-1)-fold reduction.  General
    kernels enumerate the full observation space.  The call refuses atom
    budgets above ``budget`` (default 2**24).
    """
    budget = DEFAULT_CMI_BUDGET if budget is None else int(budget)
    n, q, ysz = g.n, kernel.q, kernel.y_size
    n_edges = g.num_edges
    use_gauge = kernel.zq_noise is not None and n_edges > 0
    if use_gauge:
        tree_edges = _spanning_tree_edges(g)
        free_edges = np.setdiff1d(np.arange(n_edges), tree_edges)
        multiplier = float(q) ** (n - 1)
    else:
        free_edges = np.arange(n_edges)
        multiplier = 1.0
    atoms = (q + 1) ** n * ysz ** len(free_edges)
    if atoms > budget:
        raise BudgetError(
            f"exact CMI needs (q+1)^{n} * y^{len(free_edges)} = {atoms} atom visits, "
            f"budget is {budget}"
        )
    theta_dig = _theta_digits(n, q)
    total_y = ysz ** len(free_edges)
    chunk = max(1, (1 << 23) // (q + 1) ** n)
    G = np.zeros(2**n)
    # permutation taking mask integers to reduced-array flat indices
    masks = np.arange(2**n, dtype=np.int64)
    idx = np.zeros(2**n, dtype=np.int64)
    for i in range(n):
        bit = (masks >> i) & 1
        # axis i index: 0 when vertex i is revealed (pinned), 1 otherwise
        idx += (1 - bit) << (n - 1 - i)
    eu = g.edges[:, 0]
    ev = g.edges[:, 1]
    # flattened per-edge factor lookup: row = theta pair, column = y
    flat = np.ascontiguousarray(kernel.table.reshape(q * q, ysz))
    pair_idx = {e: theta_dig[:, eu[e]] * q + theta_dig[:, ev[e]] for e in range(n_edges)}
    fixed = np.ones(q**n)
    if use_gauge:
        for e in np.setdiff1d(np.arange(n_edges), free_edges):
            fixed = fixed * flat[pair_idx[int(e)], 0]
    start = 0
    while start < total_y:
        stop = min(start + chunk, total_y)
        size = stop - start
        yidx = np.arange(start, stop, dtype=np.int64)
        like = np.broadcast_to(fixed[:, None], (q**n, size)).copy()
        for pos, e in enumerate(free_edges):
            ye = (yidx // ysz ** (len(free_edges) - 1 - pos)) % ysz
            like *= flat[pair_idx[int(e)][:, None], ye[None, :]]
        t = like.reshape((q,) * n + (size,))
        for axis in range(n):
            t = np.concatenate([t, t.sum(axis=axis, keepdims=True)], axis=axis)
        with np.errstate(divide="ignore", invalid="ignore"):
            logt = np.log(t, out=np.zeros_like(t), where=t > 0)
        plogp = t * logt
        del logt, t
        for axis in range(n):
            sl_pin = [slice(None)] * (n + 1)
            sl_pin[axis] = slice(0, q)
            sl_sum = [slice(None)] * (n + 1)
            sl_sum[axis] = slice(q, q + 1)
            plogp = np.concatenate(
                [plogp[tuple(sl_pin)].sum(axis=axis, keepdims=True), plogp[tuple(sl_sum)]],
                axis=axis,
            )
        reduced = plogp.sum(axis=-1).reshape(2**n)
        G += reduced[idx]
        start = stop
    return CMITable(g=g, kernel=kernel, G=G * multiplier)


def conditional_mutual_information(
    g: Graph,
    kernel: Kernel,
    eps,
    u: int,
    T: int | Iterable[int],
    budget: int | None = None,
) -> float:
    """Exact I(theta_u; theta_T | Y^(eps)) on a small graph, in nats.

    The expectation runs over labels, edge observations, and all reveal
    patterns of the side channel (weighted by their eps-probabilities).
    """
    return cmi_table(g, kernel, budget=budget).cmi(eps, u, T)


def write_marginals_csv(marg: np.ndarray, path) -> None:
    """Rows (vertex, x, probability)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("vertex,x,probability\n")
        for v in range(marg.shape[0]):
            for x in range(marg.shape[1]):
                fh.write(f"{v},{x},{marg[v, x]:.17g}\n")
