import math

import numpy as np
import pytest

from graphsync._rng import make_rng
from graphsync.graphs import Graph, ball, gen_torus, gen_tree
from graphsync.inference import (
    BudgetError,
    ZeroLikelihoodError,
    boundary_conditioned_marginal,
    bp_tree_marginals,
    cmi_table,
    conditional_mutual_information,
    enumerate_posterior,
    exact_posterior_marginals,
    local_marginal,
    pairwise_posterior,
    restrict_instance,
)
from graphsync.model import STAR, Instance, kernel_zq, sample_instance

from oracles import (
    brute_boundary_conditional,
    brute_marginals,
    brute_pairwise,
    direct_cmi,
    random_tree,
)


def _instance(theta0, y, xi):
    return Instance(
        theta0=np.asarray(theta0, dtype=np.int64),
        y=np.asarray(y, dtype=np.int64),
        xi=np.asarray(xi, dtype=np.int64),
    )


def test_two_vertex_example():
    g = Graph(n=2, edges=np.array([[0, 1]]))
    k = kernel_zq(2, 0.2)
    inst = _instance([0, 0], [0], [0, STAR])
    marg = exact_posterior_marginals(g, k, inst)
    np.testing.assert_allclose(marg[1], [0.9, 0.1], atol=1e-12)
    np.testing.assert_allclose(marg[0], [1.0, 0.0], atol=1e-15)


def test_full_reveal_gives_point_masses():
    g = gen_torus(2, 3)
    k = kernel_zq(3, 0.4)
    inst = sample_instance(g, k, 1.0, seed=4)
    marg = exact_posterior_marginals(g, k, inst)
    expect = np.zeros((g.n, 3))
    expect[np.arange(g.n), inst.theta0] = 1.0
    np.testing.assert_allclose(marg, expect, atol=1e-15)


def test_pure_noise_gives_uniform():
    g = gen_torus(2, 3)
    k = kernel_zq(2, 1.0)
    inst = sample_instance(g, k, 0.0, seed=4)
    marg = exact_posterior_marginals(g, k, inst)
    np.testing.assert_allclose(marg, 0.5, atol=1e-12)


@pytest.mark.parametrize("q,p,eps", [(2, 0.3, 0.2), (3, 0.5, 0.4), (2, 0.0, 0.3)])
def test_marginals_match_brute_oracle(q, p, eps):
    g = gen_torus(1, 6)
    k = kernel_zq(q, p)
    for s in range(5):
        inst = sample_instance(g, k, eps, seed=20 + s)
        marg = exact_posterior_marginals(g, k, inst)
        oracle = brute_marginals(g, k, inst)
        np.testing.assert_allclose(marg, oracle, atol=1e-11)


def test_enumeration_cap():
    g = gen_torus(2, 4)
    k = kernel_zq(2, 0.5)
    inst = sample_instance(g, k, 0.0, seed=1)
    with pytest.raises(BudgetError):
        exact_posterior_marginals(g, k, inst, cap=2**10)


def test_zero_likelihood_detected():
    g = Graph(n=2, edges=np.array([[0, 1]]))
    k = kernel_zq(2, 0.0)
    inst = _instance([0, 0], [1], [0, 0])  # reveals contradict the noiseless edge
    with pytest.raises(ZeroLikelihoodError):
        exact_posterior_marginals(g, k, inst)


def test_local_marginal_radius_zero():
    g = gen_torus(2, 4)
    k = kernel_zq(3, 0.3)
    inst = sample_instance(g, k, 0.5, seed=8)
    for u in range(4):
        mu = local_marginal(g, u, 0, k, inst)
        if inst.xi[u] == STAR:
            np.testing.assert_allclose(mu, 1 / 3, atol=1e-12)
        else:
            assert mu[inst.xi[u]] == 1.0


def test_local_marginal_full_radius_matches_global():
    g = gen_torus(1, 7)
    k = kernel_zq(2, 0.4)
    inst = sample_instance(g, k, 0.2, seed=9)
    full = exact_posterior_marginals(g, k, inst)
    for u in (0, 3):
        mu = local_marginal(g, u, 7, k, inst)
        np.testing.assert_allclose(mu, full[u], atol=1e-10)


def test_local_marginal_ignores_outside_observations():
    g = gen_torus(2, 5)
    k = kernel_zq(2, 0.3)
    inst = sample_instance(g, k, 0.3, seed=10)
    b = ball(g, 12, 1)
    mu = local_marginal(g, 12, 1, k, inst)
    y2 = inst.y.copy()
    xi2 = inst.xi.copy()
    outside_e = np.setdiff1d(np.arange(g.num_edges), b.edge_ids)
    outside_v = np.setdiff1d(np.arange(g.n), b.vertices)
    y2[outside_e] = (y2[outside_e] + 1) % 2
    xi2[outside_v] = STAR
    mu2 = local_marginal(g, 12, 1, k, _instance(inst.theta0, y2, xi2))
    np.testing.assert_array_equal(mu, mu2)


# ----------------------------------------------------------------------
# tree BP
# ----------------------------------------------------------------------

def test_bp_single_vertex():
    g = Graph(n=1, edges=np.empty((0, 2), dtype=np.int64))
    k = kernel_zq(3, 0.2)
    marg = bp_tree_marginals(g, k, _instance([1], [], [STAR]))
    np.testing.assert_allclose(marg[0], 1 / 3, atol=1e-15)


def test_bp_star_one_leaf():
    # root erased, leaf revealed as 0, Y = 0:
    # mu_root(x) ~ p/q + (1-p) 1{x = 0}, i.e. (0.9, 0.1) at p = 0.2
    g = Graph(n=2, edges=np.array([[0, 1]]))
    k = kernel_zq(2, 0.2)
    marg = bp_tree_marginals(g, k, _instance([0, 0], [0], [STAR, 0]))
    np.testing.assert_allclose(marg[0], [0.9, 0.1], atol=1e-12)


@pytest.mark.parametrize("q,p,eps", [(2, 0.2, 0.3), (3, 0.5, 0.0), (2, 0.9, 1.0), (3, 0.1, 0.4)])
def test_bp_matches_enumeration_on_regular_trees(q, p, eps):
    k = kernel_zq(q, p)
    g = gen_tree(3, 2)
    for s in range(10):
        inst = sample_instance(g, k, eps, seed=50 + s)
        bp = bp_tree_marginals(g, k, inst)
        ex = exact_posterior_marginals(g, k, inst)
        assert np.abs(bp - ex).max() < 1e-10


def test_bp_matches_enumeration_on_random_trees():
    rng = make_rng(123)
    k = kernel_zq(2, 0.35)
    for s in range(25):
        edges = random_tree(rng, 11, 4, 3)
        g = Graph(n=int(edges.max()) + 1 if edges.size else 1, edges=edges)
        inst = sample_instance(g, k, 0.25, seed=400 + s)
        bp = bp_tree_marginals(g, k, inst)
        ex = exact_posterior_marginals(g, k, inst)
        assert np.abs(bp - ex).max() < 1e-10


def test_bp_zq_equals_generic():
    g = gen_tree(4, 2)
    k = kernel_zq(3, 0.3)
    inst = sample_instance(g, k, 0.2, seed=6)
    a = bp_tree_marginals(g, k, inst, method="zq")
    b = bp_tree_marginals(g, k, inst, method="generic")
    assert np.abs(a - b).max() < 1e-12


def test_bp_rejects_non_tree():
    g = gen_torus(1, 4)
    k = kernel_zq(2, 0.2)
    inst = sample_instance(g, k, 0.0, seed=1)
    with pytest.raises(Exception):
        bp_tree_marginals(g, k, inst)


# ----------------------------------------------------------------------
# boundary conditioning and pairwise posteriors
# ----------------------------------------------------------------------

def test_boundary_single_vertex_point_mass():
    g = gen_torus(1, 5)
    k = kernel_zq(2, 0.3)
    inst = sample_instance(g, k, 0.0, seed=2)
    mu = boundary_conditioned_marginal(g, 2, {2}, k, inst, {2: 1})
    np.testing.assert_allclose(mu, [0.0, 1.0], atol=1e-15)


def test_boundary_conditioning_matches_markov_oracle():
    g = gen_torus(1, 6)
    k = kernel_zq(2, 0.3)
    for s in range(6):
        inst = sample_instance(g, k, 0.2, seed=60 + s)
        S = [0, 1, 2]
        labels = {0: int(s % 2), 2: int((s // 2) % 2)}
        if inst.xi[0] != STAR:
            labels[0] = int(inst.xi[0])
        if inst.xi[2] != STAR:
            labels[2] = int(inst.xi[2])
        if inst.xi[1] != STAR:
            continue
        mu = boundary_conditioned_marginal(g, 1, S, k, inst, labels)
        oracle = brute_boundary_conditional(g, k, inst, 1, S, labels)
        np.testing.assert_allclose(mu, oracle, atol=1e-11)


def test_boundary_uninformative_interior():
    # p=1 kernel, no reveals inside S: interior vertex not adjacent to the
    # fixed boundary stays uniform
    g = gen_torus(1, 7)
    k = kernel_zq(2, 1.0)
    inst = sample_instance(g, k, 0.0, seed=3)
    mu = boundary_conditioned_marginal(g, 2, [0, 1, 2, 3, 4], k, inst, {0: 1, 4: 0})
    np.testing.assert_allclose(mu, 0.5, atol=1e-12)


def test_pairwise_posterior():
    g = gen_torus(1, 5)
    k = kernel_zq(2, 0.25)
    inst = sample_instance(g, k, 0.2, seed=12)
    marg = exact_posterior_marginals(g, k, inst)
    joint = pairwise_posterior(g, k, inst, 1, 3)
    np.testing.assert_allclose(joint.sum(axis=1), marg[1], atol=1e-11)
    np.testing.assert_allclose(joint.sum(axis=0), marg[3], atol=1e-11)
    oracle = brute_pairwise(g, k, inst, 1, 3)
    np.testing.assert_allclose(joint, oracle, atol=1e-11)
    diag = pairwise_posterior(g, k, inst, 2, 2)
    np.testing.assert_allclose(diag, np.diag(marg[2]), atol=1e-12)


def test_pairwise_posterior_independent_case():
    g = gen_torus(1, 4)
    k = kernel_zq(2, 1.0)
    inst = sample_instance(g, k, 0.0, seed=13)
    joint = pairwise_posterior(g, k, inst, 0, 2)
    np.testing.assert_allclose(joint, 0.25, atol=1e-12)


# ----------------------------------------------------------------------
# martingale structure of local marginals
# ----------------------------------------------------------------------

def test_martingale_identity_and_monotone_second_moment():
    g = gen_torus(2, 3)
    k = kernel_zq(2, 0.6)
    balls = [ball(g, 0, l) for l in (0, 1, 2)]
    trials = 1500
    prods = np.zeros((trials, 3))
    sq = np.zeros((trials, 4))
    for t in range(trials):
        inst = sample_instance(g, k, 0.15, seed=t)
        full = enumerate_posterior(g, k, inst).marginals()[0]
        sq[t, 3] = (full**2).sum()
        for i, b in enumerate(balls):
            mu = exact_posterior_marginals(b.subgraph, k, restrict_instance(inst, b))[0]
            prods[t, i] = mu[0] * (full[0] - mu[0])
            sq[t, i] = (mu**2).sum()
    # E[mu_l (mu_full - mu_l)] = 0 per level
    for i in range(3):
        se = prods[:, i].std(ddof=1) / math.sqrt(trials)
        assert abs(prods[:, i].mean()) <= 4 * se + 1e-12
    # second moment nondecreasing in l, ending at the full marginal
    for i in range(3):
        d = sq[:, i + 1] - sq[:, i]
        se = d.std(ddof=1) / math.sqrt(trials)
        assert d.mean() >= -4 * se


# ----------------------------------------------------------------------
# conditional mutual information
# ----------------------------------------------------------------------

def test_cmi_matches_direct_oracle_on_path():
    g = Graph(n=3, edges=np.array([[0, 1], [1, 2]]))
    k = kernel_zq(2, 0.2)
    val = conditional_mutual_information(g, k, 0.1, 1, [0, 2])
    oracle = direct_cmi(g, k, 0.1, 1, [0, 2])
    assert val > 0
    assert abs(val - oracle) < 1e-9
    val2 = conditional_mutual_information(g, k, 0.3, 0, [2])
    oracle2 = direct_cmi(g, k, 0.3, 0, [2])
    assert abs(val2 - oracle2) < 1e-9


def test_cmi_independence_and_self_identity():
    g = Graph(n=3, edges=np.array([[0, 1], [1, 2]]))
    kp1 = kernel_zq(2, 1.0)
    assert conditional_mutual_information(g, kp1, 0.0, 0, [2]) == pytest.approx(0.0, abs=1e-12)
    k = kernel_zq(2, 0.3)
    tab = cmi_table(g, k)
    assert tab.cmi(0.2, 1, [1]) == pytest.approx(tab.conditional_entropy(0.2, [1]), abs=1e-12)
    assert tab.conditional_entropy(0.2, [1]) >= 0


def test_cmi_budget():
    g = gen_torus(2, 3)
    k = kernel_zq(2, 0.3)
    with pytest.raises(BudgetError):
        cmi_table(g, k)  # needs 3^9 * 2^18 atoms, over the default budget


def test_entropy_derivative_identity():
    # d/d eps_u H(theta_T | Y, xi) = -I(theta_u; theta_T | Y, xi without u),
    # checked by first-order finite differences at two step sizes
    g = Graph(n=3, edges=np.array([[0, 1], [1, 2]]))
    k = kernel_zq(2, 0.2)
    tab = cmi_table(g, k)
    u, T = 1, [0, 2]
    base = 0.15
    eps_no_u = np.array([base, 0.0, base])
    target = -tab.cmi(eps_no_u, u, T)
    errs = []
    for delta in (1e-2, 1e-3):
        lo = np.array([base, base, base])
        hi = np.array([base, base + delta, base])
        fd = (tab.conditional_entropy(hi, T) - tab.conditional_entropy(lo, T)) / delta
        # the derivative at eps_u = base differs from the xi-without-u value
        # by O(eps_u); compare against the in-place derivative instead
        mid_lo = np.array([base, base - delta / 2, base])
        mid_hi = np.array([base, base + delta / 2, base])
        central = (tab.conditional_entropy(mid_hi, T) - tab.conditional_entropy(mid_lo, T)) / delta
        errs.append(abs(fd - central))
    # forward differences converge at first order: error drops ~10x
    assert errs[1] <= errs[0] / 5 + 1e-12
    # and the derivative at eps_u -> 0 equals -I(theta_u; theta_T | Y, xi^(no u))
    small = 1e-5
    lo = np.array([base, 0.0, base])
    hi = np.array([base, small, base])
    fd0 = (tab.conditional_entropy(hi, T) - tab.conditional_entropy(lo, T)) / small
    assert abs(fd0 - target) < 1e-3
