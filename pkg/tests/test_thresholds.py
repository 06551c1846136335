import math

import numpy as np
import pytest

from graphsync.model import channel_mutual_information, edge_pair_law, kernel_zq
from graphsync.thresholds import (
    ThresholdError,
    k_star,
    kesten_stigum,
    s_functional,
    s_star,
    s_star_upper_bound,
    uniform_overlap,
    weak_recovery_condition,
)

from oracles import sstar_grid_oracle_q2, sstar_lattice_oracle_q2


def test_kesten_stigum_values():
    assert kesten_stigum(3, 0.4) == pytest.approx(0.72)
    assert kesten_stigum(3, 0.1) == pytest.approx(1.62)
    assert kesten_stigum(5, 0.5) == pytest.approx(1.0)


def test_k_star_values():
    assert k_star(0.5, 2) == pytest.approx(10.5977, abs=1e-3)
    assert k_star(0.2, 2) == pytest.approx(3.766, abs=1e-3)
    for p in (0.0, 1.0):
        with pytest.raises(ThresholdError):
            k_star(p, 2)


def test_k_star_equals_information_form():
    for q in (2, 3, 4, 5):
        for p in np.arange(0.05, 0.96, 0.1):
            lhs = k_star(float(p), q)
            rhs = 2 * math.log(q) / channel_mutual_information(kernel_zq(q, float(p)))
            assert abs(lhs - rhs) < 1e-9


def test_k_star_asymptotic_expansion():
    for q in (2, 3, 5):
        p = 0.99
        ratio = k_star(p, q) * (1 - p) ** 2 * (q - 1) / (4 * math.log(q))
        assert abs(ratio - 1.0) <= 0.02


def test_weak_recovery_condition():
    k2 = kernel_zq(2, 0.5)
    assert weak_recovery_condition(k2, 11)["satisfied"]
    assert not weak_recovery_condition(k2, 10)["satisfied"]
    assert not weak_recovery_condition(kernel_zq(3, 1.0), 1000)["satisfied"]


def test_s_functional_independent_uniform():
    # p=1, fully independent uniform coupling: S = log q
    for q, k in ((2, 3), (3, 4)):
        kern = kernel_zq(q, 1.0)
        omega_joint = np.full((q, q, q, q, q), 1.0 / q**5)
        assert s_functional(omega_joint, k, kern) == pytest.approx(math.log(q), abs=1e-12)


@pytest.mark.parametrize("q,p,k", [(2, 0.2, 3), (2, 0.7, 5), (3, 0.4, 4)])
def test_s_functional_diagonal_coupling_is_zero(q, p, k):
    kern = kernel_zq(q, p)
    nu_e = edge_pair_law(kern)
    diag = np.zeros((q, q, q, q, q))
    for x1 in range(q):
        for x2 in range(q):
            diag[x1, x1, x2, x2, :] = nu_e[x1, x2, :]
    assert s_functional(diag, k, kern) == pytest.approx(0.0, abs=1e-10)


def test_s_functional_entropy_range():
    q, k = 2, 4
    kern = kernel_zq(q, 0.3)
    nu_e = edge_pair_law(kern)
    cond = nu_e[:, None, :, None, :] * nu_e[None, :, None, :, :] / nu_e.sum(axis=(0, 1))
    assert abs(s_functional(cond, k, kern)) <= 0.5 * k * math.log(q**4 * q)


def test_s_star_pure_noise_attains_log_q():
    for q in (2, 3):
        res = s_star(uniform_overlap(q), 3, kernel_zq(q, 1.0), restarts=3)
        assert res.value == pytest.approx(math.log(q), abs=1e-6)
        assert res.feasibility_residual <= 1e-8
        assert res.value <= res.upper_bound + 1e-6


@pytest.mark.parametrize("q,p,k", [(2, 0.2, 4), (2, 0.5, 8), (3, 0.3, 3)])
def test_s_star_below_upper_bound(q, p, k):
    res = s_star(uniform_overlap(q), k, kernel_zq(q, p), restarts=3)
    assert res.value <= res.upper_bound + 1e-6


def test_s_star_negative_above_k_star_and_matches_grid_oracle():
    kern = kernel_zq(2, 0.2)
    assert k_star(0.2, 2) < 4
    res = s_star(uniform_overlap(2), 4, kern, restarts=3)
    assert res.value < 0
    oracle = sstar_grid_oracle_q2(kern, 4)
    assert abs(res.value - oracle) <= 0.02
    # secondary check: the integer-lattice search is a lower bound
    lattice = sstar_lattice_oracle_q2(kern, 4, M=80)
    assert lattice <= res.value + 1e-9
    assert res.value - lattice <= 0.05


def test_s_star_monotone_in_restarts():
    kern = kernel_zq(2, 0.3)
    vals = [
        s_star(uniform_overlap(2), 4, kern, restarts=r, seed=5).value for r in (1, 2, 4)
    ]
    assert vals[0] <= vals[1] + 1e-12 <= vals[2] + 2e-12


def test_s_star_rejects_bad_omega():
    kern = kernel_zq(2, 0.3)
    bad = np.array([[0.5, 0.1], [0.2, 0.2]])
    with pytest.raises(ThresholdError):
        s_star(bad, 3, kern)


def test_s_star_upper_bound_at_uniform_is_paper_form():
    for q, p, k in ((2, 0.3, 4), (3, 0.6, 5)):
        kern = kernel_zq(q, p)
        ub = s_star_upper_bound(uniform_overlap(q), k, kern)
        expect = -0.5 * k * channel_mutual_information(kern) + math.log(q)
        assert ub == pytest.approx(expect, abs=1e-12)
