"""
速率模块测试
"""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from imac_modules import (
    CovarianceSet,
    DomainError,
    InputError,
    LiftedNetwork,
    SignalingMode,
    achievable_rate,
    achievable_rates,
    covariance_basis,
    interference_covariance,
    project_proper,
    properness_defect,
    signal_covariance,
)
from imac_modules.rates import (
    compose,
    coordinates,
    logdet_pd,
    numerical_rank,
    rotation_operator,
)
from conftest import random_psd, random_qset


def _complex_lifting(C: np.ndarray) -> np.ndarray:
    """复 Hermitian 矩阵按 (Re, Im) 交织的实值化"""
    n = C.shape[0]
    Q = np.zeros((2 * n, 2 * n))
    for a in range(n):
        for b in range(n):
            c = C[a, b]
            Q[2 * a:2 * a + 2, 2 * b:2 * b + 2] = 0.5 * np.array([[c.real, -c.imag], [c.imag, c.real]])
    return Q


# =========================
# A / B
# =========================

def test_noise_only_covariances(mi1):
    network = LiftedNetwork(mi1, N=2)
    Qset = CovarianceSet.zeros(network.users(), 2)
    for k, i in network.users():
        assert_allclose(signal_covariance(network, Qset, k, i), 0.5 * np.eye(4))
        assert_allclose(interference_covariance(network, Qset, k, i), 0.5 * np.eye(4))


def test_single_user_signal_covariance(single_user):
    network = LiftedNetwork(single_user, N=1)
    p = 1.7
    Qset = CovarianceSet.isotropic({(0, 0): p}, 1)
    assert_allclose(signal_covariance(network, Qset, 0, 0), (1 + p) / 2 * np.eye(2))
    assert_allclose(interference_covariance(network, Qset, 0, 0), 0.5 * np.eye(2))


def test_intra_cell_order(one_cell_two_users, rng):
    network = LiftedNetwork(one_cell_two_users, N=1)
    Qset = random_qset(rng, network)
    G0 = network.link(0, (0, 0))
    G1 = network.link(0, (0, 1))
    own1 = G1 @ Qset[(0, 1)] @ G1.T
    # 用户1先解码，用户2是干扰
    B0 = interference_covariance(network, Qset, 0, 0)
    assert_allclose(B0, 0.5 * np.eye(2) + own1, atol=1e-12)
    # 最后解码的用户只剩自己的信号
    A1 = signal_covariance(network, Qset, 0, 1)
    assert_allclose(A1, 0.5 * np.eye(2) + own1, atol=1e-12)
    A0 = signal_covariance(network, Qset, 0, 0)
    assert_allclose(A0, A1 + G0 @ Qset[(0, 0)] @ G0.T, atol=1e-12)


def test_out_of_range_user(mi1):
    network = LiftedNetwork(mi1, N=1)
    with pytest.raises(InputError):
        signal_covariance(network, CovarianceSet.zeros(network.users(), 1), 0, 5)


def test_dimension_mismatch(mi1):
    network = LiftedNetwork(mi1, N=2)
    with pytest.raises(InputError):
        signal_covariance(network, CovarianceSet.zeros(network.users(), 1), 0, 0)


# =========================
# 速率
# =========================

def test_zero_rate_without_power(mi1):
    network = LiftedNetwork(mi1, N=1)
    rates = achievable_rates(network, CovarianceSet.zeros(network.users(), 1))
    assert all(r == 0.0 for r in rates.values())


@pytest.mark.parametrize("p", [0.1, 1.0, 5.0])
def test_single_user_proper_rate(single_user, p):
    network = LiftedNetwork(single_user, N=1)
    Qset = CovarianceSet.isotropic({(0, 0): p}, 1)
    assert math.isclose(achievable_rate(network, Qset, 0, 0), 2 * math.log2(1 + p), rel_tol=1e-12)


@pytest.mark.parametrize("p", [0.1, 1.0, 5.0])
def test_single_user_rank_one_rate(single_user, p):
    network = LiftedNetwork(single_user, N=1)
    Qset = CovarianceSet(Q={(0, 0): np.diag([p, 0.0])}, N=1)
    assert math.isclose(achievable_rate(network, Qset, 0, 0), math.log2(1 + 2 * p), rel_tol=1e-12)


def test_raw_rate_is_not_normalized(single_user):
    network = LiftedNetwork(single_user, N=2)
    Qset = CovarianceSet.isotropic({(0, 0): 2.0}, 2)
    raw = achievable_rate(network, Qset, 0, 0, normalized=False)
    assert math.isclose(raw, 2 * achievable_rate(network, Qset, 0, 0), rel_tol=1e-12)


def test_extended_covariances_keep_rates_and_power(si1, rng):
    network = LiftedNetwork(si1, N=1)
    Qset = random_qset(rng, network, scale=0.5)
    wide = Qset.extended(2)
    assert wide.N == 2
    assert math.isclose(wide.sum_power(), Qset.sum_power(), rel_tol=1e-12)
    rates = achievable_rates(network, Qset)
    wide_rates = achievable_rates(LiftedNetwork(si1, N=2), wide)
    for u in si1.users():
        assert math.isclose(wide_rates[u], rates[u], rel_tol=1e-10, abs_tol=1e-12)
    with pytest.raises(InputError):
        Qset.extended(0)


def test_logdet_pd(rng):
    X = random_psd(rng, 4, floor=0.1)
    assert math.isclose(logdet_pd(X), np.linalg.slogdet(X)[1], rel_tol=1e-12, abs_tol=1e-12)
    with pytest.raises(DomainError):
        logdet_pd(np.diag([1.0, -1.0]))
    with pytest.raises(DomainError):
        logdet_pd(np.zeros((2, 2)))


def test_rate_decomposition(mi1, rng):
    network = LiftedNetwork(mi1, N=2)
    Qset = random_qset(rng, network)
    for k, i in network.users():
        A = signal_covariance(network, Qset, k, i)
        B = interference_covariance(network, Qset, k, i)
        expected = (logdet_pd(A) - logdet_pd(B)) / math.log(2) / 2
        assert abs(achievable_rate(network, Qset, k, i) - expected) <= 1e-9


def test_monotone_in_own_power(mi1, rng):
    network = LiftedNetwork(mi1, N=1)
    for _ in range(10):
        Qset = random_qset(rng, network)
        base = achievable_rates(network, Qset)
        for user in network.users():
            scaled = CovarianceSet(Q=dict(Qset.Q), N=1)
            scaled.Q[user] = 1.8 * Qset[user]
            assert achievable_rate(network, scaled, *user) >= base[user] - 1e-12


def test_interference_hurts(mi1, rng):
    network = LiftedNetwork(mi1, N=1)
    for _ in range(10):
        Qset = random_qset(rng, network)
        base = achievable_rates(network, Qset)
        scaled = CovarianceSet(Q=dict(Qset.Q), N=1)
        scaled.Q[(1, 0)] = 2.5 * Qset[(1, 0)]
        for user in [(0, 0), (0, 1)]:
            assert achievable_rate(network, scaled, *user) <= base[user] + 1e-12


def test_non_psd_covariance_rejected(single_user):
    network = LiftedNetwork(single_user, N=1)
    with pytest.raises(DomainError):
        achievable_rate(network, CovarianceSet(Q={(0, 0): np.diag([1.0, -0.1])}, N=1), 0, 0)
    with pytest.raises(DomainError):
        achievable_rate(network, CovarianceSet(Q={(0, 0): np.array([[1.0, 0.2], [0.0, 1.0]])}, N=1), 0, 0)


# =========================
# 正常/非正常
# =========================

def test_properness_defect_examples():
    p = 1.3
    assert properness_defect(p / 2 * np.eye(2)) == 0.0
    assert math.isclose(properness_defect(np.diag([p, 0.0])), p * math.sqrt(2), rel_tol=1e-12)


def test_lifted_hermitian_is_proper(rng):
    for n in (1, 2, 3):
        X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        C = X @ X.conj().T
        assert properness_defect(_complex_lifting(C)) <= 1e-12


def test_properness_characterization(rng):
    J = rotation_operator(2)
    for _ in range(20):
        Q = random_psd(rng, 4)
        commutes = np.allclose(Q @ J, J @ Q, atol=1e-12)
        assert commutes == (properness_defect(Q) <= 1e-12)
        P = project_proper(Q)
        assert np.allclose(P @ J, J @ P, atol=1e-12)
        assert properness_defect(P) <= 1e-12


def test_project_proper_examples(rng):
    p = 0.9
    assert_allclose(project_proper(np.diag([p, 0.0])), p / 2 * np.eye(2))
    proper = _complex_lifting(np.array([[2.0, 1 + 1j], [1 - 1j, 3.0]]))
    assert_allclose(project_proper(proper), proper, atol=1e-14)
    for _ in range(10):
        Q = random_psd(rng, 6)
        P = project_proper(Q)
        assert math.isclose(np.trace(P), np.trace(Q), rel_tol=1e-12)
        assert_allclose(project_proper(P), P, atol=1e-14)
        assert np.linalg.eigvalsh(P)[0] >= -1e-12


def test_project_proper_is_orthogonal(rng):
    for _ in range(10):
        Q = random_psd(rng, 4)
        residual = Q - project_proper(Q)
        S = project_proper(random_psd(rng, 4))
        assert abs(np.sum(residual * S)) <= 1e-12


# =========================
# 协方差子空间基
# =========================

@pytest.mark.parametrize("N", [1, 2, 3])
def test_basis_dimensions_and_orthonormality(N):
    igs = covariance_basis(SignalingMode.IMPROPER, N)
    pgs = covariance_basis("pgs", N)
    assert igs.shape == (N * (2 * N + 1), 2 * N, 2 * N)
    assert pgs.shape == (N * N, 2 * N, 2 * N)
    for basis in (igs, pgs):
        gram = np.einsum("aij,bij->ab", basis, basis)
        assert_allclose(gram, np.eye(basis.shape[0]), atol=1e-12)
        assert_allclose(basis, basis.transpose(0, 2, 1), atol=1e-14)
    assert max(properness_defect(E) for E in pgs) <= 1e-12


def test_coordinates_round_trip(rng):
    basis = covariance_basis("igs", 2)
    Q = random_psd(rng, 4)
    assert_allclose(compose(coordinates(Q, basis), basis), Q, atol=1e-12)
    proper_basis = covariance_basis("pgs", 2)
    P = project_proper(Q)
    assert_allclose(compose(coordinates(P, proper_basis), proper_basis), P, atol=1e-12)


def test_unknown_mode():
    with pytest.raises(InputError):
        SignalingMode.parse("qam")


def test_numerical_rank():
    assert numerical_rank(np.zeros((2, 2))) == 0
    assert numerical_rank(np.diag([1.0, 0.0])) == 1
    assert numerical_rank(np.diag([1.0, 1e-12, 0.5, 0.0])) == 2
    assert numerical_rank(np.eye(4)) == 4
