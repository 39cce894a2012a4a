"""
上界/下界模块 - Fenchel共轭界

log2|B| 是凹函数，用它在 Γ 处的共轭界替换：
    log2|B| <= log2|Γ| + (Tr(Γ⁻¹B) - n)/ln2     （Γ = B 时取等）
于是速率 R = log2|A| - log2|B| 得到一个对全部协方差联合凹的下界
    R̃ = log2|A| - log2|Γ| - (Tr(Γ⁻¹B) - n)/ln2
下界在 Γ = B 时与真实速率相等，外层迭代单调下降依赖这一点。
"""

import logging
import math
from typing import Dict

import numpy as np
import scipy.linalg

from .channel import LiftedNetwork, User
from .exceptions import DomainError, InputError
from .rates import (
    SYMMETRY_TOL,
    CovarianceSet,
    cho_factor_pd,
    interference_covariance,
    logdet_pd,
    signal_covariance,
)

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)

GammaSet = Dict[User, np.ndarray]


def _check_pair(B: np.ndarray, Gamma: np.ndarray):
    if np.shape(B) != np.shape(Gamma) or np.ndim(B) != 2 or np.shape(B)[0] != np.shape(B)[1]:
        raise InputError(f"B 与 Γ 形状不一致: {np.shape(B)} vs {np.shape(Gamma)}")
    if np.max(np.abs(Gamma - Gamma.T), initial=0.0) > SYMMETRY_TOL:
        raise DomainError("Γ 不对称")


def fenchel_upper(B: np.ndarray, Gamma: np.ndarray) -> float:
    """
    log2|B| 的共轭上界

    Args:
        B: 对称正定矩阵 n×n
        Gamma: 对称正定辅助矩阵 n×n

    Returns:
        float: log2|Γ| + (Tr(Γ⁻¹B) - n)/ln2

    Raises:
        DomainError: Γ 奇异或不正定
    """
    B = np.asarray(B, dtype=float)
    Gamma = np.asarray(Gamma, dtype=float)
    _check_pair(B, Gamma)
    factor = cho_factor_pd(Gamma)
    n = B.shape[0]
    trace_term = float(np.trace(scipy.linalg.cho_solve(factor, B, check_finite=False)))
    logdet_gamma = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    return logdet_gamma / LN2 + (trace_term - n) / LN2


def rate_lower_bound(
    network: LiftedNetwork,
    Qset: CovarianceSet,
    k: int,
    i: int,
    Gamma: np.ndarray,
) -> float:
    """
    用户 (k, i) 的凹速率下界 R̃（bit/信道使用，已除以 N）

    对任意半正定 Qset 有 R̃ <= R̄，Γ = B(Qset) 时取等。
    """
    A = signal_covariance(network, Qset, k, i)
    B = interference_covariance(network, Qset, k, i)
    Gamma = np.asarray(Gamma, dtype=float)
    if Gamma.shape != A.shape:
        raise InputError(f"Γ 形状 {Gamma.shape} 与接收维度 {A.shape} 不一致")
    return (logdet_pd(A) / LN2 - fenchel_upper(B, Gamma)) / network.N


def gamma_from_covariances(network: LiftedNetwork, Qset: CovarianceSet) -> GammaSet:
    """Γ_{i_k} = B_{i_k}(Qset)，外层迭代中收紧下界的那一步"""
    Qset.check_shapes(network)
    return {(k, i): interference_covariance(network, Qset, k, i) for k, i in network.users()}


def check_gamma_set(network: LiftedNetwork, gammas: GammaSet):
    """Γ 齐全、对称、正定"""
    dim = network.rx_dim
    for user in network.users():
        if user not in gammas:
            raise InputError(f"缺少用户 {user} 的 Γ")
        Gamma = np.asarray(gammas[user], dtype=float)
        if Gamma.shape != (dim, dim):
            raise InputError(f"用户 {user} 的 Γ 形状为 {Gamma.shape}，应为 ({dim}, {dim})")
        if np.max(np.abs(Gamma - Gamma.T), initial=0.0) > SYMMETRY_TOL:
            raise DomainError(f"用户 {user} 的 Γ 不对称")
        try:
            cho_factor_pd(Gamma)
        except DomainError as e:
            raise DomainError(f"用户 {user} 的 Γ 不是正定的") from e
