"""
速率模块 - 逐次解码下的可达速率

=== 这个模块是做什么的？ ===
给定所有用户的实值发射协方差 Q，计算每个用户的可达速率：
    R = log2|A| - log2|B|
    A = σ²/2·I + 本小区中解码顺序不早于自己的用户 + 其他小区全部用户
    B = A - 自己的信号项

=== 解码顺序 ===
基站按用户下标顺序逐次解码：第 i 个用户解码时，i+1.. 的同小区用户算作干扰，
其他小区的信号一律当作噪声。

=== 归一化 ===
对外报告的速率和功率都除以扩展长度 N（单位：bit/信道使用）。

=== 正常/非正常信号 ===
正常（proper）信号的实值协方差与 J = I_N ⊗ [[0,-1],[1,0]] 可交换，
这是一个线性子空间，covariance_basis 给出它的正交基。
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Mapping, Optional

import numpy as np
import scipy.linalg

from .channel import LiftedNetwork, User
from .exceptions import DomainError, InputError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-9

RateVector = Dict[User, float]


class SignalingMode(str, Enum):
    """信号方式：PGS（正常高斯）或 IGS（非正常高斯）"""
    PROPER = "pgs"
    IMPROPER = "igs"

    @classmethod
    def parse(cls, value) -> "SignalingMode":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        aliases = {"pgs": cls.PROPER, "proper": cls.PROPER, "igs": cls.IMPROPER, "improper": cls.IMPROPER}
        if text not in aliases:
            raise InputError(f"未知的信号方式 '{value}'，可选 pgs / igs")
        return aliases[text]


@dataclass
class CovarianceSet:
    """每个用户一个 2N×2N 实对称半正定协方差"""
    Q: Dict[User, np.ndarray]
    N: int
    metadata: Dict[str, object] = field(default_factory=dict)

    @classmethod
    def zeros(cls, users: Iterable[User], N: int) -> "CovarianceSet":
        return cls(Q={u: np.zeros((2 * N, 2 * N)) for u in users}, N=N)

    @classmethod
    def isotropic(cls, powers: Mapping[User, float], N: int) -> "CovarianceSet":
        """Q = p/(2N)·I，即迹为 p 的各向同性（正常）协方差"""
        return cls(Q={u: (p / (2 * N)) * np.eye(2 * N) for u, p in powers.items()}, N=N)

    def __getitem__(self, user: User) -> np.ndarray:
        return self.Q[user]

    def traces(self) -> Dict[User, float]:
        return {u: float(np.trace(q)) for u, q in self.Q.items()}

    def sum_power(self) -> float:
        """归一化总功率 Σ Tr(Q) / N"""
        return sum(float(np.trace(q)) for q in self.Q.values()) / self.N

    def extended(self, factor: int) -> "CovarianceSet":
        """I_factor ⊗ Q：扩展长度变成 factor·N，每信道使用的速率和功率不变"""
        if int(factor) != factor or factor < 1:
            raise InputError(f"扩展倍数必须为 >= 1 的整数，当前为 {factor}")
        factor = int(factor)
        return CovarianceSet(Q={u: np.kron(np.eye(factor), q) for u, q in self.Q.items()}, N=self.N * factor)

    def check_shapes(self, network: LiftedNetwork):
        """检查用户齐全、维度匹配"""
        if self.N != network.N:
            raise InputError(f"协方差的扩展长度 N={self.N} 与信道的 N={network.N} 不一致")
        dim = network.tx_dim
        for user in network.users():
            if user not in self.Q:
                raise InputError(f"缺少用户 (cell={user[0] + 1}, user={user[1] + 1}) 的协方差")
            if np.shape(self.Q[user]) != (dim, dim):
                raise InputError(f"用户 {user} 的协方差形状为 {np.shape(self.Q[user])}，应为 ({dim}, {dim})")

    def validate(self, network: LiftedNetwork):
        """完整校验：维度、对称性、半正定"""
        self.check_shapes(network)
        for user, q in self.Q.items():
            if not np.all(np.isfinite(q)):
                raise DomainError(f"用户 {user} 的协方差含非有限值")
            if np.max(np.abs(q - q.T), initial=0.0) > SYMMETRY_TOL:
                raise DomainError(f"用户 {user} 的协方差不对称")
            min_eig = float(np.linalg.eigvalsh(q)[0])
            if min_eig < -PSD_TOL:
                raise DomainError(f"用户 {user} 的协方差不是半正定的（最小特征值 {min_eig:.3e}）")


# =========================
# 行列式工具
# =========================

def cho_factor_pd(X: np.ndarray):
    """scipy 的 Cholesky 分解，失败时抛 DomainError"""
    try:
        return scipy.linalg.cho_factor(X, lower=True, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise DomainError("矩阵不是正定的，Cholesky分解失败") from e


def logdet_pd(X: np.ndarray) -> float:
    """
    对称正定矩阵的自然对数行列式

    Raises:
        DomainError: 分解失败，即矩阵不是正定的
    """
    c, _ = cho_factor_pd(X)
    return 2.0 * float(np.sum(np.log(np.diag(c))))


# =========================
# 协方差矩阵 A / B
# =========================

def _received_term(network: LiftedNetwork, k: int, user: User, Q: np.ndarray) -> np.ndarray:
    G_bar = network.link(k, user)
    return G_bar @ Q @ G_bar.T


def signal_covariance(network: LiftedNetwork, Qset: CovarianceSet, k: int, i: int) -> np.ndarray:
    """
    接收信号协方差 A_{i_k}

    Args:
        network: 实值化后的信道
        Qset: 全部用户的协方差
        k: 小区下标（从0开始）
        i: 用户下标（从0开始）

    Returns:
        np.ndarray: 2MN×2MN 对称正定矩阵
    """
    Qset.check_shapes(network)
    scenario = network.scenario
    if not (0 <= k < scenario.K and 0 <= i < scenario.users_per_cell[k]):
        raise InputError(f"用户 (cell={k + 1}, user={i + 1}) 不存在")

    A = (network.noise_variance / 2.0) * np.eye(network.rx_dim)
    for j in range(i, scenario.users_per_cell[k]):
        A += _received_term(network, k, (k, j), Qset[(k, j)])
    for l in range(scenario.K):
        if l == k:
            continue
        for j in range(scenario.users_per_cell[l]):
            A += _received_term(network, k, (l, j), Qset[(l, j)])
    return 0.5 * (A + A.T)


def interference_covariance(network: LiftedNetwork, Qset: CovarianceSet, k: int, i: int) -> np.ndarray:
    """干扰加噪声协方差 B_{i_k} = A_{i_k} - 自己的信号项"""
    A = signal_covariance(network, Qset, k, i)
    B = A - _received_term(network, k, (k, i), Qset[(k, i)])
    return 0.5 * (B + B.T)


def achievable_rate(
    network: LiftedNetwork,
    Qset: CovarianceSet,
    k: int,
    i: int,
    normalized: bool = True,
) -> float:
    """
    用户 (k, i) 的可达速率

    Args:
        normalized: True 返回 bit/信道使用（除以 N），False 返回未归一化的原始值

    Returns:
        float: 速率（非负）
    """
    Qset.validate(network)
    A = signal_covariance(network, Qset, k, i)
    B = interference_covariance(network, Qset, k, i)
    raw = (logdet_pd(A) - logdet_pd(B)) / math.log(2.0)
    # 舍入误差可能给出 -1e-16 量级的负数
    raw = max(raw, 0.0)
    return raw / network.N if normalized else raw


def achievable_rates(network: LiftedNetwork, Qset: CovarianceSet, normalized: bool = True) -> RateVector:
    """全部用户的可达速率"""
    return {(k, i): achievable_rate(network, Qset, k, i, normalized) for k, i in network.users()}


# =========================
# 正常信号子空间
# =========================

def rotation_operator(N: int) -> np.ndarray:
    """J = I_N ⊗ [[0,-1],[1,0]]，实值化后乘以虚数单位 i 的作用"""
    return np.kron(np.eye(N), np.array([[0.0, -1.0], [1.0, 0.0]]))


def _extension_of(Q: np.ndarray) -> int:
    n = np.shape(Q)[0]
    if np.ndim(Q) != 2 or n != np.shape(Q)[1] or n % 2:
        raise InputError(f"协方差必须是偶数阶方阵，当前形状为 {np.shape(Q)}")
    return n // 2


def properness_defect(Q: np.ndarray) -> float:
    """‖Q - J Q Jᵀ‖_F，为0当且仅当 Q 是正常复协方差的实值化"""
    Q = np.asarray(Q, dtype=float)
    J = rotation_operator(_extension_of(Q))
    return float(np.linalg.norm(Q - J @ Q @ J.T, "fro"))


def project_proper(Q: np.ndarray) -> np.ndarray:
    """到正常子空间的正交投影 (Q + J Q Jᵀ)/2，保持迹和半正定性"""
    Q = np.asarray(Q, dtype=float)
    J = rotation_operator(_extension_of(Q))
    return 0.5 * (Q + J @ Q @ J.T)


def _symmetric_basis(N: int) -> np.ndarray:
    dim = 2 * N
    basis = []
    for a in range(dim):
        for b in range(a, dim):
            E = np.zeros((dim, dim))
            if a == b:
                E[a, a] = 1.0
            else:
                E[a, b] = E[b, a] = 1.0 / math.sqrt(2.0)
            basis.append(E)
    return np.array(basis)


def covariance_basis(mode: SignalingMode, N: int) -> np.ndarray:
    """
    可行协方差子空间的标准正交基（Frobenius内积）

    IGS：全部 2N×2N 对称矩阵，维度 N(2N+1)
    PGS：与 J 可交换的对称矩阵，维度 N²

    Returns:
        np.ndarray: 形状 (d, 2N, 2N)
    """
    mode = SignalingMode.parse(mode)
    if int(N) != N or N < 1:
        raise InputError(f"扩展长度 N 必须为 >= 1 的整数，当前为 {N}")
    sym = _symmetric_basis(int(N))
    if mode is SignalingMode.IMPROPER:
        return sym

    dim = 2 * int(N)
    projected = np.array([project_proper(E).ravel() for E in sym]).T
    columns = scipy.linalg.orth(projected)
    basis = columns.T.reshape(-1, dim, dim)
    # 数值上对称化，并把符号固定成迹非负，保证结果确定
    basis = 0.5 * (basis + basis.transpose(0, 2, 1))
    for m in range(basis.shape[0]):
        if np.trace(basis[m]) < -1e-12:
            basis[m] = -basis[m]
    logger.debug(f"正常子空间维度: N={N}, d={basis.shape[0]}")
    return basis


def coordinates(Q: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Q 在正交基下的坐标（Frobenius内积）"""
    return np.einsum("mab,ab->m", basis, Q)


def compose(x: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """由坐标还原协方差矩阵"""
    Q = np.tensordot(x, basis, axes=1)
    return 0.5 * (Q + Q.T)


def numerical_rank(Q: np.ndarray, rel_tol: float = 1e-8) -> int:
    """数值秩：大于 rel_tol·最大特征值 的特征值个数"""
    eigvals = np.linalg.eigvalsh(0.5 * (Q + Q.T))
    top = float(eigvals[-1]) if eigvals.size else 0.0
    if top <= 0.0:
        return 0
    return int(np.sum(eigvals > rel_tol * top))


def default_powers(users: Iterable[User], value: float) -> Dict[User, float]:
    return {u: float(value) for u in users}


def as_user_map(values, users: Iterable[User], what: str, default: Optional[float] = None) -> Dict[User, float]:
    """把标量或按用户的映射统一成 {user: float}"""
    users = list(users)
    if values is None:
        if default is None:
            raise InputError(f"缺少 {what}")
        return default_powers(users, default)
    if isinstance(values, Mapping):
        missing = [u for u in users if u not in values]
        if missing:
            raise InputError(f"{what} 缺少用户 {missing}")
        return {u: float(values[u]) for u in users}
    return default_powers(users, float(values))
