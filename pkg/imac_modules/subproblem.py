"""
子问题模块 - 固定 Γ 时的凸功率最小化

=== 这个模块是做什么的？ ===
Γ 固定以后，速率下界 R̃ 对全部协方差联合凹，于是
    min  Σ Tr(Q)/N
    s.t. R̃_u >= ψ_u,  Tr(Q_u) <= P_u,  Q_u ⪰ 0   (PGS 时 Q_u 还要与 J 可交换)
是凸问题。这里用对数障碍内点法求解：
    φ_μ(x) = 目标/μ - Σ ln(松弛) - Σ ln|Q_u|
牛顿方向 + 回溯线搜索（Armijo 0.3，收缩 0.5），牛顿减量足够小就把 μ 缩小10倍，
直到 障碍阶数·μ <= gap_tol。

=== 变量 ===
每个活跃用户的 Q_u 用协方差子空间的正交基坐标表示（IGS 为全部对称矩阵，PGS 为正常子空间），
所以 PGS 的结构约束被消去，迭代点永远不会离开子空间。
需求 ψ_u = 0 的用户不参与优化，Q_u 固定为0。

=== 第一阶段 ===
没有严格可行的起点时，先求解 max s s.t. 归一化松弛 >= s（同一套障碍法），
s > 0 即得到严格内点；s < -1e-9 判定不可行。
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg

from .bound import LN2, GammaSet, check_gamma_set, rate_lower_bound
from .channel import LiftedNetwork, User
from .exceptions import DomainError, InputError
from .rates import (
    CovarianceSet,
    SignalingMode,
    compose,
    coordinates,
    covariance_basis,
    signal_covariance,
)

logger = logging.getLogger(__name__)


class SubproblemStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    NON_CONVERGED = "non_converged"


@dataclass
class BarrierOptions:
    """障碍法参数"""
    mu0: float = 1.0
    mu_factor: float = 10.0
    newton_tol: float = 1e-6          # 牛顿减量 λ²/2 的阈值
    gap_tol: float = 1e-8             # 障碍阶数·μ 的终止阈值
    armijo: float = 0.3
    shrink: float = 0.5
    max_stage_steps: int = 200        # 每个 μ 下的牛顿步上限
    max_total_steps: int = 5000       # 超过即报 NON_CONVERGED
    min_step: float = 1e-12
    infeasibility_tol: float = 1e-9

    def __post_init__(self):
        if self.mu0 <= 0 or self.gap_tol <= 0 or self.newton_tol <= 0:
            raise InputError("mu0、gap_tol、newton_tol 必须为正")
        if self.mu_factor <= 1:
            raise InputError("mu_factor 必须大于1")
        if not 0 < self.armijo < 0.5:
            raise InputError("armijo 参数必须在 (0, 0.5) 内")
        if not 0 < self.shrink < 1:
            raise InputError("shrink 参数必须在 (0, 1) 内")
        if self.max_stage_steps < 1 or self.max_total_steps < 1:
            raise InputError("牛顿步上限必须 >= 1")

    @classmethod
    def from_dict(cls, config_dict: Dict[str, Any]) -> "BarrierOptions":
        return cls(**config_dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SubproblemSpec:
    """固定 Γ 的凸子问题"""
    network: LiftedNetwork
    gammas: GammaSet
    demands: Dict[User, float]
    budgets: Dict[User, float]
    mode: SignalingMode

    def __post_init__(self):
        self.mode = SignalingMode.parse(self.mode)
        for user in self.network.users():
            if user not in self.demands or user not in self.budgets:
                raise InputError(f"用户 {user} 缺少速率需求或功率预算")
            psi = self.demands[user]
            if not (math.isfinite(psi) and psi >= 0):
                raise InputError(f"用户 {user} 的速率需求必须 >= 0，当前为 {psi}")
            budget = self.budgets[user]
            if not (math.isfinite(budget) and budget > 0):
                raise InputError(f"用户 {user} 的功率预算必须 > 0，当前为 {budget}")
        check_gamma_set(self.network, self.gammas)

    @property
    def N(self) -> int:
        return self.network.N


@dataclass
class BarrierStep:
    """一次牛顿迭代的诊断信息"""
    phase: int
    mu: float
    objective: float
    min_slack: float
    decrement: float


@dataclass
class SubproblemResult:
    status: SubproblemStatus
    Qset: CovarianceSet
    objective: float
    rate_slacks: Dict[User, float]
    power_slacks: Dict[User, float]
    iterations: int
    gap: float = float("nan")
    min_slack: Optional[float] = None   # 第一阶段的最小归一化松弛（未运行第一阶段时为 None）
    trace: List[BarrierStep] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status is SubproblemStatus.OPTIMAL


class _OutsideDomain(Exception):
    """试探点不在障碍函数的定义域内"""


# =========================
# 凹下界模型
# =========================

class _LowerBoundModel:
    """
    Γ 固定时，活跃用户坐标 x 上的约束函数

    A_u(x) = σ²/2·I + Σ_m x_m·M_{u,m}，M_{u,m} = Ḡ B_m Ḡᵀ（只对出现在 A_u 中的用户非零）
    Tr(Γ_u⁻¹ B_u(x)) 对 x 是仿射的，预先算成 lin_u·x + 常数。
    """

    def __init__(self, spec: SubproblemSpec):
        network = spec.network
        self.network = network
        self.spec = spec
        self.N = network.N
        self.basis = covariance_basis(spec.mode, network.N)
        self.block = self.basis.shape[0]
        self.trace_coef = np.einsum("mii->m", self.basis)

        self.active: List[User] = [u for u in network.users() if spec.demands[u] > 0]
        self.slices = {u: slice(a * self.block, (a + 1) * self.block) for a, u in enumerate(self.active)}
        self.dim = self.block * len(self.active)

        n = network.rx_dim
        self.rx_dim = n
        self.noise = (network.noise_variance / 2.0) * np.eye(n)
        self.scale = 1.0 / (self.N * LN2)

        self.rate_terms = []
        for u in self.active:
            k, i = u
            Gamma = np.asarray(spec.gammas[u], dtype=float)
            factor = scipy.linalg.cho_factor(Gamma, lower=True, check_finite=False)
            logdet_gamma = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))

            stack = np.zeros((self.dim, n, n))
            lin = np.zeros(self.dim)
            for v in self.active:
                if not _in_signal_covariance(k, i, v):
                    continue
                G_bar = network.link(k, v)
                maps = np.einsum("ab,mbc,dc->mad", G_bar, self.basis, G_bar)
                stack[self.slices[v]] = maps
                if v != u:
                    solved = scipy.linalg.cho_solve(factor, maps.transpose(1, 0, 2).reshape(n, -1), check_finite=False)
                    lin[self.slices[v]] = np.einsum("ama->m", solved.reshape(n, self.block, n))
            noise_trace = float(np.trace(scipy.linalg.cho_solve(factor, self.noise, check_finite=False)))
            const = -logdet_gamma - noise_trace + n
            self.rate_terms.append((u, stack, lin, const, float(spec.demands[u])))

        self.budgets = np.array([spec.budgets[u] for u in self.active])
        self.demands = np.array([spec.demands[u] for u in self.active])

    # 坐标 <-> 协方差

    def to_qset(self, x: np.ndarray) -> CovarianceSet:
        Qset = CovarianceSet.zeros(self.network.users(), self.N)
        for u in self.active:
            Qset.Q[u] = compose(x[self.slices[u]], self.basis)
        return Qset

    def from_qset(self, Qset: CovarianceSet) -> Tuple[np.ndarray, float]:
        """返回坐标和投影残差（起点不在子空间内时残差非零）"""
        x = np.zeros(self.dim)
        residual = 0.0
        for u in self.active:
            Q = np.asarray(Qset[u], dtype=float)
            coords = coordinates(Q, self.basis)
            x[self.slices[u]] = coords
            residual = max(residual, float(np.linalg.norm(compose(coords, self.basis) - Q)))
        return x, residual

    def isotropic_point(self, traces: np.ndarray) -> np.ndarray:
        powers = {u: float(p) for u, p in zip(self.active, traces)}
        return self.from_qset(CovarianceSet.isotropic({**{u: 0.0 for u in self.network.users()}, **powers}, self.N))[0]

    def objective_vector(self) -> np.ndarray:
        """Σ Tr(Q)/N 对坐标的梯度"""
        return np.tile(self.trace_coef, len(self.active)) / self.N

    # 约束

    def rate_slacks(self, x: np.ndarray, order: int):
        """R̃_u - ψ_u 的值、梯度、Hessian（order=0 时只算值）"""
        m = len(self.rate_terms)
        values = np.empty(m)
        jac = np.zeros((m, self.dim)) if order else None
        hess = np.zeros((m, self.dim, self.dim)) if order else None
        n = self.rx_dim
        for r, (_, stack, lin, const, psi) in enumerate(self.rate_terms):
            A = self.noise + np.tensordot(x, stack, axes=1)
            try:
                factor = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                raise _OutsideDomain()
            logdet_a = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
            values[r] = (logdet_a + const - lin @ x) * self.scale - psi
            if order:
                solved = scipy.linalg.cho_solve(factor, stack.transpose(1, 0, 2).reshape(n, -1), check_finite=False)
                C = solved.reshape(n, self.dim, n).transpose(1, 0, 2)
                jac[r] = (np.einsum("aii->a", C) - lin) * self.scale
                hess[r] = -np.einsum("aij,bji->ab", C, C) * self.scale
        return values, jac, hess

    def power_slacks(self, x: np.ndarray, order: int):
        """P_u - Tr(Q_u)"""
        m = len(self.active)
        traces = np.array([self.trace_coef @ x[self.slices[u]] for u in self.active])
        values = self.budgets - traces
        jac = None
        if order:
            jac = np.zeros((m, self.dim))
            for r, u in enumerate(self.active):
                jac[r, self.slices[u]] = -self.trace_coef
        return values, jac

    def logdet(self, x: np.ndarray, order: int):
        """Σ ln|Q_u| 的值、梯度、Hessian；Q 不正定时抛 _OutsideDomain"""
        total = 0.0
        grad = np.zeros(self.dim) if order else None
        hess = np.zeros((self.dim, self.dim)) if order else None
        t = 2 * self.N
        for u in self.active:
            sl = self.slices[u]
            Q = compose(x[sl], self.basis)
            try:
                factor = scipy.linalg.cho_factor(Q, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                raise _OutsideDomain()
            diag = np.diag(factor[0])
            if np.any(diag <= 0):
                raise _OutsideDomain()
            total += 2.0 * float(np.sum(np.log(diag)))
            if order:
                solved = scipy.linalg.cho_solve(factor, self.basis.transpose(1, 0, 2).reshape(t, -1), check_finite=False)
                C = solved.reshape(t, self.block, t).transpose(1, 0, 2)
                grad[sl] = np.einsum("aii->a", C)
                hess[sl, sl] = -np.einsum("aij,bji->ab", C, C)
        return total, grad, hess

    @property
    def barrier_degree(self) -> int:
        """障碍阶数：标量约束各计1，每个 2N×2N 半正定块计 2N"""
        return 2 * len(self.active) + 2 * self.N * len(self.active)


def _in_signal_covariance(k: int, i: int, v: User) -> bool:
    """用户 v 是否出现在 A_{i_k} 中：本小区解码顺序不早于 i 的用户，或任意其他小区用户"""
    l, j = v
    return j >= i if l == k else True


# =========================
# 通用障碍法
# =========================

class _BarrierProblem:
    """线性目标 c·z + 标量凹约束 h(z) > 0 + 对数行列式块"""

    def __init__(self, model: _LowerBoundModel, phase: int, slack_scale: Optional[np.ndarray] = None):
        self.model = model
        self.phase = phase
        self.slack_scale = slack_scale
        if phase == 1:
            self.dim = model.dim + 1
            self.c = np.zeros(self.dim)
            self.c[-1] = -1.0
        else:
            self.dim = model.dim
            self.c = model.objective_vector()
        self.degree = model.barrier_degree

    def constraints(self, z: np.ndarray, order: int):
        """返回 (h, ∇h, ∇²h) ，h 为全部标量约束"""
        model = self.model
        x = z[:model.dim]
        rate_v, rate_j, rate_h = model.rate_slacks(x, order)
        power_v, power_j = model.power_slacks(x, order)
        values = np.concatenate([rate_v, power_v])
        jac = hess = None
        if order:
            jac = np.vstack([rate_j, power_j])
            hess = np.concatenate([rate_h, np.zeros((len(power_v), model.dim, model.dim))])

        if self.phase == 1:
            s = z[-1]
            values = values / self.slack_scale - s
            if order:
                jac = np.hstack([jac / self.slack_scale[:, None], -np.ones((len(values), 1))])
                padded = np.zeros((len(values), self.dim, self.dim))
                padded[:, :model.dim, :model.dim] = hess / self.slack_scale[:, None, None]
                hess = padded
        return values, jac, hess

    def barrier(self, z: np.ndarray) -> float:
        """-Σ ln h - Σ ln|Q|；不在定义域内抛 _OutsideDomain"""
        values, _, _ = self.constraints(z, 0)
        if not np.all(values > 0):
            raise _OutsideDomain()
        logdet_q, _, _ = self.model.logdet(z[:self.model.dim], 0)
        return -float(np.sum(np.log(values))) - logdet_q

    def newton_system(self, z: np.ndarray, mu: float):
        """φ_μ = c·z/μ + barrier 的梯度和Hessian，以及当前最小松弛"""
        values, jac, hess = self.constraints(z, 1)
        if not np.all(values > 0):
            raise _OutsideDomain()
        _, ld_grad, ld_hess = self.model.logdet(z[:self.model.dim], 1)

        inv = 1.0 / values
        grad = self.c / mu - jac.T @ inv
        H = (jac.T * inv ** 2) @ jac - np.einsum("r,rab->ab", inv, hess)
        grad[:self.model.dim] -= ld_grad
        H[:self.model.dim, :self.model.dim] -= ld_hess
        return grad, 0.5 * (H + H.T), float(np.min(values))


def _newton_direction(H: np.ndarray, grad: np.ndarray) -> np.ndarray:
    try:
        factor = scipy.linalg.cho_factor(H, lower=True, check_finite=False)
        return -scipy.linalg.cho_solve(factor, grad, check_finite=False)
    except np.linalg.LinAlgError:
        # 病态时加一点对角正则
        reg = 1e-12 * max(1.0, float(np.max(np.abs(np.diag(H)))))
        try:
            factor = scipy.linalg.cho_factor(H + reg * np.eye(H.shape[0]), lower=True, check_finite=False)
            return -scipy.linalg.cho_solve(factor, grad, check_finite=False)
        except np.linalg.LinAlgError:
            return -np.linalg.lstsq(H, grad, rcond=None)[0]


def _barrier_solve(
    problem: _BarrierProblem,
    z0: np.ndarray,
    options: BarrierOptions,
    trace: List[BarrierStep],
) -> Tuple[np.ndarray, float, int, bool]:
    """
    障碍法主循环

    Returns:
        (z, 最终 μ, 牛顿步数, 是否因步数上限中止)
    """
    z = np.array(z0, dtype=float)
    mu = options.mu0
    steps = 0

    while True:
        for _ in range(options.max_stage_steps):
            grad, H, min_slack = problem.newton_system(z, mu)
            delta = _newton_direction(H, grad)
            decrement = max(float(-grad @ delta), 0.0) / 2.0
            trace.append(BarrierStep(problem.phase, mu, float(problem.c @ z), min_slack, decrement))
            if decrement <= options.newton_tol:
                break

            steps += 1
            if steps > options.max_total_steps:
                logger.warning(f"障碍法超过牛顿步上限 {options.max_total_steps}（阶段 {problem.phase}）")
                return z, mu, steps, True

            slope = float(grad @ delta)
            base = problem.barrier(z)
            step = 1.0
            accepted = False
            while step >= options.min_step:
                candidate = z + step * delta
                try:
                    change = problem.c @ (step * delta) / mu + problem.barrier(candidate) - base
                except _OutsideDomain:
                    step *= options.shrink
                    continue
                if change <= options.armijo * step * slope:
                    accepted = True
                    break
                step *= options.shrink
            if not accepted:
                logger.debug(f"线搜索停滞，μ={mu:.1e}，减量={decrement:.3e}，提前结束本阶段")
                break
            z = candidate

        if problem.degree * mu <= options.gap_tol:
            return z, mu, steps, False
        mu /= options.mu_factor


# =========================
# 对外接口
# =========================

def _phase1(model: _LowerBoundModel, options: BarrierOptions, start: Optional[np.ndarray], trace: List[BarrierStep]):
    scale = np.concatenate([model.demands, model.budgets])
    problem = _BarrierProblem(model, phase=1, slack_scale=scale)

    x0 = start
    if x0 is None:
        x0 = model.isotropic_point(np.minimum(1.0, 0.5 * model.budgets))
    else:
        try:
            model.logdet(x0, 0)
        except _OutsideDomain:
            x0 = model.isotropic_point(np.minimum(1.0, 0.5 * model.budgets))

    values, _, _ = problem.constraints(np.append(x0, 0.0), 0)
    s0 = float(np.min(values)) - 1.0
    z, mu, steps, capped = _barrier_solve(problem, np.append(x0, s0), options, trace)
    return z[:-1], float(z[-1]), steps, capped


def phase1_feasible_point(spec: SubproblemSpec, options: Optional[BarrierOptions] = None) -> Tuple[CovarianceSet, float]:
    """
    第一阶段：最大化全部速率/功率约束的最小归一化松弛

    Returns:
        (协方差集合, 最小松弛)；最小松弛 > 0 即严格可行
    """
    options = options or BarrierOptions()
    model = _LowerBoundModel(spec)
    if not model.active:
        return CovarianceSet.zeros(spec.network.users(), spec.N), 1.0
    x, min_slack, _, _ = _phase1(model, options, None, [])
    return model.to_qset(x), min_slack


def _strictly_feasible(model: _LowerBoundModel, x: np.ndarray) -> bool:
    try:
        model.logdet(x, 0)
        rate_v, _, _ = model.rate_slacks(x, 0)
    except _OutsideDomain:
        return False
    power_v, _ = model.power_slacks(x, 0)
    return bool(np.all(rate_v > 0) and np.all(power_v > 0))


def _slack_report(spec: SubproblemSpec, Qset: CovarianceSet) -> Tuple[Dict[User, float], Dict[User, float]]:
    network = spec.network
    rate = {
        (k, i): rate_lower_bound(network, Qset, k, i, spec.gammas[(k, i)]) - spec.demands[(k, i)]
        for k, i in network.users()
    }
    power = {u: spec.budgets[u] - float(np.trace(Qset[u])) for u in network.users()}
    return rate, power


def solve_subproblem(
    spec: SubproblemSpec,
    start: Optional[CovarianceSet] = None,
    options: Optional[BarrierOptions] = None,
) -> SubproblemResult:
    """
    求解固定 Γ 的凸子问题

    Args:
        spec: 子问题描述
        start: 可选的起点；必须严格可行，否则忽略并运行第一阶段
        options: 障碍法参数

    Returns:
        SubproblemResult: OPTIMAL / INFEASIBLE / NON_CONVERGED
    """
    options = options or BarrierOptions()
    model = _LowerBoundModel(spec)
    network = spec.network

    if not model.active:
        Qset = CovarianceSet.zeros(network.users(), spec.N)
        rate, power = _slack_report(spec, Qset)
        return SubproblemResult(SubproblemStatus.OPTIMAL, Qset, 0.0, rate, power, 0, gap=0.0)

    trace: List[BarrierStep] = []
    x0 = None
    min_slack = None
    steps = 0

    if start is not None:
        start.check_shapes(network)
        candidate, residual = model.from_qset(start)
        if residual <= 1e-8 and _strictly_feasible(model, candidate):
            x0 = candidate
        else:
            logger.debug(f"起点不严格可行或不在协方差子空间内（残差 {residual:.1e}），改用第一阶段")

    if x0 is None:
        x_phase1, min_slack, steps, capped = _phase1(model, options, None, trace)
        Qset = model.to_qset(x_phase1)
        if capped:
            rate, power = _slack_report(spec, Qset)
            return SubproblemResult(SubproblemStatus.NON_CONVERGED, Qset, Qset.sum_power(), rate, power,
                                    steps, min_slack=min_slack, trace=trace)
        if min_slack < -options.infeasibility_tol:
            logger.info(f"子问题不可行：第一阶段最小归一化松弛 {min_slack:.4e}")
            rate, power = _slack_report(spec, Qset)
            return SubproblemResult(SubproblemStatus.INFEASIBLE, Qset, Qset.sum_power(), rate, power,
                                    steps, min_slack=min_slack, trace=trace)
        if min_slack <= 0 or not _strictly_feasible(model, x_phase1):
            logger.warning(f"可行域没有严格内点（最小松弛 {min_slack:.3e}），无法启动障碍法")
            rate, power = _slack_report(spec, Qset)
            return SubproblemResult(SubproblemStatus.NON_CONVERGED, Qset, Qset.sum_power(), rate, power,
                                    steps, min_slack=min_slack, trace=trace)
        x0 = x_phase1

    problem = _BarrierProblem(model, phase=2)
    x, mu, phase2_steps, capped = _barrier_solve(problem, x0, options, trace)
    steps += phase2_steps

    Qset = model.to_qset(x)
    rate, power = _slack_report(spec, Qset)
    status = SubproblemStatus.NON_CONVERGED if capped else SubproblemStatus.OPTIMAL
    result = SubproblemResult(
        status=status,
        Qset=Qset,
        objective=Qset.sum_power(),
        rate_slacks=rate,
        power_slacks=power,
        iterations=steps,
        gap=problem.degree * mu,
        min_slack=min_slack,
        trace=trace,
    )
    logger.debug(f"子问题完成: 状态={status.value}, 目标={result.objective:.6g}, 牛顿步={steps}, 间隙={result.gap:.1e}")
    return result


def grad_rate_lower_bound(
    network: LiftedNetwork,
    Qset: CovarianceSet,
    gammas: GammaSet,
    k: int,
    i: int,
) -> Dict[User, np.ndarray]:
    """
    R̃_{i_k} 对每个用户协方差的梯度

    出现在 A 中的用户贡献 Ḡᵀ A⁻¹ Ḡ/(N ln2)，出现在 B 中的用户再减去 Ḡᵀ Γ⁻¹ Ḡ/(N ln2)；
    其余用户梯度为零矩阵。
    """
    Qset.validate(network)
    Gamma = np.asarray(gammas[(k, i)], dtype=float)
    try:
        gamma_factor = scipy.linalg.cho_factor(Gamma, lower=True, check_finite=False)
    except np.linalg.LinAlgError as e:
        raise DomainError(f"用户 {(k, i)} 的 Γ 不是正定的") from e
    A = signal_covariance(network, Qset, k, i)
    try:
        a_factor = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as e:
        raise DomainError("A 不是正定的") from e

    scale = 1.0 / (network.N * LN2)
    gradients = {}
    for v in network.users():
        grad = np.zeros((network.tx_dim, network.tx_dim))
        if _in_signal_covariance(k, i, v):
            G_bar = network.link(k, v)
            grad += G_bar.T @ scipy.linalg.cho_solve(a_factor, G_bar, check_finite=False)
            if v != (k, i):
                grad -= G_bar.T @ scipy.linalg.cho_solve(gamma_factor, G_bar, check_finite=False)
        gradients[v] = 0.5 * (grad + grad.T) * scale
    return gradients
