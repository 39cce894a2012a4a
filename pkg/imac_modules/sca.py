"""
SCA模块 - 外层逐次凸近似

=== 这个模块是做什么的？ ===
原问题（速率约束下的总功率最小化）是 DC 规划，非凸。做法：
1. 选初始协方差 Q⁰，令 Γ⁰ = B(Q⁰)（多个确定性的起点，见 starting_points）
2. 固定 Γ 解凸子问题，得到 Q^(t)
3. Γ ← B(Q^(t))，下界在新的 Γ 处收紧，上一轮的解在下一轮仍然可行
4. 重复直到总功率变化小于 ε
5. 各起点的结果里取复核通过、总功率最小的一个

因为下界处处不超过真实速率，子问题的解对原问题也可行，最后用真实速率复核（certify）。

=== 使用示例 ===
scenario = load_scenario("builtin:mi", antennas=1)
config = SignalingConfig.uniform(SignalingMode.IMPROPER, N=1, demand=0.5)
result = minimize_sum_power(scenario, config)
report = certify(result, scenario, config)
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .bound import GammaSet, gamma_from_covariances
from .channel import LiftedNetwork, Scenario, User
from .exceptions import CertificationError, InputError, SolverError
from .rates import (
    CovarianceSet,
    RateVector,
    SignalingMode,
    achievable_rates,
    as_user_map,
    numerical_rank,
    project_proper,
    properness_defect,
)
from .subproblem import BarrierOptions, SubproblemSpec, SubproblemStatus, solve_subproblem

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 100.0
CERTIFY_TOL = 1e-6
RANK_TOL = 1e-8

IterationCallback = Callable[[int, float], None]


class SolveStatus(str, Enum):
    CONVERGED = "converged"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max_iterations"


@dataclass
class SolverOptions:
    """外层迭代参数"""
    epsilon: float = 1e-5
    max_outer_iterations: int = 200
    init_power_fraction: float = 0.5
    retry_budget: int = 3
    improper_starts: int = 4          # IGS 下的非正常初始点个数
    random_starts: int = 2
    improper_ratio: float = 0.02      # 非正常初始形状的特征值之比
    seed: int = 0
    barrier: BarrierOptions = field(default_factory=BarrierOptions)

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise InputError(f"epsilon 必须为正，当前为 {self.epsilon}")
        if self.max_outer_iterations < 1:
            raise InputError(f"max_outer_iterations 必须 >= 1，当前为 {self.max_outer_iterations}")
        if not 0 < self.init_power_fraction <= 1:
            raise InputError(f"init_power_fraction 必须在 (0, 1] 内，当前为 {self.init_power_fraction}")
        if self.retry_budget < 0:
            raise InputError(f"retry_budget 不能为负，当前为 {self.retry_budget}")
        if self.improper_starts < 0 or self.random_starts < 0:
            raise InputError("初始点个数不能为负")
        if not 0 <= self.improper_ratio < 1:
            raise InputError(f"improper_ratio 必须在 [0, 1) 内，当前为 {self.improper_ratio}")
        if isinstance(self.barrier, Mapping):
            self.barrier = BarrierOptions.from_dict(dict(self.barrier))

    @classmethod
    def from_dict(cls, config_dict: Dict[str, Any]) -> "SolverOptions":
        return cls(**config_dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SignalingConfig:
    """
    信号配置

    demands / budgets 可以是标量（所有用户相同）或 {(cell, user): 值} 映射。
    速率单位为 bit/信道使用；功率预算约束的是 Tr(Q)。
    """
    mode: SignalingMode
    N: int = 1
    demands: Union[float, Mapping[User, float]] = 0.0
    budgets: Union[float, Mapping[User, float], None] = None

    def __post_init__(self):
        self.mode = SignalingMode.parse(self.mode)
        if int(self.N) != self.N or self.N < 1:
            raise InputError(f"扩展长度 N 必须为 >= 1 的整数，当前为 {self.N}")
        self.N = int(self.N)

    @classmethod
    def uniform(cls, mode, N: int, demand: float, budget: float = DEFAULT_BUDGET) -> "SignalingConfig":
        """所有用户相同的速率需求和功率预算"""
        return cls(mode=mode, N=N, demands=float(demand), budgets=float(budget))

    def demand_map(self, scenario: Scenario) -> Dict[User, float]:
        demands = as_user_map(self.demands, scenario.users(), "速率需求")
        for user, psi in demands.items():
            if not (math.isfinite(psi) and psi >= 0):
                raise InputError(f"用户 {user} 的速率需求必须 >= 0，当前为 {psi}")
        return demands

    def budget_map(self, scenario: Scenario) -> Dict[User, float]:
        budgets = as_user_map(self.budgets, scenario.users(), "功率预算", default=DEFAULT_BUDGET)
        for user, budget in budgets.items():
            if not (math.isfinite(budget) and budget > 0):
                raise InputError(f"用户 {user} 的功率预算必须 > 0，当前为 {budget}")
        return budgets


@dataclass
class SolveResult:
    status: SolveStatus
    Qset: Optional[CovarianceSet]
    power_trace: List[float]
    rates: RateVector
    ranks: Dict[User, int]
    iterations: int
    retries: int = 0
    message: str = ""
    start: str = ""

    @property
    def sum_power(self) -> float:
        if self.Qset is None:
            return float("nan")
        return self.Qset.sum_power()

    @property
    def converged(self) -> bool:
        return self.status is SolveStatus.CONVERGED


@dataclass
class CertificationReport:
    """真实速率复核结果"""
    margins: Dict[User, float]
    properness_defects: Dict[User, float]
    ranks: Dict[User, int]

    @property
    def min_margin(self) -> float:
        return min(self.margins.values()) if self.margins else float("inf")

    @property
    def max_properness_defect(self) -> float:
        return max(self.properness_defects.values()) if self.properness_defects else 0.0


def covariance_ranks(Qset: CovarianceSet, rel_tol: float = RANK_TOL) -> Dict[User, int]:
    """每个用户协方差的数值秩；满秩 2N 表示用满了全部实值自由度"""
    return {u: numerical_rank(q, rel_tol) for u, q in Qset.Q.items()}


def initialize_gamma(
    scenario: Scenario,
    config: SignalingConfig,
    opts: Optional[SolverOptions] = None,
    retry: int = 0,
    network: Optional[LiftedNetwork] = None,
) -> Tuple[GammaSet, CovarianceSet]:
    """
    各向同性初始点：Q⁰ = (f·P/(2N))·I，Γ⁰ = B(Q⁰)

    第 r 次重试时 f 换成 f^(1/(r+1))，逐步靠近满功率。需求为0的用户不参与优化，Q⁰ 取0。

    Returns:
        (Γ⁰, Q⁰)
    """
    opts = opts or SolverOptions()
    network = network or LiftedNetwork(scenario, config.N)
    fraction = _retry_fraction(opts, retry)
    demands = config.demand_map(scenario)
    budgets = config.budget_map(scenario)

    powers = {u: (fraction * budgets[u] if demands[u] > 0 else 0.0) for u in scenario.users()}
    Q0 = CovarianceSet.isotropic(powers, config.N)
    gammas = gamma_from_covariances(network, Q0)
    logger.debug(f"初始化 Γ: 重试={retry}, 功率比例={fraction:.4f}")
    return gammas, Q0


def _retry_fraction(opts: SolverOptions, retry: int) -> float:
    return opts.init_power_fraction ** (1.0 / (retry + 1))


def improper_shape(theta: float, ratio: float) -> np.ndarray:
    """2×2 形状 R(θ)·diag(1, ratio)·R(θ)ᵀ；ratio < 1 时是非正常的"""
    c, s = math.cos(theta), math.sin(theta)
    R = np.array([[c, -s], [s, c]])
    return R @ np.diag([1.0, ratio]) @ R.T


def starting_points(
    scenario: Scenario,
    config: SignalingConfig,
    opts: Optional[SolverOptions] = None,
    retry: int = 0,
) -> List[Tuple[str, CovarianceSet]]:
    """
    外层迭代的全部初始协方差，顺序和数值都是确定的

    - isotropic：initialize_gamma 的各向同性点
    - improper-j（只在 IGS 下）：每个用户取 s·R(θ)·diag(1, ε)·R(θ)ᵀ，沿 N 个块重复，
      s = min(1, f·P)。j 为偶数时所有用户同一角度，奇数时相邻用户错开 π/2
    - random-j：固定种子的随机半正定矩阵（块间相关）投影到正常子空间
    - random-j-improper（只在 IGS 下）：同一个随机矩阵，不投影

    正常的初始点在 IGS 下始终停留在正常子空间里（Γ 与 J 可交换），走的是与 PGS 相同的迭代，
    所以 IGS 的结果不会差于 PGS；非正常解只能从非正常的初始点找到。
    """
    opts = opts or SolverOptions()
    N = config.N
    fraction = _retry_fraction(opts, retry)
    demands = config.demand_map(scenario)
    budgets = config.budget_map(scenario)
    users = scenario.users()
    active = [u for u in users if demands[u] > 0]
    scale = {u: min(1.0, fraction * budgets[u]) for u in active}

    def build(make) -> CovarianceSet:
        Qset = CovarianceSet.zeros(users, N)
        for index, u in enumerate(active):
            Qset.Q[u] = make(index, u)
        return Qset

    points = [("isotropic", initialize_gamma(scenario, config, opts, retry)[1])]

    if config.mode is SignalingMode.IMPROPER:
        angles = max(1, math.ceil(opts.improper_starts / 2))
        for j in range(opts.improper_starts):
            theta = (j // 2) * math.pi / angles
            staggered = j % 2 == 1

            def make(index, u, theta=theta, staggered=staggered):
                angle = theta + (math.pi / 2 if staggered and index % 2 == 1 else 0.0)
                return np.kron(np.eye(N), scale[u] * improper_shape(angle, opts.improper_ratio))

            points.append((f"improper-{j}", build(make)))

    rng = np.random.default_rng(opts.seed)
    for j in range(opts.random_starts):
        draws = {u: rng.standard_normal((2 * N, 2 * N)) for u in active}
        points.append((f"random-{j}", build(lambda index, u: _scaled_psd(draws[u], N * scale[u], proper=True))))
        if config.mode is SignalingMode.IMPROPER:
            points.append((f"random-{j}-improper",
                           build(lambda index, u: _scaled_psd(draws[u], N * scale[u], proper=False))))
    return points


def _scaled_psd(X: np.ndarray, trace: float, proper: bool) -> np.ndarray:
    W = X @ X.T
    if proper:
        W = project_proper(W)
    W = 0.5 * (W + W.T)
    return (trace / float(np.trace(W))) * W


def _finish(status: SolveStatus, network: LiftedNetwork, Qset: Optional[CovarianceSet], trace: List[float],
            iterations: int, retries: int, message: str, start: str = "") -> SolveResult:
    rates: RateVector = {}
    ranks: Dict[User, int] = {}
    if Qset is not None:
        rates = achievable_rates(network, Qset)
        ranks = covariance_ranks(Qset)
    return SolveResult(status, Qset, trace, rates, ranks, iterations, retries, message, start)


def _run_sca(
    network: LiftedNetwork,
    config: SignalingConfig,
    demands: Dict[User, float],
    budgets: Dict[User, float],
    Q0: CovarianceSet,
    opts: SolverOptions,
    label: str,
) -> SolveResult:
    """从一个初始协方差出发跑完外层迭代；第1轮不可行时返回 infeasible"""
    gammas = gamma_from_covariances(network, Q0)
    spec = SubproblemSpec(network, gammas, demands, budgets, config.mode)
    result = solve_subproblem(spec, start=Q0, options=opts.barrier)

    if result.status is SubproblemStatus.INFEASIBLE:
        message = f"起点 {label}: 初始 Γ 下子问题不可行（最小松弛 {result.min_slack:.3e}）"
        logger.debug(message)
        return _finish(SolveStatus.INFEASIBLE, network, None, [], 0, 0, message, label)
    if result.status is SubproblemStatus.NON_CONVERGED:
        message = f"起点 {label}: 第1轮子问题未收敛（牛顿步 {result.iterations}）"
        logger.warning(message)
        return _finish(SolveStatus.MAX_ITERATIONS, network, result.Qset, [result.objective], 1, 0, message, label)

    Qset = result.Qset
    trace = [result.objective]
    logger.debug(f"[{label}] 第 1 轮: P={result.objective:.8g}")

    t = 1
    while t < opts.max_outer_iterations:
        t += 1
        gammas = gamma_from_covariances(network, Qset)
        spec = SubproblemSpec(network, gammas, demands, budgets, config.mode)
        result = solve_subproblem(spec, start=Qset, options=opts.barrier)

        if result.status is SubproblemStatus.INFEASIBLE:
            logger.error(f"[{label}] 第 {t} 轮子问题不可行，最小松弛 {result.min_slack:.3e}")
            raise SolverError(
                f"第 {t} 轮子问题不可行（最小松弛 {result.min_slack:.3e}）；"
                f"Γ = B 处下界是紧的，上一轮的解本应可行"
            )
        if result.status is SubproblemStatus.NON_CONVERGED:
            message = f"起点 {label}: 第 {t} 轮子问题未收敛（牛顿步 {result.iterations}），返回上一轮的解"
            logger.warning(message)
            return _finish(SolveStatus.MAX_ITERATIONS, network, Qset, trace, t - 1, 0, message, label)

        previous = trace[-1]
        Qset = result.Qset
        trace.append(result.objective)
        logger.debug(f"[{label}] 第 {t} 轮: P={result.objective:.8g}, 变化={result.objective - previous:.3e}")

        if abs(result.objective - previous) < opts.epsilon:
            return _finish(SolveStatus.CONVERGED, network, Qset, trace, t, 0, "", label)

    message = f"起点 {label}: 达到外层迭代上限 {opts.max_outer_iterations}"
    logger.warning(message)
    return _finish(SolveStatus.MAX_ITERATIONS, network, Qset, trace, t, 0, message, label)


def _best_run(runs: Sequence[SolveResult], demands: Dict[User, float]) -> SolveResult:
    """
    选出最好的一次运行：优先取真实速率满足需求的 converged 结果中总功率最小的，
    其次取 max_iterations 中总功率最小的；并列时保留靠前的起点
    """
    def certified(run: SolveResult) -> bool:
        return all(run.rates[u] - psi >= -CERTIFY_TOL for u, psi in demands.items())

    for pool in (
        [r for r in runs if r.status is SolveStatus.CONVERGED and certified(r)],
        [r for r in runs if r.status is SolveStatus.CONVERGED],
        [r for r in runs if r.status is SolveStatus.MAX_ITERATIONS],
    ):
        if pool:
            return min(pool, key=lambda r: r.sum_power)
    return runs[-1]


def _replay(result: SolveResult, on_iteration: Optional[IterationCallback]):
    if on_iteration:
        for t, power in enumerate(result.power_trace, start=1):
            on_iteration(t, power)


def minimize_sum_power(
    scenario: Scenario,
    config: SignalingConfig,
    opts: Optional[SolverOptions] = None,
    on_iteration: Optional[IterationCallback] = None,
) -> SolveResult:
    """
    总功率最小化（外层SCA，多起点）

    对 starting_points 给出的每个初始点各跑一遍外层迭代，返回复核通过且总功率最小的结果。
    全部起点在第1轮都不可行时提高初始功率重试。

    Args:
        scenario: 场景
        config: 信号方式、扩展长度、需求、预算
        opts: 外层参数
        on_iteration: 选中结果的逐轮回调 (t, P_Σ^(t))，求解结束后按顺序调用

    Returns:
        SolveResult: 状态为 converged / infeasible / max_iterations；start 记录选中的起点

    Raises:
        InputError: 配置非法
        SolverError: 全部起点都在 t > 1 时遇到不可行的子问题
    """
    opts = opts or SolverOptions()
    network = LiftedNetwork(scenario, config.N)
    demands = config.demand_map(scenario)
    budgets = config.budget_map(scenario)
    users = scenario.users()

    if all(psi == 0 for psi in demands.values()):
        Qset = CovarianceSet.zeros(users, config.N)
        if on_iteration:
            on_iteration(1, 0.0)
        return _finish(SolveStatus.CONVERGED, network, Qset, [0.0], 1, 0, "全部需求为0")

    runs: List[SolveResult] = []
    errors: List[SolverError] = []
    retries = 0
    for retry in range(opts.retry_budget + 1):
        retries = retry
        runs = []
        for label, Q0 in starting_points(scenario, config, opts, retry):
            try:
                runs.append(_run_sca(network, config, demands, budgets, Q0, opts, label))
            except SolverError as e:
                errors.append(e)
        if any(r.status is not SolveStatus.INFEASIBLE for r in runs):
            break
        if not runs and errors:
            raise errors[-1]
        logger.warning(f"全部起点在初始 Γ 下子问题不可行（第 {retry + 1} 次尝试）")
    else:
        message = f"初始化 {opts.retry_budget + 1} 次后子问题仍不可行"
        logger.warning(message)
        return _finish(SolveStatus.INFEASIBLE, network, None, [], 0, retries, message)

    best = _best_run([r for r in runs if r.status is not SolveStatus.INFEASIBLE], demands)
    best.retries = retries
    if errors:
        logger.warning(f"{len(errors)} 个起点中途失败，已跳过: {errors[-1]}")
    logger.info(
        f"SCA完成: {len(runs)} 个起点, 选中 {best.start}, 状态={best.status.value}, "
        f"{best.iterations} 轮, 总功率={best.sum_power:.6g}"
    )
    _replay(best, on_iteration)
    return best


def refine_sum_power(
    scenario: Scenario,
    config: SignalingConfig,
    start: CovarianceSet,
    opts: Optional[SolverOptions] = None,
    on_iteration: Optional[IterationCallback] = None,
) -> SolveResult:
    """
    从一个已知可行的协方差出发继续外层迭代

    Γ⁰ = B(start) 处下界是紧的，start 本身是第1个子问题的可行点，
    所以结果的总功率不超过 start 的总功率（差距在障碍法间隙以内）。
    扫描里用更高需求或更受限的信号方式的解作为 start。

    Raises:
        InputError: start 与场景或 N 不匹配
    """
    opts = opts or SolverOptions()
    network = LiftedNetwork(scenario, config.N)
    start.check_shapes(network)
    demands = config.demand_map(scenario)
    budgets = config.budget_map(scenario)
    result = _run_sca(network, config, demands, budgets, start, opts, "warm")
    _replay(result, on_iteration)
    return result


def certify(result: SolveResult, scenario: Scenario, config: SignalingConfig, tol: float = CERTIFY_TOL) -> CertificationReport:
    """
    用真实速率从头复核一个已收敛的结果

    Raises:
        InputError: 结果不是 converged
        CertificationError: 某用户速率余量低于 -tol
    """
    if result.status is not SolveStatus.CONVERGED or result.Qset is None:
        raise InputError(f"只能复核已收敛的结果，当前状态为 {result.status.value}")

    network = LiftedNetwork(scenario, config.N)
    demands = config.demand_map(scenario)
    rates = achievable_rates(network, result.Qset)
    report = CertificationReport(
        margins={u: rates[u] - demands[u] for u in scenario.users()},
        properness_defects={u: properness_defect(q) for u, q in result.Qset.Q.items()},
        ranks=covariance_ranks(result.Qset),
    )

    failing = {u: m for u, m in report.margins.items() if m < -tol}
    if failing:
        logger.error(f"复核失败: {failing}")
        raise CertificationError(f"以下用户的真实速率低于需求: {failing}")
    return report
