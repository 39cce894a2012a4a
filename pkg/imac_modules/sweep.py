"""
扫描模块 - 需求扫描与结果表

=== 这个模块是做什么的？ ===
对一组 (信号方式, N) 曲线，在一串速率需求上逐点调用 minimize_sum_power，
所有用户取相同需求，每个点输出一行结果，写成CSV供外部绘图。
各点独立求解之后再检查曲线间的次序：总功率随需求不减、IGS 不高于 PGS、
N 的倍数不高于 N，违反的点从占优的解热启动重新迭代。

=== 输出格式 ===
scenario,M,mode,N,demand_bits_per_cu,sum_power,status,outer_iters,min_rate_margin,max_properness_defect,ranks
数值保留12位有效数字；不可行的点 sum_power 为空；ranks 按用户顺序用分号连接。
行顺序：先按曲线（信号方式）分组，组内需求递增，与并行完成的先后无关。

=== 使用示例 ===
spec = SweepSpec.from_grid("builtin:mi", 1, parse_modes("pgs:1,igs:1"), parse_demands("0.01:0.11:1.0"))
rows = run_sweep(spec, workers=4)
Path("out.csv").write_bytes(emit_table(rows))
"""

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .channel import Scenario, load_scenario
from .cache_manager import ResultCache
from .exceptions import InputError, SolverError
from .rates import SignalingMode, properness_defect
from .sca import (
    DEFAULT_BUDGET,
    SignalingConfig,
    SolverOptions,
    SolveResult,
    SolveStatus,
    minimize_sum_power,
    refine_sum_power,
)

logger = logging.getLogger(__name__)

CSV_HEADER = [
    "scenario", "M", "mode", "N", "demand_bits_per_cu", "sum_power", "status",
    "outer_iters", "min_rate_margin", "max_properness_defect", "ranks",
]

TraceCallback = Callable[[str, int, float], None]

ORDER_TOL = 1e-8


@dataclass(frozen=True)
class DemandGrid:
    """等差需求序列 start, start+step, ..., <= stop（含端点），可选只取前 count 个"""
    start: float
    step: float
    stop: float
    count: Optional[int] = None

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.start, self.step, self.stop)):
            raise InputError("需求序列含非有限值")
        if self.step <= 0:
            raise InputError(f"需求步长必须为正，当前为 {self.step}")
        if self.start > self.stop:
            raise InputError(f"需求起点 {self.start} 大于终点 {self.stop}")
        if self.start < 0:
            raise InputError(f"速率需求不能为负，当前起点为 {self.start}")
        if self.count is not None and self.count < 1:
            raise InputError(f"count 必须 >= 1，当前为 {self.count}")

    @classmethod
    def linspace(cls, start: float, stop: float, points: int, count: Optional[int] = None) -> "DemandGrid":
        if points < 2:
            raise InputError("linspace 至少需要2个点")
        return cls(start, (stop - start) / (points - 1), stop, count)

    def values(self) -> List[float]:
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        if self.count is not None:
            n = min(n, self.count)
        return [self.start + k * self.step for k in range(n)]


@dataclass
class Curve:
    mode: SignalingMode
    N: int
    demands: DemandGrid

    def __post_init__(self):
        self.mode = SignalingMode.parse(self.mode)
        if int(self.N) != self.N or self.N < 1:
            raise InputError(f"扩展长度 N 必须为 >= 1 的整数，当前为 {self.N}")
        self.N = int(self.N)

    @property
    def label(self) -> str:
        return f"{self.mode.value}:{self.N}"


@dataclass
class SweepSpec:
    """一次扫描：场景 + 若干曲线 + 求解参数"""
    scenario: str
    M: Optional[int]
    curves: List[Curve]
    options: SolverOptions = field(default_factory=SolverOptions)
    budget: float = DEFAULT_BUDGET
    output: Optional[str] = None

    def __post_init__(self):
        if not self.curves:
            raise InputError("扫描至少需要一条曲线")
        if not (math.isfinite(self.budget) and self.budget > 0):
            raise InputError(f"功率预算必须 > 0，当前为 {self.budget}")

    @classmethod
    def from_grid(
        cls,
        scenario: str,
        M: Optional[int],
        modes: Sequence[Tuple[SignalingMode, int]],
        demands: DemandGrid,
        **kwargs,
    ) -> "SweepSpec":
        """所有曲线共用一个需求序列"""
        return cls(scenario, M, [Curve(mode, N, demands) for mode, N in modes], **kwargs)


@dataclass
class SweepRow:
    scenario: str
    M: int
    mode: str
    N: int
    demand: float
    sum_power: Optional[float]
    status: str
    outer_iters: Optional[int]
    min_rate_margin: Optional[float]
    max_properness_defect: Optional[float]
    ranks: List[int] = field(default_factory=list)


# =========================
# 参数解析
# =========================

def parse_demands(text: str) -> DemandGrid:
    """'start:step:stop' 或单个数值"""
    parts = [p.strip() for p in str(text).split(":")]
    try:
        values = [float(p) for p in parts]
    except ValueError as e:
        raise InputError(f"无法解析需求序列 '{text}'，格式为 start:step:stop") from e
    if len(values) == 1:
        return DemandGrid(values[0], 1.0, values[0])
    if len(values) != 3:
        raise InputError(f"需求序列 '{text}' 格式错误，应为 start:step:stop")
    return DemandGrid(*values)


def parse_modes(text: str) -> List[Tuple[SignalingMode, int]]:
    """'pgs:1,igs:1,igs:2'；省略 N 时取 1"""
    modes = []
    for token in str(text).split(","):
        token = token.strip()
        if not token:
            continue
        name, _, n = token.partition(":")
        try:
            N = int(n) if n else 1
        except ValueError as e:
            raise InputError(f"无法解析扩展长度 '{token}'") from e
        if N < 1:
            raise InputError(f"扩展长度 N 必须 >= 1: '{token}'")
        modes.append((SignalingMode.parse(name), N))
    if not modes:
        raise InputError("至少需要一个信号方式")
    return modes


# =========================
# 扫描预设
# =========================

def _preset(scenario: str, M: int, *curves: Tuple[str, int, DemandGrid]) -> Dict:
    return {"scenario": scenario, "M": M, "curves": [Curve(mode, N, grid) for mode, N, grid in curves]}


SWEEP_PRESETS: Dict[str, Dict] = {
    "mi-m1": _preset(
        "builtin:mi", 1,
        ("pgs", 1, DemandGrid.linspace(0.01, 1.0, 10)),
        ("igs", 1, DemandGrid.linspace(0.01, 1.0, 10)),
        ("igs", 2, DemandGrid.linspace(0.01, 1.0, 10)),
    ),
    "si-m1": _preset(
        "builtin:si", 1,
        ("pgs", 1, DemandGrid.linspace(0.01, 0.5, 10)),
        ("igs", 1, DemandGrid.linspace(0.01, 1.0, 10)),
        ("igs", 2, DemandGrid.linspace(0.01, 1.0, 10)),
    ),
    "mi-m2": _preset(
        "builtin:mi", 2,
        ("pgs", 1, DemandGrid.linspace(0.01, 2.0, 10)),
        ("igs", 1, DemandGrid.linspace(0.01, 2.0, 10)),
        ("igs", 2, DemandGrid.linspace(0.01, 2.0, 10)),
    ),
    "si-m2": _preset(
        "builtin:si", 2,
        ("pgs", 1, DemandGrid.linspace(0.01, 2.0, 10)),
        ("igs", 1, DemandGrid.linspace(0.01, 2.0, 10)),
        ("igs", 2, DemandGrid.linspace(0.01, 2.0, 10, count=8)),
    ),
}


def preset_spec(name: str, options: Optional[SolverOptions] = None, budget: float = DEFAULT_BUDGET) -> SweepSpec:
    if name not in SWEEP_PRESETS:
        raise InputError(f"未知的扫描预设 '{name}'，可选: {sorted(SWEEP_PRESETS)}")
    preset = SWEEP_PRESETS[name]
    return SweepSpec(
        scenario=preset["scenario"],
        M=preset["M"],
        curves=list(preset["curves"]),
        options=options or SolverOptions(),
        budget=budget,
    )


# =========================
# 执行
# =========================

def row_from_result(scenario: Scenario, curve: Curve, demand: float, result: SolveResult) -> SweepRow:
    row = SweepRow(
        scenario=scenario.name,
        M=scenario.M,
        mode=curve.mode.value,
        N=curve.N,
        demand=demand,
        sum_power=None,
        status=result.status.value,
        outer_iters=result.iterations,
        min_rate_margin=None,
        max_properness_defect=None,
    )
    if result.Qset is None:
        return row
    users = scenario.users()
    row.sum_power = result.sum_power
    row.min_rate_margin = min(result.rates[u] - demand for u in users)
    row.max_properness_defect = max(properness_defect(result.Qset[u]) for u in users)
    row.ranks = [result.ranks[u] for u in users]
    return row


def _error_row(scenario: Scenario, curve: Curve, demand: float) -> SweepRow:
    return SweepRow(scenario.name, scenario.M, curve.mode.value, curve.N, demand, None, "error", None, None, None)


def _point_label(scenario: Scenario, curve: Curve, demand: float) -> str:
    return f"{scenario.name}/{curve.label}/ψ={demand:.12g}"


def _solve(
    scenario: Scenario,
    curve: Curve,
    demand: float,
    options: SolverOptions,
    budget: float,
    cache: Optional[ResultCache],
    trace: Optional[TraceCallback],
) -> Optional[SolveResult]:
    """求解扫描中的一个点；SolverError 时返回 None，记为 error 行，不中断扫描"""
    config = SignalingConfig.uniform(curve.mode, curve.N, demand, budget)
    label = _point_label(scenario, curve, demand)

    result = cache.get(scenario, config, options) if cache is not None else None
    if result is None:
        callback = (lambda t, p: trace(label, t, p)) if trace else None
        try:
            result = minimize_sum_power(scenario, config, options, on_iteration=callback)
        except SolverError as e:
            logger.error(f"{label} 求解中止: {e}")
            return None
        if cache is not None:
            cache.set(scenario, config, options, result)

    if result.status is SolveStatus.INFEASIBLE:
        logger.warning(f"{label} 不可行")
    else:
        logger.info(f"{label} 完成: 状态={result.status.value}, 总功率={result.sum_power:.6g}, 外层迭代={result.iterations}")
    return result


# =========================
# 曲线间的次序
# =========================

Point = Tuple[int, int]


def _power(result: Optional[SolveResult]) -> float:
    if result is None or result.Qset is None:
        return math.inf
    return result.sum_power


def _dominating_starts(spec: SweepSpec, grids: List[List[float]], point: Point):
    """
    给出 point 处可行的已知解：同一曲线上更高需求的解，
    以及同一需求下更受限的曲线（PGS 之于 IGS、N 的约数之于 N）的解扩展到本曲线的 N
    """
    c, i = point
    curve = spec.curves[c]
    if i + 1 < len(grids[c]):
        yield (c, i + 1), 1
    demand = grids[c][i]
    for c2, other in enumerate(spec.curves):
        if c2 == c or curve.N % other.N != 0:
            continue
        if other.mode is not curve.mode and other.mode is not SignalingMode.PROPER:
            continue
        if (other.mode, other.N) == (curve.mode, curve.N):
            continue
        for i2, d2 in enumerate(grids[c2]):
            if math.isclose(d2, demand, rel_tol=0.0, abs_tol=1e-12):
                yield (c2, i2), curve.N // other.N


def _enforce_orderings(
    scenario: Scenario,
    spec: SweepSpec,
    grids: List[List[float]],
    results: Dict[Point, Optional[SolveResult]],
    tol: float = ORDER_TOL,
    max_passes: int = 3,
) -> int:
    """
    逐点检查：总功率应随需求不减，IGS 不高于 PGS，N 的倍数不高于 N。
    违反时从占优的已知解出发重新迭代（refine_sum_power），结果不会高于那个解。

    Returns:
        int: 被改进的点数
    """
    order = sorted(range(len(spec.curves)),
                   key=lambda c: (spec.curves[c].mode is SignalingMode.IMPROPER, spec.curves[c].N))
    improved = 0
    for _ in range(max_passes):
        changed = False
        for c in order:
            curve = spec.curves[c]
            for i in reversed(range(len(grids[c]))):
                point = (c, i)
                for source, factor in _dominating_starts(spec, grids, point):
                    current = _power(results[point])
                    bound = _power(results[source])
                    if not bound < current - tol:
                        continue
                    demand = grids[c][i]
                    config = SignalingConfig.uniform(curve.mode, curve.N, demand, spec.budget)
                    start = results[source].Qset.extended(factor)
                    try:
                        refined = refine_sum_power(scenario, config, start, spec.options)
                    except (SolverError, InputError) as e:
                        logger.warning(f"{_point_label(scenario, curve, demand)} 热启动失败: {e}")
                        continue
                    if refined.status is SolveStatus.CONVERGED and refined.sum_power < current:
                        logger.info(
                            f"{_point_label(scenario, curve, demand)} 从 "
                            f"{spec.curves[source[0]].label}/ψ={grids[source[0]][source[1]]:.12g} 热启动: "
                            f"{current:.6g} -> {refined.sum_power:.6g}"
                        )
                        results[point] = refined
                        improved += 1
                        changed = True
        if not changed:
            break
    return improved


def run_sweep(
    spec: SweepSpec,
    workers: int = 1,
    cache: Optional[ResultCache] = None,
    trace: Optional[TraceCallback] = None,
) -> List[SweepRow]:
    """
    执行扫描

    先并行求解全部点，再按顺序做一遍次序检查（_enforce_orderings），
    所以每条曲线的总功率随需求不减，IGS 不高于 PGS，N=2 不高于 N=1。

    Args:
        spec: 扫描描述
        workers: 并行线程数
        cache: 可选的结果缓存（只存各点独立求解的结果）
        trace: 可选的逐轮回调 (点标签, t, P_Σ^(t))

    Returns:
        List[SweepRow]: 按曲线、需求递增排序
    """
    if workers < 1:
        raise InputError(f"workers 必须 >= 1，当前为 {workers}")
    scenario = load_scenario(spec.scenario, antennas=spec.M)
    grids = [curve.demands.values() for curve in spec.curves]
    points = [(c, i) for c, grid in enumerate(grids) for i in range(len(grid))]
    logger.info(f"开始扫描: 场景={scenario.name}, M={scenario.M}, 曲线={[c.label for c in spec.curves]}, 点数={len(points)}")

    def task(point):
        c, i = point
        return _solve(scenario, spec.curves[c], grids[c][i], spec.options, spec.budget, cache, trace)

    if workers == 1:
        solved = [task(p) for p in points]
    else:
        # map 按提交顺序返回结果，行顺序与完成先后无关
        with ThreadPoolExecutor(max_workers=workers) as pool:
            solved = list(pool.map(task, points))

    results: Dict[Point, Optional[SolveResult]] = dict(zip(points, solved))
    improved = _enforce_orderings(scenario, spec, grids, results)
    if improved:
        logger.info(f"次序检查改进了 {improved} 个点")

    rows = []
    for c, i in points:
        curve, demand = spec.curves[c], grids[c][i]
        result = results[(c, i)]
        rows.append(_error_row(scenario, curve, demand) if result is None
                    else row_from_result(scenario, curve, demand, result))
    return rows


# =========================
# 结果表
# =========================

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def emit_table(rows: Sequence[SweepRow], format: str = "csv") -> bytes:
    """把扫描结果写成CSV字节流（空扫描只有表头）"""
    if format != "csv":
        raise InputError(f"不支持的输出格式 '{format}'，目前只支持 csv")
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([
            row.scenario,
            row.M,
            row.mode,
            row.N,
            _fmt(float(row.demand)),
            _fmt(row.sum_power),
            row.status,
            _fmt(row.outer_iters),
            _fmt(row.min_rate_margin),
            _fmt(row.max_properness_defect),
            ";".join(str(r) for r in row.ranks),
        ])
    return buffer.getvalue().encode("utf-8")


def write_table(rows: Sequence[SweepRow], path: str) -> Path:
    """写CSV文件，路径不可写时抛 InputError"""
    target = Path(path)
    try:
        target.write_bytes(emit_table(rows))
    except OSError as e:
        raise InputError(f"无法写入输出文件 {target}: {e}") from e
    return target


def sweep_summary(rows: Sequence[SweepRow]) -> Dict[str, int]:
    """各状态的点数"""
    summary: Dict[str, int] = {}
    for row in rows:
        summary[row.status] = summary.get(row.status, 0) + 1
    return summary


