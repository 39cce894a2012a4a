"""
功率最小化主程序

子命令：
    solve      求解单个需求点
    sweep      需求扫描，输出CSV
    preset     按预设扫描（mi-m1 / si-m1 / mi-m2 / si-m2，两个内置场景各取 M=1、M=2）
    scenarios  打印内置场景的信道表
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

# 添加模块路径到系统路径
sys.path.append(str(Path(__file__).parent))

from dotenv import load_dotenv

from config import DEFAULT_CONFIG, IMACConfig
from imac_modules import (
    Curve,
    SWEEP_PRESETS,
    IMACError,
    SignalingConfig,
    SolveStatus,
    SweepSpec,
    builtin_scenarios,
    certify,
    get_cache_manager,
    load_scenario,
    minimize_sum_power,
    parse_demands,
    parse_modes,
    preset_spec,
    run_sweep,
    write_table,
)
from imac_modules.channel import BUILTIN_PREFIX
from imac_modules.sweep import SweepRow, row_from_result, sweep_summary

logger = logging.getLogger(__name__)


class PowerMinimizationSystem:
    """
    功率最小化系统：把场景加载、SCA求解、扫描和缓存串起来
    """

    def __init__(self, config: IMACConfig = None):
        """
        Args:
            config (IMACConfig): 配置实例，默认使用 DEFAULT_CONFIG
        """
        self.config = config or DEFAULT_CONFIG
        self.cache_manager = get_cache_manager(self.config.cache_max_size, self.config.cache_ttl)

    def _trace_to_stderr(self, label: str, t: int, power: float):
        print(f"{label}\t{t}\t{power:.12g}", file=sys.stderr, flush=True)

    def solve(self, scenario_id: str, antennas: Optional[int], mode: str, N: int, demand: float,
              budget: Optional[float] = None, trace: bool = False) -> SweepRow:
        """
        求解单个需求点并复核

        Returns:
            SweepRow: 与扫描相同格式的一行结果
        """
        scenario = load_scenario(scenario_id, antennas=antennas)
        budget = budget or self.config.default_budget
        options = self.config.solver_options()
        config = SignalingConfig.uniform(mode, N, demand, budget)
        print(f"🚀 求解: 场景={scenario.name}, M={scenario.M}, {config.mode.value}:{N}, ψ={demand}")

        callback = (lambda t, p: self._trace_to_stderr(scenario.name, t, p)) if trace else None
        result = self.cache_manager.get(scenario, config, options)
        if result is None:
            result = minimize_sum_power(scenario, config, options, on_iteration=callback)
            self.cache_manager.set(scenario, config, options, result)
        else:
            print("⚡ 命中缓存")
            if callback:
                for t, power in enumerate(result.power_trace, start=1):
                    callback(t, power)

        if result.status is SolveStatus.INFEASIBLE:
            print(f"⚠️ 不可行: {result.message}")
        else:
            print(f"📊 总功率: {result.sum_power:.8g}（外层迭代 {result.iterations} 轮, 状态 {result.status.value}）")
            for (k, i), rate in result.rates.items():
                print(f"   用户 (cell={k + 1}, user={i + 1}): 速率={rate:.6f} bit/cu, 秩={result.ranks[(k, i)]}")
        if result.status is SolveStatus.CONVERGED:
            report = certify(result, scenario, config)
            print(f"✅ 复核通过: 最小速率余量={report.min_margin:.3e}, 最大非正常度={report.max_properness_defect:.3e}")

        curve = Curve(mode, N, parse_demands(str(demand)))
        return row_from_result(scenario, curve, demand, result)

    def sweep(self, spec: SweepSpec, workers: Optional[int] = None, trace: bool = False) -> List[SweepRow]:
        """执行扫描，spec.output 非空时写CSV"""
        workers = workers or self.config.sweep_workers
        print(f"🔍 扫描: 场景={spec.scenario}, 曲线={[c.label for c in spec.curves]}, 并行={workers}")
        rows = run_sweep(
            spec,
            workers=workers,
            cache=self.cache_manager,
            trace=self._trace_to_stderr if trace else None,
        )
        print(f"📊 状态统计: {sweep_summary(rows)}")
        if spec.output:
            path = write_table(rows, spec.output)
            print(f"✅ 结果已写入 {path}")
        return rows

    def show_scenarios(self):
        """打印内置场景（M=2，M=1 取每个向量的第一个元素）"""
        for name, scenario in builtin_scenarios(2).items():
            print(f"\n📡 builtin:{name}  K={scenario.K}, users_per_cell={list(scenario.users_per_cell)}, "
                  f"σ²={scenario.noise_variance}")
            for (k, j, l) in scenario.channel_keys():
                entries = ", ".join(f"{mag}·e^({phase}i)" for mag, phase in scenario.channels[(k, j, l)])
                print(f"   h[rx={k + 1}, user={j + 1}, tx={l + 1}] = [{entries}]")
        print(f"\n🗂️ 扫描预设: {', '.join(sorted(SWEEP_PRESETS))}")


# =========================
# 命令行
# =========================

def _common_solver_args(parser: argparse.ArgumentParser):
    parser.add_argument("--scenario", default=None, help="场景：builtin:mi / builtin:si / JSON文件路径")
    parser.add_argument("--antennas", type=int, default=None, help="基站天线数 M")
    parser.add_argument("--epsilon", type=float, default=None, help="外层收敛阈值 ε")
    parser.add_argument("--budget", type=float, default=None, help="每用户功率预算 P")
    parser.add_argument("--max-outer", type=int, default=None, help="外层迭代上限")
    parser.add_argument("--trace", action="store_true", help="逐轮 (t, P) 输出到标准错误")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="IMAC上行总功率最小化（非正常高斯信号 + 符号扩展）")
    parser.add_argument("--log-level", default=None, help="日志级别，默认取配置")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="求解单个需求点")
    _common_solver_args(solve)
    solve.add_argument("--mode", default="igs", help="pgs 或 igs")
    solve.add_argument("--extension", type=int, default=1, help="符号扩展长度 N")
    solve.add_argument("--demand", type=float, required=True, help="每用户速率需求 (bit/cu)")
    solve.add_argument("--out", default=None, help="可选：把结果写成一行CSV")

    sweep = sub.add_parser("sweep", help="需求扫描")
    _common_solver_args(sweep)
    sweep.add_argument("--modes", default="pgs:1,igs:1,igs:2", help="例如 pgs:1,igs:1,igs:2")
    sweep.add_argument("--demands", required=True, help="start:step:stop")
    sweep.add_argument("--out", required=True, help="输出CSV路径")
    sweep.add_argument("--workers", type=int, default=None, help="并行线程数")

    preset_parser = sub.add_parser("preset", help="按预设扫描")
    preset_parser.add_argument("--name", required=True, choices=sorted(SWEEP_PRESETS))
    preset_parser.add_argument("--epsilon", type=float, default=None)
    preset_parser.add_argument("--budget", type=float, default=None)
    preset_parser.add_argument("--max-outer", type=int, default=None)
    preset_parser.add_argument("--trace", action="store_true")
    preset_parser.add_argument("--out", required=True, help="输出CSV路径")
    preset_parser.add_argument("--workers", type=int, default=None)

    sub.add_parser("scenarios", help="打印内置场景")
    return parser


def _antennas(scenario_id: str, antennas: Optional[int], config: IMACConfig) -> Optional[int]:
    """内置场景缺省取配置里的天线数；场景文件缺省保留文件自己的 M"""
    if antennas is None and str(scenario_id).startswith(BUILTIN_PREFIX):
        return config.default_antennas
    return antennas


def _config_from_args(args) -> IMACConfig:
    config = IMACConfig.from_env()
    overrides = config.to_dict()
    if getattr(args, "epsilon", None) is not None:
        overrides["epsilon"] = args.epsilon
    if getattr(args, "budget", None) is not None:
        overrides["default_budget"] = args.budget
    if getattr(args, "max_outer", None) is not None:
        overrides["max_outer_iterations"] = args.max_outer
    if args.log_level:
        overrides["log_level"] = args.log_level
    return IMACConfig.from_dict(overrides)


def main(argv: Optional[List[str]] = None) -> int:
    """主函数，返回退出码：0 成功（含不可行的点），2 输入/求解错误，1 其他错误"""
    load_dotenv()
    args = build_parser().parse_args(argv)

    try:
        config = _config_from_args(args)
    except (IMACError, ValueError) as e:
        print(f"配置错误: {e}", file=sys.stderr)
        return 2

    logging.basicConfig(
        level=getattr(logging, config.log_level, logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )

    try:
        system = PowerMinimizationSystem(config)
        if args.command == "scenarios":
            system.show_scenarios()
        elif args.command == "solve":
            scenario_id = args.scenario or config.default_scenario
            row = system.solve(
                scenario_id,
                _antennas(scenario_id, args.antennas, config),
                args.mode,
                args.extension,
                args.demand,
                trace=args.trace,
            )
            if args.out:
                write_table([row], args.out)
                print(f"✅ 结果已写入 {args.out}")
        elif args.command == "sweep":
            scenario_id = args.scenario or config.default_scenario
            spec = SweepSpec.from_grid(
                scenario_id,
                _antennas(scenario_id, args.antennas, config),
                parse_modes(args.modes),
                parse_demands(args.demands),
                options=config.solver_options(),
                budget=config.default_budget,
                output=args.out,
            )
            system.sweep(spec, workers=args.workers, trace=args.trace)
        elif args.command == "preset":
            spec = preset_spec(args.name, options=config.solver_options(), budget=config.default_budget)
            spec.output = args.out
            system.sweep(spec, workers=args.workers, trace=args.trace)
    except IMACError as e:
        logger.error(f"发生错误: {e}")
        print(f"发生错误: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.error(f"发生未预期的错误: {e}")
        print(f"发生未预期的错误: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
