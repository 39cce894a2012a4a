"""
功率最小化系统配置文件
"""

import os
from dataclasses import dataclass
from typing import Any, Dict

from imac_modules import BarrierOptions, SolverOptions


@dataclass
class IMACConfig:
    """系统配置类"""

    # 路径配置
    scenario_dir: str = "data/scenarios"
    output_dir: str = "./results"

    # 场景与信号配置
    default_scenario: str = "builtin:mi"
    default_antennas: int = 1
    default_budget: float = 100.0

    # 外层SCA配置
    epsilon: float = 1e-5
    max_outer_iterations: int = 200
    init_power_fraction: float = 0.5
    retry_budget: int = 3
    improper_starts: int = 4
    random_starts: int = 2
    improper_ratio: float = 0.02
    start_seed: int = 0

    # 内点法配置
    mu0: float = 1.0
    mu_factor: float = 10.0
    newton_tol: float = 1e-6
    gap_tol: float = 1e-8
    armijo: float = 0.3
    shrink: float = 0.5
    max_total_steps: int = 5000

    # 扫描与缓存
    sweep_workers: int = 1
    cache_max_size: int = 512
    cache_ttl: int = 3600

    log_level: str = "INFO"

    def __post_init__(self):
        """初始化后的处理"""
        if self.default_budget <= 0:
            raise ValueError("default_budget 必须为正")
        if self.sweep_workers < 1:
            raise ValueError("sweep_workers 必须 >= 1")
        self.log_level = str(self.log_level).upper()

    @classmethod
    def from_dict(cls, config_dict: Dict[str, Any]) -> 'IMACConfig':
        """从字典创建配置对象"""
        return cls(**config_dict)

    @classmethod
    def from_env(cls, prefix: str = "IMAC_") -> 'IMACConfig':
        """
        用环境变量覆盖默认值，例如 IMAC_EPSILON=1e-6、IMAC_SWEEP_WORKERS=4

        调用前先 load_dotenv()，.env 里的值也会生效
        """
        overrides: Dict[str, Any] = {}
        for name, field_def in cls.__dataclass_fields__.items():
            raw = os.getenv(prefix + name.upper())
            if raw is None:
                continue
            try:
                overrides[name] = field_def.type(raw) if field_def.type in (int, float) else raw
            except ValueError as e:
                raise ValueError(f"环境变量 {prefix + name.upper()}={raw!r} 无法解析") from e
        return cls(**overrides)

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典"""
        return dict(self.__dict__)

    def barrier_options(self) -> BarrierOptions:
        return BarrierOptions(
            mu0=self.mu0,
            mu_factor=self.mu_factor,
            newton_tol=self.newton_tol,
            gap_tol=self.gap_tol,
            armijo=self.armijo,
            shrink=self.shrink,
            max_total_steps=self.max_total_steps,
        )

    def solver_options(self) -> SolverOptions:
        return SolverOptions(
            epsilon=self.epsilon,
            max_outer_iterations=self.max_outer_iterations,
            init_power_fraction=self.init_power_fraction,
            retry_budget=self.retry_budget,
            improper_starts=self.improper_starts,
            random_starts=self.random_starts,
            improper_ratio=self.improper_ratio,
            seed=self.start_seed,
            barrier=self.barrier_options(),
        )


# 默认配置实例
DEFAULT_CONFIG = IMACConfig()
