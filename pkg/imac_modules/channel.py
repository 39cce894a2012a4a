"""
信道模块 - 场景加载与实值化

=== 这个模块是做什么的？ ===
1. 读取多小区上行（IMAC）场景：小区数、每小区用户数、基站天线数、复信道、噪声方差
2. 把复信道 h 变成实值等效矩阵 G（实部/虚部按天线交织）
3. 做符号扩展：G_bar = I_N ⊗ G

=== 下标约定 ===
代码内部全部从0开始：信道键 (k, j, l) 表示第 l 个小区的第 j 个用户到第 k 个基站。
场景文件和报错信息里用从1开始的下标（rx_cell, user, tx_cell）。

=== 使用示例 ===
scenario = load_scenario("builtin:mi", antennas=1)
network = LiftedNetwork(scenario, N=2)
G_bar = network.link(0, (1, 0))   # 小区2用户1 -> 基站1
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from .exceptions import InputError, ScenarioError

logger = logging.getLogger(__name__)

ChannelKey = Tuple[int, int, int]
User = Tuple[int, int]
Entry = Tuple[float, float]

BUILTIN_PREFIX = "builtin:"


@dataclass(frozen=True, eq=False)
class Scenario:
    """
    IMAC场景

    channels 的值是 (幅度, 相位弧度) 对的元组，长度为 M；转换成直角坐标推迟到实值化时做，
    这样保存/重载可以逐位复现表格里的数值。
    """
    K: int
    users_per_cell: Tuple[int, ...]
    M: int
    noise_variance: float
    channels: Mapping[ChannelKey, Tuple[Entry, ...]]
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "users_per_cell", tuple(int(u) for u in self.users_per_cell))
        object.__setattr__(
            self, "channels",
            {tuple(key): tuple((float(m), float(p)) for m, p in entries) for key, entries in self.channels.items()},
        )
        self._validate()

    def _validate(self):
        if self.K < 1:
            raise ScenarioError(f"K 必须 >= 1，当前为 {self.K}")
        if len(self.users_per_cell) != self.K:
            raise ScenarioError(f"users_per_cell 长度 {len(self.users_per_cell)} 与 K={self.K} 不一致")
        if any(u < 1 for u in self.users_per_cell):
            raise ScenarioError(f"users_per_cell 中每个小区至少有1个用户: {list(self.users_per_cell)}")
        if self.M < 1:
            raise ScenarioError(f"M 必须 >= 1，当前为 {self.M}")
        if not (math.isfinite(self.noise_variance) and self.noise_variance > 0):
            raise ScenarioError(f"noise_variance 必须为正的有限值，当前为 {self.noise_variance}")

        expected = set(self.channel_keys())
        for key in self.channels:
            if key not in expected:
                raise ScenarioError(f"多余的信道条目 {_format_key(key)}")
        for key in expected:
            entries = self.channels.get(key)
            if entries is None:
                raise ScenarioError(f"缺少信道条目 {_format_key(key)}")
            if len(entries) != self.M:
                raise ScenarioError(f"信道条目 {_format_key(key)} 长度为 {len(entries)}，应为 M={self.M}")
            for mag, phase in entries:
                if not (math.isfinite(mag) and math.isfinite(phase)) or mag < 0:
                    raise ScenarioError(f"信道条目 {_format_key(key)} 含非法数值 (mag={mag}, phase={phase})")

    def channel_keys(self) -> List[ChannelKey]:
        """全部 (k, j, l) 键，按接收小区、发射小区、用户排序"""
        return [
            (k, j, l)
            for k in range(self.K)
            for l in range(self.K)
            for j in range(self.users_per_cell[l])
        ]

    def users(self) -> List[User]:
        """全部用户 (小区, 用户序号)，小区优先排序；这也是报告和CSV中的用户顺序"""
        return [(k, i) for k in range(self.K) for i in range(self.users_per_cell[k])]

    @property
    def user_count(self) -> int:
        return sum(self.users_per_cell)

    def channel_vector(self, k: int, j: int, l: int) -> np.ndarray:
        """返回复信道向量 h_{k j_l}（长度 M）"""
        entries = self.channels[(k, j, l)]
        return np.array([mag * np.exp(1j * phase) for mag, phase in entries], dtype=complex)

    def truncated(self, M: int) -> "Scenario":
        """只保留每个信道向量的前 M 个元素（单天线情形取表格的第一个元素）"""
        if M < 1 or M > self.M:
            raise ScenarioError(f"天线数 M={M} 超出场景支持的范围 1..{self.M}")
        if M == self.M:
            return self
        return Scenario(
            K=self.K,
            users_per_cell=self.users_per_cell,
            M=M,
            noise_variance=self.noise_variance,
            channels={key: entries[:M] for key, entries in self.channels.items()},
            name=self.name,
        )

    def fingerprint(self) -> str:
        """场景内容的稳定哈希，用作缓存键的一部分"""
        return hashlib.md5(dump_scenario(self).encode("utf-8")).hexdigest()


@dataclass
class RealLiftedChannel:
    """单条链路的实值等效信道：G 为 2M×2，G_bar 为 2MN×2N"""
    G: np.ndarray
    G_bar: np.ndarray
    N: int


def _format_key(key: ChannelKey) -> str:
    k, j, l = key
    return f"(rx_cell={k + 1}, user={j + 1}, tx_cell={l + 1})"


# =========================
# 实值化与符号扩展
# =========================

def lift_complex_to_real(h) -> np.ndarray:
    """
    复信道向量 -> 实值等效矩阵

    第 m 个天线对应两行 [[Re h, -Im h], [Im h, Re h]]。

    Args:
        h: 长度为 M 的复向量

    Returns:
        np.ndarray: 形状 (2M, 2)

    Raises:
        InputError: 含非有限值
    """
    h = np.atleast_1d(np.asarray(h, dtype=complex)).ravel()
    if not np.all(np.isfinite(h)):
        raise InputError(f"信道向量含非有限值: {h}")

    G = np.empty((2 * h.size, 2))
    G[0::2, 0] = h.real
    G[0::2, 1] = -h.imag
    G[1::2, 0] = h.imag
    G[1::2, 1] = h.real
    return G


def extend(G: np.ndarray, N: int) -> np.ndarray:
    """
    符号扩展：返回 I_N ⊗ G

    Args:
        G: 实值信道矩阵 (2M, 2)
        N: 扩展长度

    Returns:
        np.ndarray: 形状 (2MN, 2N) 的块对角矩阵
    """
    if int(N) != N or N < 1:
        raise InputError(f"扩展长度 N 必须为 >= 1 的整数，当前为 {N}")
    return np.kron(np.eye(int(N)), np.asarray(G, dtype=float))


class LiftedNetwork:
    """
    一个 (场景, N) 组合下全部链路的实值等效信道

    下游的速率、下界、子问题都只从这里取 G_bar，避免重复计算。
    """

    def __init__(self, scenario: Scenario, N: int):
        if int(N) != N or N < 1:
            raise InputError(f"扩展长度 N 必须为 >= 1 的整数，当前为 {N}")
        self.scenario = scenario
        self.N = int(N)
        self.links: Dict[ChannelKey, RealLiftedChannel] = {}

        for key in scenario.channel_keys():
            G = lift_complex_to_real(scenario.channel_vector(*key))
            self.links[key] = RealLiftedChannel(G=G, G_bar=extend(G, self.N), N=self.N)

        logger.debug(f"完成实值化: 场景={scenario.name}, 链路数={len(self.links)}, N={self.N}")

    @property
    def rx_dim(self) -> int:
        """接收端实值维度 2MN"""
        return 2 * self.scenario.M * self.N

    @property
    def tx_dim(self) -> int:
        """发射协方差维度 2N"""
        return 2 * self.N

    @property
    def noise_variance(self) -> float:
        return self.scenario.noise_variance

    def users(self) -> List[User]:
        return self.scenario.users()

    def link(self, k: int, user: User) -> np.ndarray:
        """用户 user=(l, j) 到基站 k 的扩展信道 G_bar"""
        l, j = user
        return self.links[(k, j, l)].G_bar


# =========================
# 场景文件
# =========================

# 表格数据，键为从1开始的 (rx_cell, user, tx_cell)，值为 M=2 时的 (幅度, 相位)
_TABLE_DIRECT = {
    (1, 1, 1): ((3.2, -0.72), (2.9, 0.12)),
    (1, 2, 1): ((2.3, 2.52), (3.0, -1.32)),
    (2, 1, 2): ((3.4, 2.23), (3.1, 0.32)),
    (2, 2, 2): ((3.0, -1.13), (2.9, 0.45)),
}

_TABLE_CROSS_MODERATE = {
    (1, 1, 2): ((1.6, 1.35), (1.45, 1.23)),
    (1, 2, 2): ((1.15, 0.37), (1.5, 2.11)),
    (2, 1, 1): ((1.7, 1.68), (1.55, 0.91)),
    (2, 2, 1): ((1.5, -0.76), (1.45, -2.13)),
}

_TABLE_CROSS_STRONG = {
    (1, 1, 2): ((2.9, 1.35), (2.7, 1.23)),
    (1, 2, 2): ((2.5, 0.37), (3.1, 2.11)),
    (2, 1, 1): ((3.2, 1.68), (2.7, 0.91)),
    (2, 2, 1): ((3.1, -0.76), (2.4, -2.13)),
}


def _zero_based(table: Mapping[ChannelKey, Tuple[Entry, ...]]) -> Dict[ChannelKey, Tuple[Entry, ...]]:
    return {(k - 1, j - 1, l - 1): entries for (k, j, l), entries in table.items()}


def builtin_scenarios(M: int = 2) -> Dict[str, Scenario]:
    """
    内置场景：中等干扰 "mi" 与强干扰 "si"

    两个小区、每小区2个用户、噪声方差1。"si" 沿用 "mi" 的直连信道，只替换4条跨小区信道。
    M=1 时取每个向量的第一个元素。

    Args:
        M: 基站天线数（1 或 2）

    Returns:
        Dict[str, Scenario]: {"mi": ..., "si": ...}
    """
    if M not in (1, 2):
        raise ScenarioError(f"内置场景只支持 M=1 或 M=2，当前为 {M}")

    tables = {
        "mi": {**_TABLE_DIRECT, **_TABLE_CROSS_MODERATE},
        "si": {**_TABLE_DIRECT, **_TABLE_CROSS_STRONG},
    }
    scenarios = {}
    for name, table in tables.items():
        scenarios[name] = Scenario(
            K=2,
            users_per_cell=(2, 2),
            M=2,
            noise_variance=1.0,
            channels=_zero_based(table),
            name=name,
        ).truncated(M)
    return scenarios


def _require(mapping: Mapping, key: str, where: str = ""):
    if not isinstance(mapping, Mapping) or key not in mapping:
        raise ScenarioError(f"场景文件缺少字段 '{where}{key}'")
    return mapping[key]


def parse_scenario(document: Union[str, bytes], name: str = "custom") -> Scenario:
    """
    解析JSON场景文档

    Args:
        document: JSON文本或字节
        name: 场景名

    Returns:
        Scenario: 通过校验的场景
    """
    try:
        if isinstance(document, (bytes, bytearray)):
            document = document.decode("utf-8")
        data = json.loads(document)
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ScenarioError(f"场景文件不是合法的JSON: {e}") from e

    K = _require(data, "K")
    users_per_cell = _require(data, "users_per_cell")
    M = _require(data, "M")
    noise_variance = _require(data, "noise_variance")
    records = _require(data, "channels")

    if not isinstance(users_per_cell, list):
        raise ScenarioError("字段 'users_per_cell' 必须是数组")
    if not isinstance(records, list):
        raise ScenarioError("字段 'channels' 必须是数组")

    channels: Dict[ChannelKey, Tuple[Entry, ...]] = {}
    for idx, record in enumerate(records):
        where = f"channels[{idx}]."
        try:
            key = (
                int(_require(record, "rx_cell", where)) - 1,
                int(_require(record, "user", where)) - 1,
                int(_require(record, "tx_cell", where)) - 1,
            )
            entries = tuple(
                (float(_require(e, "mag", f"{where}entries[{n}].")), float(_require(e, "phase", f"{where}entries[{n}].")))
                for n, e in enumerate(_require(record, "entries", where))
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, ScenarioError):
                raise
            raise ScenarioError(f"{where[:-1]} 字段类型错误: {e}") from e
        if key in channels:
            raise ScenarioError(f"重复的信道条目 {_format_key(key)}")
        channels[key] = entries

    try:
        scenario = Scenario(
            K=int(K),
            users_per_cell=tuple(int(u) for u in users_per_cell),
            M=int(M),
            noise_variance=float(noise_variance),
            channels=channels,
            name=str(data.get("name", name)),
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, ScenarioError):
            raise
        raise ScenarioError(f"场景字段类型错误: {e}") from e
    return scenario


def load_scenario(source: Union[str, Path, bytes, IO], antennas: Optional[int] = None) -> Scenario:
    """
    加载场景

    Args:
        source: "builtin:mi" / "builtin:si"、文件路径、JSON字节或可读的文件对象
        antennas: 基站天线数；给定时截断信道向量（内置场景默认 M=2）

    Returns:
        Scenario: 通过校验的场景

    Raises:
        ScenarioError: 未知内置场景、文件不可读、解析或校验失败
    """
    if isinstance(source, str) and source.startswith(BUILTIN_PREFIX):
        name = source[len(BUILTIN_PREFIX):]
        scenarios = builtin_scenarios(antennas or 2)
        if name not in scenarios:
            raise ScenarioError(f"未知的内置场景 '{source}'，可选: {[BUILTIN_PREFIX + n for n in scenarios]}")
        logger.info(f"加载内置场景 {name}, M={antennas or 2}")
        return scenarios[name]

    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.exists():
            raise ScenarioError(f"场景文件 {path} 不存在")
        scenario = parse_scenario(path.read_bytes(), name=path.stem)
    elif isinstance(source, (bytes, bytearray)):
        scenario = parse_scenario(source)
    elif hasattr(source, "read"):
        scenario = parse_scenario(source.read())
    else:
        raise ScenarioError(f"无法识别的场景来源类型: {type(source).__name__}")

    if antennas is not None:
        scenario = scenario.truncated(antennas)
    logger.info(f"加载场景 {scenario.name}: K={scenario.K}, 用户={list(scenario.users_per_cell)}, M={scenario.M}")
    return scenario


def dump_scenario(scenario: Scenario) -> str:
    """序列化为场景JSON（从1开始的下标），重新加载可逐位复现幅度和相位"""
    records = [
        {
            "rx_cell": k + 1,
            "user": j + 1,
            "tx_cell": l + 1,
            "entries": [{"mag": mag, "phase": phase} for mag, phase in scenario.channels[(k, j, l)]],
        }
        for (k, j, l) in scenario.channel_keys()
    ]
    return json.dumps(
        {
            "name": scenario.name,
            "K": scenario.K,
            "users_per_cell": list(scenario.users_per_cell),
            "M": scenario.M,
            "noise_variance": scenario.noise_variance,
            "channels": records,
        },
        ensure_ascii=False,
        indent=2,
    )
