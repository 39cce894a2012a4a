"""
缓存管理模块 - 复用已经算过的求解结果

=== 这个模块是做什么的？ ===
一次 SCA 求解要跑几十到上百个子问题，扫描和 Web 服务里经常重复请求同一个点
（同一场景、同一信号方式、同一需求）。求解是确定性的，结果可以直接复用。

=== 缓存键 ===
场景指纹 + 信号方式 + N + 按用户排序的需求/预算 + 求解参数，规范化成JSON后取MD5。
浮点数用 repr 保证不同的数值不会撞到同一个键。

=== 缓存策略 ===
1. LRU淘汰：最久未使用的结果优先删除
2. TTL过期：结果有过期时间
3. 命中率统计

=== 使用示例 ===
cache = get_cache_manager()
result = cache.get(scenario, config, opts)
if result is None:
    result = minimize_sum_power(scenario, config, opts)
    cache.set(scenario, config, opts, result)
"""

import hashlib
import json
import logging
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from .channel import Scenario
from .sca import SignalingConfig, SolverOptions, SolveResult

logger = logging.getLogger(__name__)


@dataclass
class CacheEntry:
    """缓存条目"""
    label: str
    result: SolveResult
    created_at: float
    hit_count: int = 0
    metadata: Dict[str, Any] = field(default_factory=dict)


class ResultCache:
    """
    求解结果缓存

    - LRU（最近最少使用）淘汰
    - TTL（过期时间）
    - 命中率统计

    返回的 SolveResult 与缓存共享同一对象，调用方不要修改它。
    """

    def __init__(
        self,
        max_size: int = 512,  # 缓存最大条目数
        ttl: int = 3600,      # 过期时间（秒）
    ):
        if max_size < 1:
            raise ValueError("max_size 必须 >= 1")
        self.max_size = max_size
        self.ttl = ttl

        self._cache: OrderedDict[str, CacheEntry] = OrderedDict()
        self._lock = threading.RLock()

        self._stats = {
            "hits": 0,
            "misses": 0,
            "sets": 0,
            "evictions": 0,  # LRU+过期
        }

    # =========================
    # 内部方法
    # =========================

    @staticmethod
    def make_key(scenario: Scenario, config: SignalingConfig, opts: SolverOptions) -> str:
        users = scenario.users()
        payload = {
            "scenario": scenario.fingerprint(),
            "mode": config.mode.value,
            "N": config.N,
            "demands": [repr(v) for v in (config.demand_map(scenario)[u] for u in users)],
            "budgets": [repr(v) for v in (config.budget_map(scenario)[u] for u in users)],
            "options": opts.to_dict(),
        }
        normalized = json.dumps(payload, sort_keys=True, default=repr)
        return hashlib.md5(normalized.encode("utf-8")).hexdigest()

    @staticmethod
    def _label(scenario: Scenario, config: SignalingConfig) -> str:
        return f"{scenario.name}/{config.mode.value}:{config.N}/ψ={config.demands}"

    def _is_expired(self, entry: CacheEntry) -> bool:
        return (time.time() - entry.created_at) > self.ttl

    # =========================
    # 核心接口
    # =========================

    def get(self, scenario: Scenario, config: SignalingConfig, opts: SolverOptions) -> Optional[SolveResult]:
        """获取缓存结果，未命中或已过期返回 None"""
        key = self.make_key(scenario, config, opts)
        with self._lock:
            entry = self._cache.get(key)

            if entry is None:
                self._stats["misses"] += 1
                return None

            if self._is_expired(entry):
                del self._cache[key]
                self._stats["misses"] += 1
                self._stats["evictions"] += 1
                logger.debug(f"缓存已过期：{entry.label}")
                return None

            self._cache.move_to_end(key)
            entry.hit_count += 1
            self._stats["hits"] += 1
            logger.debug(f"缓存命中：{entry.label}（命中次数：{entry.hit_count}）")
            return entry.result

    def set(
        self,
        scenario: Scenario,
        config: SignalingConfig,
        opts: SolverOptions,
        result: SolveResult,
        metadata: Optional[Dict[str, Any]] = None,
    ) -> str:
        """写入缓存，返回缓存键"""
        key = self.make_key(scenario, config, opts)
        with self._lock:
            if key in self._cache:
                del self._cache[key]

            self._cache[key] = CacheEntry(
                label=self._label(scenario, config),
                result=result,
                created_at=time.time(),
                metadata=metadata or {},
            )
            self._stats["sets"] += 1

            while len(self._cache) > self.max_size:
                _, evicted = self._cache.popitem(last=False)
                self._stats["evictions"] += 1
                logger.info(f"LRU 淘汰缓存条目：{evicted.label}")

            return key

    def invalidate(self, scenario: Scenario, config: SignalingConfig, opts: SolverOptions) -> bool:
        """删除指定结果"""
        key = self.make_key(scenario, config, opts)
        with self._lock:
            if key in self._cache:
                del self._cache[key]
                return True
            return False

    def clear(self) -> int:
        """清空所有缓存"""
        with self._lock:
            count = len(self._cache)
            self._cache.clear()
            logger.info(f"已清空缓存：{count} 条")
            return count

    def cleanup_expired(self) -> int:
        """清理过期缓存"""
        with self._lock:
            expired_keys = [key for key, entry in self._cache.items() if self._is_expired(entry)]
            for key in expired_keys:
                del self._cache[key]
            if expired_keys:
                self._stats["evictions"] += len(expired_keys)
                logger.info(f"清理过期缓存：{len(expired_keys)} 条")
            return len(expired_keys)

    # =========================
    # 统计 & 查询
    # =========================

    def get_stats(self) -> Dict[str, Any]:
        """获取缓存统计信息"""
        with self._lock:
            total = self._stats["hits"] + self._stats["misses"]
            hit_rate = self._stats["hits"] / total if total else 0.0
            return {
                "size": len(self._cache),
                "max_size": self.max_size,
                "ttl": self.ttl,
                "total_requests": total,
                "hit_rate": round(hit_rate, 4),
                **self._stats,
            }

    def get_hot_entries(self, limit: int = 10) -> List[Dict[str, Any]]:
        """命中次数最多的求解点"""
        with self._lock:
            entries = sorted(self._cache.values(), key=lambda e: e.hit_count, reverse=True)[:limit]
            return [
                {"label": e.label, "hit_count": e.hit_count, "sum_power": e.result.sum_power}
                for e in entries
            ]


# =========================
# 全局实例
# =========================

_cache_manager: Optional[ResultCache] = None
_cache_lock = threading.Lock()


def get_cache_manager(max_size: int = 512, ttl: int = 3600) -> ResultCache:
    """
    获取全局结果缓存（单例模式）

    Args:
        max_size: 缓存最大条目数
        ttl: 过期时间（秒）

    Returns:
        全局单例 ResultCache；参数只在第一次调用时生效
    """
    global _cache_manager
    with _cache_lock:
        if _cache_manager is None:
            _cache_manager = ResultCache(max_size=max_size, ttl=ttl)
        return _cache_manager
