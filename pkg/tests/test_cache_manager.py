"""
结果缓存测试
"""

import pytest

from imac_modules import (
    CovarianceSet,
    ResultCache,
    SignalingConfig,
    SolverOptions,
    SolveResult,
    SolveStatus,
    get_cache_manager,
)


def _result(scenario, power=0.0):
    Qset = CovarianceSet.isotropic({u: power for u in scenario.users()}, 1)
    return SolveResult(SolveStatus.CONVERGED, Qset, [power], {}, {}, 1)


@pytest.fixture
def opts():
    return SolverOptions()


def test_get_set_and_stats(mi1, opts):
    cache = ResultCache(max_size=4)
    config = SignalingConfig.uniform("igs", 1, 0.5)
    assert cache.get(mi1, config, opts) is None
    result = _result(mi1, 1.0)
    cache.set(mi1, config, opts, result)
    assert cache.get(mi1, config, opts) is result

    stats = cache.get_stats()
    assert stats["size"] == 1
    assert stats["hits"] == 1
    assert stats["misses"] == 1
    assert stats["sets"] == 1
    assert stats["total_requests"] == 2
    assert stats["hit_rate"] == 0.5


def test_key_sensitivity(mi1, si1, opts):
    base = ResultCache.make_key(mi1, SignalingConfig.uniform("igs", 1, 0.5), opts)
    assert base == ResultCache.make_key(mi1, SignalingConfig.uniform("igs", 1, 0.5), SolverOptions())
    variants = [
        ResultCache.make_key(si1, SignalingConfig.uniform("igs", 1, 0.5), opts),
        ResultCache.make_key(mi1, SignalingConfig.uniform("pgs", 1, 0.5), opts),
        ResultCache.make_key(mi1, SignalingConfig.uniform("igs", 2, 0.5), opts),
        ResultCache.make_key(mi1, SignalingConfig.uniform("igs", 1, 0.5 + 1e-12), opts),
        ResultCache.make_key(mi1, SignalingConfig.uniform("igs", 1, 0.5, budget=50.0), opts),
        ResultCache.make_key(mi1, SignalingConfig.uniform("igs", 1, 0.5), SolverOptions(epsilon=1e-6)),
    ]
    assert base not in variants
    assert len(set(variants)) == len(variants)


def test_lru_eviction(mi1, opts):
    cache = ResultCache(max_size=2)
    configs = [SignalingConfig.uniform("igs", 1, d) for d in (0.1, 0.2, 0.3)]
    cache.set(mi1, configs[0], opts, _result(mi1))
    cache.set(mi1, configs[1], opts, _result(mi1))
    cache.get(mi1, configs[0], opts)  # 0.1 变成最近使用
    cache.set(mi1, configs[2], opts, _result(mi1))

    assert cache.get(mi1, configs[1], opts) is None
    assert cache.get(mi1, configs[0], opts) is not None
    assert cache.get(mi1, configs[2], opts) is not None
    assert cache.get_stats()["evictions"] == 1


def test_ttl_expiry(mi1, opts):
    cache = ResultCache(ttl=-1)
    config = SignalingConfig.uniform("igs", 1, 0.5)
    cache.set(mi1, config, opts, _result(mi1))
    assert cache.get(mi1, config, opts) is None
    assert cache.get_stats()["size"] == 0

    cache.set(mi1, config, opts, _result(mi1))
    assert cache.cleanup_expired() == 1


def test_invalidate_clear_and_hot_entries(mi1, opts):
    cache = ResultCache()
    low = SignalingConfig.uniform("igs", 1, 0.1)
    high = SignalingConfig.uniform("igs", 1, 0.9)
    cache.set(mi1, low, opts, _result(mi1, 0.2))
    cache.set(mi1, high, opts, _result(mi1, 3.0))
    for _ in range(3):
        cache.get(mi1, high, opts)

    hot = cache.get_hot_entries(limit=1)
    assert hot[0]["hit_count"] == 3
    assert hot[0]["sum_power"] == pytest.approx(12.0)

    assert cache.invalidate(mi1, low, opts)
    assert not cache.invalidate(mi1, low, opts)
    assert cache.clear() == 1
    assert cache.get_stats()["size"] == 0


def test_rejects_bad_size():
    with pytest.raises(ValueError):
        ResultCache(max_size=0)


def test_singleton():
    assert get_cache_manager() is get_cache_manager(max_size=1)
