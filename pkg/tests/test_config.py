"""
配置测试
"""

import pytest

from config import DEFAULT_CONFIG, IMACConfig


def test_defaults_build_solver_options():
    opts = DEFAULT_CONFIG.solver_options()
    assert opts.epsilon == 1e-5
    assert opts.retry_budget == 3
    assert opts.barrier.mu_factor == 10.0
    assert opts.barrier.gap_tol == 1e-8
    assert (opts.improper_starts, opts.random_starts, opts.seed) == (4, 2, 0)


def test_start_options_from_env(monkeypatch):
    monkeypatch.setenv("IMAC_IMPROPER_STARTS", "6")
    monkeypatch.setenv("IMAC_START_SEED", "7")
    opts = IMACConfig.from_env().solver_options()
    assert (opts.improper_starts, opts.seed) == (6, 7)


def test_dict_round_trip():
    config = IMACConfig(epsilon=1e-6, sweep_workers=4, log_level="debug")
    assert config.log_level == "DEBUG"
    assert IMACConfig.from_dict(config.to_dict()) == config


def test_from_env(monkeypatch):
    monkeypatch.setenv("IMAC_EPSILON", "1e-7")
    monkeypatch.setenv("IMAC_SWEEP_WORKERS", "3")
    monkeypatch.setenv("IMAC_DEFAULT_SCENARIO", "builtin:si")
    config = IMACConfig.from_env()
    assert config.epsilon == 1e-7
    assert config.sweep_workers == 3
    assert config.default_scenario == "builtin:si"
    assert config.solver_options().epsilon == 1e-7


def test_from_env_rejects_garbage(monkeypatch):
    monkeypatch.setenv("IMAC_MAX_OUTER_ITERATIONS", "many")
    with pytest.raises(ValueError, match="IMAC_MAX_OUTER_ITERATIONS"):
        IMACConfig.from_env()


def test_invalid_values():
    with pytest.raises(ValueError):
        IMACConfig(default_budget=0.0)
    with pytest.raises(ValueError):
        IMACConfig(sweep_workers=0)
