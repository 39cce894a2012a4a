"""
测试公共夹具
"""

import os
import sys

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, _ROOT)

import numpy as np
import pytest

from imac_modules import CovarianceSet, LiftedNetwork, Scenario, builtin_scenarios

SCENARIO_DIR = os.path.join(_ROOT, "data", "scenarios")


def random_psd(rng: np.random.Generator, n: int, scale: float = 1.0, floor: float = 0.0) -> np.ndarray:
    """随机对称半正定矩阵；floor > 0 时最小特征值不低于 floor"""
    X = rng.standard_normal((n, n))
    M = scale * (X @ X.T) / n + floor * np.eye(n)
    return 0.5 * (M + M.T)


def random_qset(rng: np.random.Generator, network: LiftedNetwork, scale: float = 1.0, floor: float = 0.0) -> CovarianceSet:
    return CovarianceSet(
        Q={u: random_psd(rng, network.tx_dim, scale, floor) for u in network.users()},
        N=network.N,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def single_user():
    """K=1，单用户，M=1，|h|=1，σ²=1"""
    return Scenario(K=1, users_per_cell=(1,), M=1, noise_variance=1.0,
                    channels={(0, 0, 0): ((1.0, 0.0),)}, name="single")


@pytest.fixture
def one_cell_two_users():
    """单小区两个用户，用来检查小区内逐次解码的顺序"""
    return Scenario(
        K=1, users_per_cell=(2,), M=1, noise_variance=1.0,
        channels={(0, 0, 0): ((1.2, 0.3),), (0, 1, 0): ((0.8, -1.1),)},
        name="one_cell_two_users",
    )


@pytest.fixture
def two_cell():
    """两小区、每小区一个用户、M=1，信道取内置中等干扰表格"""
    return Scenario(
        K=2, users_per_cell=(1, 1), M=1, noise_variance=1.0,
        channels={
            (0, 0, 0): ((3.2, -0.72),),
            (0, 0, 1): ((1.6, 1.35),),
            (1, 0, 0): ((1.7, 1.68),),
            (1, 0, 1): ((3.4, 2.23),),
        },
        name="two_cell",
    )


@pytest.fixture
def mi1():
    return builtin_scenarios(1)["mi"]


@pytest.fixture
def si1():
    return builtin_scenarios(1)["si"]


@pytest.fixture
def scenario_dir():
    return SCENARIO_DIR
