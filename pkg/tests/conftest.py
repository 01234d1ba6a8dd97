# tests/conftest.py
import numpy as np
import pytest

from mlcov.core.config import settings
from mlcov.schemas import RunConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    """测试默认单线程、小批次，需要并行的用例自行覆盖。"""
    monkeypatch.setattr(settings, "WORKERS", 1)
    monkeypatch.setattr(settings, "BATCH_SIZE", 64)


@pytest.fixture
def small_config(tmp_path) -> RunConfig:
    """缩小的层级 (E0=4, L=2)，整套流程在桌面规模内完成。"""
    return RunConfig(e0=4, levels=2, screening_samples=50, eps2_half=[2e-2], out_dir=str(tmp_path / "reports"))


@pytest.fixture
def correlated_pairs(rng):
    x = rng.normal(size=40)
    y = 0.5 * x + rng.normal(size=40) + 0.2 * x ** 2
    return np.column_stack([x, y])


@pytest.fixture
def quadruples(rng):
    g = rng.normal(size=30)
    h = 0.4 * g + rng.normal(size=30)
    return np.column_stack([g, h, g + 0.1 * g ** 2 + 0.05 * rng.normal(size=30), h - 0.1 * h ** 2])
