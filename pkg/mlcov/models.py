# mlcov/models.py
import enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from mlcov.core.exceptions import DimensionMismatchError, DomainError


class EstimatorKind(str, enum.Enum):
    HSTAT_MLMC = "hstat-mlmc"
    CLASSICAL_MLMC = "classical-mlmc"
    MC = "mc"


class CostModel(str, enum.Enum):
    SYNTHETIC = "synthetic"
    MEASURED = "measured"


class Regime(str, enum.Enum):
    BETA_GT_GAMMA = "beta>gamma"
    BETA_EQ_GAMMA = "beta=gamma"
    BETA_LT_GAMMA = "beta<gamma"


class KappaParameterization(str, enum.Enum):
    MOMENTS = "moments"  # kappa_mean / kappa_std 为 κ 自身的均值与标准差
    LOG = "log"          # kappa_mean / kappa_std 为 ln κ 的均值与标准差


@dataclass(frozen=True)
class CentralMoments2:
    """二元总体中心矩 μ_{p,q}。"""
    mu11: float
    mu20: float
    mu02: float
    mu22: float

    def __post_init__(self):
        if self.mu20 < 0 or self.mu02 < 0:
            raise DomainError(f"二阶中心矩不能为负: μ20={self.mu20}, μ02={self.mu02}")
        # Cauchy–Schwarz, 允许舍入误差
        if self.mu11 ** 2 > self.mu20 * self.mu02 * (1 + 1e-12) + 1e-300:
            raise DomainError("μ11² 超过 μ20·μ02，不满足 Cauchy–Schwarz 不等式")


QUADRIVARIATE_MOMENT_INDICES: Tuple[Tuple[int, int, int, int], ...] = (
    (0, 0, 1, 1), (1, 1, 0, 0), (0, 0, 0, 2), (0, 0, 2, 0), (0, 0, 2, 2), (0, 2, 0, 0), (2, 0, 0, 0),
    (2, 2, 0, 0), (1, 1, 1, 1), (0, 1, 1, 0), (1, 0, 0, 1), (0, 1, 0, 1), (1, 0, 1, 0),
)


@dataclass(frozen=True)
class CentralMoments4:
    """四元总体中心矩 μ_{p,q,r,s}，键为多重指标。"""
    moments: Dict[Tuple[int, int, int, int], float]

    def __post_init__(self):
        missing = [idx for idx in QUADRIVARIATE_MOMENT_INDICES if idx not in self.moments]
        if missing:
            raise DimensionMismatchError(f"缺少四元中心矩: {missing}")
        for idx in ((0, 0, 0, 2), (0, 0, 2, 0), (0, 2, 0, 0), (2, 0, 0, 0)):
            if self.moments[idx] < 0:
                raise DomainError(f"二阶中心矩 μ{idx} 不能为负")

    def mu(self, *index: int) -> float:
        return self.moments[tuple(index)]


@dataclass(frozen=True)
class HeatProblem:
    length: float = 1.0           # m
    flux: float = 5.0             # W/m
    boundary_temp: float = 273.0  # K
    kappa_mean: float = 0.1       # W/mK
    kappa_std: float = 0.03       # W/mK
    kappa_parameterization: KappaParameterization = KappaParameterization.MOMENTS

    def __post_init__(self):
        if self.length <= 0:
            raise DomainError(f"长度必须为正: {self.length}")
        if self.kappa_parameterization == KappaParameterization.MOMENTS and self.kappa_mean <= 0:
            raise DomainError(f"导热系数均值必须为正: {self.kappa_mean}")
        if self.kappa_std < 0:
            raise DomainError(f"导热系数标准差不能为负: {self.kappa_std}")


@dataclass(frozen=True, eq=False)
class MeshLevel:
    level: int
    elements: int
    nodes: np.ndarray = field(repr=False)

    @property
    def node_count(self) -> int:
        return self.elements + 1

    @property
    def h(self) -> float:
        return float(self.nodes[-1] - self.nodes[0]) / self.elements


@dataclass
class MeshHierarchy:
    problem: HeatProblem
    levels: List[MeshLevel]
    # 各层到最细网格的插值矩阵缓存
    _interpolation: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def finest_level(self) -> int:
        return len(self.levels) - 1

    @property
    def finest(self) -> MeshLevel:
        return self.levels[-1]

    def level(self, l: int) -> MeshLevel:
        if not 0 <= l < len(self.levels):
            raise DomainError(f"层级 {l} 超出范围 [0, {self.finest_level}]")
        return self.levels[l]


@dataclass(frozen=True, eq=False)
class LevelSamplePair:
    level: int
    kappa: float
    u_fine: np.ndarray = field(repr=False)
    u_coarse: Optional[np.ndarray] = field(default=None, repr=False)
    seed: Tuple[int, ...] = ()


@dataclass(frozen=True, eq=False)
class SymCovMatrix:
    """对称协方差矩阵，仅以 vech (按列的下三角) 存储。"""
    m: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        expected = self.m * (self.m + 1) // 2
        if np.shape(self.data) != (expected,):
            raise DimensionMismatchError(f"vech 长度应为 {expected}，实际为 {np.shape(self.data)}")

    def to_full(self) -> np.ndarray:
        cols, rows = np.triu_indices(self.m)
        full = np.zeros((self.m, self.m))
        full[rows, cols] = self.data
        full[cols, rows] = self.data
        return full

    def entry(self, i: int, j: int) -> float:
        return float(self.to_full()[i, j])
