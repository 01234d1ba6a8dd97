# mlcov/services/oracle.py
"""
独立的真值机制: 离散分布上的穷举期望与高重复经验期望，
用于证明各 h-统计量及其方差估计的无偏性。
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Type

import numpy as np

from mlcov.core.config import settings
from mlcov.core.exceptions import (DimensionMismatchError, DomainError, EnumerationBudgetError)
from mlcov.models import QUADRIVARIATE_MOMENT_INDICES, CentralMoments2, CentralMoments4
from mlcov.schemas import OracleCheck, OracleReport
from mlcov.utils import h_statistics as hs
from mlcov.utils.power_sums import PowerSums, PowerSums1, PowerSums2, PowerSums4, from_samples

logger = logging.getLogger(__name__)

Statistic = Callable[[PowerSums], object]

_ACCUMULATOR_BY_DIM: Dict[int, Type[PowerSums]] = {1: PowerSums1, 2: PowerSums2, 4: PowerSums4}
_CHUNK = 65_536


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    atoms: np.ndarray
    probs: np.ndarray
    # 关闭后允许重复原子 (用于验证拆分原子的不变性)
    distinct: bool = field(default=True, repr=False)

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, np.newaxis]
        probs = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)
        if atoms.shape[1] not in _ACCUMULATOR_BY_DIM:
            raise DimensionMismatchError(f"原子维度必须为 1、2 或 4，收到 {atoms.shape[1]}")
        if probs.shape != (atoms.shape[0],):
            raise DimensionMismatchError(f"概率个数 {probs.shape} 与原子个数 {atoms.shape[0]} 不一致")
        if np.any(probs < 0):
            raise DomainError("概率不能为负")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise DomainError(f"概率之和应为 1，实际为 {probs.sum():.15g}")
        if self.distinct and np.unique(atoms, axis=0).shape[0] != atoms.shape[0]:
            raise DomainError("原子必须互不相同")

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    def means(self) -> np.ndarray:
        return self.probs @ self.atoms


# --- 总体矩 ---

def exact_central_moment(d: DiscreteDistribution, multi_index: Sequence[int]) -> float:
    index = tuple(multi_index)
    if len(index) != d.dim:
        raise DimensionMismatchError(f"多重指标长度 {len(index)} 与分布维度 {d.dim} 不一致")
    centred = d.atoms - d.means()
    terms = np.prod(centred ** np.asarray(index, dtype=float), axis=1)
    return float(d.probs @ terms)


def central_moments2(d: DiscreteDistribution) -> CentralMoments2:
    if d.dim != 2:
        raise DimensionMismatchError(f"需要二元分布，收到维度 {d.dim}")
    mu = lambda *idx: exact_central_moment(d, idx)  # noqa: E731
    return CentralMoments2(mu11=mu(1, 1), mu20=mu(2, 0), mu02=mu(0, 2), mu22=mu(2, 2))


def central_moments4(d: DiscreteDistribution) -> CentralMoments4:
    if d.dim != 4:
        raise DimensionMismatchError(f"需要四元分布，收到维度 {d.dim}")
    return CentralMoments4(moments={idx: exact_central_moment(d, idx) for idx in QUADRIVARIATE_MOMENT_INDICES})


# --- 穷举期望 ---

def exact_expectation(d: DiscreteDistribution, n: int, statistic: Statistic, cap: Optional[int] = None) -> float:
    """
    对全部 K^n 个有序样本组加权求和。每个分块的样本组向量化地放进 shape=(T,) 的累加器，
    分块结果按固定顺序归约。
    """
    cap = settings.ENUMERATION_CAP if cap is None else cap
    k = d.size
    total = k ** n
    if total > cap:
        raise EnumerationBudgetError(f"穷举规模 {k}^{n} = {total} 超过上限 {cap}")
    cls = _ACCUMULATOR_BY_DIM[d.dim]
    shift = d.means()[:, np.newaxis]
    powers = k ** np.arange(n - 1, -1, -1)
    partials: List[float] = []
    for begin in range(0, total, _CHUNK):
        codes = np.arange(begin, min(begin + _CHUNK, total))
        digits = (codes[:, np.newaxis] // powers) % k  # (T, n)
        weights = np.prod(d.probs[digits], axis=1)
        acc = cls(shape=codes.size, shift=shift)
        for i in range(n):
            values = d.atoms[digits[:, i]]  # (T, dim)
            acc.add(*[values[:, v] for v in range(d.dim)])
        stat = np.broadcast_to(np.asarray(statistic(acc), dtype=float), (codes.size,))
        partials.append(float(weights @ stat))
    return math.fsum(partials)


def exact_variance(d: DiscreteDistribution, n: int, statistic: Statistic, cap: Optional[int] = None) -> float:
    """Var(statistic) = E[stat²] − E[stat]²。"""
    mean = exact_expectation(d, n, statistic, cap)
    second = exact_expectation(d, n, lambda acc: np.asarray(statistic(acc)) ** 2, cap)
    return second - mean ** 2


# --- 重复抽样期望 ---

def replicated_expectation(source: Callable[[int], PowerSums], replications: int,
                           statistic: Statistic) -> Tuple[np.ndarray, np.ndarray]:
    """
    source(r) 返回第 r 次重复的累加器 (各自独立抽样)，返回 statistic 的 (均值, 标准误)。
    """
    if replications < 100:
        raise DomainError(f"重复次数至少为 100，收到 {replications}")

    def run(r: int):
        return np.asarray(statistic(source(r)), dtype=float)

    if settings.WORKERS > 1:
        with ThreadPoolExecutor(max_workers=settings.WORKERS) as pool:
            values = np.stack(list(pool.map(run, range(replications))))
    else:
        values = np.stack([run(r) for r in range(replications)])
    mean = values.mean(axis=0)
    stderr = values.std(axis=0, ddof=1) / math.sqrt(replications)
    return mean, stderr


# --- 默认测试分布 ---

def univariate_fixture() -> DiscreteDistribution:
    return DiscreteDistribution(atoms=[0.0, 1.0, 3.0], probs=[0.5, 0.3, 0.2])


def bivariate_fixture() -> DiscreteDistribution:
    return DiscreteDistribution(atoms=[(0.0, 0.0), (1.0, 2.0), (2.0, 1.0)], probs=[0.5, 0.3, 0.2])


def quadrivariate_fixture() -> DiscreteDistribution:
    """(g, h) 取自二元分布，(i, j) = (g + 0.1g², h − 0.1h²)，各交叉矩均非零。"""
    base = bivariate_fixture()
    g, h = base.atoms[:, 0], base.atoms[:, 1]
    atoms = np.column_stack([g, h, g + 0.1 * g ** 2, h - 0.1 * h ** 2])
    return DiscreteDistribution(atoms=atoms, probs=base.probs)


# --- 认证套件 ---

DEFAULT_STATISTICS: Dict[str, Callable] = {
    "h2": hs.h2,
    "h4": hs.h4,
    "polyache22": hs.polyache22,
    "var_h2_plugin": hs.var_h2_plugin,
    "h11": hs.h11,
    "h22": hs.h22,
    "var_h11_unbiased": hs.var_h11_unbiased,
    "var_h11_ansatz": hs.var_h11_ansatz,
    "var_h11_analytic": hs.var_h11_analytic,
    "z_l": hs.z_l,
    "h1111": hs.h1111,
    "var_zl_unbiased": hs.var_zl_unbiased,
    "var_zl_ansatz": hs.var_zl_ansatz,
    "var_zl_analytic": hs.var_zl_analytic,
}

TOLERANCE = 1e-10


def _check(name: str, method: str, expected: float, actual: float,
           tolerance: float = TOLERANCE, scale: float = 0.0) -> OracleCheck:
    expected, actual = float(expected), float(actual)
    scale = max(abs(expected), scale, 1e-300)
    rel = abs(actual - expected) / scale if math.isfinite(actual) else math.inf
    passed = rel <= tolerance
    if not passed:
        logger.warning(f"预言机检查 {name} 未通过: 期望 {expected:.12g}，实际 {actual:.12g}，相对误差 {rel:.3e}")
    return OracleCheck(name=name, method=method, expected=expected, actual=actual,
                       rel_error=rel, tolerance=tolerance, passed=passed)


def _route_check(name: str, closed: Callable, ansatz: Callable, dim: int, datasets: int, seed: int) -> OracleCheck:
    """闭式幂和多项式与拟设形式在随机数据集上的一致性，报告最差的一组。"""
    rng = np.random.default_rng(seed)
    cls = _ACCUMULATOR_BY_DIM[dim]
    worst = (0.0, 0.0, 0.0, -1.0)
    for _ in range(datasets):
        n = int(rng.integers(4, 51))
        base = rng.normal(size=(n, 2))
        if dim == 4:
            noise = 0.3 * rng.normal(size=(n, 2))
            samples = np.column_stack([base, base + noise + 0.2 * base ** 2])
        else:
            samples = np.column_stack([base[:, 0], 0.6 * base[:, 0] + base[:, 1] + 0.3 * base[:, 1] ** 2])
        ps = from_samples(cls, samples)
        a, b = float(closed(ps)), float(ansatz(ps))
        # 以方差乘积的量级为尺度，避免估计值恰好接近 0 时相对误差失真
        scale = max(abs(float(hs.cross_h11(ps, v, v))) for v in range(dim)) ** 2 / n
        rel = abs(a - b) / max(abs(b), scale, 1e-300)
        if rel > worst[3]:
            worst = (b, a, scale, rel)
    return _check(name, "route", worst[0], worst[1], scale=worst[2])


def run_certification(overrides: Optional[Dict[str, Callable]] = None, n: int = 4,
                      route_datasets: int = 100, seed: int = 7) -> OracleReport:
    """
    完整的认证表。overrides 可替换任意被检统计量 (用于变异测试)。
    """
    impl = {**DEFAULT_STATISTICS, **(overrides or {})}
    unknown = set(overrides or {}) - set(DEFAULT_STATISTICS)
    if unknown:
        raise DomainError(f"未知的统计量名称: {sorted(unknown)}")
    began = time.perf_counter()
    checks: List[OracleCheck] = []

    uni = univariate_fixture()
    mu2 = exact_central_moment(uni, (2,))
    checks.append(_check("h2", "enumeration", mu2, exact_expectation(uni, n, impl["h2"])))
    checks.append(_check("h4", "enumeration", exact_central_moment(uni, (4,)), exact_expectation(uni, n, impl["h4"])))
    checks.append(_check("polyache22", "enumeration", mu2 ** 2, exact_expectation(uni, n, impl["polyache22"])))
    checks.append(_check("var_h2_plugin", "enumeration", exact_variance(uni, n, hs.h2),
                         exact_expectation(uni, n, impl["var_h2_plugin"])))

    bi = bivariate_fixture()
    m2 = central_moments2(bi)
    var_h11 = exact_variance(bi, n, hs.h11)
    checks.append(_check("h11", "enumeration", m2.mu11, exact_expectation(bi, n, impl["h11"])))
    checks.append(_check("h22", "enumeration", m2.mu22, exact_expectation(bi, n, impl["h22"])))
    checks.append(_check("var_h11_unbiased", "enumeration", var_h11, exact_expectation(bi, n, impl["var_h11_unbiased"])))
    checks.append(_check("var_h11_analytic", "analytic", var_h11, impl["var_h11_analytic"](m2, n)))

    quad = quadrivariate_fixture()
    m4 = central_moments4(quad)
    var_z = exact_variance(quad, n, hs.z_l)
    checks.append(_check("z_l", "enumeration", m4.mu(1, 1, 0, 0) - m4.mu(0, 0, 1, 1),
                         exact_expectation(quad, n, impl["z_l"])))
    checks.append(_check("h1111", "enumeration", m4.mu(1, 1, 1, 1), exact_expectation(quad, n, impl["h1111"])))
    checks.append(_check("var_zl_unbiased", "enumeration", var_z, exact_expectation(quad, n, impl["var_zl_unbiased"])))
    checks.append(_check("var_zl_analytic", "analytic", var_z, impl["var_zl_analytic"](m4, n)))

    checks.append(_route_check("var_h11_unbiased≡ansatz", impl["var_h11_unbiased"], impl["var_h11_ansatz"],
                               2, route_datasets, seed))
    checks.append(_route_check("var_zl_unbiased≡ansatz", impl["var_zl_unbiased"], impl["var_zl_ansatz"],
                               4, route_datasets, seed + 1))

    passed = all(c.passed for c in checks)
    elapsed = time.perf_counter() - began
    logger.info(f"预言机认证完成: {sum(c.passed for c in checks)}/{len(checks)} 项通过，用时 {elapsed:.2f} s")
    return OracleReport(checks=checks, passed=passed, elapsed_seconds=elapsed)
