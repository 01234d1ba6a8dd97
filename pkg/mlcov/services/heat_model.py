# mlcov/services/heat_model.py
"""
一维稳态随机热传导: −κ u″ = f，u(0) = u(L) = T_b，κ 为空间常数的对数正态随机变量。
嵌套网格 (h_{l−1} = 2h_l)、线性单元有限元求解、同种子耦合采样、插值到最细网格，
以及按层并行累加幂和。
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from mlcov.core.config import settings
from mlcov.core.exceptions import DomainError, InsufficientSamplesError
from mlcov.models import HeatProblem, KappaParameterization, LevelSamplePair, MeshHierarchy, MeshLevel
from mlcov.utils.common_utils import vech_indices
from mlcov.utils.power_sums import PowerSums1, PowerSums2, PowerSums4

logger = logging.getLogger(__name__)

# 随机数流编号: 估计阶段第 l 层用流 l，预筛选与单层 MC 各用独立的流
SCREENING_STREAM = 1_000
MC_STREAM = 2_000


# --- 网格 ---

def build_hierarchy(problem: HeatProblem, e0: int, levels: int) -> MeshHierarchy:
    if e0 < 2:
        raise DomainError(f"E0 至少为 2，收到 {e0}")
    if levels < 0:
        raise DomainError(f"L 不能为负，收到 {levels}")
    mesh_levels = []
    for l in range(levels + 1):
        elements = e0 * 2 ** l
        nodes = np.linspace(0.0, problem.length, elements + 1)
        mesh_levels.append(MeshLevel(level=l, elements=elements, nodes=nodes))
    return MeshHierarchy(problem=problem, levels=mesh_levels)


def interpolation_matrix(hierarchy: MeshHierarchy, from_level: int) -> np.ndarray:
    """第 from_level 层节点值到最细网格的线性插值矩阵 (按层缓存)。"""
    cached = hierarchy._interpolation.get(from_level)
    if cached is not None:
        return cached
    source = hierarchy.level(from_level).nodes
    target = hierarchy.finest.nodes
    # 逐列插值单位向量，得到 (M_L, M_l) 的矩阵
    identity = np.eye(source.size)
    matrix = np.column_stack([np.interp(target, source, identity[:, k]) for k in range(source.size)])
    hierarchy._interpolation[from_level] = matrix
    return matrix


def interpolate_to_finest(values, from_level: int, hierarchy: MeshHierarchy) -> np.ndarray:
    """values 形状为 (M_l,) 或 (B, M_l)。"""
    data = np.asarray(values, dtype=float)
    if from_level == hierarchy.finest_level:
        hierarchy.level(from_level)
        return data.copy()
    return data @ interpolation_matrix(hierarchy, from_level).T


# --- 随机导热系数 ---

def lognormal_parameters(problem: HeatProblem) -> Tuple[float, float]:
    """ln κ 的 (均值, 标准差)。"""
    if problem.kappa_parameterization == KappaParameterization.LOG:
        return problem.kappa_mean, problem.kappa_std
    sigma2 = math.log1p((problem.kappa_std / problem.kappa_mean) ** 2)
    return math.log(problem.kappa_mean) - sigma2 / 2, math.sqrt(sigma2)


def nominal_kappa(problem: HeatProblem) -> float:
    if problem.kappa_parameterization == KappaParameterization.LOG:
        return math.exp(problem.kappa_mean)
    return problem.kappa_mean


def kappa_from_normal(problem: HeatProblem, z):
    """把标准正态抽样映射为 κ；标准差为 0 时严格返回名义值。"""
    mu_ln, sigma_ln = lognormal_parameters(problem)
    z = np.asarray(z, dtype=float)
    if sigma_ln == 0:
        return np.full(z.shape, nominal_kappa(problem)) if z.ndim else nominal_kappa(problem)
    kappa = np.exp(mu_ln + sigma_ln * z)
    return kappa if z.ndim else float(kappa)


def sample_rng(run_seed: int, stream: int, k: int) -> np.random.Generator:
    """样本 k 的独立生成器，由 (run_seed, stream, k) 决定，与分片方式无关。"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([run_seed, stream, k])))


def sample_kappa(rng: np.random.Generator, problem: HeatProblem) -> float:
    return kappa_from_normal(problem, rng.standard_normal())


def _kappa_batch(problem: HeatProblem, run_seed: int, stream: int, start: int, stop: int) -> np.ndarray:
    return np.array([sample_kappa(sample_rng(run_seed, stream, k), problem) for k in range(start, stop)])


def inverse_kappa_moments(problem: HeatProblem) -> Tuple[float, float]:
    """1/κ 同为对数正态: 返回 (E[1/κ], Var(1/κ))。"""
    mu_ln, sigma_ln = lognormal_parameters(problem)
    mean = math.exp(-mu_ln + sigma_ln ** 2 / 2)
    return mean, mean ** 2 * math.expm1(sigma_ln ** 2)


# --- 求解 ---

def tdma(a, b, c, d) -> np.ndarray:
    """
    Thomas 算法。a 为下对角 (n−1)，b 为主对角 (n)，c 为上对角 (n−1)，d 为右端项 (n)。
    各数组的尾部维度可以带批量轴，整批一次前推回代。
    """
    b = np.asarray(b, dtype=float)
    d = np.asarray(d, dtype=float)
    a, c = np.asarray(a, dtype=float), np.asarray(c, dtype=float)
    n = d.shape[0]
    shape = np.broadcast_shapes(b.shape[1:], d.shape[1:], a.shape[1:], c.shape[1:])
    w = np.zeros((max(n - 1, 0),) + shape)
    g = np.zeros((n,) + shape)
    p = np.zeros((n,) + shape)

    denom = b[0]
    if n > 1:
        w[0] = c[0] / denom
    g[0] = d[0] / denom
    for i in range(1, n):
        denom = b[i] - a[i - 1] * w[i - 1]
        if i < n - 1:
            w[i] = c[i] / denom
        g[i] = (d[i] - a[i - 1] * g[i - 1]) / denom

    p[n - 1] = g[n - 1]
    for i in range(n - 1, 0, -1):
        p[i - 1] = g[i - 1] - w[i - 1] * p[i]
    return p


def solve_heat(mesh: MeshLevel, kappa, problem: Optional[HeatProblem] = None) -> np.ndarray:
    """
    线性单元有限元解。kappa 为标量时返回 (M,)；为长度 B 的数组时返回 (B, M)。
    常数 κ、常数 f 时节点值与解析解一致。
    """
    problem = problem or HeatProblem()
    kappas = np.asarray(kappa, dtype=float)
    scalar = kappas.ndim == 0
    kappas = np.atleast_1d(kappas)
    if np.any(kappas <= 0) or not np.all(np.isfinite(kappas)):
        raise DomainError(f"导热系数必须为正，收到最小值 {float(np.min(kappas))}")

    h = mesh.h
    interior = mesh.elements - 1
    batch = kappas.size
    u = np.full((batch, mesh.node_count), problem.boundary_temp, dtype=float)
    if interior > 0:
        # 齐次化: 求 w = u − T_b，刚度 κ/h·[−1, 2, −1]，载荷 f·h
        off = np.broadcast_to(-kappas / h, (interior - 1, batch))
        diag = np.broadcast_to(2 * kappas / h, (interior, batch))
        rhs = np.full((interior, batch), problem.flux * h)
        w = tdma(off, diag, off, rhs)
        u[:, 1:-1] += w.T
    return u[0] if scalar else u


def analytic_solution(problem: HeatProblem, x, kappa):
    x = np.asarray(x, dtype=float)
    return problem.boundary_temp + problem.flux * x * (problem.length - x) / (2 * kappa)


def analytic_mean(problem: HeatProblem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    inv_mean, _ = inverse_kappa_moments(problem)
    return problem.boundary_temp + problem.flux * x * (problem.length - x) / 2 * inv_mean


def analytic_covariance(problem: HeatProblem, x) -> np.ndarray:
    """cov(u_i, u_j) = f²/4 · x_i(L−x_i) · x_j(L−x_j) · Var(1/κ)。"""
    x = np.asarray(x, dtype=float)
    _, inv_var = inverse_kappa_moments(problem)
    shape = problem.flux * x * (problem.length - x) / 2
    return np.outer(shape, shape) * inv_var


def nominal_solution(hierarchy: MeshHierarchy) -> np.ndarray:
    """名义 κ 下最细网格的解，用作幂和累加的平移量。"""
    return solve_heat(hierarchy.finest, nominal_kappa(hierarchy.problem), hierarchy.problem)


def solve_coupled(hierarchy: MeshHierarchy, l: int, kappa,
                  coupled: bool = True) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """同一组 κ 分别在第 l 层与第 l−1 层求解 (强耦合)。κ 可以是标量或批量；第 0 层没有粗层。"""
    problem = hierarchy.problem
    u_fine = solve_heat(hierarchy.level(l), kappa, problem)
    u_coarse = solve_heat(hierarchy.level(l - 1), kappa, problem) if coupled and l > 0 else None
    return u_fine, u_coarse


def coupled_sample(hierarchy: MeshHierarchy, l: int, rng: np.random.Generator,
                   seed: Tuple[int, ...] = ()) -> LevelSamplePair:
    kappa = sample_kappa(rng, hierarchy.problem)
    u_fine, u_coarse = solve_coupled(hierarchy, l, kappa)
    return LevelSamplePair(level=l, kappa=kappa, u_fine=u_fine, u_coarse=u_coarse, seed=tuple(seed))


def level_batch(hierarchy: MeshHierarchy, l: int, run_seed: int, stream: int, start: int, stop: int,
                coupled: bool = True) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """
    样本 k ∈ [start, stop) 的 κ 与插值到最细网格的 (细, 粗) 解。
    第 k 行与 coupled_sample(hierarchy, l, sample_rng(run_seed, stream, k)) 插值后的结果一致。
    """
    kappas = _kappa_batch(hierarchy.problem, run_seed, stream, start, stop)
    u_fine, u_coarse = solve_coupled(hierarchy, l, kappas, coupled)
    u_fine = interpolate_to_finest(u_fine, l, hierarchy)
    if u_coarse is not None:
        u_coarse = interpolate_to_finest(u_coarse, l - 1, hierarchy)
    return kappas, u_fine, u_coarse


# --- 按层累加 ---

@dataclass
class LevelAccumulator:
    """
    单层的全部幂和:
      cov   第 0 层为 (u_i, u_j) 的 PowerSums2，其余层为 (细_i, 细_j, 粗_i, 粗_j) 的 PowerSums4，按 vech 展开；
      plus  X⁺ = 细 + 粗 (第 0 层为 u) 的逐节点 PowerSums1；
      minus X⁻ = 细 − 粗 (第 0 层为 u) 的逐节点 PowerSums1；
      pm    (X⁺, X⁻) 的逐节点 PowerSums2。
    """
    level: int
    rows: np.ndarray = field(repr=False)
    cols: np.ndarray = field(repr=False)
    cov: PowerSums2 | PowerSums4
    plus: PowerSums1
    minus: PowerSums1
    pm: PowerSums2
    elapsed: float = 0.0

    @property
    def n(self) -> int:
        return self.cov.n

    @property
    def coupled(self) -> bool:
        return isinstance(self.cov, PowerSums4)

    @property
    def measured_cost(self) -> float:
        """每个样本的平均墙钟时间 (秒)。"""
        if self.n == 0:
            raise InsufficientSamplesError(f"第 {self.level} 层还没有样本，无法测量成本")
        return self.elapsed / self.n

    def merge(self, other: "LevelAccumulator") -> "LevelAccumulator":
        return LevelAccumulator(
            level=self.level, rows=self.rows, cols=self.cols,
            cov=self.cov.merge(other.cov), plus=self.plus.merge(other.plus),
            minus=self.minus.merge(other.minus), pm=self.pm.merge(other.pm),
            elapsed=self.elapsed + other.elapsed,
        )


def empty_level_accumulator(hierarchy: MeshHierarchy, l: int, coupled: bool,
                            pairs: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> LevelAccumulator:
    hierarchy.level(l)
    m = hierarchy.finest.node_count
    rows, cols = pairs if pairs is not None else vech_indices(m)
    rows, cols = np.asarray(rows), np.asarray(cols)
    nom = nominal_solution(hierarchy)
    coupled = coupled and l > 0
    if coupled:
        cov = PowerSums4(shape=rows.size, shift=np.stack([nom[rows], nom[cols], nom[rows], nom[cols]]))
        plus_shift, minus_shift = 2 * nom, np.zeros(m)
    else:
        cov = PowerSums2(shape=rows.size, shift=np.stack([nom[rows], nom[cols]]))
        plus_shift, minus_shift = nom, nom
    return LevelAccumulator(
        level=l, rows=rows, cols=cols, cov=cov,
        plus=PowerSums1(shape=m, shift=plus_shift[np.newaxis]),
        minus=PowerSums1(shape=m, shift=minus_shift[np.newaxis]),
        pm=PowerSums2(shape=m, shift=np.stack([plus_shift, minus_shift])),
    )


def _accumulate_batch(hierarchy: MeshHierarchy, template: LevelAccumulator, run_seed: int, stream: int,
                      start: int, stop: int) -> LevelAccumulator:
    l = template.level
    began = time.perf_counter()
    _, u_fine, u_coarse = level_batch(hierarchy, l, run_seed, stream, start, stop, template.coupled)
    if u_coarse is not None:
        x_plus, x_minus = u_fine + u_coarse, u_fine - u_coarse
    else:
        x_plus = x_minus = u_fine
    elapsed = time.perf_counter() - began

    acc = LevelAccumulator(
        level=l, rows=template.rows, cols=template.cols,
        cov=template.cov.copy(), plus=template.plus.copy(), minus=template.minus.copy(),
        pm=template.pm.copy(), elapsed=elapsed,
    )
    rows, cols = template.rows, template.cols
    if u_coarse is not None:
        acc.cov.add_batch(u_fine[:, rows], u_fine[:, cols], u_coarse[:, rows], u_coarse[:, cols])
    else:
        acc.cov.add_batch(u_fine[:, rows], u_fine[:, cols])
    acc.plus.add_batch(x_plus)
    acc.minus.add_batch(x_minus)
    acc.pm.add_batch(x_plus, x_minus)
    logger.debug(f"第 {l} 层批次 [{start}, {stop}) 完成，用时 {elapsed * 1e3:.2f} ms")
    return acc


def generate_level_accumulators(hierarchy: MeshHierarchy, l: int, n: int, run_seed: int,
                                stream: Optional[int] = None, start: int = 0, coupled: bool = True,
                                pairs: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> LevelAccumulator:
    """
    生成第 l 层样本 k ∈ [start, start + n)，样本 k 的 κ 由 (run_seed, stream, k) 决定 (stream 默认为 l)。
    样本按固定批次分片交给线程池，结果按批次顺序合并，因此与线程数无关。
    coupled=False 时只在第 l 层求解 (单层 MC)。
    """
    if n < 4:
        raise InsufficientSamplesError(f"每层至少需要 4 个样本，收到 n={n}")
    stream = l if stream is None else stream
    template = empty_level_accumulator(hierarchy, l, coupled, pairs)
    bounds = [(b, min(b + settings.BATCH_SIZE, start + n)) for b in range(start, start + n, settings.BATCH_SIZE)]

    def run(bound):
        return _accumulate_batch(hierarchy, template, run_seed, stream, *bound)

    if settings.WORKERS > 1 and len(bounds) > 1:
        # 插值矩阵先在主线程建好
        interpolation_matrix(hierarchy, l)
        if l > 0:
            interpolation_matrix(hierarchy, l - 1)
        with ThreadPoolExecutor(max_workers=settings.WORKERS) as pool:
            parts: List[LevelAccumulator] = list(pool.map(run, bounds))
    else:
        parts = [run(bound) for bound in bounds]

    result = parts[0]
    for part in parts[1:]:
        result = result.merge(part)
    logger.info(f"第 {l} 层采样完成: 样本 [{start}, {start + n})，共 {len(bounds)} 个批次，用时 {result.elapsed:.3f} s")
    return result
