# mlcov/services/mlmc.py
"""
多层蒙特卡洛 (MLMC) 的层级组装: 伸缩求和、抽样误差、最优样本分配、
成本模型、预筛选速率回归与复杂度区间判定。
"""
import logging
import math
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from mlcov.core.exceptions import DegenerateFitError, DimensionMismatchError, DomainError
from mlcov.models import Regime, SymCovMatrix
from mlcov.schemas import ScreeningFit
from mlcov.utils import h_statistics as hs
from mlcov.utils.common_utils import dimension_from_vech, unvech
from mlcov.utils.power_sums import PowerSums1, PowerSums2, PowerSums4

logger = logging.getLogger(__name__)

MIN_SAMPLES = 4
REGIME_TOLERANCE = 0.1
CEIL_RTOL = 1e-14


def _ceil(x) -> np.ndarray:
    # 相对容差只吸收商的舍入误差 (约数个 ulp)，真正超出整数的部分仍然进位
    return np.ceil(np.asarray(x, dtype=float) * (1 - CEIL_RTOL)).astype(np.int64)


def _as_matrix(vectors: Sequence) -> np.ndarray:
    if len(vectors) == 0:
        raise DimensionMismatchError("至少需要一个层级")
    arrays = [np.atleast_1d(np.asarray(v, dtype=float)) for v in vectors]
    size = arrays[0].shape
    for l, a in enumerate(arrays):
        if a.shape != size:
            raise DimensionMismatchError(f"第 {l} 层的 vech 形状 {a.shape} 与第 0 层 {size} 不一致")
    return np.stack(arrays)


# --- 估计量组装 ---

def telescope(level_contributions: Sequence) -> SymCovMatrix:
    """各层 vech 贡献逐元素求和。结果对称，但不一定半正定。"""
    stacked = _as_matrix(level_contributions)
    total = stacked.sum(axis=0)
    return unvech(total, dimension_from_vech(total.size))


def level_terms(cov: PowerSums2 | PowerSums4) -> Tuple[np.ndarray, np.ndarray]:
    """
    单层的 (Z_l, V̂_{l,1,1}) vech。第 0 层累加器为二元 (u_i, u_j)，
    其余层为四元 (细_i, 细_j, 粗_i, 粗_j)。V̂ = N_l·V̂ar(Z_l)，无偏，可能为负。
    """
    n = cov.n
    if isinstance(cov, PowerSums4):
        return np.asarray(hs.z_l(cov)), n * np.asarray(hs.var_zl_unbiased(cov))
    return np.asarray(hs.h11(cov)), n * np.asarray(hs.var_h11_unbiased(cov))


def classical_level_variance(plus: PowerSums1, minus: PowerSums1, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """经典估计量的 V̂_{l,cov} = N_l·(最坏情形方差界)，按 vech 下标 (rows, cols) 展开。"""
    n = plus.n
    bound = hs.classical_level_bound(plus.subset(rows), minus.subset(rows), plus.subset(cols), minus.subset(cols), n)
    return n * np.asarray(bound)


def mlmc_mean(level_differences: Sequence[PowerSums1]) -> Tuple[np.ndarray, np.ndarray]:
    """
    均值的 MLMC 估计 Σ_l mean(Y_l) 及其抽样误差 Σ_l ĥ₂(Y_l)/N_l。
    Y_0 为第 0 层的解本身。
    """
    if not level_differences:
        raise DimensionMismatchError("至少需要一个层级")
    value = sum(np.asarray(ps.mean()) for ps in level_differences)
    error = sum(np.asarray(hs.h2(ps)) / ps.n for ps in level_differences)
    return value, error


def mlmc_variance_h2(level_plus_minus: Sequence[PowerSums2]) -> Tuple[np.ndarray, np.ndarray]:
    """
    方差的 MLMC 估计 Σ_l (ĥ₂(细) − ĥ₂(粗)) 及其抽样误差 Σ_l V_{l,2}/N_l。
    每层累加器保存 (X⁺, X⁻) = (细 + 粗, 细 − 粗)，第 0 层为 (u, u)。
    """
    if not level_plus_minus:
        raise DimensionMismatchError("至少需要一个层级")
    value = sum(np.asarray(hs.h11(ps)) for ps in level_plus_minus)
    error = sum(np.asarray(hs.v_level_variance(ps)) / ps.n for ps in level_plus_minus)
    return value, error


# --- 抽样误差与样本分配 ---

def sampling_error(v_vech_per_level: Sequence, n_l: Sequence[int]) -> float:
    """max over vech of Σ_l V̂_l / N_l。"""
    v = _as_matrix(v_vech_per_level)
    n = np.asarray(n_l, dtype=float)
    if n.shape != (v.shape[0],):
        raise DimensionMismatchError(f"样本数列表长度 {n.shape} 与层数 {v.shape[0]} 不一致")
    return float(np.max((v / n[:, np.newaxis]).sum(axis=0)))


def allocate_samples(eps2_half: float, v_vech_per_level: Sequence, cost_per_level: Sequence[float]) -> List[int]:
    """
    最优样本数 N_l = max_vech ceil(τ·√(V̂_l/C_l))，τ = Σ_l √(V̂_l·C_l) / (ε²/2) 逐元素计算。
    负的无偏方差估计先截断为 0；每层至少 4 个样本。
    """
    if not eps2_half > 0:
        raise DomainError(f"eps2_half 必须为正，收到 {eps2_half}")
    v = np.maximum(_as_matrix(v_vech_per_level), 0.0)
    c = np.asarray(cost_per_level, dtype=float)
    if c.shape != (v.shape[0],):
        raise DimensionMismatchError(f"成本列表长度 {c.shape} 与层数 {v.shape[0]} 不一致")
    if np.any(c <= 0) or not np.all(np.isfinite(c)):
        raise DomainError(f"每层成本必须为正，收到 {c.tolist()}")
    c = c[:, np.newaxis]
    tau = np.sqrt(v * c).sum(axis=0) / eps2_half
    per_entry = _ceil(tau * np.sqrt(v / c))
    n_l = np.maximum(per_entry.max(axis=1), MIN_SAMPLES)
    return [int(x) for x in n_l]


def mc_sample_count(eps2_half: float, v11_vech) -> int:
    """单层 MC 的样本数 max(ceil(V̂_{1,1}/(ε²/2)))，至少 4。"""
    if not eps2_half > 0:
        raise DomainError(f"eps2_half 必须为正，收到 {eps2_half}")
    v = np.maximum(np.atleast_1d(np.asarray(v11_vech, dtype=float)), 0.0)
    return max(int(_ceil(v / eps2_half).max()), MIN_SAMPLES)


def total_cost(n_l: Sequence[int], cost_per_sample: Sequence[float]) -> float:
    if len(n_l) != len(cost_per_sample):
        raise DimensionMismatchError(f"样本数 ({len(n_l)}) 与成本 ({len(cost_per_sample)}) 长度不一致")
    return float(sum(n * c for n, c in zip(n_l, cost_per_sample)))


# --- 预筛选回归 ---

class RateSample(NamedTuple):
    h: float
    max_abs_z: float
    max_v: float
    max_v_classical: float
    cost: float


def _loglog_fit(h: np.ndarray, y: np.ndarray, what: str) -> Tuple[float, float]:
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise DegenerateFitError(f"{what} 含非正值，无法做对数回归: {y.tolist()}")
    fit = stats.linregress(np.log(h), np.log(y))
    return float(fit.slope), float(np.exp(fit.intercept))


def classify_regime(beta: float, gamma: float, tolerance: float = REGIME_TOLERANCE) -> Regime:
    if abs(beta - gamma) < tolerance:
        return Regime.BETA_EQ_GAMMA
    return Regime.BETA_GT_GAMMA if beta > gamma else Regime.BETA_LT_GAMMA


def fit_rates(levels: Sequence[RateSample]) -> ScreeningFit:
    """
    对 l ≥ 1 的各层拟合
    max|vech Z_l| ≈ c_α h^α，max vech V̂_l ≈ c_β h^β，max vech V̂_{l,cov} ≈ c_β* h^β*，C_l ≈ c_γ h^−γ。
    第 0 层不参与 (其 V̂ 与 Z 不随 h 衰减)。
    """
    used = list(levels)[1:]
    if len(used) < 2:
        raise DegenerateFitError(f"速率拟合至少需要 2 个 l ≥ 1 的层级，当前只有 {len(used)} 个")
    h = np.array([s.h for s in used], dtype=float)
    if np.any(h <= 0) or np.ptp(h) == 0:
        raise DegenerateFitError(f"网格尺寸 h_l 全部相同或非正，无法拟合: {h.tolist()}")

    alpha, c_alpha = _loglog_fit(h, np.array([s.max_abs_z for s in used]), "max|vech(Z_l)|")
    beta, c_beta = _loglog_fit(h, np.array([s.max_v for s in used]), "max vech(V̂_l)")
    beta_star, c_beta_star = _loglog_fit(h, np.array([s.max_v_classical for s in used]), "max vech(V̂_l,cov)")
    neg_gamma, c_gamma = _loglog_fit(h, np.array([s.cost for s in used]), "C_l")
    gamma = -neg_gamma

    regime = classify_regime(beta, gamma)
    hypothesis = alpha >= min(beta, gamma) / 2
    logger.info(f"速率拟合: α={alpha:.3f}, β={beta:.3f}, β*={beta_star:.3f}, γ={gamma:.3f}, 区间 {regime.value}")
    if not hypothesis:
        logger.warning(f"α={alpha:.3f} < min(β, γ)/2={min(beta, gamma) / 2:.3f}，复杂度结论的前提不成立")
    return ScreeningFit(
        alpha=alpha, c_alpha=c_alpha, beta=beta, c_beta=c_beta,
        beta_star=beta_star, c_beta_star=c_beta_star, gamma=gamma, c_gamma=c_gamma,
        regime=regime, hypothesis_holds=bool(hypothesis),
    )


def complexity_bound(fit: ScreeningFit, eps: float) -> float:
    """总成本的渐近包络 (不含常数 c)。"""
    if not 0 < eps < math.exp(-1):
        raise DomainError(f"eps 必须位于 (0, 1/e)，收到 {eps}")
    if fit.regime == Regime.BETA_GT_GAMMA:
        return eps ** -2
    if fit.regime == Regime.BETA_EQ_GAMMA:
        return eps ** -2 * math.log(eps) ** 2
    return eps ** (-2 - (fit.gamma - fit.beta) / fit.alpha)


def deterministic_error_proxy(fine_vech, coarse_vech) -> float:
    fine = np.asarray(fine_vech, dtype=float)
    coarse = np.asarray(coarse_vech, dtype=float)
    if fine.shape != coarse.shape:
        raise DimensionMismatchError(f"两层 vech 形状不一致: {fine.shape} vs {coarse.shape}")
    return float(np.max(np.abs(fine - coarse), initial=0.0))


# --- 对比指标 ---

def relative_frobenius_difference(estimate: SymCovMatrix, reference: SymCovMatrix) -> float:
    a, b = estimate.to_full(), reference.to_full()
    if a.shape != b.shape:
        raise DimensionMismatchError(f"矩阵维度不一致: {a.shape} vs {b.shape}")
    norm = np.linalg.norm(b)
    if norm == 0:
        raise DomainError("参考矩阵为零矩阵，相对差无定义")
    return float(np.linalg.norm(a - b) / norm)


def relative_profile_difference(estimate, reference, mask: Optional[np.ndarray] = None) -> float:
    """max |a − b| / |b|，只在参考值非零 (或 mask 选中) 的位置上取。"""
    a = np.asarray(estimate, dtype=float)
    b = np.asarray(reference, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"剖面长度不一致: {a.shape} vs {b.shape}")
    if mask is None:
        mask = np.abs(b) > 0
    if not np.any(mask):
        raise DomainError("参考剖面全为零，相对差无定义")
    return float(np.max(np.abs(a[mask] - b[mask]) / np.abs(b[mask])))


def speedup(cost: float, reference_cost: float) -> float:
    if cost <= 0:
        raise DomainError(f"成本必须为正，收到 {cost}")
    return reference_cost / cost


def savings_percent(cost: float, reference_cost: float) -> float:
    if reference_cost <= 0:
        raise DomainError(f"参考成本必须为正，收到 {reference_cost}")
    return 100.0 * (1 - cost / reference_cost)
