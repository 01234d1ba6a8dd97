# mlcov/utils/common_utils.py
# 协方差矩阵的半向量化 (vech) 与半正定修复
import logging
from typing import Tuple

import numpy as np

from mlcov.core.exceptions import DimensionMismatchError, EigenSolverError
from mlcov.models import SymCovMatrix

logger = logging.getLogger(__name__)

PSD_RTOL = 1e-12


def vech_indices(m: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    vech 顺序 (按列的下三角: H11..HM1, H22..HM2, ...) 对应的 (行, 列) 下标。
    numpy 的 triu_indices 按行枚举上三角，交换角色后正好是按列枚举下三角。
    """
    cols, rows = np.triu_indices(m)
    return rows, cols


def vech_size(m: int) -> int:
    return m * (m + 1) // 2


def dimension_from_vech(length: int) -> int:
    m = int((np.sqrt(8 * length + 1) - 1) / 2)
    if vech_size(m) != length:
        raise DimensionMismatchError(f"长度 {length} 不是任何 m 的 m(m+1)/2")
    return m


def vech(full) -> np.ndarray:
    a = np.asarray(full, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatchError(f"vech 需要方阵，收到形状 {a.shape}")
    if not np.allclose(a, a.T, rtol=1e-12, atol=1e-12 * max(1.0, float(np.max(np.abs(a), initial=0.0)))):
        raise DimensionMismatchError("vech 的输入矩阵不对称")
    rows, cols = vech_indices(a.shape[0])
    return a[rows, cols].copy()


def unvech(v, m: int) -> SymCovMatrix:
    data = np.asarray(v, dtype=float)
    if data.shape != (vech_size(m),):
        raise DimensionMismatchError(f"m={m} 的 vech 长度应为 {vech_size(m)}，实际为 {data.shape}")
    return SymCovMatrix(m=m, data=data.copy())


def _eigh(full: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if not np.all(np.isfinite(full)):
        raise EigenSolverError("矩阵含非有限元素，无法做特征分解")
    try:
        return np.linalg.eigh(full)
    except np.linalg.LinAlgError as e:
        raise EigenSolverError(f"特征分解失败: {e}") from e


def is_psd(m: SymCovMatrix, tol: float = PSD_RTOL) -> bool:
    """最小特征值不低于 −tol·max(1, max|λ|) 即视为半正定，奇异矩阵也算。"""
    eigvals, _ = _eigh(m.to_full())
    scale = max(1.0, float(np.max(np.abs(eigvals))))
    return bool(eigvals[0] >= -tol * scale)


def psd_diagnostics(m: SymCovMatrix) -> Tuple[float, int]:
    """返回 (最小特征值, 非正特征值个数)。"""
    eigvals, _ = _eigh(m.to_full())
    return float(eigvals[0]), int(np.count_nonzero(eigvals <= 0))


def repair_psd(m: SymCovMatrix) -> SymCovMatrix:
    """
    去掉零与负特征值: Σ_{λ>0} λ q qᵀ。
    输入已是半正定时原样返回。
    """
    full = m.to_full()
    eigvals, eigvecs = _eigh(full)
    if eigvals[0] >= 0:
        return SymCovMatrix(m=m.m, data=m.data.copy())
    keep = eigvals > 0
    logger.debug(f"半正定修复: 丢弃 {int(np.count_nonzero(~keep))} 个非正特征值，最小特征值 {eigvals[0]:.3e}")
    q = eigvecs[:, keep]
    repaired = (q * eigvals[keep]) @ q.T
    repaired = 0.5 * (repaired + repaired.T)
    rows, cols = vech_indices(m.m)
    return SymCovMatrix(m=m.m, data=repaired[rows, cols])
