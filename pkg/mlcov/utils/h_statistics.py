# mlcov/utils/h_statistics.py
"""
h-统计量及其估计方差的闭式公式。

所有函数都对累加器的 shape 逐元素计算，标量累加器返回 numpy 标量。
四阶混合 h-统计量 ĥ_{1,1,1,1} 由四阶 h-统计量 h4 极化得到:
h4 在幂和上是对称的四次多项式，其对称多线性形式在四个不同变量上取值时
对 μ_{1,1,1,1} 无偏，在 (x, y, x, y) 上取值时即 ĥ_{2,2}。
"""
import logging
from itertools import combinations
from typing import Tuple

import numpy as np

from mlcov.core.exceptions import DomainError, InsufficientSamplesError
from mlcov.models import CentralMoments2, CentralMoments4
from mlcov.utils.power_sums import PowerSums, PowerSums1, PowerSums2, PowerSums4

logger = logging.getLogger(__name__)


def _require(ps: PowerSums, minimum: int, what: str) -> int:
    if ps.n < minimum:
        raise InsufficientSamplesError(f"{what} 至少需要 {minimum} 个样本，当前 n={ps.n}")
    return ps.n


def _require_n(n: int, minimum: int, what: str) -> int:
    if n < minimum:
        raise DomainError(f"{what} 要求 n ≥ {minimum}，当前 n={n}")
    return n


# --- 通用构件 ---

def _h11(ps: PowerSums, p: int, q: int):
    """变量 p, q 的二元 h_{1,1} (p == q 时即 h2)。"""
    n = ps.n
    return (n * ps.s_vars(p, q) - ps.s_vars(p) * ps.s_vars(q)) / ((n - 1) * n)


def _h1111(ps: PowerSums, p: int, q: int, r: int, t: int):
    """四阶 h-统计量在变量 (p, q, r, t) 上的极化形式。"""
    n = ps.n
    v = (p, q, r, t)
    s = ps.s_vars
    s1 = [s(x) for x in v]

    s1_4 = s1[0] * s1[1] * s1[2] * s1[3]
    # S1²S2: 对构成 S2 的 6 种变量对取平均
    s1_2_s2 = 0.0
    for a, b in combinations(range(4), 2):
        rest = [k for k in range(4) if k not in (a, b)]
        s1_2_s2 = s1_2_s2 + s(v[a], v[b]) * s1[rest[0]] * s1[rest[1]]
    s1_2_s2 = s1_2_s2 / 6
    # S2²: 3 种配对
    s2_2 = (s(p, q) * s(r, t) + s(p, r) * s(q, t) + s(p, t) * s(q, r)) / 3
    # S1S3: 4 种取法
    s1_s3 = (s1[0] * s(q, r, t) + s1[1] * s(p, r, t) + s1[2] * s(p, q, t) + s1[3] * s(p, q, r)) / 4
    s4 = s(p, q, r, t)

    num = (-3 * s1_4 + 6 * n * s1_2_s2 + (9 - 6 * n) * s2_2
           + (-4 * n ** 2 + 8 * n - 12) * s1_s3 + (n ** 3 - 2 * n ** 2 + 3 * n) * s4)
    return num / (n * (n - 1) * (n - 2) * (n - 3))


# --- 一元 ---

def h2(ps: PowerSums1):
    """无偏方差估计 (n·s₂ − s₁²)/(n(n−1))。"""
    _require(ps, 2, "h2")
    return _h11(ps, 0, 0)


def h4(ps: PowerSums1):
    """四阶 h-统计量，对 μ₄ 无偏。"""
    n = _require(ps, 4, "h4")
    s1, s2, s3, s4 = ps.s(1), ps.s(2), ps.s(3), ps.s(4)
    num = (-3 * s1 ** 4 + 6 * n * s1 ** 2 * s2 + (9 - 6 * n) * s2 ** 2
           + (-4 * n ** 2 + 8 * n - 12) * s1 * s3 + (n ** 3 - 2 * n ** 2 + 3 * n) * s4)
    return num / (n * (n - 1) * (n - 2) * (n - 3))


def polyache22(ps: PowerSums1):
    """polyache h_{2,2}，对 μ₂² 无偏。"""
    n = _require(ps, 4, "polyache22")
    s1, s2, s3, s4 = ps.s(1), ps.s(2), ps.s(3), ps.s(4)
    num = (s1 ** 4 - 2 * n * s1 ** 2 * s2 + (n ** 2 - 3 * n + 3) * s2 ** 2
           + (4 * n - 4) * s1 * s3 + (n - n ** 2) * s4)
    return num / (n * (n - 1) * (n - 2) * (n - 3))


def var_h2_plugin(ps: PowerSums1):
    """Var(ĥ₂) 的无偏估计 (h4 − h_{2,2}(n−3)/(n−1))/n。"""
    n = _require(ps, 4, "var_h2_plugin")
    return (h4(ps) - polyache22(ps) * (n - 3) / (n - 1)) / n


def sample_fourth_central_moment(ps: PowerSums1):
    """有偏的样本四阶中心矩 (1/n)Σ(x − x̄)⁴。"""
    n = _require(ps, 1, "sample_fourth_central_moment")
    m = ps.s(1) / n
    value = (ps.s(4) - 4 * m * ps.s(3) + 6 * m ** 2 * ps.s(2) - 3 * n * m ** 4) / n
    return np.maximum(value, 0.0)


# --- 二元 ---

def h11(ps: PowerSums2):
    """样本协方差 (Bessel 校正)，对 μ_{1,1} 无偏。"""
    _require(ps, 2, "h11")
    return _h11(ps, 0, 1)


def h22(ps: PowerSums2):
    _require(ps, 4, "h22")
    return _h1111(ps, 0, 1, 0, 1)


def bivariate_ansatz_coeffs(n: int) -> Tuple[float, float, float]:
    if n <= 3:
        raise DomainError(f"二元拟设系数要求 n > 3，当前 n={n}")
    d = n ** 3 - 4 * n ** 2 + 7 * n - 6
    a1 = (n - 1) / (n ** 2 - 2 * n + 3)
    a2 = (-5 + 4 * n - n ** 2) / d
    a3 = (n - 1) / d
    return a1, a2, a3


def var_h11_unbiased(ps: PowerSums2):
    """Var(ĥ_{1,1}) 的无偏闭式估计 (幂和多项式)。"""
    n = _require(ps, 4, "var_h11_unbiased")
    s10, s01, s11 = ps.s(1, 0), ps.s(0, 1), ps.s(1, 1)
    s20, s02 = ps.s(2, 0), ps.s(0, 2)
    s21, s12, s22 = ps.s(2, 1), ps.s(1, 2), ps.s(2, 2)
    num = (n * ((-n ** 2 + n + 2) * s11 ** 2
                + (n - 1) ** 2 * (n * s22 - 2 * s10 * s12)
                + (n - 1) * s02 * (s10 ** 2 - s20))
           + s01 ** 2 * ((6 - 4 * n) * s10 ** 2 + (n - 1) * n * s20)
           - 2 * n * s01 * ((n - 1) ** 2 * s21 + (5 - 3 * n) * s10 * s11))
    return num / ((n - 3) * (n - 2) * (n - 1) ** 2 * n ** 2)


def var_h11_ansatz(ps: PowerSums2):
    """同一估计量的拟设形式 a₁ĥ_{2,2} + a₂ĥ_{1,1}² + a₃ĥ_{0,2}ĥ_{2,0}。"""
    n = _require(ps, 4, "var_h11_ansatz")
    a1, a2, a3 = bivariate_ansatz_coeffs(n)
    return a1 * _h1111(ps, 0, 1, 0, 1) + a2 * _h11(ps, 0, 1) ** 2 + a3 * _h11(ps, 0, 0) * _h11(ps, 1, 1)


def var_h11_analytic(m: CentralMoments2, n: int) -> float:
    _require_n(n, 2, "var_h11_analytic")
    return m.mu22 / n - (n - 2) * m.mu11 ** 2 / (n * (n - 1)) + m.mu02 * m.mu20 / (n * (n - 1))


def v_level_variance(ps: PowerSums2):
    """
    V_{l,2}: N_l 乘以 Var(ĥ₂(细) − ĥ₂(粗)) 的无偏估计，幂和取自 (X⁺, X⁻)。
    ĥ₂(细) − ĥ₂(粗) = ĥ_{1,1}(X⁺, X⁻)，所以与 var_h11_unbiased 的分母只差一个 n。
    """
    _require(ps, 4, "v_level_variance")
    return ps.n * var_h11_unbiased(ps)


# --- 四元 (MLMC 层差) ---

def z_l(ps: PowerSums4):
    """层差 Z_l = ĥ_{1,1}(g, h) − ĥ_{1,1}(i, j)。"""
    _require(ps, 2, "z_l")
    return _h11(ps, 0, 1) - _h11(ps, 2, 3)


def h1111(ps: PowerSums4):
    _require(ps, 4, "h1111")
    return _h1111(ps, 0, 1, 2, 3)


def quadrivariate_ansatz_coeffs(n: int) -> Tuple[float, ...]:
    if n <= 3:
        raise DomainError(f"四元拟设系数要求 n > 3，当前 n={n}")
    d = n ** 3 - 4 * n ** 2 + 7 * n - 6
    q = n ** 2 - 2 * n + 3
    a1 = -(n ** 2 - 4 * n + 5) / d
    a2 = -(1 - n) / d
    a3 = -(1 - n) / q
    a4 = -2 * (n - 1) / d
    a5 = -2 * (n - 1) / d
    a6 = 2 * (n ** 2 - 3 * n + 4) / d
    a7 = -(n ** 2 - 4 * n + 5) / d
    a8 = -2 * (n - 1) / q
    a9 = -(1 - n) / d
    a10 = -(1 - n) / q
    return a1, a2, a3, a4, a5, a6, a7, a8, a9, a10


def var_zl_ansatz(ps: PowerSums4):
    """
    Var(Z_l) 的拟设形式。系数值与 quadrivariate_ansatz_coeffs 一一对应，
    乘积项的归属由 Var(Z) = Var(ĥ₁₁(g,h)) + Var(ĥ₁₁(i,j)) − 2Cov(ĥ₁₁(g,h), ĥ₁₁(i,j)) 确定。
    """
    n = _require(ps, 4, "var_zl_ansatz")
    a1, a2, a3, a4, a5, a6, a7, a8, a9, a10 = quadrivariate_ansatz_coeffs(n)
    h1100, h0011 = _h11(ps, 0, 1), _h11(ps, 2, 3)
    return (a1 * h0011 ** 2
            + a6 * h1100 * h0011
            + a2 * _h11(ps, 3, 3) * _h11(ps, 2, 2)
            + a3 * _h1111(ps, 2, 3, 2, 3)
            + a9 * _h11(ps, 1, 1) * _h11(ps, 0, 0)
            + a10 * _h1111(ps, 0, 1, 0, 1)
            + a8 * _h1111(ps, 0, 1, 2, 3)
            + a7 * h1100 ** 2
            + a4 * _h11(ps, 1, 2) * _h11(ps, 0, 3)
            + a5 * _h11(ps, 1, 3) * _h11(ps, 0, 2))


def var_zl_unbiased(ps: PowerSums4):
    """Var(Z_l) 的无偏闭式估计，四元幂和多项式除以 (n−3)(n−2)(n−1)²n²。"""
    n = _require(ps, 4, "var_zl_unbiased")
    s = ps.s
    s1000, s0100, s0010, s0001 = s(1, 0, 0, 0), s(0, 1, 0, 0), s(0, 0, 1, 0), s(0, 0, 0, 1)
    s1100, s0011 = s(1, 1, 0, 0), s(0, 0, 1, 1)
    s2000, s0200, s0020, s0002 = s(2, 0, 0, 0), s(0, 2, 0, 0), s(0, 0, 2, 0), s(0, 0, 0, 2)
    s1010, s1001, s0110, s0101 = s(1, 0, 1, 0), s(1, 0, 0, 1), s(0, 1, 1, 0), s(0, 1, 0, 1)
    s2100, s1200, s0021, s0012 = s(2, 1, 0, 0), s(1, 2, 0, 0), s(0, 0, 2, 1), s(0, 0, 1, 2)
    s2200, s0022 = s(2, 2, 0, 0), s(0, 0, 2, 2)
    s1110, s1101, s1011, s0111 = s(1, 1, 1, 0), s(1, 1, 0, 1), s(1, 0, 1, 1), s(0, 1, 1, 1)
    s1111 = s(1, 1, 1, 1)

    n2, n3, n4 = n ** 2, n ** 3, n ** 4
    num = (
        s0022 * n4 - 2 * s1111 * n4 + s2200 * n4
        - s0011 ** 2 * n3 - s1100 ** 2 * n3
        - 2 * s0010 * s0012 * n3 - 2 * s0022 * n3
        + 2 * s0111 * s1000 * n3 + 2 * s0100 * s1011 * n3
        + 2 * s0011 * s1100 * n3 + 2 * s0010 * s1101 * n3
        + 4 * s1111 * n3 - 2 * s1000 * s1200 * n3
        - 2 * s0100 * s2100 * n3 - 2 * s2200 * n3
        + s0011 ** 2 * n2 + s0200 * s1000 ** 2 * n2
        + s1100 ** 2 * n2 + 4 * s0010 * s0012 * n2
        + s0022 * n2 - 4 * s0011 * s0100 * s1000 * n2
        - 2 * s0010 * s0101 * s1000 * n2 - 4 * s0111 * s1000 * n2
        - 2 * s0010 * s0100 * s1001 * n2
        + 2 * s0110 * s1001 * n2 + 2 * s0101 * s1010 * n2
        - 4 * s0100 * s1011 * n2
        - 4 * s0011 * s1100 * n2 + 6 * s0100 * s1000 * s1100 * n2
        - 4 * s0010 * s1101 * n2 - 2 * s1111 * n2
        + 4 * s1000 * s1200 * n2 + s0100 ** 2 * s2000 * n2
        - s0200 * s2000 * n2 + 4 * s0100 * s2100 * n2
        + s2200 * n2 + 2 * s0011 ** 2 * n
        - 4 * s0100 ** 2 * s1000 ** 2 * n - s0200 * s1000 ** 2 * n
        + 2 * s1100 ** 2 * n - 2 * s0010 * s0012 * n
        + (n - 1) * s0002 * (s0010 ** 2 - s0020) * n
        + 8 * s0011 * s0100 * s1000 * n + 2 * s0010 * s0101 * s1000 * n
        + 2 * s0111 * s1000 * n
        + 2 * s0010 * s0100 * s1001 * n - 2 * s0110 * s1001 * n
        - 2 * s0101 * s1010 * n
        + 2 * s0100 * s1011 * n - 2 * s0011 * s1100 * n
        - 10 * s0100 * s1000 * s1100 * n
        + 2 * s0010 * s1101 * n - 2 * s1000 * s1200 * n
        - s0100 ** 2 * s2000 * n
        + s0200 * s2000 * n - 2 * s0100 * s2100 * n
        + 6 * s0100 ** 2 * s1000 ** 2
        + s0001 ** 2 * ((6 - 4 * n) * s0010 ** 2 + (n - 1) * n * s0020)
        - 2 * s0001 * (
            s0010 * (n * (5 - 3 * n) * s0011
                     + 2 * (3 - 2 * n) * s0100 * s1000
                     + 2 * (n - 2) * n * s1100)
            + (n - 1) * n * ((n - 1) * s0021 + s0110 * s1000 + s0100 * s1010 - n * s1110 + s1110)
        )
    )
    return num / ((n - 3) * (n - 2) * (n - 1) ** 2 * n ** 2)


def var_zl_analytic(m: CentralMoments4, n: int) -> float:
    _require_n(n, 2, "var_zl_analytic")
    mu = m.mu
    nn = n * (n - 1)
    return (-(n - 2) * mu(0, 0, 1, 1) ** 2 / nn
            + 2 * mu(1, 1, 0, 0) * mu(0, 0, 1, 1) / n
            + mu(0, 0, 0, 2) * mu(0, 0, 2, 0) / nn
            + mu(0, 0, 2, 2) / n
            + mu(0, 2, 0, 0) * mu(2, 0, 0, 0) / nn
            + mu(2, 2, 0, 0) / n
            - 2 * mu(1, 1, 1, 1) / n
            - (n - 2) * mu(1, 1, 0, 0) ** 2 / nn
            - 2 * mu(0, 1, 1, 0) * mu(1, 0, 0, 1) / nn
            - 2 * mu(0, 1, 0, 1) * mu(1, 0, 1, 0) / nn)


# --- 经典 MLMC 的最坏情形界 ---

def classical_level_bound(ps_plus_i: PowerSums1, ps_minus_i: PowerSums1,
                          ps_plus_j: PowerSums1, ps_minus_j: PowerSums1, n: int):
    """
    (1/(2(n−1)))·(√(μ̂₄(X⁻ᵢ)μ̂₄(X⁺ⱼ)) + √(μ̂₄(X⁺ᵢ)μ̂₄(X⁻ⱼ)))，μ̂₄ 为有偏样本矩。
    第 0 层以 X⁺ = X⁻ = u 调用，结果退化为 (1/(n−1))√(μ̂₄(uᵢ)μ̂₄(uⱼ))。
    """
    if n < 2:
        raise InsufficientSamplesError(f"经典误差界至少需要 2 个样本，当前 n={n}")
    m_plus_i = sample_fourth_central_moment(ps_plus_i)
    m_minus_i = sample_fourth_central_moment(ps_minus_i)
    m_plus_j = sample_fourth_central_moment(ps_plus_j)
    m_minus_j = sample_fourth_central_moment(ps_minus_j)
    return (np.sqrt(m_minus_i * m_plus_j) + np.sqrt(m_plus_i * m_minus_j)) / (2 * (n - 1))


def cross_h11(ps: PowerSums, p: int, q: int):
    """任意两个变量位置上的 ĥ_{1,1}。"""
    _require(ps, 2, "cross_h11")
    return _h11(ps, p, q)
