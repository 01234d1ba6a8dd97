# mlcov/utils/power_sums.py
"""
单遍、可合并的幂和累加器。

每个幂和 s_{a,b,...} = Σ_k x_k^a y_k^b ... 都是形状为 ``shape`` 的数组，
一个累加器可以同时服务协方差矩阵的全部 vech 元素。
输入先减去逐变量的 ``shift`` 再累加: h-统计量对每个变量的平移不变，
公式直接使用平移后的幂和即可，这样能避免 273 K 量级的数据在四次幂中相互抵消。
跨批次的累加使用 Kahan 补偿求和。
"""
import logging
from typing import ClassVar, Dict, Sequence, Tuple, TypeVar

import numpy as np

from mlcov.core.exceptions import DimensionMismatchError, NonFiniteInputError

logger = logging.getLogger(__name__)

MultiIndex = Tuple[int, ...]
P = TypeVar("P", bound="PowerSums")


class PowerSums:
    DIM: ClassVar[int] = 1
    INDICES: ClassVar[Tuple[MultiIndex, ...]] = ()

    def __init__(self, shape=(), shift=None):
        self.shape: Tuple[int, ...] = (shape,) if isinstance(shape, int) else tuple(shape)
        if shift is None:
            shift = 0.0
        self._shift = np.array(np.broadcast_to(np.asarray(shift, dtype=float), (self.DIM,) + self.shape))
        self._position: Dict[MultiIndex, int] = {idx: k for k, idx in enumerate(self.INDICES)}
        self._sums = np.zeros((len(self.INDICES),) + self.shape)
        self._comp = np.zeros_like(self._sums)
        self.n = 0

    # --- 累加 ---

    def add(self: P, *values) -> P:
        """累加单个样本 (每个变量一个值或一个形状为 shape 的数组)。"""
        return self.add_batch(*[np.asarray(v, dtype=float)[np.newaxis, ...] for v in values])

    def add_batch(self: P, *columns) -> P:
        """累加一批样本；每列形状为 (B,) + shape，或可广播到该形状。"""
        if len(columns) != self.DIM:
            raise DimensionMismatchError(f"{type(self).__name__} 需要 {self.DIM} 个变量，收到 {len(columns)} 个")
        cols = [np.asarray(c, dtype=float) for c in columns]
        batch = cols[0].shape[0] if cols[0].ndim > 0 else 1
        try:
            cols = [np.broadcast_to(c, (batch,) + self.shape) for c in cols]
        except ValueError as e:
            raise DimensionMismatchError(f"样本形状与累加器形状 {self.shape} 不匹配: {e}") from e
        for c in cols:
            if not np.all(np.isfinite(c)):
                raise NonFiniteInputError("输入中含有 NaN 或 inf，拒绝累加")
        if batch == 0:
            return self

        centred = [c - self._shift[v] for v, c in enumerate(cols)]
        powers = [self._powers(x, max(idx[v] for idx in self.INDICES)) for v, x in enumerate(centred)]
        batch_sums = np.empty_like(self._sums)
        for k, idx in enumerate(self.INDICES):
            term = None
            for v, e in enumerate(idx):
                if e:
                    term = powers[v][e] if term is None else term * powers[v][e]
            batch_sums[k] = term.sum(axis=0)
        self._kahan_add(batch_sums)
        self.n += batch
        return self

    @staticmethod
    def _powers(x: np.ndarray, max_power: int) -> Dict[int, np.ndarray]:
        out = {1: x}
        if max_power >= 2:
            out[2] = x * x
        if max_power >= 3:
            out[3] = out[2] * x
        if max_power >= 4:
            out[4] = out[2] * out[2]
        return out

    def _kahan_add(self, values: np.ndarray) -> None:
        y = values - self._comp
        t = self._sums + y
        self._comp = (t - self._sums) - y
        self._sums = t

    # --- 合并 ---

    def merge(self: P, other: P) -> P:
        """返回新累加器，等价于累加两段样本流的拼接。"""
        if type(other) is not type(self):
            raise DimensionMismatchError(f"不能合并 {type(self).__name__} 与 {type(other).__name__}")
        if other.shape != self.shape:
            raise DimensionMismatchError(f"累加器形状不一致: {self.shape} vs {other.shape}")
        if not np.array_equal(other._shift, self._shift):
            raise DimensionMismatchError("累加器的平移量不一致，不能合并")
        merged = self.copy()
        merged._kahan_add(other._sums - other._comp)
        merged.n = self.n + other.n
        return merged

    def copy(self: P) -> P:
        clone = type(self).__new__(type(self))
        clone.shape = self.shape
        clone._shift = self._shift.copy()
        clone._position = self._position
        clone._sums = self._sums.copy()
        clone._comp = self._comp.copy()
        clone.n = self.n
        return clone

    def subset(self: P, selector) -> P:
        """取出部分元素 (沿 shape 的第一个轴) 组成新累加器。"""
        clone = self.copy()
        clone._sums = self._sums[:, selector]
        clone._comp = self._comp[:, selector]
        clone._shift = self._shift[:, selector]
        clone.shape = clone._sums.shape[1:]
        return clone

    # --- 读取 ---

    @property
    def shift(self) -> np.ndarray:
        return self._shift

    def s(self, *index: int) -> np.ndarray:
        """平移后数据的幂和 s_{index}。"""
        idx = tuple(index)
        if idx not in self._position:
            raise DimensionMismatchError(f"{type(self).__name__} 不保存幂和 s{idx}")
        k = self._position[idx]
        return self._sums[k] - self._comp[k]

    def s_vars(self, *variables: int) -> np.ndarray:
        """按变量位置取幂和，例如 s_vars(0, 0, 1) 即 s_{2,1,...}。"""
        counts = [0] * self.DIM
        for v in variables:
            counts[v] += 1
        return self.s(*counts)

    def mean(self, variable: int = 0) -> np.ndarray:
        unit = [0] * self.DIM
        unit[variable] = 1
        return self.s(*unit) / self.n + self._shift[variable]

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={self.n}, shape={self.shape})"


class PowerSums1(PowerSums):
    DIM = 1
    INDICES = ((1,), (2,), (3,), (4,))


class PowerSums2(PowerSums):
    DIM = 2
    INDICES = ((1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (2, 1), (1, 2), (2, 2))


class PowerSums4(PowerSums):
    DIM = 4
    INDICES = (
        (1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1),
        (1, 1, 0, 0), (0, 0, 1, 1),
        (2, 0, 0, 0), (0, 2, 0, 0), (0, 0, 2, 0), (0, 0, 0, 2),
        (1, 0, 1, 0), (1, 0, 0, 1), (0, 1, 1, 0), (0, 1, 0, 1),
        (2, 1, 0, 0), (1, 2, 0, 0), (0, 0, 2, 1), (0, 0, 1, 2),
        (2, 2, 0, 0), (0, 0, 2, 2),
        (1, 1, 1, 0), (1, 1, 0, 1), (1, 0, 1, 1), (0, 1, 1, 1),
        (1, 1, 1, 1),
    )


def accumulate(acc: P, *values) -> P:
    return acc.add(*values)


def merge(a: P, b: P) -> P:
    return a.merge(b)


def from_samples(cls, samples: Sequence[Sequence[float]], shift=None):
    """由 (N, DIM) 样本表直接构造标量累加器，便于测试与预言机使用。"""
    data = np.asarray(samples, dtype=float)
    if data.ndim == 1:
        data = data[:, np.newaxis]
    acc = cls(shift=shift)
    return acc.add_batch(*[data[:, v] for v in range(data.shape[1])])


def accumulate1(acc: PowerSums1, x) -> PowerSums1:
    return acc.add(x)


def accumulate2(acc: PowerSums2, x, y) -> PowerSums2:
    return acc.add(x, y)


def accumulate4(acc: PowerSums4, g, h, i, j) -> PowerSums4:
    return acc.add(g, h, i, j)


merge1 = merge2 = merge4 = merge
