# mlcov/core/exceptions.py
"""
错误层级。CLI 根据分支映射退出码: 配置错误 1, 数值错误 2, 预言机校验失败 3。
数值错误同时继承 ValueError, 把非法输入当作 ValueError 处理的调用方依旧可用。
"""


class MlcovError(Exception):
    exit_code: int = 2


class ConfigError(MlcovError, ValueError):
    exit_code = 1


class NumericError(MlcovError, ValueError):
    exit_code = 2


class InsufficientSamplesError(NumericError):
    """样本数不足以计算所需的 h-统计量。"""


class DomainError(NumericError):
    """参数超出公式定义域。"""


class DimensionMismatchError(NumericError):
    pass


class NonFiniteInputError(NumericError):
    pass


class DegenerateFitError(NumericError):
    """对数线性拟合的数据退化 (零值或 h_l 全相同)。"""


class EnumerationBudgetError(NumericError):
    pass


class EigenSolverError(NumericError):
    pass


class OracleFailure(MlcovError):
    exit_code = 3
