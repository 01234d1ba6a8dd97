# mlcov/core/config.py
import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv, dotenv_values
from pydantic import ValidationError

from mlcov.core.exceptions import ConfigError
from mlcov.schemas import RunConfig

env_path = Path(__file__).resolve().parent.parent.parent / '.env'
load_dotenv(dotenv_path=env_path)


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        print(f"警告: 环境变量 {name}='{raw}' 不是有效整数，使用默认值 {default}。")
        return default


class Settings:
    PROJECT_NAME: str = "h-统计量 MLMC 协方差估计"
    PROJECT_VERSION: str = "1.0.0"

    LOG_LEVEL: str = os.getenv("MLCOV_LOG_LEVEL", "INFO").upper()

    # --- 并行采样 ---
    WORKERS: int = max(1, _int_env("MLCOV_WORKERS", os.cpu_count() or 1))
    BATCH_SIZE: int = max(1, _int_env("MLCOV_BATCH_SIZE", 256))

    # --- 自适应样本分配 ---
    MAX_REFINEMENTS: int = max(1, _int_env("MLCOV_MAX_REFINEMENTS", 8))

    # --- 预言机 ---
    ENUMERATION_CAP: int = _int_env("MLCOV_ENUMERATION_CAP", 1_000_000)


settings = Settings()

if settings.LOG_LEVEL not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
    print(f"警告: MLCOV_LOG_LEVEL='{settings.LOG_LEVEL}' 无效，将按 INFO 处理。")
    settings.LOG_LEVEL = "INFO"
if settings.ENUMERATION_CAP < 1:
    print("警告: MLCOV_ENUMERATION_CAP 必须为正数，恢复为 1000000。")
    settings.ENUMERATION_CAP = 1_000_000


_LIST_KEYS = {"eps2_half"}


def _parse_probe_pairs(raw: str):
    pairs = []
    for item in raw.replace(",", ";").split(";"):
        item = item.strip()
        if not item:
            continue
        try:
            i, j = item.split(":")
            pairs.append((int(i), int(j)))
        except ValueError:
            raise ConfigError(f"probe_pairs 项 '{item}' 格式无效，应为 i:j")
    return pairs


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    读取 `key = value` 格式的运行配置 (支持 # 注释), 所有键可省略。
    overrides 中非 None 的值覆盖文件内容 (对应 CLI 参数)。
    """
    raw: Dict[str, Any] = {}
    if path:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"配置文件不存在: {config_path}")
        for key, value in dotenv_values(config_path).items():
            key = key.strip().lower()
            if value is None or value.strip() == "":
                continue
            value = value.strip()
            if key in _LIST_KEYS:
                raw[key] = [v.strip() for v in value.split(",") if v.strip()]
            elif key == "probe_pairs":
                raw[key] = _parse_probe_pairs(value)
            else:
                raw[key] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    try:
        return RunConfig(**raw)
    except ValidationError as e:
        raise ConfigError(f"运行配置校验失败: {e}") from e
