# app/cli/config_file.py

"""
命令行配置文件: UTF-8 文本，每行 key=value，# 开头为注释

支持的键见 TRAIN_KEYS / NETWORK_KEYS / LOSS_KEYS / AUGMENT_KEYS；未知键直接报错。
列表值用逗号分隔（channels=16,32,64）；focal_alpha=none 表示关闭 α 平衡。
命令行参数优先于文件中的值。
"""

from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from pydantic import ValidationError

from app.core.exceptions import CliConfigError
from app.schemas.network import NetworkConfig
from app.schemas.training import AugmentConfig, LossWeights, TrainConfig

TRAIN_KEYS = {
    "learning_rate", "adam_beta1", "adam_beta2", "adam_eps", "weight_decay", "steps", "support_k",
    "selection_strategy", "image_size", "seed", "augment", "focal_gamma", "focal_alpha",
    "train_domains", "log_every",
}
NETWORK_KEYS = {"levels", "channels", "ratio", "in_channels_query", "leaky_slope", "use_attention"}
LOSS_KEYS = {"lambda1", "lambda2", "lambda3"}
AUGMENT_KEYS = {"flip_prob", "max_rotation_deg", "scale_min", "scale_max"}
KNOWN_KEYS = TRAIN_KEYS | NETWORK_KEYS | LOSS_KEYS | AUGMENT_KEYS
LIST_KEYS = {"channels", "train_domains"}
NULLABLE_KEYS = {"focal_alpha", "train_domains"}


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """
    解析 key=value 文本

    Returns:
        key -> 原始字符串值，保持出现顺序
    """
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliConfigError(f"{source}:{lineno}: 缺少 '=': {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise CliConfigError(f"{source}:{lineno}: 未知的配置键 {key!r}")
        if key in values:
            raise CliConfigError(f"{source}:{lineno}: 配置键 {key!r} 重复")
        values[key] = value
    return values


def parse_config_file(path: Optional[Path]) -> Dict[str, str]:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise CliConfigError(f"无法读取配置文件 {path}: {e.strerror}") from e
    except UnicodeDecodeError as e:
        raise CliConfigError(f"配置文件不是 UTF-8 文本: {path}") from e
    return parse_config_text(text, str(path))


def _coerce(key: str, value: Any) -> Any:
    if not isinstance(value, str):
        return value
    if key in NULLABLE_KEYS and value.lower() in ("none", "null", ""):
        return None
    if key in LIST_KEYS:
        return [v.strip() for v in value.split(",") if v.strip()]
    return value


def build_configs(
    file_values: Mapping[str, Any],
    overrides: Optional[Mapping[str, Any]] = None,
) -> Tuple[TrainConfig, NetworkConfig]:
    """
    合并文件值与命令行覆盖值，并用 pydantic 模型校验

    Args:
        file_values: 配置文件中的值
        overrides: 命令行参数，值为 None 的项忽略

    Returns:
        (TrainConfig, NetworkConfig)
    """
    merged: Dict[str, Any] = dict(file_values)
    for key, value in (overrides or {}).items():
        if key not in KNOWN_KEYS:
            raise CliConfigError(f"未知的配置键 {key!r}")
        if value is not None:
            merged[key] = value
    merged = {key: _coerce(key, value) for key, value in merged.items()}

    def pick(keys: set) -> Dict[str, Any]:
        return {k: v for k, v in merged.items() if k in keys}

    try:
        network = NetworkConfig(**pick(NETWORK_KEYS))
        train = TrainConfig(
            **pick(TRAIN_KEYS),
            loss_weights=LossWeights(**pick(LOSS_KEYS)),
            augmentation=AugmentConfig(**pick(AUGMENT_KEYS)),
        )
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or "config"
        raise CliConfigError(f"配置值非法 ({location}): {first['msg']}") from e
    train.check_network(network)
    return train, network
