# app/cli/deps.py

"""各子命令共用的加载与输出函数"""

import sys
from pathlib import Path
from typing import List, Optional, Tuple

from app.core.embedding import EmbeddingIndex
from app.core.exceptions import CliConfigError
from app.core.logging_config import get_logger
from app.core.params import ModelParams
from app.crud import crud_weights
from app.schemas.dataset import Dataset
from app.schemas.network import NetworkConfig
from app.services import dataset_service, embedding_service

logger = get_logger(__name__)


def get_dataset(data_dir: Path) -> Dataset:
    return dataset_service.load_dataset(data_dir)


def get_index(path: Optional[Path]) -> Optional[EmbeddingIndex]:
    if path is None:
        return None
    return embedding_service.load_index(path)


def get_model(path: Path) -> Tuple[ModelParams, NetworkConfig]:
    params, network = crud_weights.load_bundle(path)
    logger.info(f"加载模型: {path} (参数量={params.num_parameters()}, levels={network.levels}, channels={network.channels})")
    return params, network


def parse_int_list(text: str, name: str) -> List[int]:
    """'2,4,8' -> [2, 4, 8]"""
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise CliConfigError(f"{name} 必须是逗号分隔的整数: {text!r}") from e
    if not values or any(v < 1 for v in values):
        raise CliConfigError(f"{name} 必须是正整数列表: {text!r}")
    return values


def parse_str_list(text: Optional[str]) -> Optional[List[str]]:
    if text is None:
        return None
    values = [part.strip() for part in text.split(",") if part.strip()]
    return values or None


def emit(text: str) -> None:
    """写到标准输出（机器可读结果）"""
    sys.stdout.write(text)
    sys.stdout.flush()
