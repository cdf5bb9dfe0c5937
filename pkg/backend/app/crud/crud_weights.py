# app/crud/crud_weights.py

"""
MWTS 权重包格式（小端）:
  "MWTS" | version u8 = 1 | count u32
  每个张量: 名字长度 u16 | UTF-8 名字 | 内嵌 MSEG 张量
  末尾: 配置长度 u32 | UTF-8 JSON（NetworkConfig 全部字段，键排序）
"""

import json
import struct
from pathlib import Path
from typing import Tuple

from pydantic import ValidationError

from app.core.config import WEIGHTS_MAGIC, WEIGHTS_VERSION
from app.core.exceptions import (
    BadMagicError,
    ShapeError,
    TensorFormatError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from app.core.params import ModelParams
from app.core.segnet import expected_param_shapes
from app.core.utils import PathLike, atomic_write_bytes, read_bytes
from app.crud.crud_embedding import _pack_str, _unpack_str
from app.crud.crud_tensor import decode_tensor, encode_tensor
from app.schemas.network import NetworkConfig

_HEADER = struct.Struct("<4sBI")
_U32 = struct.Struct("<I")


def config_json(config: NetworkConfig) -> str:
    return json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def encode_bundle(params: ModelParams, config: NetworkConfig) -> bytes:
    parts = [_HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, len(params))]
    for name, tensor in params.items():
        parts.append(_pack_str(name))
        parts.append(encode_tensor(tensor))
    raw = config_json(config).encode("utf-8")
    parts.append(_U32.pack(len(raw)) + raw)
    return b"".join(parts)


def decode_bundle(buffer: bytes) -> Tuple[ModelParams, NetworkConfig]:
    """
    解码权重包，并按其中记录的网络配置校验参数名与形状

    Returns:
        (ModelParams, NetworkConfig)
    """
    if len(buffer) < _HEADER.size:
        raise TruncatedPayloadError(_HEADER.size, len(buffer), 0)
    magic, version, count = _HEADER.unpack_from(buffer, 0)
    if magic != WEIGHTS_MAGIC:
        raise BadMagicError(f"权重文件魔数错误: {magic!r}", 0)
    if version != WEIGHTS_VERSION:
        raise UnsupportedVersionError(f"不支持的权重文件版本: {version}", 4)

    cursor = _HEADER.size
    params = ModelParams()
    for _ in range(count):
        name, cursor = _unpack_str(buffer, cursor)
        tensor, cursor = decode_tensor(buffer, cursor)
        if name in params:
            raise TensorFormatError(f"权重包中参数名重复: {name}", cursor)
        params.add(name, tensor)

    if len(buffer) < cursor + _U32.size:
        raise TruncatedPayloadError(cursor + _U32.size, len(buffer), cursor)
    (length,) = _U32.unpack_from(buffer, cursor)
    start, end = cursor + _U32.size, cursor + _U32.size + length
    if len(buffer) < end:
        raise TruncatedPayloadError(end, len(buffer), start)
    if end != len(buffer):
        raise TensorFormatError(f"权重文件末尾有多余的 {len(buffer) - end} 字节", end)
    try:
        config = NetworkConfig.model_validate_json(buffer[start:end])
    except ValidationError as e:
        raise TensorFormatError(f"权重包中的网络配置非法: {e.errors()[0]['msg']}", start) from e

    check_params(params, config)
    return params, config


def check_params(params: ModelParams, config: NetworkConfig) -> None:
    """参数名集合与形状必须和网络配置完全一致"""
    expected = expected_param_shapes(config)
    missing = [n for n in expected if n not in params]
    extra = [n for n in params if n not in expected]
    if missing or extra:
        raise ShapeError(f"权重与网络配置不匹配: 缺少 {missing[:5]}, 多余 {extra[:5]}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ShapeError(f"参数 {name} 形状 {params[name].shape} 与期望 {shape} 不一致")


def save_bundle(params: ModelParams, config: NetworkConfig, path: PathLike) -> Path:
    check_params(params, config)
    return atomic_write_bytes(path, encode_bundle(params, config))


def load_bundle(path: PathLike) -> Tuple[ModelParams, NetworkConfig]:
    return decode_bundle(read_bytes(path))
