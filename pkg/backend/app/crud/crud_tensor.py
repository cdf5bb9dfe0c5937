# app/crud/crud_tensor.py

"""
MSEG 张量格式（小端）:
  "MSEG" | version u8 = 1 | rank u8 | rank × u32 维度 | prod(dims) × float32（行优先）
"""

import struct
from typing import Tuple

import numpy as np

from app.core.config import TENSOR_MAGIC, TENSOR_VERSION
from app.core.exceptions import (
    BadMagicError,
    DimensionOverflowError,
    TensorFormatError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from app.core.tensor import Tensor
from app.core.utils import PathLike, atomic_write_bytes, read_bytes

_HEADER = struct.Struct("<4sBB")
_DIM = struct.Struct("<I")
# 单个张量最多 2^31 个元素，超出视为维度溢出
MAX_ELEMENTS = 2 ** 31
MAX_DIM = 2 ** 32 - 1


def encode_tensor(tensor: Tensor) -> bytes:
    """把张量编码为 MSEG 字节串（一律存 32 位）"""
    shape = tensor.shape
    if len(shape) > 255:
        raise DimensionOverflowError(f"张量秩 {len(shape)} 超过 255")
    for d in shape:
        if d > MAX_DIM:
            raise DimensionOverflowError(f"维度 {d} 超出 u32 范围")
    header = _HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, len(shape))
    dims = b"".join(_DIM.pack(d) for d in shape)
    payload = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
    return header + dims + payload


def decode_tensor(buffer: bytes, offset: int = 0) -> Tuple[Tensor, int]:
    """
    从 buffer 的 offset 处解码一个 MSEG 张量

    Returns:
        (张量, 紧随其后的字节偏移)
    """
    available = len(buffer) - offset
    if available < _HEADER.size:
        raise TruncatedPayloadError(_HEADER.size, max(available, 0), offset)
    magic, version, rank = _HEADER.unpack_from(buffer, offset)
    if magic != TENSOR_MAGIC:
        raise BadMagicError(f"张量魔数错误: {magic!r}", offset)
    if version != TENSOR_VERSION:
        raise UnsupportedVersionError(f"不支持的张量格式版本: {version}", offset + 4)
    cursor = offset + _HEADER.size

    dims_end = cursor + rank * _DIM.size
    if len(buffer) < dims_end:
        raise TruncatedPayloadError(dims_end - offset, len(buffer) - offset, cursor)
    shape = tuple(_DIM.unpack_from(buffer, cursor + i * _DIM.size)[0] for i in range(rank))
    count = 1
    for d in shape:
        count *= d
        if count > MAX_ELEMENTS:
            raise DimensionOverflowError(f"张量元素个数超出上限: 形状 {shape}", cursor)
    cursor = dims_end

    end = cursor + 4 * count
    if len(buffer) < end:
        raise TruncatedPayloadError(end - offset, len(buffer) - offset, cursor)
    data = np.frombuffer(buffer, dtype="<f4", count=count, offset=cursor).reshape(shape)
    return Tensor(data.astype(np.float32)), end


def save_tensor(tensor: Tensor, path: PathLike) -> None:
    atomic_write_bytes(path, encode_tensor(tensor))


def load_tensor(path: PathLike) -> Tensor:
    buffer = read_bytes(path)
    tensor, end = decode_tensor(buffer)
    if end != len(buffer):
        raise TensorFormatError(f"张量文件末尾有多余的 {len(buffer) - end} 字节", end)
    return tensor
