# app/crud/crud_embedding.py

"""
MEMB 嵌入索引格式（小端）:
  "MEMB" | version u8 = 1 | count u32 | D u32
  每条记录: id 长度 u16 | UTF-8 id | D × float32
  末尾: provider 标签长度 u16 | UTF-8 标签
"""

import struct
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from app.core.config import EMBEDDING_MAGIC, EMBEDDING_VERSION
from app.core.embedding import EmbeddingIndex
from app.core.exceptions import (
    BadMagicError,
    DimensionMismatchError,
    DimensionOverflowError,
    TensorFormatError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from app.core.utils import PathLike, atomic_write_bytes, read_bytes
from app.schemas.retrieval import EmbeddingRecord

_HEADER = struct.Struct("<4sBII")
_U16 = struct.Struct("<H")
MAX_U16 = 2 ** 16 - 1


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > MAX_U16:
        raise DimensionOverflowError(f"字符串过长 ({len(raw)} 字节): {text[:32]}...")
    return _U16.pack(len(raw)) + raw


def _unpack_str(buffer: bytes, cursor: int) -> Tuple[str, int]:
    if len(buffer) < cursor + _U16.size:
        raise TruncatedPayloadError(cursor + _U16.size, len(buffer), cursor)
    (length,) = _U16.unpack_from(buffer, cursor)
    start, end = cursor + _U16.size, cursor + _U16.size + length
    if len(buffer) < end:
        raise TruncatedPayloadError(end, len(buffer), start)
    try:
        return buffer[start:end].decode("utf-8"), end
    except UnicodeDecodeError as e:
        raise TensorFormatError(f"字符串不是合法的 UTF-8: {e.reason}", start) from e


def encode_index(index: EmbeddingIndex) -> bytes:
    parts = [_HEADER.pack(EMBEDDING_MAGIC, EMBEDDING_VERSION, len(index), index.dimension)]
    for record in index.records:
        parts.append(_pack_str(record.id))
        parts.append(np.ascontiguousarray(record.vector, dtype="<f4").tobytes())
    parts.append(_pack_str(index.provider_tag))
    return b"".join(parts)


def decode_index(buffer: bytes) -> EmbeddingIndex:
    if len(buffer) < _HEADER.size:
        raise TruncatedPayloadError(_HEADER.size, len(buffer), 0)
    magic, version, count, dimension = _HEADER.unpack_from(buffer, 0)
    if magic != EMBEDDING_MAGIC:
        raise BadMagicError(f"嵌入文件魔数错误: {magic!r}", 0)
    if version != EMBEDDING_VERSION:
        raise UnsupportedVersionError(f"不支持的嵌入文件版本: {version}", 4)
    if dimension == 0:
        raise DimensionOverflowError("嵌入维度为 0", 9)

    cursor = _HEADER.size
    records: List[EmbeddingRecord] = []
    for _ in range(count):
        record_id, cursor = _unpack_str(buffer, cursor)
        end = cursor + 4 * dimension
        if len(buffer) < end:
            raise TruncatedPayloadError(end, len(buffer), cursor)
        vector = np.frombuffer(buffer, dtype="<f4", count=dimension, offset=cursor).astype(np.float32)
        try:
            records.append(EmbeddingRecord(id=record_id, vector=vector))
        except ValueError as e:
            raise TensorFormatError(f"记录 {record_id} 的向量非法", cursor) from e
        cursor = end
    provider_tag, cursor = _unpack_str(buffer, cursor)
    if cursor != len(buffer):
        raise TensorFormatError(f"嵌入文件末尾有多余的 {len(buffer) - cursor} 字节", cursor)
    return EmbeddingIndex(dimension, records, provider_tag)


def save_index(index: EmbeddingIndex, path: PathLike) -> Path:
    return atomic_write_bytes(path, encode_index(index))


def load_index(path: PathLike) -> EmbeddingIndex:
    return decode_index(read_bytes(path))


def _parse_text_vectors(text: str) -> Dict[str, np.ndarray]:
    """解析 `id<TAB>v1<TAB>v2...` 文本，空行和 # 开头的行忽略"""
    vectors: Dict[str, np.ndarray] = {}
    dimension = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        record_id, values = fields[0], fields[1:]
        try:
            vector = np.asarray([float(v) for v in values], dtype=np.float32)
        except ValueError as e:
            raise TensorFormatError(f"第 {lineno} 行含有非数值: {e}") from e
        if dimension is None:
            dimension = vector.size
        elif vector.size != dimension:
            raise DimensionMismatchError(f"第 {lineno} 行维度 {vector.size} 与前面的 {dimension} 不一致")
        if record_id in vectors:
            raise TensorFormatError(f"第 {lineno} 行ID重复: {record_id}")
        vectors[record_id] = vector
    return vectors


def read_external_vectors(path: PathLike) -> Dict[str, np.ndarray]:
    """
    读取外部嵌入（例如离线计算的 CLIP 图像向量）

    文件以 MEMB 魔数开头时按 MEMB 解析，否则按制表符文本解析。

    Returns:
        id -> float32 向量，保持文件中的顺序
    """
    buffer = read_bytes(path)
    if buffer[:4] == EMBEDDING_MAGIC:
        index = decode_index(buffer)
        return {r.id: r.vector for r in index.records}
    try:
        text = buffer.decode("utf-8")
    except UnicodeDecodeError as e:
        raise BadMagicError(f"外部嵌入文件既不是 MEMB 也不是 UTF-8 文本: {path}", 0) from e
    return _parse_text_vectors(text)
