# app/core/embedding.py

"""
基于嵌入相似度的支持集检索

desk 编码器（版本 1，D = 80）:
  (a) 通道均值图双线性缩放到 8×8 的 64 个亮度值
  (b) 通道均值图内部像素的中心差分梯度，按方向 atan2(gy, gx) mod π 均分为 16 个 bin，
      以梯度幅值加权累加
  拼接后做 L2 归一化；全零图像返回第一维为 1 的单位向量。
"""

from typing import Iterable, List, Optional, Sequence, Set

import numpy as np

from app.core.exceptions import DegenerateEmbeddingError, DimensionMismatchError, EmptyPoolError, ContractError
from app.core.tensor import Tensor, interpolation_matrix
from app.schemas.retrieval import EmbeddingRecord, SimilarityHit

DESK_ENCODER_VERSION = 1
DESK_GRID = 8
DESK_ORIENTATION_BINS = 16
DESK_DIMENSION = DESK_GRID * DESK_GRID + DESK_ORIENTATION_BINS
DEGENERATE_NORM = 1e-12


def desk_embed(image: Tensor) -> np.ndarray:
    """
    确定性的 desk 图像编码器

    Args:
        image: (C, H, W)，取值 [0, 1]

    Returns:
        80 维 float32 单位向量
    """
    if image.ndim != 3:
        raise ContractError(f"desk_embed 需要 (C,H,W) 图像, 实际 {image.shape}")
    gray = image.data.astype(np.float64).mean(axis=0)
    h, w = gray.shape

    ry = interpolation_matrix(h, DESK_GRID)
    rx = interpolation_matrix(w, DESK_GRID)
    intensity = (ry @ gray @ rx.T).reshape(-1)

    histogram = np.zeros(DESK_ORIENTATION_BINS, dtype=np.float64)
    if h >= 3 and w >= 3:
        gx = (gray[1:-1, 2:] - gray[1:-1, :-2]) / 2.0
        gy = (gray[2:, 1:-1] - gray[:-2, 1:-1]) / 2.0
        magnitude = np.hypot(gx, gy)
        theta = np.mod(np.arctan2(gy, gx), np.pi)
        bins = np.minimum((theta / np.pi * DESK_ORIENTATION_BINS).astype(np.int64), DESK_ORIENTATION_BINS - 1)
        np.add.at(histogram, bins.reshape(-1), magnitude.reshape(-1))

    vector = np.concatenate([intensity, histogram])
    norm = np.linalg.norm(vector)
    if norm <= DEGENERATE_NORM:
        fallback = np.zeros(DESK_DIMENSION, dtype=np.float32)
        fallback[0] = 1.0
        return fallback
    return (vector / norm).astype(np.float32)


def cosine_similarity(a, b) -> float:
    """dot(a, b) / (‖a‖‖b‖)，64 位累加"""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise DimensionMismatchError(f"向量维度不一致: {a.size} 与 {b.size}")
    norm_a = float(np.sqrt(np.dot(a, a)))
    norm_b = float(np.sqrt(np.dot(b, b)))
    if norm_a <= DEGENERATE_NORM or norm_b <= DEGENERATE_NORM:
        raise DegenerateEmbeddingError("嵌入向量范数为 0，无法计算余弦相似度")
    return float(np.dot(a, b)) / (norm_a * norm_b)


class EmbeddingIndex:
    """
    有序的嵌入记录集合，构建后只读

    插入顺序决定相同分数时的先后。
    """

    def __init__(self, dimension: int, records: Iterable[EmbeddingRecord], provider_tag: str):
        if dimension < 1:
            raise DimensionMismatchError(f"嵌入维度必须为正, 实际 {dimension}")
        self.dimension = int(dimension)
        self.provider_tag = provider_tag
        self.records: tuple = tuple(records)
        self._position = {}
        for i, record in enumerate(self.records):
            if record.dimension != self.dimension:
                raise DimensionMismatchError(
                    f"记录 {record.id} 维度 {record.dimension} 与索引维度 {self.dimension} 不一致"
                )
            if record.id in self._position:
                raise ContractError(f"索引中存在重复ID: {record.id}")
            self._position[record.id] = i
        if self.records:
            matrix = np.stack([r.vector for r in self.records]).astype(np.float64)
        else:
            matrix = np.zeros((0, self.dimension), dtype=np.float64)
        self._matrix = matrix
        self._norms = np.sqrt(np.einsum("ij,ij->i", matrix, matrix))
        self._matrix.setflags(write=False)

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._position

    @property
    def ids(self) -> List[str]:
        return [r.id for r in self.records]

    def vector(self, record_id: str) -> np.ndarray:
        return self.records[self._position[record_id]].vector

    def scores(self, query_vector) -> np.ndarray:
        """query 与每条记录的余弦相似度（64 位）"""
        q = np.asarray(query_vector, dtype=np.float64).reshape(-1)
        if q.size != self.dimension:
            raise DimensionMismatchError(f"查询维度 {q.size} 与索引维度 {self.dimension} 不一致")
        q_norm = float(np.sqrt(np.dot(q, q)))
        if q_norm <= DEGENERATE_NORM:
            raise DegenerateEmbeddingError("查询嵌入范数为 0")
        return (self._matrix @ q) / (self._norms * q_norm)


def select_top_k(
    query_vector,
    index: EmbeddingIndex,
    k: int,
    exclude_ids: Optional[Set[str]] = None,
    include_ids: Optional[Sequence[str]] = None,
) -> List[SimilarityHit]:
    """
    按余弦相似度降序选出前 K 个记录

    分数相同时插入顺序靠前者优先；exclude_ids 中的记录永不返回；
    include_ids 不为空时只在这些记录中挑选。

    Returns:
        长度为 min(K, 候选数) 的 SimilarityHit 列表
    """
    if k < 1:
        raise ContractError(f"K 必须 ≥ 1, 实际 {k}")
    scores = index.scores(query_vector)
    excluded = exclude_ids or set()
    allowed = set(include_ids) if include_ids is not None else None
    eligible = np.array(
        [
            r.id not in excluded and (allowed is None or r.id in allowed)
            for r in index.records
        ],
        dtype=bool,
    )
    candidates = np.flatnonzero(eligible)
    if candidates.size == 0:
        raise EmptyPoolError("没有可供选择的支持样本")
    # 稳定排序保证同分时按插入顺序
    order = candidates[np.argsort(-scores[candidates], kind="stable")]
    return [
        SimilarityHit(id=index.records[i].id, score=float(np.clip(scores[i], -1.0, 1.0)))
        for i in order[:k]
    ]
