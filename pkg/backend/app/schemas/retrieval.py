# app/schemas/retrieval.py

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator


class EmbeddingRecord(BaseModel):
    """一条支持样本的嵌入 (id, D 维向量)"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    id: str = Field(..., min_length=1)
    vector: np.ndarray

    @field_validator("vector", mode="before")
    @classmethod
    def _as_float32(cls, value) -> np.ndarray:
        vector = np.asarray(value, dtype=np.float32).reshape(-1)
        if vector.size == 0:
            raise ValueError("嵌入向量不能为空")
        if not np.all(np.isfinite(vector)):
            raise ValueError("嵌入向量含有 NaN/Inf")
        if float(np.linalg.norm(vector.astype(np.float64))) <= 1e-12:
            raise ValueError("嵌入向量范数为 0")
        vector.setflags(write=False)
        return vector

    @property
    def dimension(self) -> int:
        return int(self.vector.size)


class SimilarityHit(BaseModel):
    id: str
    score: float = Field(..., ge=-1.0 - 1e-6, le=1.0 + 1e-6)
