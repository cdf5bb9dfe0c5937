# app/core/rng.py

import zlib
from typing import Sequence, Union

import numpy as np

# 随机数算法固定为 PCG64 + SeedSequence，更换算法需要提升版本号
RNG_ALGORITHM = "PCG64"
RNG_VERSION = 1

Label = Union[int, str]


def _label_key(label: Label) -> int:
    if isinstance(label, int):
        return label & 0xFFFFFFFF
    return zlib.crc32(label.encode("utf-8"))


class RngStream:
    """
    可复现的随机数流

    同一个 seed 和同一组标签在任何平台上都产生相同的序列；
    derive 用标签派生互不相关的子流，避免调用顺序影响结果。
    """

    def __init__(self, seed: int, *labels: Label):
        self.seed = int(seed)
        self.labels: tuple = tuple(labels)
        sequence = np.random.SeedSequence(
            entropy=self.seed & 0xFFFFFFFFFFFFFFFF,
            spawn_key=tuple(_label_key(label) for label in labels),
        )
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def derive(self, *labels: Label) -> "RngStream":
        return RngStream(self.seed, *self.labels, *labels)

    def random(self) -> float:
        return float(self.generator.random())

    def uniform(self, low: float, high: float) -> float:
        return float(self.generator.uniform(low, high))

    def integers(self, low: int, high: int) -> int:
        """[low, high) 上的均匀整数"""
        return int(self.generator.integers(low, high))

    def normal(self, shape: Sequence[int], scale: float = 1.0) -> np.ndarray:
        return self.generator.normal(0.0, scale, size=tuple(shape))

    def uniform_array(self, low: float, high: float, shape: Sequence[int]) -> np.ndarray:
        return self.generator.uniform(low, high, size=tuple(shape))

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def sample_without_replacement(self, items: Sequence, k: int) -> list:
        """不放回地均匀抽取 k 个元素，按抽取顺序返回"""
        idx = self.generator.choice(len(items), size=k, replace=False)
        return [items[int(i)] for i in idx]

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, labels={self.labels}, algorithm={RNG_ALGORITHM}/v{RNG_VERSION})"
