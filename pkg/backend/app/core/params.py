# app/core/params.py

from collections import OrderedDict
from typing import Dict, Iterator, List, Mapping, Tuple

import numpy as np

from app.core.exceptions import ShapeError
from app.core.tensor import Tensor


class ModelParams:
    """
    按名字组织的网络权重集合

    名字唯一，插入顺序即序列化顺序。
    """

    def __init__(self, tensors: Mapping[str, Tensor] | None = None):
        self._tensors: "OrderedDict[str, Tensor]" = OrderedDict()
        for name, tensor in (tensors or {}).items():
            self.add(name, tensor)

    def add(self, name: str, tensor: Tensor) -> None:
        if name in self._tensors:
            raise ShapeError(f"参数名重复: {name}")
        tensor.name = name
        self._tensors[name] = tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> List[str]:
        return list(self._tensors)

    def items(self) -> List[Tuple[str, Tensor]]:
        return list(self._tensors.items())

    def num_parameters(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def trainable(self, requires_grad: bool = True) -> "ModelParams":
        """返回一份新的叶子张量集合，用于训练时求梯度"""
        return ModelParams({n: t.astype(t.dtype, requires_grad=requires_grad) for n, t in self.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({n: t.astype(dtype) for n, t in self.items()})

    def zero_grad(self) -> None:
        for tensor in self._tensors.values():
            tensor.zero_grad()

    def is_finite(self) -> bool:
        return all(t.is_finite() for t in self._tensors.values())

    def to_arrays(self) -> Dict[str, np.ndarray]:
        return {n: t.numpy() for n, t in self.items()}

    def equals(self, other: "ModelParams") -> bool:
        """逐字节比较"""
        if self.names() != other.names():
            return False
        return all(
            self[n].dtype == other[n].dtype and self[n].data.tobytes() == other[n].data.tobytes()
            for n in self.names()
        )

    def __repr__(self) -> str:
        return f"ModelParams(tensors={len(self)}, parameters={self.num_parameters()})"


def he_uniform(shape, generator: np.random.Generator, dtype=None) -> Tensor:
    """
    He 均匀初始化：U(−√(6/fan_in), √(6/fan_in))，方差 2/fan_in

    fan_in = 输入通道 × 卷积核面积。
    """
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(generator.uniform(-bound, bound, size=tuple(shape)), dtype=dtype)
