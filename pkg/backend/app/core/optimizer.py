# app/core/optimizer.py

from typing import Dict, Optional

import numpy as np

from app.core.exceptions import MissingGradientError
from app.core.params import ModelParams
from app.core.tensor import Tensor


class AdamWState:
    """
    AdamW 的一阶/二阶矩与步数

    矩估计保存为 64 位。
    """

    def __init__(self):
        self.step = 0
        self.exp_avg: Dict[str, np.ndarray] = {}
        self.exp_avg_sq: Dict[str, np.ndarray] = {}

    def __repr__(self) -> str:
        return f"AdamWState(step={self.step}, tensors={len(self.exp_avg)})"


def adamw_step(
    params: ModelParams,
    state: AdamWState,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 1e-4,
    grads: Optional[Dict[str, np.ndarray]] = None,
) -> ModelParams:
    """
    一步 AdamW（解耦权重衰减）

        m ← β1·m + (1−β1)·g
        v ← β2·v + (1−β2)·g²
        θ ← θ − lr·(m̂ / (√v̂ + eps) + weight_decay·θ)

    Args:
        params: 当前参数，梯度默认取每个张量的 grad
        state: 优化器状态，原地更新
        grads: 可选的显式梯度（名字 -> 数组）

    Returns:
        新的 ModelParams（保留 requires_grad 标记，梯度为空）
    """
    state.step += 1
    t = state.step
    bias1 = 1.0 - beta1 ** t
    bias2 = 1.0 - beta2 ** t

    updated = ModelParams()
    for name, tensor in params.items():
        g = grads.get(name) if grads is not None else tensor.grad
        if g is None:
            raise MissingGradientError(f"可训练参数 {name} 没有梯度")
        g = np.asarray(g, dtype=np.float64)
        theta = tensor.data.astype(np.float64)

        m = state.exp_avg.get(name)
        v = state.exp_avg_sq.get(name)
        if m is None:
            m = np.zeros_like(theta)
            v = np.zeros_like(theta)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.exp_avg[name] = m
        state.exp_avg_sq[name] = v

        m_hat = m / bias1
        v_hat = v / bias2
        theta = theta - learning_rate * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * theta)
        updated.add(name, Tensor(theta, requires_grad=tensor.requires_grad, dtype=tensor.dtype))
    return updated
