# app/core/joint_attention.py

"""
查询/支持特征之间的联合注意力

对 k 个支持特征 S (k,C,H,W) 与查询特征 Q (C,H,W):
  Q̂ = 展平(重复 k 次(W_q ⊛ Q))ᵀ          (HW, kC')
  K̂ = 展平(W_k ⊛ S[j] 逐个堆叠)ᵀ         (HW, kC')
  A  = softmax(Q̂ K̂ᵀ)，按行归一化         (HW, HW)，不做 1/√d 缩放
  S'[j] = W_res ⊛ S[j] + reshape(A · V_j)  V_j 为 S[j] 展平后的 (HW, C)
  Q' = mean_j S'[j]
kC' 轴上支持样本序号在外层（变化较慢）。
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.core.exceptions import ConfigurationError, ShapeError
from app.core.params import ModelParams, he_uniform
from app.core.tensor import (
    Tensor,
    add,
    conv2d,
    matmul,
    reduce_mean,
    repeat,
    reshape,
    softmax,
    transpose2d,
)


@dataclass(frozen=True)
class JointAttentionParams:
    w_q: Tensor    # (C', C, 1, 1)
    b_q: Tensor    # (C',)
    w_k: Tensor    # (C', C, 1, 1)
    b_k: Tensor    # (C',)
    w_res: Tensor  # (C, C, 1, 1)
    b_res: Tensor  # (C,)
    ratio: int

    def __post_init__(self):
        channels = self.w_res.shape[0]
        if self.ratio < 1 or channels % self.ratio != 0:
            raise ConfigurationError(f"通道数 {channels} 不能被 ratio {self.ratio} 整除")
        reduced = channels // self.ratio
        expected = {
            "w_q": (reduced, channels, 1, 1), "b_q": (reduced,),
            "w_k": (reduced, channels, 1, 1), "b_k": (reduced,),
            "w_res": (channels, channels, 1, 1), "b_res": (channels,),
        }
        for field, shape in expected.items():
            actual = getattr(self, field).shape
            if actual != shape:
                raise ShapeError(f"联合注意力参数 {field} 形状应为 {shape}, 实际 {actual}")

    @property
    def channels(self) -> int:
        return self.w_res.shape[0]

    @property
    def reduced_channels(self) -> int:
        return self.channels // self.ratio

    @classmethod
    def from_params(cls, params: ModelParams, prefix: str, ratio: int) -> "JointAttentionParams":
        return cls(
            w_q=params[f"{prefix}.q.weight"], b_q=params[f"{prefix}.q.bias"],
            w_k=params[f"{prefix}.k.weight"], b_k=params[f"{prefix}.k.bias"],
            w_res=params[f"{prefix}.res.weight"], b_res=params[f"{prefix}.res.bias"],
            ratio=ratio,
        )


@dataclass(frozen=True)
class AttentionOutput:
    support_out: Tensor  # (k, C, H, W)
    query_out: Tensor    # (C, H, W)
    attention: Tensor    # (HW, HW)，保留用于检查


def attention_param_shapes(channels: int, ratio: int) -> dict:
    """前缀之后的参数名 -> 形状，初始化与加载共用"""
    if channels % ratio != 0:
        raise ConfigurationError(f"通道数 {channels} 不能被 ratio {ratio} 整除")
    reduced = channels // ratio
    return {
        "q.weight": (reduced, channels, 1, 1), "q.bias": (reduced,),
        "k.weight": (reduced, channels, 1, 1), "k.bias": (reduced,),
        "res.weight": (channels, channels, 1, 1), "res.bias": (channels,),
    }


def joint_attention(support: Tensor, query: Tensor, params: JointAttentionParams) -> AttentionOutput:
    """
    联合注意力前向计算，全程可微

    Args:
        support: 支持特征 S_i，(k, C, H, W)
        query: 查询特征 Q_i，(C, H, W)
        params: 联合注意力参数

    Returns:
        AttentionOutput(S_{i+1}, Q_{i+1}, A)
    """
    if support.ndim != 4 or support.shape[0] < 1:
        raise ConfigurationError(f"支持特征应为 (k,C,H,W) 且 k ≥ 1, 实际 {support.shape}")
    k, c, h, w = support.shape
    if query.shape != (c, h, w):
        raise ShapeError(f"查询特征形状 {query.shape} 与支持特征 {support.shape} 不匹配")
    if c != params.channels:
        raise ShapeError(f"特征通道 {c} 与注意力参数通道 {params.channels} 不一致")
    cr = params.reduced_channels
    hw = h * w

    # (1) 先降维再重复 k 次
    q_reduced = conv2d(query, params.w_q, params.b_q)
    q_repeated = repeat(reshape(q_reduced, (1, cr, h, w)), axis=0, times=k)
    q_hat = transpose2d(reshape(q_repeated, (k * cr, hw)))

    # (2) 每个支持样本共享 W_k；(kC', HW) 就是 K̂ᵀ
    k_reduced = conv2d(support, params.w_k, params.b_k)
    k_hat_t = reshape(k_reduced, (k * cr, hw))

    # (3)
    attention = softmax(matmul(q_hat, k_hat_t), axis=1)

    # (4) 同一个 A 分别作用在每个支持样本的 (HW, C) 上，拼成 (HW, kC) 一次算完
    values = transpose2d(reshape(support, (k * c, hw)))
    attended = reshape(transpose2d(matmul(attention, values)), (k, c, h, w))

    # (5)(6)
    support_out = add(conv2d(support, params.w_res, params.b_res), attended)
    query_out = reduce_mean(support_out, axis=0)
    return AttentionOutput(support_out=support_out, query_out=query_out, attention=attention)


def init_attention_params(
    params: ModelParams,
    prefix: str,
    channels: int,
    ratio: int,
    generator: np.random.Generator,
    dtype: Optional[np.dtype] = None,
) -> None:
    """按 He 均匀分布初始化一组注意力参数并加入 params"""
    for suffix, shape in attention_param_shapes(channels, ratio).items():
        name = f"{prefix}.{suffix}"
        if suffix.endswith("bias"):
            params.add(name, Tensor.zeros(shape, dtype=dtype))
        else:
            params.add(name, he_uniform(shape, generator, dtype))
