# app/core/losses.py

"""
复合分割损失 L = λ1·Dice + λ2·BCE + λ3·Focal

概率在取对数前截断到 [1e-7, 1 − 1e-7]，Dice 平滑项 ε = 1e-6。
"""

from typing import Optional

import numpy as np

from app.core.exceptions import ShapeError
from app.core.tensor import Tensor, add, clamp, log, mul, power, reduce_mean, reduce_sum, sub
from app.schemas.training import LossWeights

DICE_EPS = 1e-6
PROB_CLAMP = 1e-7


def _check_pair(probs: Tensor, target: Tensor, what: str) -> Tensor:
    if probs.shape != target.shape:
        raise ShapeError(f"{what}: 预测形状 {probs.shape} 与标签形状 {target.shape} 不一致")
    # 标签是常量，精度跟随预测
    return Tensor(target.data, dtype=probs.dtype)


def dice_loss(probs: Tensor, target: Tensor) -> Tensor:
    """1 − (2Σ(p·y) + ε) / (Σp + Σy + ε)"""
    y = _check_pair(probs, target, "dice_loss")
    intersection = reduce_sum(mul(probs, y))
    numerator = add(mul(intersection, 2.0), DICE_EPS)
    denominator = add(add(reduce_sum(probs), float(y.data.sum(dtype=np.float64))), DICE_EPS)
    return sub(1.0, mul(numerator, power(denominator, -1.0)))


def _clamped_log_terms(probs: Tensor, y: Tensor):
    p = clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    # p_t = p (y=1) 或 1 − p (y=0)
    p_t = add(mul(p, y), mul(sub(1.0, p), sub(1.0, y)))
    return p_t, log(p_t)


def bce_loss(probs: Tensor, target: Tensor) -> Tensor:
    """逐像素 −[y·log p + (1−y)·log(1−p)] 的平均"""
    y = _check_pair(probs, target, "bce_loss")
    _, log_pt = _clamped_log_terms(probs, y)
    return mul(reduce_mean(log_pt), -1.0)


def focal_loss(
    probs: Tensor,
    target: Tensor,
    gamma: float = 2.0,
    alpha: Optional[float] = 0.25,
) -> Tensor:
    """
    逐像素 −α_t (1 − p_t)^γ log p_t 的平均

    alpha=None 时不做 α 平衡（α_t ≡ 1），此时 γ=0 与 BCE 相同。
    """
    y = _check_pair(probs, target, "focal_loss")
    p_t, log_pt = _clamped_log_terms(probs, y)
    modulating = power(sub(1.0, p_t), gamma)
    per_pixel = mul(modulating, log_pt)
    if alpha is not None:
        alpha_t = np.where(y.data == 1, alpha, 1.0 - alpha)
        per_pixel = mul(per_pixel, Tensor(alpha_t, dtype=probs.dtype))
    return mul(reduce_mean(per_pixel), -1.0)


def combine_losses(dice: Tensor, bce: Tensor, focal: Tensor, weights: LossWeights) -> Tensor:
    """按权重求和三个分量"""
    return add(
        add(mul(dice, weights.lambda1), mul(bce, weights.lambda2)),
        mul(focal, weights.lambda3),
    )


def total_loss(
    probs: Tensor,
    target: Tensor,
    weights: LossWeights,
    gamma: float = 2.0,
    alpha: Optional[float] = 0.25,
) -> Tensor:
    return combine_losses(
        dice_loss(probs, target),
        bce_loss(probs, target),
        focal_loss(probs, target, gamma=gamma, alpha=alpha),
        weights,
    )
