# app/core/gradcheck.py

from typing import Callable

import numpy as np

from app.core.exceptions import ConfigurationError
from app.core.tensor import Tensor, Tape, backward


def grad_check(fn: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-3) -> float:
    """
    用中心差分校验 fn 对 x 的解析梯度

    x 的精度决定校验精度：传入 float64 张量即在 64 位下累加。

    Args:
        fn: 单张量到标量张量的函数
        x: 求导位置
        eps: 差分步长，(0, 1e-2]

    Returns:
        max |解析 − 数值| / max(|解析|, |数值|, 1e-8)
    """
    if not 0.0 < eps <= 1e-2:
        raise ConfigurationError(f"grad_check 步长必须在 (0, 1e-2] 内, 实际 {eps}")

    leaf = Tensor(x.data, requires_grad=True, dtype=x.dtype)
    with Tape() as tape:
        out = fn(leaf)
    backward(out, tape, inputs=[leaf])
    analytic = leaf.grad.astype(np.float64).reshape(-1)

    base = x.data.reshape(-1)
    numeric = np.zeros(base.size, dtype=np.float64)
    for i in range(base.size):
        plus = base.copy()
        minus = base.copy()
        plus[i] = plus[i] + plus.dtype.type(eps)
        minus[i] = minus[i] - minus.dtype.type(eps)
        f_plus = fn(Tensor(plus.reshape(x.shape), dtype=x.dtype)).item()
        f_minus = fn(Tensor(minus.reshape(x.shape), dtype=x.dtype)).item()
        # 用实际表示出来的步长，32 位下 x±eps 会有舍入
        step = float(plus[i]) - float(minus[i])
        numeric[i] = (f_plus - f_minus) / step

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
