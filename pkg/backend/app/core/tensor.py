# app/core/tensor.py

"""
最小的稠密张量与反向模式自动微分

约定:
- 存储默认 32 位浮点；校验工具可以显式使用 64 位。
- 卷积步长为 1，零填充保持空间尺寸；空间尺寸只通过 bilinear_resize 改变。
- 只有在 Tape 处于激活状态且某个操作数 requires_grad 时才记录操作。
- backward 把梯度累加进 grad，训练循环负责在两步之间清零。
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.core.exceptions import ConfigurationError, ContractError, ShapeError

Scalar = Union[int, float]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

DEFAULT_DTYPE = np.float32
DEFAULT_LEAKY_SLOPE = 0.01


class Tensor:
    """
    稠密 n 维数组，行优先存储

    创建后 data 不再修改，只有 grad 缓冲区会被 backward 写入。
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        dtype = np.dtype(dtype or DEFAULT_DTYPE)
        if dtype not in (np.float32, np.float64):
            raise ContractError(f"不支持的张量精度: {dtype}")
        self.data = np.array(data, dtype=dtype, copy=True)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Tensor":
        # 内部构造：直接接管 numpy 结果，不再复制
        t = cls.__new__(cls)
        t.data = array
        t.requires_grad = False
        t.grad = None
        t.name = None
        return t

    @classmethod
    def zeros(cls, shape: Sequence[int], dtype=None, requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros(tuple(shape)), requires_grad=requires_grad, dtype=dtype)

    @classmethod
    def ones(cls, shape: Sequence[int], dtype=None, requires_grad: bool = False) -> "Tensor":
        return cls(np.ones(tuple(shape)), requires_grad=requires_grad, dtype=dtype)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"只有单元素张量可以转为标量, 实际形状 {self.shape}")
        return float(self.data.reshape(-1)[0])

    def astype(self, dtype, requires_grad: Optional[bool] = None) -> "Tensor":
        """返回指定精度的新叶子张量"""
        return Tensor(
            self.data,
            requires_grad=self.requires_grad if requires_grad is None else requires_grad,
            dtype=dtype,
            name=self.name,
        )

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    def __radd__(self, other) -> "Tensor":
        return add(other, self)

    def __sub__(self, other) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other) -> "Tensor":
        return mul(other, self)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

@dataclass
class TapeRecord:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


_active_tape: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar("active_tape", default=None)


class Tape:
    """
    按执行顺序记录的操作序列

    用作上下文管理器激活；激活状态是上下文局部的，不同线程互不影响。
    """

    def __init__(self):
        self.records: List[TapeRecord] = []
        self._token: Optional[contextvars.Token] = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, backward: BackwardFn) -> None:
        self.records.append(TapeRecord(op, inputs, output, backward))


def active_tape() -> Optional[Tape]:
    return _active_tape.get()


def _emit(op: str, inputs: Sequence[Tensor], out: np.ndarray, backward: BackwardFn) -> Tensor:
    result = Tensor._wrap(out)
    tape = _active_tape.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        tape.record(op, tuple(inputs), result, backward)
    return result


def _as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Tensor._wrap(np.asarray(value, dtype=dtype))


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"轴 {axis} 超出范围, 张量形状 {x.shape}")
    return axis % x.ndim


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    # 标量广播的反向：把梯度求和回操作数的形状
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum(), dtype=grad.dtype).reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"{op}: 形状不兼容 {a.shape} 与 {b.shape}")


# ---------------------------------------------------------------------------
# 逐元素运算
# ---------------------------------------------------------------------------

def elementwise(a, b, op: str) -> Tensor:
    """
    逐元素二元运算，op ∈ {add, sub, mul}

    两个操作数形状相同，或其中一个只有一个元素（标量广播）。
    """
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a, b, op)
    ad, bd = a.data, b.data
    if op == "add":
        out = ad + bd

        def _backward(g):
            return _reduce_to(g, a.shape), _reduce_to(g, b.shape)
    elif op == "sub":
        out = ad - bd

        def _backward(g):
            return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)
    elif op == "mul":
        out = ad * bd

        def _backward(g):
            return _reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)
    else:
        raise ContractError(f"未知的逐元素运算: {op}")
    return _emit(op, (a, b), out, _backward)


def add(a, b) -> Tensor:
    return elementwise(a, b, "add")


def sub(a, b) -> Tensor:
    return elementwise(a, b, "sub")


def mul(a, b) -> Tensor:
    return elementwise(a, b, "mul")


def leaky_relu(x: Tensor, slope: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    """max(x, slope·x)，slope ∈ (0, 1)"""
    if not 0.0 < slope < 1.0:
        raise ConfigurationError(f"leaky_relu 斜率必须在 (0, 1) 内, 实际 {slope}")
    positive = x.data > 0
    out = np.where(positive, x.data, x.data * x.dtype.type(slope))

    def _backward(g):
        return (np.where(positive, g, g * g.dtype.type(slope)),)

    return _emit("leaky_relu", (x,), out, _backward)


def sigmoid(x: Tensor) -> Tensor:
    # 分正负两支计算，避免 exp 溢出
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)

    def _backward(g):
        return (g * out * (1.0 - out),)

    return _emit("sigmoid", (x,), out, _backward)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ContractError("log 的输入必须全部为正数（调用方应先截断概率）")
    out = np.log(x.data)

    def _backward(g):
        return (g / x.data,)

    return _emit("log", (x,), out, _backward)


def power(x: Tensor, p: float) -> Tensor:
    out = np.power(x.data, x.dtype.type(p))

    def _backward(g):
        if p == 0:
            return (np.zeros_like(x.data),)
        return (g * x.dtype.type(p) * np.power(x.data, x.dtype.type(p - 1)),)

    return _emit("power", (x,), out, _backward)


def clamp(x: Tensor, low: float, high: float) -> Tensor:
    """截断到 [low, high]，区间外梯度为 0"""
    inside = (x.data >= low) & (x.data <= high)
    out = np.clip(x.data, low, high).astype(x.dtype)

    def _backward(g):
        return (np.where(inside, g, 0).astype(g.dtype),)

    return _emit("clamp", (x,), out, _backward)


# ---------------------------------------------------------------------------
# 结构运算
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"reshape 元素个数不一致: {x.shape} -> {shape}")
    out = x.data.reshape(shape)

    def _backward(g):
        return (g.reshape(x.shape),)

    return _emit("reshape", (x,), out, _backward)


def transpose2d(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose2d 需要二维张量, 实际形状 {x.shape}")
    out = np.ascontiguousarray(x.data.T)

    def _backward(g):
        return (np.ascontiguousarray(g.T),)

    return _emit("transpose2d", (x,), out, _backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat 至少需要一个张量")
    tensors = tuple(tensors)
    axis = _check_axis(tensors[0], axis)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[d] != ref[d] for d in range(len(ref)) if d != axis):
            raise ShapeError(f"concat 形状不兼容: {ref} 与 {t.shape} (axis={axis})")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit("concat", tensors, out, _backward)


def repeat(x: Tensor, axis: int, times: int) -> Tensor:
    """沿已有的轴平铺 times 份（整块复制，等价于 np.tile 在该轴上）"""
    axis = _check_axis(x, axis)
    if times < 1:
        raise ShapeError(f"repeat 次数必须 ≥ 1, 实际 {times}")
    out = np.concatenate([x.data] * times, axis=axis)
    n = x.shape[axis]

    def _backward(g):
        split_shape = x.shape[:axis] + (times, n) + x.shape[axis + 1:]
        return (g.reshape(split_shape).sum(axis=axis),)

    return _emit("repeat", (x,), out, _backward)


# ---------------------------------------------------------------------------
# 归约
# ---------------------------------------------------------------------------

def reduce_sum(x: Tensor, axis: Optional[int] = None) -> Tensor:
    if axis is None:
        out = np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype)

        def _backward(g):
            return (np.broadcast_to(g, x.shape).copy(),)
    else:
        axis = _check_axis(x, axis)
        out = x.data.sum(axis=axis)

        def _backward(g):
            return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _emit("reduce_sum", (x,), out, _backward)


def reduce_mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    """算术平均，axis 被移除；axis=None 时对全部元素取平均得到标量"""
    if axis is None:
        n = x.size
        out = np.asarray(x.data.sum(dtype=np.float64) / n, dtype=x.dtype)

        def _backward(g):
            return (np.full(x.shape, g / n, dtype=x.dtype),)
    else:
        axis = _check_axis(x, axis)
        n = x.shape[axis]
        out = (x.data.sum(axis=axis) / x.dtype.type(n)).astype(x.dtype)

        def _backward(g):
            return (np.broadcast_to(np.expand_dims(g, axis) / g.dtype.type(n), x.shape).copy(),)

    return _emit("reduce_mean", (x,), out, _backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """减去轴上最大值后再取指数，保证数值稳定"""
    axis = _check_axis(x, axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", (x,), out, _backward)


# ---------------------------------------------------------------------------
# 线性代数与卷积
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul 需要二维张量, 实际 {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul 内维不一致: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def _backward(g):
        return g @ b.data.T, a.data.T @ g

    return _emit("matmul", (a, b), out, _backward)


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # (N, Cin, H, W) -> (N, H*W, Cin*kh*kw)
    n, cin, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))  # (N, Cin, H, W, kh, kw)
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, h * w, cin * kh * kw)


def _col2im(cols: np.ndarray, shape: Tuple[int, int, int, int], kh: int, kw: int) -> np.ndarray:
    n, cin, h, w = shape
    ph, pw = kh // 2, kw // 2
    blocks = cols.reshape(n, h, w, cin, kh, kw)
    padded = np.zeros((n, cin, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            padded[:, :, i:i + h, j:j + w] += blocks[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return padded[:, :, ph:ph + h, pw:pw + w]


def conv2d(input: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    步长 1、零填充 same 的二维卷积

    Args:
        input: (Cin, H, W)，或一批共享权重的 (N, Cin, H, W)
        weight: (Cout, Cin, kh, kw)，kh、kw 为奇数
        bias: (Cout,) 或 None

    Returns:
        (Cout, H, W) 或 (N, Cout, H, W)
    """
    if input.ndim not in (3, 4):
        raise ShapeError(f"conv2d 输入必须是 (Cin,H,W) 或 (N,Cin,H,W), 实际 {input.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d 权重必须是四维, 实际 {weight.shape}")
    batched = input.ndim == 4
    x = input.data if batched else input.data[None]
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d 输入通道 {cin} 与权重通道 {wcin} 不一致")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d 卷积核尺寸必须为奇数, 实际 {kh}x{kw}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d 偏置形状应为 ({cout},), 实际 {bias.shape}")

    cols = _im2col(x, kh, kw)
    wmat = weight.data.reshape(cout, -1)
    out = np.matmul(cols, wmat.T).transpose(0, 2, 1).reshape(n, cout, h, w)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    if not batched:
        out = out[0]
    out = np.ascontiguousarray(out)

    def _backward(g):
        gb = g if batched else g[None]
        gmat = gb.reshape(n, cout, h * w)
        gw = np.tensordot(gmat, cols, axes=([0, 2], [0, 1])).reshape(weight.shape)
        gcols = np.matmul(gmat.transpose(0, 2, 1), wmat)
        gx = _col2im(gcols, (n, cin, h, w), kh, kw)
        grads = [gx if batched else gx[0], gw]
        if bias is not None:
            grads.append(gb.sum(axis=(0, 2, 3)))
        return grads

    inputs = (input, weight) if bias is None else (input, weight, bias)
    return _emit("conv2d", inputs, out, _backward)


def interpolation_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """
    一维双线性插值矩阵 (n_out, n_in)，align_corners=False

    采样点位于像素中心: src = (o + 0.5)·n_in/n_out − 0.5，小于 0 时截到 0。
    """
    scale = n_in / n_out
    src = np.maximum((np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - w1)
    np.add.at(m, (rows, i1), w1)
    return m.astype(dtype)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """
    双线性缩放最后两个空间维度，(C,H,W) 或 (N,C,H,W) 均可

    尺寸相同时为恒等映射。
    """
    if x.ndim < 2:
        raise ShapeError(f"bilinear_resize 至少需要二维张量, 实际 {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize 输出尺寸必须 ≥ 1, 实际 {out_h}x{out_w}")
    in_h, in_w = x.shape[-2:]
    if (in_h, in_w) == (out_h, out_w):
        return reshape(x, x.shape)
    ry = interpolation_matrix(in_h, out_h, x.dtype)
    rx = interpolation_matrix(in_w, out_w, x.dtype)
    out = np.matmul(np.matmul(ry, x.data), rx.T)

    def _backward(g):
        return (np.matmul(np.matmul(ry.T, g), rx),)

    return _emit("bilinear_resize", (x,), out, _backward)


# ---------------------------------------------------------------------------
# 反向传播
# ---------------------------------------------------------------------------

def backward(loss: Tensor, tape: Tape, inputs: Optional[Sequence[Tensor]] = None) -> None:
    """
    从标量 loss 反向传播，把 ∂loss/∂t 累加进每个 requires_grad 叶子张量的 grad

    连续调用两次而不清零会累加。inputs 中列出的张量即使与 loss 无关也会得到
    （全零的）梯度缓冲区。
    """
    if loss.size != 1:
        raise ContractError(f"backward 需要标量损失, 实际形状 {loss.shape}")
    if not loss.requires_grad:
        if inputs:
            for t in inputs:
                _accumulate_leaf(t, np.zeros_like(t.data))
            return
        raise ContractError("损失不依赖任何需要梯度的张量")

    produced = {id(r.output) for r in tape.records}
    if id(loss) not in produced and tape.records:
        raise ContractError("损失不是由该 tape 记录的计算产生的")

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    if id(loss) not in produced:
        leaves[id(loss)] = loss

    for record in reversed(tape.records):
        g = grads.pop(id(record.output), None)
        if g is None:
            continue
        input_grads = record.backward(g)
        for tensor, tg in zip(record.inputs, input_grads):
            if tg is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + tg
            else:
                grads[key] = np.asarray(tg, dtype=tensor.dtype)
            if key not in produced:
                leaves[key] = tensor

    for key, tensor in leaves.items():
        g = grads.get(key)
        if g is not None:
            _accumulate_leaf(tensor, g)
    for t in inputs or ():
        if t.grad is None:
            t.grad = np.zeros_like(t.data)


def _accumulate_leaf(tensor: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=tensor.dtype).reshape(tensor.shape)
    tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g
