# app/core/exceptions.py

from typing import Optional


class MatchSegError(Exception):
    """
    所有业务异常的基类

    exit_code 决定命令行进程的退出码，detail 为一行诊断信息。
    """

    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


# --- 张量与计算图 ---
class ShapeError(MatchSegError, ValueError):
    """形状不匹配"""
    exit_code = 2


class ContractError(MatchSegError, ValueError):
    """调用前置条件不满足（例如对非标量调用 backward）"""
    exit_code = 2


class ConfigurationError(MatchSegError, ValueError):
    """配置非法（通道数不能整除、尺寸不能整除等）"""
    exit_code = 2


# --- 检索 ---
class DegenerateEmbeddingError(MatchSegError, ValueError):
    """零范数的嵌入向量"""
    exit_code = 3


class DimensionMismatchError(MatchSegError, ValueError):
    """嵌入维度不一致"""
    exit_code = 3


class EmptyPoolError(MatchSegError):
    """候选支持集为空"""
    exit_code = 3


class MissingEmbeddingError(MatchSegError, KeyError):
    """外部嵌入文件缺少部分样本"""
    exit_code = 3

    def __init__(self, missing_ids: list[str]):
        preview = ", ".join(missing_ids[:10])
        more = f" 等共 {len(missing_ids)} 个" if len(missing_ids) > 10 else ""
        super().__init__(f"嵌入文件缺少样本: {preview}{more}")
        self.missing_ids = missing_ids

    def __str__(self) -> str:
        return self.detail


class UnknownIdError(MatchSegError, KeyError):
    """数据集中不存在的样本ID"""
    exit_code = 3

    def __str__(self) -> str:
        return self.detail


# --- 训练 ---
class InsufficientSupportError(MatchSegError):
    """支持池小于所需的 K"""
    exit_code = 4


class MissingGradientError(MatchSegError):
    """可训练张量没有梯度"""
    exit_code = 4


class DivergenceError(MatchSegError):
    """损失出现 NaN/Inf"""
    exit_code = 4

    def __init__(self, step: int, loss: float):
        super().__init__(f"训练发散: 第 {step} 步损失为 {loss}")
        self.step = step
        self.loss = loss


# --- 文件格式 ---
class TensorFormatError(MatchSegError):
    """二进制文件格式错误，offset 指向出错的字节位置"""
    exit_code = 5

    def __init__(self, detail: str, offset: Optional[int] = None):
        if offset is not None:
            detail = f"{detail} (字节偏移 {offset})"
        super().__init__(detail)
        self.offset = offset


class BadMagicError(TensorFormatError):
    pass


class UnsupportedVersionError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    def __init__(self, expected: int, actual: int, offset: Optional[int] = None):
        super().__init__(f"文件被截断: 需要 {expected} 字节, 实际 {actual} 字节", offset)
        self.expected = expected
        self.actual = actual


class DimensionOverflowError(TensorFormatError):
    pass


# --- 命令行 ---
class CliConfigError(MatchSegError):
    """配置文件或命令行参数错误"""
    exit_code = 2
