# app/core/utils.py

import os
import tempfile
from pathlib import Path
from typing import Union

PathLike = Union[str, os.PathLike]


def atomic_write_bytes(path: PathLike, payload: bytes) -> Path:
    """
    原子写入二进制文件：先写同目录临时文件，成功后 rename

    失败时不会留下半截的目标文件。

    Args:
        path: 目标文件路径
        payload: 文件内容

    Returns:
        目标文件路径
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp_name, target)
    except BaseException:
        # 清理临时文件后继续抛出
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return target


def atomic_write_text(path: PathLike, text: str) -> Path:
    """原子写入 UTF-8 文本文件"""
    return atomic_write_bytes(path, text.encode("utf-8"))


def read_bytes(path: PathLike) -> bytes:
    """读取二进制文件"""
    with open(path, "rb") as f:
        return f.read()
