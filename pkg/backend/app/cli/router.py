# app/cli/router.py

import argparse
from typing import NoReturn

from app.cli.commands import data, evaluation, retrieval, training
from app.core.config import settings
from app.core.exceptions import CliConfigError


class CommandParser(argparse.ArgumentParser):
    """参数错误抛 CliConfigError，由 runner 统一输出一行诊断并返回退出码 2；子命令解析器沿用本类"""

    def error(self, message: str) -> NoReturn:
        raise CliConfigError(message if self.prog == "matchseg" else f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    """组装所有子命令"""
    parser = CommandParser(
        prog="matchseg",
        description=f"{settings.PROJECT_NAME}: 基于支持集匹配的少样本医学图像分割",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    # 数据: synth
    data.register(subparsers)
    # 检索: embed, select
    retrieval.register(subparsers)
    # 训练: train
    training.register(subparsers)
    # 推理与评估: predict, eval, ablate
    evaluation.register(subparsers)

    return parser
