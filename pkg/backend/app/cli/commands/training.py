# app/cli/commands/training.py

import argparse
from pathlib import Path

from app.cli.config_file import build_configs, parse_config_file
from app.cli.deps import emit, get_dataset, get_index, parse_str_list
from app.core.logging_config import get_logger
from app.crud import crud_weights
from app.schemas.training import SelectionStrategy
from app.services import embedding_service, training_service

logger = get_logger(__name__)


def run_train(args: argparse.Namespace) -> int:
    config, network = build_configs(
        parse_config_file(args.config),
        {
            "selection_strategy": args.strategy,
            "steps": args.steps,
            "seed": args.seed,
            "support_k": args.k,
            "train_domains": parse_str_list(args.train_domains),
        },
    )
    dataset = get_dataset(args.data)
    index = get_index(args.emb)
    if index is None and config.selection_strategy == SelectionStrategy.clip:
        logger.info("未指定 --emb，使用 desk 编码器在内存中构建嵌入索引")
        index = embedding_service.build_index(dataset)

    result = training_service.train(
        dataset,
        config,
        network,
        index,
        on_step=lambda step, loss: emit(training_service.format_loss_log(step, loss)),
    )
    crud_weights.save_bundle(result.params, network, args.out)
    logger.info(f"模型已保存: {args.out}")
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="Episode 式训练，损失日志输出到标准输出")
    parser.add_argument("--data", type=Path, required=True, help="数据集目录")
    parser.add_argument("--config", type=Path, default=None, help="key=value 配置文件")
    parser.add_argument("--out", type=Path, required=True, help="输出的权重包 (MWTS)")
    parser.add_argument("--strategy", choices=[s.value for s in SelectionStrategy], default=None,
                        help="支持集选择策略，覆盖配置文件")
    parser.add_argument("--emb", type=Path, default=None, help="嵌入索引；clip 策略缺省时用 desk 编码器")
    parser.add_argument("--steps", type=int, default=None, help="训练步数，覆盖配置文件")
    parser.add_argument("--seed", type=int, default=None, help="随机种子，覆盖配置文件")
    parser.add_argument("--k", type=int, default=None, help="支持集大小，覆盖配置文件")
    parser.add_argument("--train-domains", default=None, help="只用这些域训练，逗号分隔")
    parser.set_defaults(func=run_train)
