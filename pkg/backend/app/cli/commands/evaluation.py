# app/cli/commands/evaluation.py

import argparse
from pathlib import Path

from app.cli.config_file import build_configs, parse_config_file
from app.cli.deps import emit, get_dataset, get_index, get_model, parse_int_list, parse_str_list
from app.core.exceptions import CliConfigError
from app.core.metrics import format_ablation_table, format_metric_report
from app.crud import crud_tensor
from app.schemas.training import SelectionStrategy
from app.services import evaluation_service

STRATEGIES = [s.value for s in SelectionStrategy]


def _configs(args: argparse.Namespace):
    """评估类命令只需要 seed、image_size 等训练配置；网络结构以权重包为准"""
    config, _ = build_configs(parse_config_file(args.config), {"seed": args.seed})
    params, network = get_model(args.model)
    config.check_network(network)
    return config, params, network


def _require_index(args: argparse.Namespace, strategy: str):
    index = get_index(args.emb)
    if index is None and strategy == SelectionStrategy.clip.value:
        raise CliConfigError("clip 策略需要 --emb 嵌入索引")
    return index


def run_predict(args: argparse.Namespace) -> int:
    config, params, network = _configs(args)
    dataset = get_dataset(args.data)
    index = _require_index(args, args.strategy)
    mask, probs, _ = evaluation_service.predict(
        params, network, dataset, index, args.query, config,
        strategy=SelectionStrategy(args.strategy), support_k=args.k,
    )
    crud_tensor.save_tensor(mask, args.out)
    if args.probs_out is not None:
        crud_tensor.save_tensor(probs, args.probs_out)
    return 0


def run_eval(args: argparse.Namespace) -> int:
    config, params, network = _configs(args)
    dataset = get_dataset(args.data)
    index = _require_index(args, args.strategy)
    report = evaluation_service.evaluate(
        params, network, dataset, index, config,
        strategy=SelectionStrategy(args.strategy),
        repeats=args.repeats,
        ensemble=args.ensemble,
        support_k=args.k,
        domains=parse_str_list(args.domains),
        pool_domains=config.train_domains,
    )
    emit(format_metric_report(report.rows))
    return 0


def run_ablate(args: argparse.Namespace) -> int:
    config, params, network = _configs(args)
    dataset = get_dataset(args.data)
    index = _require_index(args, SelectionStrategy.clip.value)
    rows = evaluation_service.ablate(
        params, network, dataset, index, config,
        k_list=parse_int_list(args.k_list, "--k-list"),
        repeats=args.repeats,
        domains=parse_str_list(args.domains),
    )
    emit(format_ablation_table(rows))
    return 0


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", type=Path, required=True, help="权重包 (MWTS)")
    parser.add_argument("--data", type=Path, required=True, help="数据集目录")
    parser.add_argument("--emb", type=Path, default=None, help="嵌入索引 (MEMB)，clip 策略必需")
    parser.add_argument("--config", type=Path, default=None, help="key=value 配置文件（image_size、seed 等）")
    parser.add_argument("--seed", type=int, default=None, help="随机种子，覆盖配置文件")


def register(subparsers) -> None:
    predict = subparsers.add_parser("predict", help="分割单个查询，输出二值掩码 (MSEG)")
    _common(predict)
    predict.add_argument("--query", required=True, help="查询样本ID")
    predict.add_argument("--k", type=int, default=8, help="支持集大小")
    predict.add_argument("--strategy", choices=STRATEGIES, default=SelectionStrategy.clip.value)
    predict.add_argument("--out", type=Path, required=True, help="输出的掩码文件")
    predict.add_argument("--probs-out", type=Path, default=None, help="可选：同时输出概率图")
    predict.set_defaults(func=run_predict)

    evaluate = subparsers.add_parser("eval", help="在测试划分上评估，指标报告输出到标准输出")
    _common(evaluate)
    evaluate.add_argument("--strategy", choices=STRATEGIES, default=SelectionStrategy.clip.value)
    evaluate.add_argument("--repeats", type=int, default=1, help="随机策略的重复次数")
    evaluate.add_argument("--ensemble", action="store_true", help="平均各次重复的概率图后再阈值化")
    evaluate.add_argument("--k", type=int, default=8, help="支持集大小")
    evaluate.add_argument("--domains", default=None, help="只评估这些域的测试查询，逗号分隔")
    evaluate.set_defaults(func=run_eval)

    ablate = subparsers.add_parser("ablate", help="支持集选择策略与大小的对比表")
    _common(ablate)
    ablate.add_argument("--k-list", default="2,4,8", help="逗号分隔的 K 列表")
    ablate.add_argument("--repeats", type=int, default=20, help="随机策略的重复次数")
    ablate.add_argument("--domains", default=None, help="只评估这些域的测试查询，逗号分隔")
    ablate.set_defaults(func=run_ablate)
