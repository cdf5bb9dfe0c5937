# app/cli/commands/data.py

import argparse
from pathlib import Path

from app.cli.deps import emit
from app.services import dataset_service


def run_synth(args: argparse.Namespace) -> int:
    dataset = dataset_service.synth_generate(
        out_dir=args.out,
        n=args.n,
        domains=args.domains,
        size=args.size,
        seed=args.seed,
        train_fraction=args.train_fraction,
    )
    emit(f"{args.out}\t{len(dataset.train())}\t{len(dataset.test())}\n")
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("synth", help="生成合成多域分割数据集")
    parser.add_argument("--out", type=Path, required=True, help="输出目录")
    parser.add_argument("--n", type=int, required=True, help="样本总数")
    parser.add_argument("--domains", type=int, default=2, help="域的个数")
    parser.add_argument("--size", type=int, default=32, help="图像边长")
    parser.add_argument("--seed", type=int, default=0, help="随机种子")
    parser.add_argument("--train-fraction", type=float, default=dataset_service.DEFAULT_TRAIN_FRACTION,
                        help="每个域中训练集的比例")
    parser.set_defaults(func=run_synth)
