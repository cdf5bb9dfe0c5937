# app/cli/commands/retrieval.py

import argparse
from pathlib import Path

from app.cli.deps import emit, get_dataset, get_index
from app.services import embedding_service


def run_embed(args: argparse.Namespace) -> int:
    dataset = get_dataset(args.data)
    index = embedding_service.build_index(dataset, args.provider)
    embedding_service.save_index(index, args.out)
    return 0


def run_select(args: argparse.Namespace) -> int:
    dataset = get_dataset(args.data)
    index = get_index(args.emb)
    dataset.get(args.query)
    # 支持池 = 训练划分（不含查询自身）
    pool = [item.id for item in dataset.train() if item.id != args.query]
    hits = embedding_service.select_supports(index, args.query, args.k, pool_ids=pool)
    emit(embedding_service.format_hits(hits))
    return 0


def register(subparsers) -> None:
    embed = subparsers.add_parser("embed", help="为数据集构建嵌入索引 (MEMB)")
    embed.add_argument("--data", type=Path, required=True, help="数据集目录")
    embed.add_argument("--out", type=Path, required=True, help="输出的索引文件")
    embed.add_argument("--provider", default=embedding_service.DESK_PROVIDER,
                       help="desk 或 file:PATH（外部嵌入，MEMB 或制表符文本）")
    embed.set_defaults(func=run_embed)

    select = subparsers.add_parser("select", help="为查询选出最相似的 K 个支持样本")
    select.add_argument("--emb", type=Path, required=True, help="嵌入索引文件")
    select.add_argument("--data", type=Path, required=True, help="数据集目录")
    select.add_argument("--query", required=True, help="查询样本ID")
    select.add_argument("--k", type=int, default=8, help="支持集大小")
    select.set_defaults(func=run_select)
