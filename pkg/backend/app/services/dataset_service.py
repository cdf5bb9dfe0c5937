# app/services/dataset_service.py

from collections import defaultdict
from pathlib import Path
from typing import Dict, List

from app.core.exceptions import ContractError
from app.core.logging_config import get_logger
from app.core.rng import RngStream
from app.core.synth import generate_items
from app.core.utils import PathLike
from app.crud import crud_dataset
from app.schemas.dataset import Dataset, ManifestRow, SplitEnum

logger = get_logger(__name__)

DEFAULT_TRAIN_FRACTION = 0.8


def train_count(n: int, train_fraction: float) -> int:
    """round(fraction·n)，0.5 向上取整"""
    return int(train_fraction * n + 0.5)


def split_stratified(
    rows: List[ManifestRow],
    train_fraction: float = DEFAULT_TRAIN_FRACTION,
    seed: int = 0,
) -> List[ManifestRow]:
    """
    按域分层划分训练/测试集

    每个域独立打乱，前 n_train 个为训练集；输出保持输入的行顺序。
    n_train = round(fraction·n_d) 再夹到 [1, n_d − 1]，保证两侧都不为空，
    因此小域上会偏离 round(fraction·n_d)：例如 n_d=2、fraction=0.8 时得到 1/1 而不是 2/0。

    Args:
        rows: manifest 行
        train_fraction: 训练集比例
        seed: 随机种子，每个域用 (seed, "split", 域名) 派生独立子流

    Returns:
        带新 split 字段的 manifest 行
    """
    if not 0.0 < train_fraction < 1.0:
        raise ContractError(f"train_fraction 必须在 (0, 1) 之间, 实际 {train_fraction}")
    by_domain: Dict[str, List[int]] = defaultdict(list)
    for position, row in enumerate(rows):
        by_domain[row.domain].append(position)

    assignment: Dict[int, SplitEnum] = {}
    for domain, positions in by_domain.items():
        if len(positions) < 2:
            raise ContractError(f"域 {domain} 只有 {len(positions)} 个样本, 分层划分至少需要 2 个")
        order = RngStream(seed, "split", domain).permutation(len(positions))
        n_train = min(max(train_count(len(positions), train_fraction), 1), len(positions) - 1)
        for rank, idx in enumerate(order):
            assignment[positions[int(idx)]] = SplitEnum.train if rank < n_train else SplitEnum.test
        logger.debug(f"域 {domain}: 训练 {n_train} / 测试 {len(positions) - n_train}")

    return [row.model_copy(update={"split": assignment[i]}) for i, row in enumerate(rows)]


def apply_split(dataset: Dataset, train_fraction: float = DEFAULT_TRAIN_FRACTION, seed: int = 0) -> Dataset:
    rows = split_stratified(dataset.manifest(), train_fraction, seed)
    return dataset.with_splits({row.id: row.split for row in rows})


def synth_dataset(n: int, domains: int, size: int, seed: int, train_fraction: float = DEFAULT_TRAIN_FRACTION) -> Dataset:
    """在内存中生成合成数据集并完成分层划分"""
    items = [item for item, _ in generate_items(n, domains, size, seed)]
    return apply_split(Dataset(items), train_fraction, seed)


def synth_generate(
    out_dir: PathLike,
    n: int,
    domains: int,
    size: int,
    seed: int,
    train_fraction: float = DEFAULT_TRAIN_FRACTION,
) -> Dataset:
    """
    生成合成多域数据集并写入目录

    Returns:
        写入的数据集
    """
    logger.info(f"生成合成数据集: n={n}, domains={domains}, size={size}, seed={seed}, out={out_dir}")
    try:
        dataset = synth_dataset(n, domains, size, seed, train_fraction)
        crud_dataset.save_dataset(dataset, Path(out_dir))
    except Exception as e:
        logger.error(f"生成合成数据集失败: out={out_dir}, error={str(e)}", exc_info=True)
        raise
    logger.info(
        f"合成数据集已写入: {out_dir} (训练 {len(dataset.train())}, 测试 {len(dataset.test())}, "
        f"域 {dataset.domains()})"
    )
    return dataset


def load_dataset(data_dir: PathLike) -> Dataset:
    dataset = crud_dataset.load_dataset(data_dir)
    logger.info(f"加载数据集: {data_dir} ({len(dataset)} 个样本, 域 {dataset.domains()})")
    return dataset
