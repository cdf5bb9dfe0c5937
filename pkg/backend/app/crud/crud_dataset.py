# app/crud/crud_dataset.py

"""
数据集目录布局:
  root/manifest.tsv        制表符分隔，表头 id, domain, split；行顺序即规范顺序
  root/images/<id>.mseg    (Cq, H, W)
  root/masks/<id>.mseg     (1, H, W)
"""

import io
import os
import shutil
import tempfile
from pathlib import Path
from typing import List

import pandas as pd
from pydantic import ValidationError

from app.core.config import IMAGES_DIRNAME, MANIFEST_FILENAME, MASKS_DIRNAME, TENSOR_SUFFIX
from app.core.exceptions import ContractError
from app.core.utils import PathLike, atomic_write_text
from app.crud.crud_tensor import load_tensor, save_tensor
from app.schemas.dataset import Dataset, DatasetItem, ManifestRow

MANIFEST_COLUMNS = ["id", "domain", "split"]


def image_path(root: PathLike, item_id: str) -> Path:
    return Path(root) / IMAGES_DIRNAME / f"{item_id}{TENSOR_SUFFIX}"


def mask_path(root: PathLike, item_id: str) -> Path:
    return Path(root) / MASKS_DIRNAME / f"{item_id}{TENSOR_SUFFIX}"


def manifest_to_frame(rows: List[ManifestRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [[r.id, r.domain, r.split.value] for r in rows],
        columns=MANIFEST_COLUMNS,
    )


def save_manifest(rows: List[ManifestRow], root: PathLike) -> Path:
    buffer = io.StringIO()
    manifest_to_frame(rows).to_csv(buffer, sep="\t", index=False, lineterminator="\n")
    return atomic_write_text(Path(root) / MANIFEST_FILENAME, buffer.getvalue())


def load_manifest(root: PathLike) -> List[ManifestRow]:
    """
    读取 manifest.tsv

    所有列按字符串读取，不做缺失值推断。
    """
    path = Path(root) / MANIFEST_FILENAME
    if not path.is_file():
        raise ContractError(f"数据集目录缺少 {MANIFEST_FILENAME}: {root}")
    frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False)
    if list(frame.columns) != MANIFEST_COLUMNS:
        raise ContractError(f"manifest 表头应为 {MANIFEST_COLUMNS}, 实际 {list(frame.columns)}")
    try:
        return [
            ManifestRow(id=row.id, domain=row.domain, split=row.split)
            for row in frame.itertuples(index=False)
        ]
    except ValidationError as e:
        raise ContractError(f"manifest 内容非法: {e.errors()[0]['msg']}") from e


def _swap_in(staging: Path, root: Path) -> None:
    """把临时目录里的 images/、masks/ 和 manifest 换到 root；root 里的其他文件不动，manifest 最后落位"""
    if not root.exists():
        os.replace(staging, root)
        return
    retired = staging.with_name(f"{staging.name}.old")
    retired.mkdir()
    for name in (IMAGES_DIRNAME, MASKS_DIRNAME):
        if (root / name).exists():
            os.replace(root / name, retired / name)
        if (staging / name).exists():
            os.replace(staging / name, root / name)
    os.replace(staging / MANIFEST_FILENAME, root / MANIFEST_FILENAME)
    shutil.rmtree(retired, ignore_errors=True)
    shutil.rmtree(staging, ignore_errors=True)


def save_dataset(dataset: Dataset, root: PathLike) -> Path:
    """
    写出整个数据集

    所有文件先写进 root 旁边的临时目录，全部成功后再换到 root（已有的 images/、masks/ 和 manifest 被替换）；
    中途失败时删除临时目录，root 保持原样，不会留下半套文件。
    """
    root = Path(root)
    target = root.absolute()
    target.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent))
    try:
        staging.chmod(0o755)
        for item in dataset:
            save_tensor(item.image, image_path(staging, item.id))
            save_tensor(item.mask, mask_path(staging, item.id))
        save_manifest(dataset.manifest(), staging)
        _swap_in(staging, target)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    return root


def load_dataset(root: PathLike) -> Dataset:
    """按 manifest 顺序加载数据集"""
    items = []
    for row in load_manifest(root):
        img_file, msk_file = image_path(root, row.id), mask_path(root, row.id)
        for f in (img_file, msk_file):
            if not f.is_file():
                raise ContractError(f"样本 {row.id} 缺少文件: {f}")
        try:
            items.append(
                DatasetItem(
                    id=row.id,
                    image=load_tensor(img_file),
                    mask=load_tensor(msk_file),
                    domain=row.domain,
                    split=row.split,
                )
            )
        except ValidationError as e:
            raise ContractError(f"样本 {row.id} 非法: {e.errors()[0]['msg']}") from e
    try:
        return Dataset(items)
    except ValueError as e:
        raise ContractError(str(e)) from e
