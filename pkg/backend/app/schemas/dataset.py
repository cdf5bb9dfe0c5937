# app/schemas/dataset.py

import enum
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.exceptions import ShapeError, UnknownIdError
from app.core.tensor import Tensor


class SplitEnum(str, enum.Enum):
    train = "train"
    test = "test"


def _check_binary(mask: Tensor, what: str) -> None:
    if not np.all((mask.data == 0) | (mask.data == 1)):
        raise ValueError(f"{what} 必须是 {{0,1}} 二值掩码")


class ManifestRow(BaseModel):
    """manifest.tsv 中的一行，行顺序即数据集的规范顺序"""
    id: str = Field(..., min_length=1)
    domain: str
    split: SplitEnum = SplitEnum.train


class DatasetItem(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    id: str = Field(..., min_length=1)
    image: Tensor  # (Cq, H, W)，取值 [0, 1]
    mask: Tensor   # (1, H, W)，二值
    domain: str
    split: SplitEnum = SplitEnum.train

    @model_validator(mode="after")
    def _check_shapes(self) -> "DatasetItem":
        if self.image.ndim != 3 or self.mask.ndim != 3 or self.mask.shape[0] != 1:
            raise ValueError(f"图像应为 (C,H,W)、掩码应为 (1,H,W), 实际 {self.image.shape} / {self.mask.shape}")
        if self.image.shape[1:] != self.mask.shape[1:]:
            raise ValueError(f"图像与掩码空间尺寸不一致: {self.image.shape} / {self.mask.shape}")
        _check_binary(self.mask, f"样本 {self.id} 的掩码")
        return self

    def manifest_row(self) -> ManifestRow:
        return ManifestRow(id=self.id, domain=self.domain, split=self.split)


class Dataset:
    """
    有序的数据集合

    条目顺序就是 manifest 顺序，嵌入索引的构建顺序也由它决定。
    """

    def __init__(self, items: Iterable[DatasetItem]):
        self.items: List[DatasetItem] = list(items)
        self._by_id: Dict[str, DatasetItem] = {}
        for item in self.items:
            if item.id in self._by_id:
                raise ValueError(f"数据集中存在重复的样本ID: {item.id}")
            self._by_id[item.id] = item

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._by_id

    def get(self, item_id: str) -> DatasetItem:
        try:
            return self._by_id[item_id]
        except KeyError:
            raise UnknownIdError(f"数据集中不存在样本: {item_id}") from None

    @property
    def ids(self) -> List[str]:
        return [item.id for item in self.items]

    def manifest(self) -> List[ManifestRow]:
        return [item.manifest_row() for item in self.items]

    def split(self, split: SplitEnum, domains: Optional[Sequence[str]] = None) -> List[DatasetItem]:
        """按 manifest 顺序返回某个划分（可选只保留指定域）"""
        wanted = set(domains) if domains else None
        return [
            item for item in self.items
            if item.split == split and (wanted is None or item.domain in wanted)
        ]

    def train(self, domains: Optional[Sequence[str]] = None) -> List[DatasetItem]:
        return self.split(SplitEnum.train, domains)

    def test(self, domains: Optional[Sequence[str]] = None) -> List[DatasetItem]:
        return self.split(SplitEnum.test, domains)

    def domains(self) -> List[str]:
        seen: Dict[str, None] = {}
        for item in self.items:
            seen.setdefault(item.domain, None)
        return list(seen)

    def with_splits(self, assignment: Dict[str, SplitEnum]) -> "Dataset":
        return Dataset(item.model_copy(update={"split": assignment[item.id]}) for item in self.items)


class Episode(BaseModel):
    """
    一次少样本分割任务：查询图像（训练时带掩码）+ K 个支持图像/掩码对
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    query_id: str = ""
    query_image: Tensor
    query_mask: Optional[Tensor] = None
    support_ids: List[str] = Field(default_factory=list)
    support_images: List[Tensor]
    support_masks: List[Tensor]

    @model_validator(mode="after")
    def _check_episode(self) -> "Episode":
        k = len(self.support_images)
        if k < 1:
            raise ValueError("支持集至少需要 1 个样本")
        if len(self.support_masks) != k:
            raise ValueError(f"支持图像 {k} 个, 掩码 {len(self.support_masks)} 个, 数量不一致")
        if self.support_ids and len(self.support_ids) != k:
            raise ValueError("support_ids 数量与支持样本不一致")
        spatial = self.query_image.shape[1:]
        channels = self.query_image.shape[0]
        for image, mask in zip(self.support_images, self.support_masks):
            if image.shape != (channels, *spatial) or mask.shape != (1, *spatial):
                raise ShapeError(
                    f"支持样本尺寸 {image.shape}/{mask.shape} 与查询 {self.query_image.shape} 不一致"
                )
            _check_binary(mask, "支持掩码")
        if self.query_mask is not None:
            if self.query_mask.shape != (1, *spatial):
                raise ShapeError(f"查询掩码尺寸 {self.query_mask.shape} 与图像不一致")
            _check_binary(self.query_mask, "查询掩码")
        return self

    @property
    def k(self) -> int:
        return len(self.support_images)
