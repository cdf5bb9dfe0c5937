# app/schemas/training.py

import enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.exceptions import ConfigurationError
from app.schemas.network import NetworkConfig


class SelectionStrategy(str, enum.Enum):
    clip = "clip"      # 按嵌入余弦相似度选 top-K
    random = "random"  # 不放回随机抽取


class LossWeights(BaseModel):
    """复合损失权重 λ1·Dice + λ2·BCE + λ3·Focal"""
    model_config = ConfigDict(frozen=True)

    lambda1: float = Field(default=0.6, ge=0.0)
    lambda2: float = Field(default=0.3, ge=0.0)
    lambda3: float = Field(default=0.3, ge=0.0)

    @model_validator(mode="after")
    def _at_least_one(self) -> "LossWeights":
        if max(self.lambda1, self.lambda2, self.lambda3) <= 0:
            raise ValueError("损失权重至少有一个要大于 0")
        return self


class AugmentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    flip_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    max_rotation_deg: float = Field(default=30.0, ge=0.0, le=180.0)
    scale_min: float = Field(default=0.8, gt=0.0)
    scale_max: float = Field(default=1.2, gt=0.0)

    @model_validator(mode="after")
    def _scale_range(self) -> "AugmentConfig":
        if self.scale_min > self.scale_max:
            raise ValueError(f"scale_min {self.scale_min} 大于 scale_max {self.scale_max}")
        return self


class TrainConfig(BaseModel):
    """训练与评估配置，所有随机性只由 seed 决定"""
    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(default=1e-4, gt=0.0)
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    weight_decay: float = Field(default=1e-4, ge=0.0)
    steps: int = Field(default=1000, ge=0)
    support_k: int = Field(default=8, ge=1)
    selection_strategy: SelectionStrategy = SelectionStrategy.clip
    image_size: int = Field(default=32, ge=1)
    seed: int = 0
    augment: bool = True
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    augmentation: AugmentConfig = Field(default_factory=AugmentConfig)
    focal_gamma: float = Field(default=2.0, ge=0.0)
    focal_alpha: Optional[float] = Field(default=0.25, gt=0.0, le=1.0, description="None 表示不做 α 平衡")
    train_domains: Optional[List[str]] = Field(default=None, description="只用这些域训练（跨域实验）")
    log_every: int = Field(default=50, ge=1, description="按窗口汇报平均损失的步数")

    def check_network(self, network: NetworkConfig) -> None:
        """校验图像尺寸能被网络下采样次数整除"""
        if self.image_size % network.size_divisor != 0:
            raise ConfigurationError(
                f"image_size={self.image_size} 必须能被 2^(levels-1)={network.size_divisor} 整除"
            )
