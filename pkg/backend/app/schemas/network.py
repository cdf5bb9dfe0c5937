# app/schemas/network.py

from typing import List

from pydantic import BaseModel, ConfigDict, Field, model_validator


class NetworkConfig(BaseModel):
    """
    分割网络结构配置

    默认 3 个尺度、通道 [16, 32, 64]、注意力降维比例 2。
    """
    model_config = ConfigDict(frozen=True)

    levels: int = Field(default=3, ge=2, description="编码器尺度数")
    channels: List[int] = Field(default_factory=lambda: [16, 32, 64], description="每个尺度的通道数")
    ratio: int = Field(default=2, ge=1, description="联合注意力通道降维比例 C' = C / ratio")
    in_channels_query: int = Field(default=1, ge=1, description="查询图像通道数（灰度为1）")
    leaky_slope: float = Field(default=0.01, gt=0.0, lt=1.0, description="leakyReLU 负半轴斜率")
    use_attention: bool = Field(default=True, description="是否启用联合注意力（关闭即恒等直通，用于消融）")

    @model_validator(mode="after")
    def _check_channels(self) -> "NetworkConfig":
        if len(self.channels) != self.levels:
            raise ValueError(f"channels 长度 {len(self.channels)} 与 levels {self.levels} 不一致")
        for c in self.channels:
            if c < 1:
                raise ValueError(f"通道数必须为正, 实际 {c}")
            if c % self.ratio != 0:
                raise ValueError(f"通道数 {c} 不能被 ratio {self.ratio} 整除")
        return self

    @property
    def in_channels_support(self) -> int:
        # 支持图像与掩码在通道上拼接
        return self.in_channels_query + 1

    @property
    def size_divisor(self) -> int:
        """输入边长必须能被它整除"""
        return 2 ** (self.levels - 1)
