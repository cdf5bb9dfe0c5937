# app/core/synth.py

"""
合成多域分割数据

每个样本是纹理背景上的一个前景块（椭圆或圆角矩形），掩码就是该块的精确栅格化。
每个域有固定的风格：背景亮度、纹理、噪声幅度、前景对比度符号。纹理只加在背景上。
风格常量属于数据格式的一部分，修改它们必须提升 SYNTH_STYLE_VERSION。

前三个域（默认基准）的亮度带互不重叠：域 0、2 是暗背景亮前景，域 1 是亮背景暗前景，
三者的前景都落在 [0.43, 0.67]，背景落在其外侧，任一亮度值在三个域里的标签一致。
"""

import math
from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict

from app.core.exceptions import ConfigurationError
from app.core.rng import RngStream
from app.core.tensor import Tensor
from app.schemas.dataset import DatasetItem, SplitEnum

SYNTH_STYLE_VERSION = 2
MIN_FOREGROUND_FRACTION = 0.04
MAX_FOREGROUND_FRACTION = 0.40
MAX_BLOB_ATTEMPTS = 1000

# (背景亮度下限, 背景亮度上限, 噪声σ, 前景对比度符号, 纹理幅度, 纹理空间频率)
_DOMAIN_STYLES = (
    (0.03, 0.10, 0.020, +1, 0.04, 0.35),
    (0.88, 0.95, 0.020, -1, 0.03, 0.20),
    (0.15, 0.22, 0.015, +1, 0.03, 0.60),
    (0.45, 0.60, 0.040, -1, 0.03, 0.10),
    (0.20, 0.35, 0.025, -1, 0.06, 0.45),
    (0.75, 0.90, 0.020, -1, 0.05, 0.30),
)
FOREGROUND_CONTRAST = 0.45


class DomainStyle(BaseModel):
    model_config = ConfigDict(frozen=True)

    background_low: float
    background_high: float
    noise_sigma: float
    contrast_sign: int
    texture_amplitude: float
    texture_frequency: float


class BlobShape(BaseModel):
    """前景块的解析描述，像素 (i, j) 以整数坐标为中心"""
    model_config = ConfigDict(frozen=True)

    kind: str  # "ellipse" | "rounded_rect"
    center_y: float
    center_x: float
    half_h: float
    half_w: float
    angle: float
    corner: float = 0.0


def domain_style(domain: int) -> DomainStyle:
    """第 domain 个域的风格；超出表长时循环并整体平移背景亮度"""
    base = _DOMAIN_STYLES[domain % len(_DOMAIN_STYLES)]
    shift = 0.03 * (domain // len(_DOMAIN_STYLES))
    low, high = base[0] + shift, base[1] + shift
    if low > 0.95:
        low, high = low - 0.9, high - 0.9
    return DomainStyle(
        background_low=low, background_high=min(high, 0.95), noise_sigma=base[2],
        contrast_sign=base[3], texture_amplitude=base[4], texture_frequency=base[5],
    )


def blob_membership(shape: BlobShape, height: int, width: int) -> np.ndarray:
    """逐像素判断是否落在前景块内，返回 {0,1} 的 (H, W) 数组"""
    yy, xx = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    dy, dx = yy - shape.center_y, xx - shape.center_x
    cos_a, sin_a = math.cos(shape.angle), math.sin(shape.angle)
    # 旋转到块的局部坐标
    u = cos_a * dx + sin_a * dy
    v = -sin_a * dx + cos_a * dy
    if shape.kind == "ellipse":
        inside = (u / shape.half_w) ** 2 + (v / shape.half_h) ** 2 <= 1.0
    elif shape.kind == "rounded_rect":
        qx = np.abs(u) - (shape.half_w - shape.corner)
        qy = np.abs(v) - (shape.half_h - shape.corner)
        outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
        inner = np.minimum(np.maximum(qx, qy), 0.0)
        inside = outside + inner - shape.corner <= 0.0
    else:
        raise ConfigurationError(f"未知的前景形状: {shape.kind}")
    return inside.astype(np.float32)


def _sample_blob(rng: RngStream, size: int) -> BlobShape:
    kind = "ellipse" if rng.random() < 0.5 else "rounded_rect"
    half_h = rng.uniform(0.12, 0.32) * size
    half_w = rng.uniform(0.12, 0.32) * size
    margin = 0.15 * size
    return BlobShape(
        kind=kind,
        center_y=rng.uniform(margin, size - 1 - margin),
        center_x=rng.uniform(margin, size - 1 - margin),
        half_h=half_h,
        half_w=half_w,
        angle=rng.uniform(0.0, math.pi),
        corner=0.3 * min(half_h, half_w) if kind == "rounded_rect" else 0.0,
    )


def generate_item(item_id: str, domain: int, size: int, rng: RngStream) -> tuple[DatasetItem, BlobShape]:
    """生成一个样本；重新采样前景块直到面积占比落在 [4%, 40%]"""
    style = domain_style(domain)
    for _ in range(MAX_BLOB_ATTEMPTS):
        shape = _sample_blob(rng, size)
        mask = blob_membership(shape, size, size)
        fraction = float(mask.mean())
        if MIN_FOREGROUND_FRACTION <= fraction <= MAX_FOREGROUND_FRACTION:
            break
    else:
        raise ConfigurationError(f"{MAX_BLOB_ATTEMPTS} 次尝试后仍无法生成面积合适的前景 (size={size})")

    yy, xx = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="ij")
    background = rng.uniform(style.background_low, style.background_high)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    direction = rng.uniform(0.0, math.pi)
    texture = style.texture_amplitude * np.sin(
        style.texture_frequency * (math.cos(direction) * xx + math.sin(direction) * yy) + phase
    )
    image = background + texture * (1.0 - mask) + style.contrast_sign * FOREGROUND_CONTRAST * mask
    image = image + rng.normal((size, size), scale=style.noise_sigma)
    image = np.clip(image, 0.0, 1.0)

    item = DatasetItem(
        id=item_id,
        image=Tensor(image[None]),
        mask=Tensor(mask[None]),
        domain=f"domain{domain}",
        split=SplitEnum.train,
    )
    return item, shape


def generate_items(n: int, domains: int, size: int, seed: int) -> List[tuple[DatasetItem, BlobShape]]:
    """
    生成 n 个样本，按 round-robin 分配到各域

    Returns:
        [(DatasetItem, BlobShape)]，按生成顺序
    """
    if domains < 1 or n < domains:
        raise ConfigurationError(f"需要 n ≥ domains ≥ 1, 实际 n={n}, domains={domains}")
    if size < 16:
        raise ConfigurationError(f"图像边长至少为 16, 实际 {size}")
    root = RngStream(seed, "synth", SYNTH_STYLE_VERSION)
    return [
        generate_item(f"img{i:05d}", i % domains, size, root.derive(i))
        for i in range(n)
    ]
