# app/core/augment.py

import math
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import ndimage

from app.core.rng import RngStream
from app.core.tensor import Tensor, bilinear_resize
from app.schemas.training import AugmentConfig


class AugmentParams(BaseModel):
    """一次增强的具体参数，图像与其掩码共用"""
    model_config = ConfigDict(frozen=True)

    flip_h: bool = False
    flip_v: bool = False
    angle_deg: float = 0.0
    scale: float = 1.0
    # 裁剪左上角在缩放后画布中的位置；None 表示居中
    crop_y: int | None = None
    crop_x: int | None = None


def _canvas_size(size: int, scale: float) -> int:
    return max(1, int(round(size * scale)))


def sample_augment_params(rng: RngStream, height: int, width: int, config: AugmentConfig) -> AugmentParams:
    flip_h = rng.random() < config.flip_prob
    flip_v = rng.random() < config.flip_prob
    angle = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg)
    scale = rng.uniform(config.scale_min, config.scale_max)
    canvas_h, canvas_w = _canvas_size(height, scale), _canvas_size(width, scale)
    crop_y = rng.integers(0, abs(canvas_h - height) + 1)
    crop_x = rng.integers(0, abs(canvas_w - width) + 1)
    return AugmentParams(flip_h=flip_h, flip_v=flip_v, angle_deg=angle, scale=scale, crop_y=crop_y, crop_x=crop_x)


def _resample(plane: np.ndarray, matrix: np.ndarray, offset: np.ndarray, shape, order: int) -> np.ndarray:
    return ndimage.affine_transform(
        plane, matrix, offset=offset, output_shape=shape, order=order, mode="nearest"
    )


def _crop_or_pad(plane: np.ndarray, height: int, width: int, crop_y: int | None, crop_x: int | None) -> np.ndarray:
    """画布比目标大时裁剪，比目标小时复制边缘像素填充，位置由 crop_y/crop_x 决定"""
    ch, cw = plane.shape
    dy = abs(ch - height) // 2 if crop_y is None else crop_y
    dx = abs(cw - width) // 2 if crop_x is None else crop_x
    if ch >= height:
        src_y, dst_y, span_h = dy, 0, height
    else:
        src_y, dst_y, span_h = 0, dy, ch
    if cw >= width:
        src_x, dst_x, span_w = dx, 0, width
    else:
        src_x, dst_x, span_w = 0, dx, cw
    window = plane[src_y:src_y + span_h, src_x:src_x + span_w]
    pad = ((dst_y, height - dst_y - span_h), (dst_x, width - dst_x - span_w))
    return np.pad(window, pad, mode="edge")


def apply_augment(image: Tensor, mask: Tensor, params: AugmentParams) -> Tuple[Tensor, Tensor]:
    """
    按给定参数对图像和掩码做同样的几何变换

    翻转 → 绕中心旋转并缩放（图像双线性、掩码最近邻）→ 裁剪/填充回原尺寸；
    画布外的区域复制最近的边缘像素，不引入原图中没有的亮度。
    图像截断到 [0, 1]，掩码保持 {0, 1}。
    """
    img = image.data.astype(np.float64)
    msk = mask.data.astype(np.float64)
    if params.flip_h:
        img, msk = img[:, :, ::-1], msk[:, :, ::-1]
    if params.flip_v:
        img, msk = img[:, ::-1, :], msk[:, ::-1, :]

    _, h, w = img.shape
    canvas = (_canvas_size(h, params.scale), _canvas_size(w, params.scale))
    theta = math.radians(params.angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    # 输出坐标 -> 输入坐标: in = R(−θ)·(out − c_out)/s + c_in
    matrix = np.array([[cos_t, sin_t], [-sin_t, cos_t]]) / params.scale
    c_out = (np.array(canvas, dtype=np.float64) - 1.0) / 2.0
    c_in = (np.array([h, w], dtype=np.float64) - 1.0) / 2.0
    offset = c_in - matrix @ c_out

    out_img, out_msk = [], []
    for plane in img:
        warped = _resample(plane, matrix, offset, canvas, order=1)
        out_img.append(_crop_or_pad(warped, h, w, params.crop_y, params.crop_x))
    for plane in msk:
        warped = _resample(plane, matrix, offset, canvas, order=0)
        out_msk.append(_crop_or_pad(warped, h, w, params.crop_y, params.crop_x))

    new_image = np.clip(np.stack(out_img), 0.0, 1.0)
    new_mask = (np.stack(out_msk) > 0.5).astype(np.float64)
    return Tensor(new_image, dtype=image.dtype), Tensor(new_mask, dtype=mask.dtype)


def augment(
    image: Tensor,
    mask: Tensor,
    rng: RngStream,
    config: AugmentConfig | None = None,
    enabled: bool = True,
) -> Tuple[Tensor, Tensor]:
    """随机翻转、旋转、缩放、裁剪；enabled=False 时原样返回"""
    if not enabled:
        return image, mask
    params = sample_augment_params(rng, image.shape[1], image.shape[2], config or AugmentConfig())
    return apply_augment(image, mask, params)


def resize_image(image: Tensor, size: int) -> Tensor:
    """双线性缩放到 size×size 并截断到 [0, 1]"""
    if image.shape[1:] == (size, size):
        return Tensor(np.clip(image.data, 0.0, 1.0), dtype=image.dtype)
    resized = bilinear_resize(image.detach(), size, size)
    return Tensor(np.clip(resized.data, 0.0, 1.0), dtype=image.dtype)


def resize_mask(mask: Tensor, size: int) -> Tensor:
    """最近邻缩放到 size×size，取像素中心所在的源像素，结果仍为 {0,1}"""
    _, h, w = mask.shape
    if (h, w) == (size, size):
        return mask
    rows = np.minimum(((np.arange(size) + 0.5) * h / size).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(size) + 0.5) * w / size).astype(np.int64), w - 1)
    return Tensor(mask.data[:, rows][:, :, cols], dtype=mask.dtype)
