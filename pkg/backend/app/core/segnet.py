# app/core/segnet.py

"""
参考图像分割网络

结构（L = levels，c_i = channels[i]）:
  查询 stem: conv3×3 Cq → c_0；支持 stem: conv3×3 (Cq+1) → c_0（图像与掩码拼接）
  编码器第 i 层: 交叉卷积块 → 联合注意力 → 记录跳连 → 双线性下采样 ½（最后一层除外）
  解码器第 i 层 (L-2 … 0): 双线性上采样 ×2 → 与跳连在通道上拼接 → 交叉卷积块 → 联合注意力
  输出: 查询特征上的 1×1 卷积 → 单通道 logits
"""

from typing import List, Sequence, Tuple

import numpy as np

from app.core.exceptions import ConfigurationError, ShapeError
from app.core.joint_attention import JointAttentionParams, init_attention_params, joint_attention
from app.core.params import ModelParams, he_uniform
from app.core.rng import RngStream
from app.core.tensor import (
    Tensor,
    bilinear_resize,
    concat,
    conv2d,
    leaky_relu,
    reduce_mean,
    repeat,
    reshape,
)
from app.schemas.dataset import Episode
from app.schemas.network import NetworkConfig


def _cross_in_channels(config: NetworkConfig) -> Tuple[List[int], List[int]]:
    """编码器、解码器每层交叉卷积块的单侧输入通道数"""
    c = config.channels
    encoder = [c[0]] + [c[i - 1] for i in range(1, config.levels)]
    decoder = [c[i + 1] + c[i] for i in range(config.levels - 1)]
    return encoder, decoder


def init_params(config: NetworkConfig, seed: int, dtype=None) -> ModelParams:
    """
    He 均匀初始化卷积权重，偏置为 0，完全由 seed 决定

    Args:
        config: 网络结构
        seed: 随机种子
        dtype: 默认 float32，校验梯度时可传 float64

    Returns:
        ModelParams
    """
    generator = RngStream(seed, "init_params").generator
    params = ModelParams()
    c = config.channels

    def conv(name: str, cout: int, cin: int, kernel: int) -> None:
        params.add(f"{name}.weight", he_uniform((cout, cin, kernel, kernel), generator, dtype))
        params.add(f"{name}.bias", Tensor.zeros((cout,), dtype=dtype))

    conv("query_stem", c[0], config.in_channels_query, 3)
    conv("support_stem", c[0], config.in_channels_support, 3)

    encoder_in, decoder_in = _cross_in_channels(config)
    for i in range(config.levels):
        conv(f"encoder.{i}.cross", c[i], 2 * encoder_in[i], 3)
        if config.use_attention:
            init_attention_params(params, f"encoder.{i}.attention", c[i], config.ratio, generator, dtype)
    for i in reversed(range(config.levels - 1)):
        conv(f"decoder.{i}.cross", c[i], 2 * decoder_in[i], 3)
        if config.use_attention:
            init_attention_params(params, f"decoder.{i}.attention", c[i], config.ratio, generator, dtype)

    conv("head", 1, c[0], 1)
    return params


def expected_param_shapes(config: NetworkConfig) -> dict:
    """参数名 -> 形状，用于加载权重时校验"""
    return {name: t.shape for name, t in init_params(config, seed=0).items()}


def cross_conv_block(
    support: Tensor,
    query: Tensor,
    weight: Tensor,
    bias: Tensor,
    slope: float,
) -> Tuple[Tensor, Tensor]:
    """
    交叉卷积块: z_j = leaky_relu(conv3×3([Q ; S_j]))，S'[j] = z_j，Q' = mean_j z_j

    所有 j 共享一套卷积权重。

    Args:
        support: (k, Cs, H, W)
        query: (Cq, H, W)

    Returns:
        (S' (k, Cout, H, W), Q' (Cout, H, W))
    """
    if support.ndim != 4 or query.ndim != 3 or support.shape[2:] != query.shape[1:]:
        raise ShapeError(f"交叉卷积输入形状不匹配: 支持 {support.shape}, 查询 {query.shape}")
    k = support.shape[0]
    cq, h, w = query.shape
    if weight.shape[1] != cq + support.shape[1]:
        raise ShapeError(
            f"交叉卷积权重输入通道 {weight.shape[1]} 与 [Q;S] 通道 {cq}+{support.shape[1]} 不一致"
        )
    query_tiled = repeat(reshape(query, (1, cq, h, w)), axis=0, times=k)
    z = leaky_relu(conv2d(concat([query_tiled, support], axis=1), weight, bias), slope)
    return z, reduce_mean(z, axis=0)


def _attend(
    support: Tensor,
    query: Tensor,
    params: ModelParams,
    prefix: str,
    config: NetworkConfig,
) -> Tuple[Tensor, Tensor]:
    if not config.use_attention:
        return support, query
    out = joint_attention(support, query, JointAttentionParams.from_params(params, prefix, config.ratio))
    return out.support_out, out.query_out


def _expect(tensor: Tensor, shape: Sequence[int], stage: str) -> None:
    if tensor.shape != tuple(shape):
        raise ShapeError(f"{stage} 输出形状应为 {tuple(shape)}, 实际 {tensor.shape}")


def check_input_size(height: int, width: int, config: NetworkConfig) -> None:
    d = config.size_divisor
    if height % d != 0 or width % d != 0:
        raise ConfigurationError(
            f"输入尺寸 {height}x{width} 必须能被 2^(levels-1)={d} 整除"
        )


def forward_tensors(
    query_image: Tensor,
    support_images: Tensor,
    support_masks: Tensor,
    params: ModelParams,
    config: NetworkConfig,
) -> Tensor:
    """
    以张量形式执行前向计算

    Args:
        query_image: (Cq, H, W)
        support_images: (k, Cq, H, W)
        support_masks: (k, 1, H, W)

    Returns:
        logits (1, H, W)
    """
    cq, h, w = query_image.shape
    k = support_images.shape[0]
    if cq != config.in_channels_query:
        raise ShapeError(f"查询图像通道 {cq} 与配置 in_channels_query={config.in_channels_query} 不一致")
    if support_images.shape != (k, cq, h, w) or support_masks.shape != (k, 1, h, w):
        raise ShapeError(
            f"支持样本形状 {support_images.shape}/{support_masks.shape} 与查询 {query_image.shape} 不一致"
        )
    check_input_size(h, w, config)
    c = config.channels
    slope = config.leaky_slope

    query = conv2d(query_image, params["query_stem.weight"], params["query_stem.bias"])
    support = conv2d(
        concat([support_images, support_masks], axis=1),
        params["support_stem.weight"],
        params["support_stem.bias"],
    )

    skips: List[Tuple[Tensor, Tensor]] = []
    size_h, size_w = h, w
    for i in range(config.levels):
        support, query = cross_conv_block(
            support, query, params[f"encoder.{i}.cross.weight"], params[f"encoder.{i}.cross.bias"], slope
        )
        support, query = _attend(support, query, params, f"encoder.{i}.attention", config)
        _expect(query, (c[i], size_h, size_w), f"编码器第 {i} 层")
        _expect(support, (k, c[i], size_h, size_w), f"编码器第 {i} 层")
        if i < config.levels - 1:
            skips.append((support, query))
            size_h, size_w = size_h // 2, size_w // 2
            support = bilinear_resize(support, size_h, size_w)
            query = bilinear_resize(query, size_h, size_w)

    for i in reversed(range(config.levels - 1)):
        skip_support, skip_query = skips[i]
        size_h, size_w = skip_query.shape[1:]
        support = concat([bilinear_resize(support, size_h, size_w), skip_support], axis=1)
        query = concat([bilinear_resize(query, size_h, size_w), skip_query], axis=0)
        support, query = cross_conv_block(
            support, query, params[f"decoder.{i}.cross.weight"], params[f"decoder.{i}.cross.bias"], slope
        )
        support, query = _attend(support, query, params, f"decoder.{i}.attention", config)
        _expect(query, (c[i], size_h, size_w), f"解码器第 {i} 层")

    logits = conv2d(query, params["head.weight"], params["head.bias"])
    _expect(logits, (1, h, w), "输出头")
    return logits


def stack_supports(images: Sequence[Tensor], dtype=None) -> Tensor:
    """把 k 个 (C,H,W) 张量堆成 (k,C,H,W) 常量张量"""
    return Tensor(np.stack([t.data for t in images]), dtype=dtype or images[0].dtype)


def forward(episode: Episode, params: ModelParams, config: NetworkConfig) -> Tensor:
    """对一个 Episode 前向计算，返回 logits (1, H, W)"""
    dtype = params["head.weight"].dtype
    return forward_tensors(
        episode.query_image.astype(dtype, requires_grad=False),
        stack_supports(episode.support_images, dtype),
        stack_supports(episode.support_masks, dtype),
        params,
        config,
    )
