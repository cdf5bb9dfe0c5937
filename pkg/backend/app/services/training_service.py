# app/services/training_service.py

import math
import time
from typing import Callable, List, Optional, Sequence

from pydantic import BaseModel, ConfigDict

from app.core.augment import augment, resize_image, resize_mask
from app.core.embedding import EmbeddingIndex
from app.core.exceptions import ConfigurationError, DivergenceError, InsufficientSupportError
from app.core.logging_config import get_logger
from app.core.losses import total_loss
from app.core.optimizer import AdamWState, adamw_step
from app.core.params import ModelParams
from app.core.rng import RngStream
from app.core.segnet import forward, init_params
from app.core.tensor import Tape, backward, sigmoid
from app.schemas.dataset import Dataset, DatasetItem, Episode
from app.schemas.network import NetworkConfig
from app.schemas.training import SelectionStrategy, TrainConfig
from app.services.embedding_service import select_supports

logger = get_logger(__name__)

StepCallback = Callable[[int, float], None]


class TrainResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: ModelParams
    losses: List[float]
    duration_ms: float = 0.0


def support_pool(dataset: Dataset, query_id: str, domains: Optional[Sequence[str]] = None) -> List[DatasetItem]:
    """训练划分去掉查询自身，可选只保留指定域"""
    return [item for item in dataset.train(domains) if item.id != query_id]


def build_episode(
    dataset: Dataset,
    query_id: str,
    index: Optional[EmbeddingIndex],
    config: TrainConfig,
    rng: RngStream,
    strategy: Optional[SelectionStrategy] = None,
    support_k: Optional[int] = None,
    domains: Optional[Sequence[str]] = None,
) -> Episode:
    """
    为一个查询构建 Episode

    clip: 按嵌入相似度选 top-K（排除查询自身），按名次排列；
    random: 从支持池中不放回均匀抽取 K 个。
    图像双线性缩放到 image_size，掩码最近邻缩放。

    Args:
        dataset: 数据集，支持池取自训练划分
        query_id: 查询样本ID，可以属于任意划分
        index: 嵌入索引，strategy=clip 时必需
        config: 训练配置（提供默认策略、K 和 image_size）
        rng: 随机流，strategy=random 时使用
        domains: 只在这些域的训练样本中挑选支持集

    Returns:
        Episode
    """
    strategy = strategy or config.selection_strategy
    k = support_k or config.support_k
    query = dataset.get(query_id)
    pool = support_pool(dataset, query_id, domains)
    if len(pool) < k:
        raise InsufficientSupportError(f"支持池只有 {len(pool)} 个样本, 需要 K={k}")

    if strategy == SelectionStrategy.clip:
        if index is None:
            raise ConfigurationError("clip 策略需要嵌入索引")
        hits = select_supports(index, query_id, k, pool_ids=[item.id for item in pool])
        supports = [dataset.get(hit.id) for hit in hits]
    else:
        supports = rng.sample_without_replacement(pool, k)

    size = config.image_size
    return Episode(
        query_id=query.id,
        query_image=resize_image(query.image, size),
        query_mask=resize_mask(query.mask, size),
        support_ids=[item.id for item in supports],
        support_images=[resize_image(item.image, size) for item in supports],
        support_masks=[resize_mask(item.mask, size) for item in supports],
    )


def augment_episode(episode: Episode, rng: RngStream, config: TrainConfig) -> Episode:
    """查询和每个支持样本各自独立地做随机增强"""
    query_image, query_mask = augment(
        episode.query_image, episode.query_mask, rng.derive("query"), config.augmentation, config.augment
    )
    images, masks = [], []
    for j, (image, mask) in enumerate(zip(episode.support_images, episode.support_masks)):
        image, mask = augment(image, mask, rng.derive("support", j), config.augmentation, config.augment)
        images.append(image)
        masks.append(mask)
    return episode.model_copy(
        update={
            "query_image": query_image,
            "query_mask": query_mask,
            "support_images": images,
            "support_masks": masks,
        }
    )


def train_step(
    params: ModelParams,
    state: AdamWState,
    episode: Episode,
    config: TrainConfig,
    network: NetworkConfig,
    step: int,
) -> tuple[ModelParams, float]:
    """
    一次前向、反向与 AdamW 更新

    Returns:
        (新参数, 本步损失)
    """
    params.zero_grad()
    with Tape() as tape:
        probs = sigmoid(forward(episode, params, network))
        loss = total_loss(
            probs,
            episode.query_mask,
            config.loss_weights,
            gamma=config.focal_gamma,
            alpha=config.focal_alpha,
        )
    value = loss.item()
    if not math.isfinite(value):
        raise DivergenceError(step, value)
    backward(loss, tape, inputs=[t for _, t in params.items()])
    updated = adamw_step(
        params,
        state,
        learning_rate=config.learning_rate,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        eps=config.adam_eps,
        weight_decay=config.weight_decay,
    )
    return updated, value


def train(
    dataset: Dataset,
    config: TrainConfig,
    network: NetworkConfig,
    index: Optional[EmbeddingIndex] = None,
    on_step: Optional[StepCallback] = None,
) -> TrainResult:
    """
    Episode 式训练，每步一个 Episode

    每一步: 从训练划分均匀抽取查询 → 构建 Episode → 增强 → 前向 → 复合损失 → 反向 → AdamW。
    所有随机性由 config.seed 决定。

    Args:
        dataset: 带训练划分的数据集
        config: 训练配置
        network: 网络结构
        index: 嵌入索引，clip 策略必需
        on_step: 每步结束后以 (step, loss) 回调，用于输出损失日志

    Returns:
        TrainResult（最终参数与逐步损失）
    """
    config.check_network(network)
    queries = dataset.train(config.train_domains)
    if not queries:
        raise InsufficientSupportError(f"训练划分为空 (domains={config.train_domains})")
    if config.selection_strategy == SelectionStrategy.clip and index is None:
        raise ConfigurationError("clip 策略训练需要嵌入索引")

    params = init_params(network, config.seed).trainable()
    logger.info(
        f"开始训练: steps={config.steps}, K={config.support_k}, strategy={config.selection_strategy.value}, "
        f"lr={config.learning_rate}, 参数量={params.num_parameters()}, 训练查询={len(queries)}",
        extra={"strategy": config.selection_strategy.value},
    )

    state = AdamWState()
    root = RngStream(config.seed, "train")
    losses: List[float] = []
    started = time.perf_counter()
    for step in range(1, config.steps + 1):
        rng = root.derive(step)
        query = queries[rng.integers(0, len(queries))]
        episode = build_episode(
            dataset, query.id, index, config, rng.derive("episode"), domains=config.train_domains
        )
        episode = augment_episode(episode, rng.derive("augment"), config)
        try:
            params, value = train_step(params, state, episode, config, network, step)
        except DivergenceError as e:
            logger.error(f"训练发散: step={e.step}, query={query.id}, loss={e.loss}", extra={"step": step})
            raise
        losses.append(value)
        if on_step is not None:
            on_step(step, value)
        if step % config.log_every == 0:
            window = losses[-config.log_every:]
            logger.info(
                f"step {step}/{config.steps}: 最近 {len(window)} 步平均损失 {sum(window) / len(window):.4f}",
                extra={"step": step},
            )

    duration_ms = (time.perf_counter() - started) * 1000.0
    logger.info(f"训练完成: {config.steps} 步, 用时 {duration_ms / 1000.0:.1f}s", extra={"duration_ms": duration_ms})
    return TrainResult(params=params.trainable(False), losses=losses, duration_ms=duration_ms)


def format_loss_log(step: int, loss: float) -> str:
    return f"{step}\t{loss:.6f}\n"
