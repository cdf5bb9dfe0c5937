# app/services/evaluation_service.py

import time
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.embedding import EmbeddingIndex
from app.core.exceptions import ContractError
from app.core.logging_config import get_logger
from app.core.metrics import binarize, metrics_row
from app.core.params import ModelParams
from app.core.rng import RngStream
from app.core.segnet import forward
from app.core.tensor import Tensor, sigmoid
from app.schemas.dataset import Dataset, DatasetItem, Episode
from app.schemas.metrics import AblationRow, ComponentAblationRow, EvaluationReport, MetricsRow
from app.schemas.network import NetworkConfig
from app.schemas.training import SelectionStrategy, TrainConfig
from app.services import training_service

logger = get_logger(__name__)

ABLATION_RANDOM = "random"
ABLATION_ENSEMBLE = "random+ensemble"
ABLATION_CLIP = "clip"


def predict_probs(episode: Episode, params: ModelParams, network: NetworkConfig) -> np.ndarray:
    """前向计算并返回 sigmoid 概率图 (1, H, W)，不记录计算图"""
    return sigmoid(forward(episode, params, network)).numpy()


def predict(
    params: ModelParams,
    network: NetworkConfig,
    dataset: Dataset,
    index: Optional[EmbeddingIndex],
    query_id: str,
    config: TrainConfig,
    strategy: Optional[SelectionStrategy] = None,
    support_k: Optional[int] = None,
) -> Tuple[Tensor, Tensor, List[str]]:
    """
    对单个查询做分割

    Returns:
        (二值掩码, 概率图, 支持集ID)，均为 (1, image_size, image_size)
    """
    strategy = strategy or config.selection_strategy
    rng = RngStream(config.seed, "predict", query_id)
    episode = training_service.build_episode(
        dataset, query_id, index, config, rng, strategy=strategy, support_k=support_k
    )
    probs = predict_probs(episode, params, network)
    logger.info(f"预测完成: query={query_id}, strategy={strategy.value}, supports={episode.support_ids}")
    return Tensor(binarize(probs)), Tensor(probs), episode.support_ids


def _evaluate_query(
    item: DatasetItem,
    params: ModelParams,
    network: NetworkConfig,
    dataset: Dataset,
    index: Optional[EmbeddingIndex],
    config: TrainConfig,
    strategy: SelectionStrategy,
    support_k: int,
    repeats: int,
    ensemble: bool,
    pool_domains: Optional[Sequence[str]],
) -> Tuple[MetricsRow, List[MetricsRow]]:
    per_repeat: List[MetricsRow] = []
    prob_maps: List[np.ndarray] = []
    target = None
    for r in range(repeats):
        rng = RngStream(config.seed, "eval", item.id, r)
        episode = training_service.build_episode(
            dataset, item.id, index, config, rng,
            strategy=strategy, support_k=support_k, domains=pool_domains,
        )
        target = episode.query_mask
        probs = predict_probs(episode, params, network)
        prob_maps.append(probs.astype(np.float64))
        per_repeat.append(metrics_row(item.id, binarize(probs), target))

    if ensemble:
        # 先平均概率再阈值化
        row = metrics_row(item.id, binarize(np.mean(prob_maps, axis=0)), target)
    else:
        row = MetricsRow(
            query_id=item.id,
            dsc=sum(m.dsc for m in per_repeat) / repeats,
            iou=sum(m.iou for m in per_repeat) / repeats,
        )
    return row, per_repeat


def evaluate(
    params: ModelParams,
    network: NetworkConfig,
    dataset: Dataset,
    index: Optional[EmbeddingIndex],
    config: TrainConfig,
    strategy: Optional[SelectionStrategy] = None,
    repeats: int = 1,
    ensemble: bool = False,
    support_k: Optional[int] = None,
    domains: Optional[Sequence[str]] = None,
    pool_domains: Optional[Sequence[str]] = None,
    workers: Optional[int] = None,
) -> EvaluationReport:
    """
    在测试划分上评估

    random 策略每次重复独立抽取支持集；clip 策略是确定性的，重复次数恒为 1。
    ensemble 时把各次重复的概率图平均后再以 0.5 阈值化，否则取各次重复指标的平均。

    Args:
        params: 冻结的网络参数
        network: 网络结构
        dataset: 数据集，查询取测试划分，支持池取训练划分
        index: 嵌入索引，clip 策略必需
        config: 提供 seed、K、image_size 及默认策略
        repeats: 重复次数
        ensemble: 是否做概率平均集成
        domains: 只评估这些域的测试查询
        pool_domains: 支持池只取这些域的训练样本（跨域实验）
        workers: 并行线程数，默认取 settings.EVAL_WORKERS；不影响结果

    Returns:
        EvaluationReport，行顺序与 manifest 一致
    """
    strategy = strategy or config.selection_strategy
    support_k = support_k or config.support_k
    if repeats < 1:
        raise ContractError(f"repeats 必须 ≥ 1, 实际 {repeats}")
    effective = 1 if strategy == SelectionStrategy.clip else repeats
    queries = dataset.test(domains)
    if not queries:
        raise ContractError(f"测试划分为空 (domains={domains})")
    workers = workers or settings.EVAL_WORKERS

    logger.info(
        f"开始评估: strategy={strategy.value}, K={support_k}, repeats={effective}, ensemble={ensemble}, "
        f"查询数={len(queries)}, workers={workers}",
        extra={"strategy": strategy.value},
    )
    started = time.perf_counter()

    def run(item: DatasetItem):
        return _evaluate_query(
            item, params, network, dataset, index, config, strategy, support_k, effective, ensemble, pool_domains
        )

    if workers > 1:
        # map 按提交顺序返回，报告顺序与完成顺序无关
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(run, queries))
    else:
        results = [run(item) for item in queries]

    report = EvaluationReport(
        strategy=strategy,
        support_k=support_k,
        repeats=effective,
        ensemble=ensemble,
        rows=[row for row, _ in results],
        per_repeat={item.id: per for item, (_, per) in zip(queries, results)},
    )
    duration_ms = (time.perf_counter() - started) * 1000.0
    logger.info(
        f"评估完成: mean DSC={report.mean_dsc:.4f}, mean IoU={report.mean_iou:.4f}",
        extra={"strategy": strategy.value, "duration_ms": duration_ms},
    )
    return report


def individual_repeat_rows(report: EvaluationReport) -> List[MetricsRow]:
    """每个查询各次重复指标的平均（不集成）"""
    rows = []
    for row in report.rows:
        per = report.per_repeat[row.query_id]
        rows.append(
            MetricsRow(
                query_id=row.query_id,
                dsc=sum(m.dsc for m in per) / len(per),
                iou=sum(m.iou for m in per) / len(per),
            )
        )
    return rows


def summarize_ablation(records: List[dict]) -> List[AblationRow]:
    """
    把 (strategy, k, query_id, dsc) 记录汇总为每个 (策略, K) 一行

    std 为各查询 DSC 的总体标准差。
    """
    frame = pd.DataFrame.from_records(records, columns=["strategy", "k", "query_id", "dsc"])
    grouped = frame.groupby(["k", "strategy"], sort=False)["dsc"]
    summary = grouped.agg(mean_dsc="mean", std_dsc=lambda s: float(np.std(s.to_numpy(), ddof=0)), queries="count")
    return [
        AblationRow(
            strategy=strategy,
            support_k=int(k),
            mean_dsc=float(row.mean_dsc),
            std_dsc=float(row.std_dsc),
            queries=int(row.queries),
        )
        for (k, strategy), row in summary.iterrows()
    ]


def ablate(
    params: ModelParams,
    network: NetworkConfig,
    dataset: Dataset,
    index: EmbeddingIndex,
    config: TrainConfig,
    k_list: Sequence[int],
    repeats: int = 20,
    domains: Optional[Sequence[str]] = None,
) -> List[AblationRow]:
    """
    支持集选择策略对比：对每个 K 给出 random、random+ensemble、clip 三行

    random 与 random+ensemble 来自同一组随机支持集，差别只在是否平均概率。
    """
    if not k_list:
        raise ContractError("k_list 不能为空")
    logger.info(f"开始策略对比: K={list(k_list)}, repeats={repeats}")
    records: List[dict] = []
    for k in k_list:
        random_report = evaluate(
            params, network, dataset, index, config,
            strategy=SelectionStrategy.random, repeats=repeats, ensemble=True, support_k=k, domains=domains,
        )
        clip_report = evaluate(
            params, network, dataset, index, config,
            strategy=SelectionStrategy.clip, repeats=1, support_k=k, domains=domains,
        )
        for row in individual_repeat_rows(random_report):
            records.append({"strategy": ABLATION_RANDOM, "k": k, "query_id": row.query_id, "dsc": row.dsc})
        for row in random_report.rows:
            records.append({"strategy": ABLATION_ENSEMBLE, "k": k, "query_id": row.query_id, "dsc": row.dsc})
        for row in clip_report.rows:
            records.append({"strategy": ABLATION_CLIP, "k": k, "query_id": row.query_id, "dsc": row.dsc})
    rows = summarize_ablation(records)
    for row in rows:
        logger.info(f"K={row.support_k} {row.strategy}: {row.mean_dsc:.4f} ± {row.std_dsc:.4f}")
    return rows


COMPONENT_VARIANTS = (
    ("clip+attention", SelectionStrategy.clip, True),
    ("clip", SelectionStrategy.clip, False),
    ("random+attention", SelectionStrategy.random, True),
)


def compare_components(
    dataset: Dataset,
    index: EmbeddingIndex,
    config: TrainConfig,
    network: NetworkConfig,
    repeats: int = 1,
) -> List[ComponentAblationRow]:
    """
    组件消融：用相同的种子分别训练三个变体并在测试划分上评估

      clip+attention    相似度选择 + 联合注意力
      clip              相似度选择，注意力换成恒等直通
      random+attention  随机选择 + 联合注意力（评估时取 repeats 次随机支持集的平均）
    """
    rows: List[ComponentAblationRow] = []
    for variant, strategy, use_attention in COMPONENT_VARIANTS:
        logger.info(f"组件消融变体: {variant}")
        variant_config = config.model_copy(update={"selection_strategy": strategy})
        variant_network = network.model_copy(update={"use_attention": use_attention})
        result = training_service.train(dataset, variant_config, variant_network, index)
        report = evaluate(
            result.params, variant_network, dataset, index, variant_config,
            strategy=strategy, repeats=repeats, ensemble=False,
        )
        rows.append(
            ComponentAblationRow(
                variant=variant,
                selection_strategy=strategy,
                use_attention=use_attention,
                mean_dsc=report.mean_dsc,
                mean_iou=report.mean_iou,
            )
        )
    return rows


def format_component_table(rows: Sequence[ComponentAblationRow]) -> str:
    lines = ["variant\tselection\tattention\tmean_dsc\tmean_iou"]
    lines += [
        f"{r.variant}\t{r.selection_strategy.value}\t{str(r.use_attention).lower()}\t{r.mean_dsc:.4f}\t{r.mean_iou:.4f}"
        for r in rows
    ]
    return "\n".join(lines) + "\n"
