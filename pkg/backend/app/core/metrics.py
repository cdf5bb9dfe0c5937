# app/core/metrics.py

from typing import Iterable, List, Tuple

import numpy as np

from app.core.exceptions import ShapeError
from app.core.tensor import Tensor
from app.schemas.metrics import AblationRow, MetricsRow

THRESHOLD = 0.5


def binarize(probs, threshold: float = THRESHOLD) -> np.ndarray:
    data = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return (data >= threshold).astype(np.float32)


def _counts(pred, target) -> Tuple[int, int, int]:
    p = (pred.data if isinstance(pred, Tensor) else np.asarray(pred)) > 0.5
    t = (target.data if isinstance(target, Tensor) else np.asarray(target)) > 0.5
    if p.shape != t.shape:
        raise ShapeError(f"预测形状 {p.shape} 与标签形状 {t.shape} 不一致")
    return int(np.count_nonzero(p & t)), int(np.count_nonzero(p)), int(np.count_nonzero(t))


def dsc_metric(pred_binary, target) -> float:
    """2|P∩T| / (|P| + |T|)，两者都为空时记为 1"""
    inter, n_pred, n_target = _counts(pred_binary, target)
    if n_pred + n_target == 0:
        return 1.0
    return 2.0 * inter / (n_pred + n_target)


def iou_metric(pred_binary, target) -> float:
    """|P∩T| / |P∪T|，两者都为空时记为 1"""
    inter, n_pred, n_target = _counts(pred_binary, target)
    union = n_pred + n_target - inter
    if union == 0:
        return 1.0
    return inter / union


def metrics_row(query_id: str, pred_binary, target) -> MetricsRow:
    return MetricsRow(query_id=query_id, dsc=dsc_metric(pred_binary, target), iou=iou_metric(pred_binary, target))


def format_metric_report(rows: Iterable[MetricsRow]) -> str:
    """
    指标报告: 每行 "query_id\\tdsc\\tiou"，末行 "MEAN\\t<dsc>\\t<iou>"，保留 4 位小数
    """
    rows = list(rows)
    lines: List[str] = [f"{r.query_id}\t{r.dsc:.4f}\t{r.iou:.4f}" for r in rows]
    mean_dsc = float(np.mean([r.dsc for r in rows])) if rows else 0.0
    mean_iou = float(np.mean([r.iou for r in rows])) if rows else 0.0
    lines.append(f"MEAN\t{mean_dsc:.4f}\t{mean_iou:.4f}")
    return "\n".join(lines) + "\n"


def format_ablation_table(rows: Iterable[AblationRow]) -> str:
    lines = ["strategy\tk\tmean_dsc\tstd_dsc"]
    lines += [f"{r.strategy}\t{r.support_k}\t{r.mean_dsc:.4f}\t{r.std_dsc:.4f}" for r in rows]
    return "\n".join(lines) + "\n"
