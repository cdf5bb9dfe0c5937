# app/schemas/metrics.py

from typing import Dict, List

from pydantic import BaseModel, Field, model_validator

from app.schemas.training import SelectionStrategy


class MetricsRow(BaseModel):
    """单个查询的 DSC 与 IoU"""
    query_id: str
    dsc: float = Field(..., ge=0.0, le=1.0)
    iou: float = Field(..., ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _iou_not_above_dsc(self) -> "MetricsRow":
        if self.iou > self.dsc + 1e-9:
            raise ValueError(f"IoU {self.iou} 不应大于 DSC {self.dsc}")
        return self


class EvaluationReport(BaseModel):
    strategy: SelectionStrategy
    support_k: int
    repeats: int = Field(..., description="实际执行的重复次数（clip 策略恒为 1）")
    ensemble: bool
    rows: List[MetricsRow]
    # query_id -> 每次重复的指标
    per_repeat: Dict[str, List[MetricsRow]] = Field(default_factory=dict)

    @property
    def mean_dsc(self) -> float:
        return sum(r.dsc for r in self.rows) / len(self.rows) if self.rows else 0.0

    @property
    def mean_iou(self) -> float:
        return sum(r.iou for r in self.rows) / len(self.rows) if self.rows else 0.0


class AblationRow(BaseModel):
    """支持集选择策略对比的一行：策略 × K 的平均 DSC ± 标准差"""
    strategy: str
    support_k: int
    mean_dsc: float
    std_dsc: float
    queries: int


class ComponentAblationRow(BaseModel):
    """组件消融的一行：选择策略 × 是否启用联合注意力"""
    variant: str
    selection_strategy: SelectionStrategy
    use_attention: bool
    mean_dsc: float
    mean_iou: float
