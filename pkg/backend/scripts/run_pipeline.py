# scripts/run_pipeline.py

"""
端到端流程: synth → embed → train → eval (clip) → ablate

用法:
    python scripts/run_pipeline.py [工作目录] [--steps N] [--seed S]

同一个种子运行两次，报告逐字节相同。
"""

import argparse
import sys
from pathlib import Path

# 添加项目根目录到Python路径
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from app.core.config import settings
from app.core.logging_config import setup_logging
from app.core.metrics import format_ablation_table, format_metric_report
from app.crud import crud_weights
from app.schemas.network import NetworkConfig
from app.schemas.training import SelectionStrategy, TrainConfig
from app.services import dataset_service, embedding_service, evaluation_service, training_service


def run_pipeline(workdir: Path, steps: int, seed: int) -> None:
    workdir.mkdir(parents=True, exist_ok=True)
    data_dir = workdir / "data"

    print("🧪 生成合成数据集 (n=120, domains=3, size=32)...")
    dataset = dataset_service.synth_generate(data_dir, n=120, domains=3, size=32, seed=seed)

    print("🔍 构建 desk 嵌入索引...")
    index = embedding_service.build_index(dataset)
    embedding_service.save_index(index, workdir / "index.memb")

    config = TrainConfig(steps=steps, seed=seed)
    network = NetworkConfig()
    print(f"🏋️ 训练 {steps} 步 (K={config.support_k}, lr={config.learning_rate})...")
    result = training_service.train(dataset, config, network, index)
    crud_weights.save_bundle(result.params, network, workdir / "model.mwts")
    losses = result.losses
    if len(losses) >= 100:
        head, tail = sum(losses[:50]) / 50, sum(losses[-50:]) / 50
        print(f"   前 50 步平均损失 {head:.4f} → 后 50 步 {tail:.4f}")

    print("📊 在测试划分上评估 (clip)...")
    report = evaluation_service.evaluate(result.params, network, dataset, index, config, SelectionStrategy.clip)
    (workdir / "report_clip.tsv").write_text(format_metric_report(report.rows), encoding="utf-8")
    print(f"   mean DSC = {report.mean_dsc:.4f}, mean IoU = {report.mean_iou:.4f}")

    print("📈 支持集选择策略对比 (K=8, 20 次重复)...")
    rows = evaluation_service.ablate(result.params, network, dataset, index, config, k_list=[8], repeats=20)
    table = format_ablation_table(rows)
    (workdir / "ablation.tsv").write_text(table, encoding="utf-8")
    print(table)
    print(f"✅ 完成，结果保存在 {workdir}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="MatchSeg 端到端流程")
    parser.add_argument("workdir", nargs="?", type=Path, default=Path("runs/pipeline"))
    parser.add_argument("--steps", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    setup_logging(log_level=settings.LOG_LEVEL, enable_console_logging=settings.LOG_CONSOLE_ENABLED)
    run_pipeline(args.workdir, args.steps, args.seed)
