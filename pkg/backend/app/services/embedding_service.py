# app/services/embedding_service.py

from pathlib import Path
from typing import List, Optional, Set

from app.core.embedding import DESK_DIMENSION, EmbeddingIndex, desk_embed, select_top_k
from app.core.exceptions import ConfigurationError, MissingEmbeddingError
from app.core.logging_config import get_logger
from app.core.utils import PathLike
from app.crud import crud_embedding
from app.schemas.dataset import Dataset
from app.schemas.retrieval import EmbeddingRecord, SimilarityHit

logger = get_logger(__name__)

DESK_PROVIDER = "desk"
FILE_PROVIDER = "file"


def parse_provider(provider: str) -> tuple[str, Optional[Path]]:
    """'desk' 或 'file:PATH' -> (标签, 路径)"""
    if provider == DESK_PROVIDER:
        return DESK_PROVIDER, None
    if provider.startswith(f"{FILE_PROVIDER}:") and len(provider) > len(FILE_PROVIDER) + 1:
        return FILE_PROVIDER, Path(provider[len(FILE_PROVIDER) + 1:])
    raise ConfigurationError(f"未知的嵌入提供方: {provider} (可选 desk 或 file:PATH)")


def build_index(dataset: Dataset, provider: str = DESK_PROVIDER) -> EmbeddingIndex:
    """
    为数据集中每个样本构建嵌入，记录顺序与 manifest 一致

    Args:
        dataset: 数据集（非空）
        provider: "desk" 使用内置编码器；"file:PATH" 读取外部向量，原样使用

    Returns:
        EmbeddingIndex
    """
    if len(dataset) == 0:
        raise ConfigurationError("数据集为空，无法构建嵌入索引")
    tag, path = parse_provider(provider)
    logger.info(f"构建嵌入索引: provider={tag}, 样本数={len(dataset)}")

    if tag == DESK_PROVIDER:
        records = [EmbeddingRecord(id=item.id, vector=desk_embed(item.image)) for item in dataset]
        index = EmbeddingIndex(DESK_DIMENSION, records, DESK_PROVIDER)
    else:
        vectors = crud_embedding.read_external_vectors(path)
        missing = [item_id for item_id in dataset.ids if item_id not in vectors]
        if missing:
            logger.error(f"外部嵌入缺少 {len(missing)} 个样本: {missing[:5]}")
            raise MissingEmbeddingError(missing)
        records = [EmbeddingRecord(id=item_id, vector=vectors[item_id]) for item_id in dataset.ids]
        index = EmbeddingIndex(records[0].dimension, records, FILE_PROVIDER)
        unused = len(vectors) - len(records)
        if unused:
            logger.warning(f"外部嵌入文件中有 {unused} 条记录不属于该数据集，已忽略")

    logger.info(f"嵌入索引构建完成: D={index.dimension}, 记录数={len(index)}")
    return index


def save_index(index: EmbeddingIndex, path: PathLike) -> Path:
    out = crud_embedding.save_index(index, path)
    logger.info(f"嵌入索引已保存: {out}")
    return out


def load_index(path: PathLike) -> EmbeddingIndex:
    index = crud_embedding.load_index(path)
    logger.info(f"加载嵌入索引: {path} (provider={index.provider_tag}, D={index.dimension}, 记录数={len(index)})")
    return index


def select_supports(
    index: EmbeddingIndex,
    query_id: str,
    k: int,
    pool_ids: Optional[List[str]] = None,
) -> List[SimilarityHit]:
    """
    以索引中 query_id 的向量为查询，选出最相似的 K 个支持样本（排除查询自身）

    Args:
        pool_ids: 只在这些样本中挑选；None 表示整个索引
    """
    if query_id not in index:
        raise MissingEmbeddingError([query_id])
    exclude: Set[str] = {query_id}
    hits = select_top_k(index.vector(query_id), index, k, exclude_ids=exclude, include_ids=pool_ids)
    logger.debug(f"查询 {query_id} 选出支持集: {[h.id for h in hits]}")
    return hits


def format_hits(hits: List[SimilarityHit]) -> str:
    """每行 rank<TAB>id<TAB>score，score 保留 4 位小数，rank 从 1 开始"""
    return "".join(f"{rank}\t{hit.id}\t{hit.score:.4f}\n" for rank, hit in enumerate(hits, start=1))
