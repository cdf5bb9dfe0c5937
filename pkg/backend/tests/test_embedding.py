# tests/test_embedding.py

import numpy as np
import pytest

from app.core.embedding import (
    DESK_DIMENSION,
    EmbeddingIndex,
    cosine_similarity,
    desk_embed,
    select_top_k,
)
from app.core.exceptions import (
    ConfigurationError,
    ContractError,
    DegenerateEmbeddingError,
    DimensionMismatchError,
    EmptyPoolError,
    MissingEmbeddingError,
)
from app.core.tensor import Tensor
from app.schemas.retrieval import EmbeddingRecord, SimilarityHit
from app.services import embedding_service


def _random_index(rng, n: int = 200, dim: int = 32) -> EmbeddingIndex:
    records = [EmbeddingRecord(id=f"r{i:03d}", vector=rng.normal(size=dim)) for i in range(n)]
    return EmbeddingIndex(dim, records, "test")


def _desk_oracle(image: np.ndarray) -> np.ndarray:
    """逐像素重写 desk 编码器，64 位"""
    gray = image.astype(np.float64).mean(axis=0)
    h, w = gray.shape

    def sample(n_in, o):
        src = max((o + 0.5) * n_in / 8 - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    intensity = []
    for oy in range(8):
        y0, y1, fy = sample(h, oy)
        for ox in range(8):
            x0, x1, fx = sample(w, ox)
            top = (1 - fx) * gray[y0, x0] + fx * gray[y0, x1]
            bottom = (1 - fx) * gray[y1, x0] + fx * gray[y1, x1]
            intensity.append((1 - fy) * top + fy * bottom)

    histogram = np.zeros(16)
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            gx = (gray[i, j + 1] - gray[i, j - 1]) / 2
            gy = (gray[i + 1, j] - gray[i - 1, j]) / 2
            theta = np.arctan2(gy, gx) % np.pi
            b = min(int(theta / np.pi * 16), 15)
            histogram[b] += np.hypot(gx, gy)

    vector = np.concatenate([intensity, histogram])
    return vector / np.linalg.norm(vector)


def test_desk_matches_formula(small_dataset):
    for item in small_dataset.items[:10]:
        vector = desk_embed(item.image)
        assert vector.shape == (DESK_DIMENSION,)
        assert vector.dtype == np.float32
        np.testing.assert_allclose(vector, _desk_oracle(item.image.data), atol=1e-5)


def test_desk_unit_norm_and_zero_image_fallback(rng):
    vector = desk_embed(Tensor(rng.random((1, 20, 24))))
    assert np.linalg.norm(vector.astype(np.float64)) == pytest.approx(1.0, abs=1e-6)
    fallback = desk_embed(Tensor.zeros((1, 16, 16)))
    assert fallback[0] == 1.0 and np.count_nonzero(fallback) == 1


def test_desk_scale_invariant(rng):
    image = rng.uniform(0.1, 0.5, size=(1, 16, 16))
    np.testing.assert_allclose(desk_embed(Tensor(image)), desk_embed(Tensor(image * 2)), atol=1e-6)


def test_desk_rejects_flat_input():
    with pytest.raises(ContractError):
        desk_embed(Tensor.zeros((16, 16)))


def test_cosine_matches_oracle(rng):
    for _ in range(100):
        a, b = rng.normal(size=32), rng.normal(size=32)
        expected = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
        assert cosine_similarity(a, b) == pytest.approx(expected, abs=1e-9)


def test_cosine_known_values():
    assert cosine_similarity([1, 0], [1, 0]) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 1]) == pytest.approx(0.0)
    assert cosine_similarity([1, 2], [-1, -2]) == pytest.approx(-1.0)
    assert cosine_similarity([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)


def test_cosine_errors():
    with pytest.raises(DegenerateEmbeddingError):
        cosine_similarity([0, 0], [1, 0])
    with pytest.raises(DimensionMismatchError):
        cosine_similarity([1, 0], [1, 0, 0])


@pytest.mark.parametrize("k", [1, 8, 16])
@pytest.mark.parametrize("seed", range(50))
def test_top_k_matches_brute_force_sort(seed, k):
    rng = np.random.default_rng(seed)
    index = _random_index(rng)
    query = rng.normal(size=32)
    scored = [(cosine_similarity(query, r.vector), pos, r.id) for pos, r in enumerate(index.records)]
    # 分数降序，同分按插入顺序
    expected = [rid for _, _, rid in sorted(scored, key=lambda s: (-s[0], s[1]))][:k]
    assert [hit.id for hit in select_top_k(query, index, k)] == expected


def test_top_k_ties_follow_insertion_order():
    records = [EmbeddingRecord(id=name, vector=[1.0, 0.0]) for name in ["c", "a", "b"]]
    index = EmbeddingIndex(2, records, "test")
    assert [h.id for h in select_top_k([2.0, 0.0], index, 3)] == ["c", "a", "b"]


def test_top_k_excludes_and_truncates(rng):
    index = _random_index(rng, n=5, dim=4)
    hits = select_top_k(index.vector("r000"), index, 10, exclude_ids={"r000"})
    assert len(hits) == 4
    assert "r000" not in [h.id for h in hits]
    hits = select_top_k(index.vector("r000"), index, 2, include_ids=["r003", "r004"])
    assert sorted(h.id for h in hits) == ["r003", "r004"]


@pytest.mark.parametrize("seed", range(5))
def test_top_k_ignores_positive_record_scaling(seed):
    rng = np.random.default_rng(seed)
    index = _random_index(rng, n=50, dim=16)
    factors = 2.0 ** rng.integers(-6, 7, size=len(index))
    scaled = EmbeddingIndex(
        16,
        [EmbeddingRecord(id=r.id, vector=r.vector * f) for r, f in zip(index.records, factors)],
        "test",
    )
    query = rng.normal(size=16)
    assert select_top_k(query, scaled, 10) == select_top_k(query, index, 10)
    rescaled = select_top_k(query * 3.5, index, 10)
    assert [h.id for h in rescaled] == [h.id for h in select_top_k(query, index, 10)]


def test_cosine_similarity_is_symmetric(rng):
    for _ in range(20):
        a, b = rng.normal(size=40), rng.normal(size=40)
        assert cosine_similarity(a, b) == cosine_similarity(b, a)


def test_saved_index_gives_identical_hits(tmp_path, small_dataset):
    index = embedding_service.build_index(small_dataset)
    loaded = embedding_service.load_index(embedding_service.save_index(index, tmp_path / "index.memb"))
    pool = [item.id for item in small_dataset.train()]
    for item in small_dataset.test():
        assert embedding_service.select_supports(loaded, item.id, 4, pool) == embedding_service.select_supports(
            index, item.id, 4, pool
        )



def test_top_k_errors(rng):
    index = _random_index(rng, n=3, dim=4)
    with pytest.raises(ContractError):
        select_top_k(rng.normal(size=4), index, 0)
    with pytest.raises(EmptyPoolError):
        select_top_k(rng.normal(size=4), index, 1, exclude_ids={"r000", "r001", "r002"})
    with pytest.raises(DimensionMismatchError):
        select_top_k(rng.normal(size=5), index, 1)
    with pytest.raises(DegenerateEmbeddingError):
        select_top_k(np.zeros(4), index, 1)


def test_index_rejects_duplicates_and_mixed_dimensions():
    with pytest.raises(ContractError):
        EmbeddingIndex(2, [EmbeddingRecord(id="a", vector=[1, 0]), EmbeddingRecord(id="a", vector=[0, 1])], "t")
    with pytest.raises(DimensionMismatchError):
        EmbeddingIndex(2, [EmbeddingRecord(id="a", vector=[1, 0, 0])], "t")


def test_record_rejects_zero_vector():
    with pytest.raises(ValueError):
        EmbeddingRecord(id="a", vector=[0.0, 0.0])


def test_build_index_follows_manifest_order(small_dataset):
    index = embedding_service.build_index(small_dataset)
    assert index.ids == small_dataset.ids
    assert index.dimension == DESK_DIMENSION
    assert index.provider_tag == embedding_service.DESK_PROVIDER


def test_select_supports_excludes_query(small_dataset):
    index = embedding_service.build_index(small_dataset)
    query = small_dataset.ids[0]
    hits = embedding_service.select_supports(index, query, 5)
    assert len(hits) == 5
    assert query not in [h.id for h in hits]
    scores = [h.score for h in hits]
    assert scores == sorted(scores, reverse=True)
    with pytest.raises(MissingEmbeddingError):
        embedding_service.select_supports(index, "missing", 1)


def test_format_hits():
    text = embedding_service.format_hits([SimilarityHit(id="b", score=0.98765), SimilarityHit(id="a", score=0.5)])
    assert text == "1\tb\t0.9877\n2\ta\t0.5000\n"


def test_file_provider_reads_text_vectors(tmp_path, small_dataset, rng):
    path = tmp_path / "vectors.tsv"
    lines = [item_id + "\t" + "\t".join(f"{v:.6f}" for v in rng.normal(size=6)) for item_id in small_dataset.ids]
    lines.append("extra\t" + "\t".join(["1.0"] * 6))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    index = embedding_service.build_index(small_dataset, f"file:{path}")
    assert index.dimension == 6
    assert index.ids == small_dataset.ids
    assert index.provider_tag == embedding_service.FILE_PROVIDER


def test_file_provider_missing_ids(tmp_path, small_dataset):
    path = tmp_path / "vectors.tsv"
    path.write_text(f"{small_dataset.ids[0]}\t1.0\t0.0\n", encoding="utf-8")
    with pytest.raises(MissingEmbeddingError) as excinfo:
        embedding_service.build_index(small_dataset, f"file:{path}")
    assert len(excinfo.value.missing_ids) == len(small_dataset) - 1


def test_unknown_provider(small_dataset):
    with pytest.raises(ConfigurationError):
        embedding_service.build_index(small_dataset, "clip-vit")
