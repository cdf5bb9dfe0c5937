# tests/test_formats.py

import json

import pytest

from app.core.embedding import EmbeddingIndex
from app.core.exceptions import BadMagicError, DimensionMismatchError, ShapeError, TensorFormatError
from app.core.params import ModelParams
from app.core.segnet import init_params
from app.crud import crud_embedding, crud_weights
from app.schemas.retrieval import EmbeddingRecord
from app.services import embedding_service


def _index(rng, n=4, dim=5) -> EmbeddingIndex:
    records = [EmbeddingRecord(id=f"item-{i}", vector=rng.normal(size=dim)) for i in range(n)]
    return EmbeddingIndex(dim, records, "desk")


def test_memb_round_trip(tmp_path, rng):
    index = _index(rng)
    path = tmp_path / "index.memb"
    crud_embedding.save_index(index, path)
    raw = path.read_bytes()
    assert raw[:4] == b"MEMB" and raw[4] == 1
    loaded = crud_embedding.load_index(path)
    assert loaded.ids == index.ids
    assert loaded.dimension == 5
    assert loaded.provider_tag == "desk"
    for record_id in index.ids:
        assert loaded.vector(record_id).tobytes() == index.vector(record_id).tobytes()


def test_memb_rejects_corruption(rng):
    raw = crud_embedding.encode_index(_index(rng))
    with pytest.raises(BadMagicError):
        crud_embedding.decode_index(b"NOPE" + raw[4:])
    with pytest.raises(TensorFormatError):
        crud_embedding.decode_index(raw[:-3])
    with pytest.raises(TensorFormatError):
        crud_embedding.decode_index(raw + b"\x00")


def test_external_vectors_accept_memb(tmp_path, rng):
    index = _index(rng)
    path = tmp_path / "external.memb"
    crud_embedding.save_index(index, path)
    vectors = crud_embedding.read_external_vectors(path)
    assert list(vectors) == index.ids


def test_external_text_dimension_mismatch(tmp_path):
    path = tmp_path / "v.tsv"
    path.write_text("# comment\na\t1\t2\nb\t1\t2\t3\n", encoding="utf-8")
    with pytest.raises(DimensionMismatchError):
        crud_embedding.read_external_vectors(path)


def test_index_build_is_deterministic(small_dataset):
    first = crud_embedding.encode_index(embedding_service.build_index(small_dataset))
    second = crud_embedding.encode_index(embedding_service.build_index(small_dataset))
    assert first == second


def test_mwts_round_trip(tmp_path, tiny_network):
    params = init_params(tiny_network, seed=2)
    path = tmp_path / "model.mwts"
    crud_weights.save_bundle(params, tiny_network, path)
    raw = path.read_bytes()
    assert raw[:4] == b"MWTS" and raw[4] == 1
    assert int.from_bytes(raw[5:9], "little") == len(params)
    loaded, network = crud_weights.load_bundle(path)
    assert network == tiny_network
    assert loaded.equals(params)


def test_mwts_trailing_config_is_json(tiny_network):
    raw = crud_weights.encode_bundle(init_params(tiny_network, seed=0), tiny_network)
    text = crud_weights.config_json(tiny_network)
    assert raw.endswith(text.encode("utf-8"))
    assert json.loads(text)["channels"] == [4, 8]


def test_mwts_rejects_mismatched_params(tiny_network):
    params = init_params(tiny_network, seed=0)
    partial = ModelParams({n: t for n, t in params.items() if n != "head.bias"})
    with pytest.raises(ShapeError):
        crud_weights.decode_bundle(crud_weights.encode_bundle(partial, tiny_network))
    with pytest.raises(ShapeError):
        crud_weights.save_bundle(partial, tiny_network, "unused.mwts")


def test_mwts_corruption(tiny_network):
    raw = crud_weights.encode_bundle(init_params(tiny_network, seed=0), tiny_network)
    with pytest.raises(BadMagicError):
        crud_weights.decode_bundle(b"MSEG" + raw[4:])
    with pytest.raises(TensorFormatError):
        crud_weights.decode_bundle(raw[:-1])
    with pytest.raises(TensorFormatError):
        crud_weights.decode_bundle(raw[:40])


def test_bundle_bytes_deterministic(tiny_network):
    a = crud_weights.encode_bundle(init_params(tiny_network, seed=4), tiny_network)
    b = crud_weights.encode_bundle(init_params(tiny_network, seed=4), tiny_network)
    assert a == b
