# tests/test_data_io.py

import numpy as np
import pytest

from app.core.config import MANIFEST_FILENAME
from app.core.exceptions import (
    BadMagicError,
    ConfigurationError,
    ContractError,
    TensorFormatError,
    TruncatedPayloadError,
    UnknownIdError,
    UnsupportedVersionError,
)
from app.core.synth import MAX_FOREGROUND_FRACTION, MIN_FOREGROUND_FRACTION, blob_membership, generate_items
from app.core.tensor import Tensor
from app.crud import crud_dataset, crud_tensor
from app.schemas.dataset import ManifestRow, SplitEnum
from app.services import dataset_service


def test_synth_round_robin_domains_and_area():
    items = generate_items(n=4, domains=2, size=16, seed=0)
    domains = [item.domain for item, _ in items]
    assert domains == ["domain0", "domain1", "domain0", "domain1"]
    for item, _ in items:
        fraction = float(item.mask.data.mean())
        assert MIN_FOREGROUND_FRACTION <= fraction <= MAX_FOREGROUND_FRACTION
        assert item.image.data.min() >= 0.0 and item.image.data.max() <= 1.0


def test_synth_masks_match_blob_rasterization():
    for item, shape in generate_items(n=12, domains=3, size=24, seed=4):
        mask = item.mask.data[0]
        assert set(np.unique(mask)) <= {0.0, 1.0}
        np.testing.assert_array_equal(mask, blob_membership(shape, 24, 24))


def test_synth_is_deterministic():
    first = generate_items(n=6, domains=3, size=16, seed=11)
    second = generate_items(n=6, domains=3, size=16, seed=11)
    for (a, _), (b, _) in zip(first, second):
        assert a.image.data.tobytes() == b.image.data.tobytes()
        assert a.mask.data.tobytes() == b.mask.data.tobytes()


def test_synth_default_domains_share_foreground_band():
    for item, _ in generate_items(n=30, domains=3, size=32, seed=2):
        image, mask = item.image.data[0], item.mask.data[0].astype(bool)
        foreground, background = float(image[mask].mean()), float(image[~mask].mean())
        assert 0.40 <= foreground <= 0.70
        assert background < 0.30 or background > 0.80
        if item.domain == "domain1":
            assert background > foreground
        else:
            assert background < foreground


def test_synth_rejects_bad_arguments():
    with pytest.raises(ConfigurationError):
        generate_items(n=1, domains=2, size=16, seed=0)
    with pytest.raises(ConfigurationError):
        generate_items(n=4, domains=2, size=8, seed=0)


def test_stratified_split_counts():
    dataset = dataset_service.synth_dataset(n=20, domains=2, size=16, seed=3)
    for domain in dataset.domains():
        assert len(dataset.train([domain])) == 8
        assert len(dataset.test([domain])) == 2


def test_split_keeps_row_order_and_is_seeded():
    rows = [ManifestRow(id=f"x{i}", domain=f"d{i % 3}") for i in range(15)]
    first = dataset_service.split_stratified(rows, 0.8, seed=5)
    second = dataset_service.split_stratified(rows, 0.8, seed=5)
    assert [r.id for r in first] == [r.id for r in rows]
    assert [r.split for r in first] == [r.split for r in second]


def test_split_keeps_both_sides_non_empty():
    rows = [ManifestRow(id=f"x{i}", domain="d") for i in range(3)]
    splits = [r.split for r in dataset_service.split_stratified(rows, 0.95, seed=0)]
    assert SplitEnum.test in splits and SplitEnum.train in splits


def test_split_clamp_on_two_item_domain():
    rows = [ManifestRow(id=f"x{i}", domain="d") for i in range(2)]
    assert dataset_service.train_count(2, 0.8) == 2
    splits = sorted(r.split.value for r in dataset_service.split_stratified(rows, 0.8, seed=0))
    assert splits == ["test", "train"]


def test_split_rejects_singleton_domain():
    rows = [ManifestRow(id="a", domain="d0"), ManifestRow(id="b", domain="d1"), ManifestRow(id="c", domain="d1")]
    with pytest.raises(ContractError):
        dataset_service.split_stratified(rows)


def test_mseg_file_size(tmp_path):
    path = tmp_path / "t.mseg"
    crud_tensor.save_tensor(Tensor(np.arange(24).reshape(2, 3, 4)), path)
    assert path.stat().st_size == 4 + 1 + 1 + 3 * 4 + 24 * 4 == 114


def test_mseg_layout_and_round_trip(tmp_path, rng):
    tensor = Tensor(rng.normal(size=(3, 5)))
    raw = crud_tensor.encode_tensor(tensor)
    assert raw[:4] == b"MSEG" and raw[4] == 1 and raw[5] == 2
    assert int.from_bytes(raw[6:10], "little") == 3 and int.from_bytes(raw[10:14], "little") == 5
    path = tmp_path / "t.mseg"
    crud_tensor.save_tensor(tensor, path)
    loaded = crud_tensor.load_tensor(path)
    assert loaded.shape == (3, 5)
    assert loaded.data.tobytes() == tensor.data.tobytes()


def test_mseg_scalar_tensor():
    tensor, end = crud_tensor.decode_tensor(crud_tensor.encode_tensor(Tensor(2.5)))
    assert tensor.shape == () and tensor.item() == 2.5
    assert end == 6 + 4


def test_mseg_truncated_payload():
    raw = crud_tensor.encode_tensor(Tensor(np.ones((2, 3))))
    with pytest.raises(TruncatedPayloadError) as excinfo:
        crud_tensor.decode_tensor(raw[:-1])
    assert excinfo.value.expected == len(raw)
    assert excinfo.value.actual == len(raw) - 1
    with pytest.raises(TruncatedPayloadError):
        crud_tensor.decode_tensor(raw[:3])


def test_mseg_bad_magic_and_version():
    raw = crud_tensor.encode_tensor(Tensor(np.ones(2)))
    with pytest.raises(BadMagicError) as excinfo:
        crud_tensor.decode_tensor(b"XSEG" + raw[4:])
    assert excinfo.value.offset == 0
    with pytest.raises(UnsupportedVersionError) as excinfo:
        crud_tensor.decode_tensor(raw[:4] + bytes([2]) + raw[5:])
    assert excinfo.value.offset == 4


def test_mseg_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "t.mseg"
    path.write_bytes(crud_tensor.encode_tensor(Tensor(np.ones(2))) + b"\x00")
    with pytest.raises(TensorFormatError):
        crud_tensor.load_tensor(path)


def test_dataset_round_trip(tmp_path, small_dataset):
    root = crud_dataset.save_dataset(small_dataset, tmp_path / "data")
    header = (root / MANIFEST_FILENAME).read_text(encoding="utf-8").splitlines()[0]
    assert header == "id\tdomain\tsplit"
    loaded = crud_dataset.load_dataset(root)
    assert loaded.ids == small_dataset.ids
    for a, b in zip(loaded, small_dataset):
        assert (a.domain, a.split) == (b.domain, b.split)
        assert a.image.data.tobytes() == b.image.data.tobytes()
        assert a.mask.data.tobytes() == b.mask.data.tobytes()
    assert [p.name for p in tmp_path.iterdir()] == ["data"]


def test_dataset_missing_file(tmp_path, small_dataset):
    root = crud_dataset.save_dataset(small_dataset, tmp_path / "data")
    crud_dataset.mask_path(root, small_dataset.ids[3]).unlink()
    with pytest.raises(ContractError, match=small_dataset.ids[3]):
        crud_dataset.load_dataset(root)


def test_failed_save_leaves_no_partial_output(tmp_path, small_dataset, monkeypatch):
    written = []

    def failing_save(tensor, path):
        if len(written) == 5:
            raise OSError("磁盘已满")
        written.append(path)
        return crud_tensor.save_tensor(tensor, path)

    monkeypatch.setattr(crud_dataset, "save_tensor", failing_save)
    with pytest.raises(OSError):
        crud_dataset.save_dataset(small_dataset, tmp_path / "fresh")
    assert list(tmp_path.iterdir()) == []

    existing = tmp_path / "existing"
    existing.mkdir()
    (existing / "keep.txt").write_text("old", encoding="utf-8")
    written.clear()
    with pytest.raises(OSError):
        crud_dataset.save_dataset(small_dataset, existing)
    assert [p.name for p in tmp_path.iterdir()] == ["existing"]
    assert [p.name for p in existing.iterdir()] == ["keep.txt"]


def test_save_replaces_dataset_entries_only(tmp_path, small_dataset):
    root = tmp_path / "data"
    (root / "images").mkdir(parents=True)
    (root / "images" / "stale.mseg").write_bytes(b"old")
    (root / "notes.txt").write_text("keep", encoding="utf-8")
    crud_dataset.save_dataset(small_dataset, root)
    assert not (root / "images" / "stale.mseg").exists()
    assert (root / "notes.txt").read_text(encoding="utf-8") == "keep"
    assert crud_dataset.load_dataset(root).ids == small_dataset.ids
    assert [p.name for p in tmp_path.iterdir()] == ["data"]


def test_manifest_bad_header(tmp_path):
    (tmp_path / MANIFEST_FILENAME).write_text("name\tdomain\tsplit\na\td\ttrain\n", encoding="utf-8")
    with pytest.raises(ContractError):
        crud_dataset.load_manifest(tmp_path)


def test_manifest_bad_split_value(tmp_path):
    (tmp_path / MANIFEST_FILENAME).write_text("id\tdomain\tsplit\na\td\tvalid\n", encoding="utf-8")
    with pytest.raises(ContractError):
        crud_dataset.load_manifest(tmp_path)


def test_synth_generate_writes_loadable_dataset(tmp_path):
    written = dataset_service.synth_generate(tmp_path / "data", n=10, domains=2, size=16, seed=1)
    loaded = dataset_service.load_dataset(tmp_path / "data")
    assert loaded.ids == written.ids
    assert [i.split for i in loaded] == [i.split for i in written]


def test_unknown_item_id(small_dataset):
    with pytest.raises(UnknownIdError):
        small_dataset.get("nope")
