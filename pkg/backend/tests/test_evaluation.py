# tests/test_evaluation.py

import numpy as np
import pytest

from app.core.exceptions import ContractError
from app.core.metrics import binarize
from app.core.segnet import init_params
from app.schemas.metrics import ComponentAblationRow
from app.schemas.training import SelectionStrategy
from app.services import embedding_service, evaluation_service


@pytest.fixture(scope="module")
def desk_index(small_dataset):
    return embedding_service.build_index(small_dataset)


@pytest.fixture
def params(tiny_network):
    return init_params(tiny_network, seed=1)


def _dscs(report):
    return [(row.query_id, row.dsc, row.iou) for row in report.rows]


def test_single_repeat_ensemble_matches_plain(params, tiny_network, small_dataset, desk_index, tiny_config):
    plain = evaluation_service.evaluate(
        params, tiny_network, small_dataset, desk_index, tiny_config,
        strategy=SelectionStrategy.random, repeats=1, ensemble=False,
    )
    ensembled = evaluation_service.evaluate(
        params, tiny_network, small_dataset, desk_index, tiny_config,
        strategy=SelectionStrategy.random, repeats=1, ensemble=True,
    )
    assert _dscs(plain) == _dscs(ensembled)


def test_clip_ignores_repeats(params, tiny_network, small_dataset, desk_index, tiny_config):
    once = evaluation_service.evaluate(
        params, tiny_network, small_dataset, desk_index, tiny_config, strategy=SelectionStrategy.clip, repeats=1
    )
    many = evaluation_service.evaluate(
        params, tiny_network, small_dataset, desk_index, tiny_config, strategy=SelectionStrategy.clip, repeats=5
    )
    assert many.repeats == 1
    assert _dscs(once) == _dscs(many)


def test_worker_count_does_not_change_report(params, tiny_network, small_dataset, desk_index, tiny_config):
    reports = [
        evaluation_service.evaluate(
            params, tiny_network, small_dataset, desk_index, tiny_config,
            strategy=SelectionStrategy.random, repeats=2, workers=workers,
        )
        for workers in (1, 3)
    ]
    assert _dscs(reports[0]) == _dscs(reports[1])
    assert [row.query_id for row in reports[0].rows] == [item.id for item in small_dataset.test()]


def test_per_repeat_rows_average_to_plain_row(params, tiny_network, small_dataset, tiny_config):
    report = evaluation_service.evaluate(
        params, tiny_network, small_dataset, None, tiny_config, strategy=SelectionStrategy.random, repeats=3
    )
    for row in report.rows:
        per = report.per_repeat[row.query_id]
        assert len(per) == 3
        assert row.dsc == pytest.approx(sum(m.dsc for m in per) / 3)
    individual = evaluation_service.individual_repeat_rows(report)
    assert [r.dsc for r in individual] == pytest.approx([r.dsc for r in report.rows])


def test_repeats_must_be_positive(params, tiny_network, small_dataset, tiny_config):
    with pytest.raises(ContractError):
        evaluation_service.evaluate(
            params, tiny_network, small_dataset, None, tiny_config, strategy=SelectionStrategy.random, repeats=0
        )


def test_predict_returns_mask_probs_and_supports(params, tiny_network, small_dataset, desk_index, tiny_config):
    query = small_dataset.test()[0].id
    mask, probs, supports = evaluation_service.predict(
        params, tiny_network, small_dataset, desk_index, query, tiny_config
    )
    assert mask.shape == probs.shape == (1, 16, 16)
    np.testing.assert_array_equal(mask.data, binarize(probs))
    assert len(supports) == tiny_config.support_k
    assert query not in supports


def test_summarize_ablation_groups_in_order():
    records = [
        {"strategy": "random", "k": 2, "query_id": "a", "dsc": 0.2},
        {"strategy": "random", "k": 2, "query_id": "b", "dsc": 0.6},
        {"strategy": "clip", "k": 2, "query_id": "a", "dsc": 0.5},
        {"strategy": "clip", "k": 2, "query_id": "b", "dsc": 0.5},
        {"strategy": "random", "k": 4, "query_id": "a", "dsc": 1.0},
    ]
    rows = evaluation_service.summarize_ablation(records)
    assert [(r.strategy, r.support_k) for r in rows] == [("random", 2), ("clip", 2), ("random", 4)]
    assert rows[0].mean_dsc == pytest.approx(0.4)
    assert rows[0].std_dsc == pytest.approx(0.2)
    assert rows[1].std_dsc == 0.0
    assert rows[2].queries == 1


def test_ablate_rows_per_k(params, tiny_network, small_dataset, desk_index, tiny_config):
    rows = evaluation_service.ablate(
        params, tiny_network, small_dataset, desk_index, tiny_config, k_list=[1, 2], repeats=2
    )
    assert [(r.strategy, r.support_k) for r in rows] == [
        ("random", 1), ("random+ensemble", 1), ("clip", 1),
        ("random", 2), ("random+ensemble", 2), ("clip", 2),
    ]
    assert all(r.queries == len(small_dataset.test()) for r in rows)
    with pytest.raises(ContractError):
        evaluation_service.ablate(params, tiny_network, small_dataset, desk_index, tiny_config, k_list=[])


def test_compare_components_trains_three_variants(small_dataset, desk_index, tiny_config, tiny_network):
    config = tiny_config.model_copy(update={"steps": 1})
    rows = evaluation_service.compare_components(small_dataset, desk_index, config, tiny_network)
    assert [(r.variant, r.use_attention) for r in rows] == [
        ("clip+attention", True), ("clip", False), ("random+attention", True),
    ]
    assert rows[2].selection_strategy == SelectionStrategy.random


def test_format_component_table():
    rows = [
        ComponentAblationRow(
            variant="clip", selection_strategy=SelectionStrategy.clip, use_attention=False,
            mean_dsc=0.81234, mean_iou=0.7,
        )
    ]
    assert evaluation_service.format_component_table(rows) == (
        "variant\tselection\tattention\tmean_dsc\tmean_iou\nclip\tclip\tfalse\t0.8123\t0.7000\n"
    )
