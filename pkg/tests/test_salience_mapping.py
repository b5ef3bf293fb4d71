import logging

import numpy as np
import pytest

from paqm.core.exceptions import DegenerateDataError, InsufficientDataError, ModelError
from paqm.database.schemas import (
    BasisFunction,
    CemStats,
    GateWeight,
    Interaction,
    ItemFeatures,
    SalienceMappingModel,
)
from paqm.services.salience_mapping import (
    InteractionTable,
    SalienceTargets,
    analyze_interactions,
    compute_salience_targets,
    correlate_interactions,
    filter_variant,
    load_model,
    make_knots,
    predict_baq,
    predict_items,
    proportional_attribution,
    select_interactions,
    train_mapping,
)
from paqm.services.synthetic import synthetic_feature_db
from paqm.settings import MappingSettings

CEMS = ["PS", "PDEV", "BVAR"]
DMS = ["RmsNoiseLoud", "SegmentalNMR", "EHS"]
PUBLISHED_R = np.array([
    [0.5, 0.4, 0.73],
    [-0.44, -0.67, -0.60],
    [-0.34, -0.73, -0.85],
])
BVAR_EHS = Interaction(cem="BVAR", dm="EHS", r=-0.9, sign=-1)


@pytest.fixture(scope="module")
def clean_db():
    return synthetic_feature_db(n_items=200, seed=3, noise_sigma=0.0, weights={
        "RmsNoiseLoud": 5.0, "SegmentalNMR": 5.0, "EHS": 40.0,
    })


@pytest.fixture(scope="module")
def trained(clean_db):
    return train_mapping(clean_db.items, [BVAR_EHS])


def _linear_items(n=40, seed=0):
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n):
        # item 0 sits at the no-distortion point so every basis starts at the data minimum
        x = np.array([0.0, -100.0, 0.0]) if i == 0 else rng.uniform(1.0, 20.0, 3)
        items.append(ItemFeatures(
            item_id=f"i{i}",
            movs=dict(zip(DMS, x.tolist())),
            cems={"PS": 1.0, "PDEV": 0.0, "BVAR": float(rng.uniform())},
            subjective_score=100.0 - 2.0 * x[0],
        ))
    return items


def test_published_table_selection():
    table = InteractionTable.from_matrix(CEMS, DMS, PUBLISHED_R)
    selected = select_interactions(table, 0.6)
    assert [(s.cem, s.dm, s.sign) for s in selected] == [
        ("BVAR", "EHS", -1),
        ("BVAR", "SegmentalNMR", -1),
        ("PDEV", "EHS", -1),
        ("PDEV", "SegmentalNMR", -1),
        ("PS", "EHS", 1),
    ]
    values = sorted(s.r for s in selected)
    assert values == sorted([0.73, -0.67, -0.60, -0.73, -0.85])
    assert ("PS", "RmsNoiseLoud") not in {s.key for s in selected}
    assert ("BVAR", "RmsNoiseLoud") not in {s.key for s in selected}


def test_selection_is_independent_of_row_order():
    order = [2, 0, 1]
    table = InteractionTable.from_matrix([CEMS[i] for i in order], DMS, PUBLISHED_R[order])
    assert select_interactions(table, 0.6) == select_interactions(InteractionTable.from_matrix(CEMS, DMS, PUBLISHED_R), 0.6)


def test_selection_edge_cases():
    assert select_interactions(InteractionTable.from_matrix([], DMS, np.zeros((0, 3))), 0.6) == []
    assert select_interactions(InteractionTable.from_matrix(CEMS, DMS, PUBLISHED_R), 1.1) == []
    with_nan = PUBLISHED_R.copy()
    with_nan[2, 2] = np.nan
    keys = {s.key for s in select_interactions(InteractionTable.from_matrix(CEMS, DMS, with_nan), 0.6)}
    assert ("BVAR", "EHS") not in keys


def test_filter_variant():
    selected = select_interactions(InteractionTable.from_matrix(CEMS, DMS, PUBLISHED_R), 0.6)
    assert {s.cem for s in filter_variant(selected, "bvar")} == {"PS", "BVAR"}
    assert {s.cem for s in filter_variant(selected, "pdev")} == {"PS", "PDEV"}
    assert filter_variant(selected, "none") == []


def test_proportional_attribution():
    salience = proportional_attribution(np.array([10.0]), np.array([[20.0, 20.0]]))
    np.testing.assert_allclose(salience, [[1.25, 1.25]])


def test_make_knots_prepends_anchor():
    knots = make_knots(np.linspace(1.0, 5.0, 50), 5, anchor=0.0)
    np.testing.assert_allclose(knots, [0.0, 1.0, 2.0, 3.0, 4.0, 5.0])


def test_salience_single_dm_driven():
    targets = compute_salience_targets(_linear_items())
    np.testing.assert_allclose(targets.column("RmsNoiseLoud"), 1.0, atol=1e-6)
    assert np.all(np.isnan(targets.column("SegmentalNMR")))
    assert np.all(np.isnan(targets.column("EHS")))


def test_salience_tracks_generating_gate(clean_db):
    targets = compute_salience_targets(clean_db.items)
    ehs = targets.column("EHS")
    defined = np.isfinite(ehs)
    assert defined.sum() > 150
    assert np.corrcoef(ehs[defined], clean_db.gate[defined])[0, 1] > 0.9


def test_salience_preconditions():
    items = _linear_items()
    with pytest.raises(InsufficientDataError):
        compute_salience_targets(items[:19])
    flat = [item.model_copy(update={"subjective_score": 50.0}) for item in items]
    with pytest.raises(DegenerateDataError, match="constant"):
        compute_salience_targets(flat)


def _targets(values):
    values = np.asarray(values, dtype=float)
    return SalienceTargets(
        item_ids=[str(i) for i in range(values.size)],
        dm_names=["EHS"],
        values=values[:, None],
        contributions=np.ones((values.size, 1)),
    )


def test_correlate_perfect_and_inverted(rng):
    salience = rng.uniform(0.5, 1.5, 30)
    table = correlate_interactions(_targets(salience), {"BVAR": salience, "PS": -salience})
    assert table.value("BVAR", "EHS") == pytest.approx(1.0)
    assert table.value("PS", "EHS") == pytest.approx(-1.0)
    assert table.counts.tolist() == [[30], [30]]


def test_correlate_few_observations_is_undefined(rng):
    salience = rng.uniform(0.5, 1.5, 30)
    salience[5:] = np.nan
    table = correlate_interactions(_targets(salience), {"BVAR": rng.uniform(size=30)})
    assert np.isnan(table.value("BVAR", "EHS"))


def test_correlate_zero_variance_cem(rng):
    with pytest.raises(DegenerateDataError, match="BVAR x EHS"):
        correlate_interactions(_targets(rng.uniform(size=30)), {"BVAR": np.ones(30)})


def test_table_document_round_trip():
    table = InteractionTable.from_matrix(CEMS, DMS, PUBLISHED_R, counts=np.full((3, 3), 200))
    table.selected = select_interactions(table, 0.6)
    restored = InteractionTable.from_document(table.to_document(0.6))
    np.testing.assert_array_equal(restored.r, table.r)
    assert restored.selected == table.selected


def test_analysis_recovers_suppressing_gate():
    db = synthetic_feature_db(n_items=200, seed=7)
    table = analyze_interactions(db.items)
    assert table.value("BVAR", "EHS") <= -0.6
    assert ("BVAR", "EHS") in {s.key for s in table.selected if s.sign == -1}


def test_training_recovers_generating_scores(clean_db, trained):
    assert trained.training.rmse < 1.0
    assert trained.gates[0].weight < 0
    truth = np.array([item.subjective_score for item in clean_db.items])
    assert np.sqrt(np.mean((predict_items(trained, clean_db.items) - truth) ** 2)) < 1.0


def test_training_without_interactions_is_additive(clean_db):
    model = train_mapping(clean_db.items, [])
    assert model.gates == []
    assert model.training.converged


def test_retraining_on_own_predictions(clean_db):
    model = train_mapping(clean_db.items, [])
    predicted = predict_items(model, clean_db.items)
    relabeled = [item.model_copy(update={"subjective_score": float(p)})
                 for item, p in zip(clean_db.items, predicted)]
    again = train_mapping(relabeled, [])
    assert np.sqrt(np.mean((predict_items(again, relabeled) - predicted) ** 2)) < 0.1


def test_single_dm_linear_slope():
    items = _linear_items(60)
    model = train_mapping(items, [], dm_names=["RmsNoiseLoud"])
    basis = model.bases["RmsNoiseLoud"]
    slopes = np.diff(basis.values) / np.diff(basis.knots)
    np.testing.assert_allclose(slopes, 2.0, rtol=0.01)


def test_training_needs_enough_items():
    with pytest.raises(InsufficientDataError):
        train_mapping(_linear_items(29), [])


def test_training_is_deterministic(clean_db, trained):
    again = train_mapping(clean_db.items, [BVAR_EHS])
    assert again.model_dump_json() == trained.model_dump_json()


def test_non_convergence_returns_the_last_iterate(clean_db, caplog):
    with caplog.at_level(logging.WARNING, logger="paqm.services.salience_mapping"):
        one = train_mapping(clean_db.items, [BVAR_EHS], MappingSettings(max_rounds=1))
    assert not one.training.converged
    assert one.training.rounds == 1
    assert "did not converge" in caplog.text

    two = train_mapping(clean_db.items, [BVAR_EHS], MappingSettings(max_rounds=2))
    assert two.training.rounds == 2
    # the second round refits the bases under the gates from round one
    assert two.gates[0].weight != one.gates[0].weight
    assert two.model_dump_json() != one.model_dump_json()


def test_training_statistics_match_predictions(clean_db, trained):
    predicted = predict_items(trained, clean_db.items)
    truth = np.array([item.subjective_score for item in clean_db.items])
    assert trained.training.rmse == pytest.approx(np.sqrt(np.mean((predicted - truth) ** 2)), rel=1e-9)
    for item, value in zip(clean_db.items[:10], predicted[:10]):
        assert predict_baq(trained, item.movs, item.cems) == pytest.approx(value, abs=1e-12)


def test_no_distortion_scores_100(trained):
    movs = {"RmsNoiseLoud": 0.0, "SegmentalNMR": -100.0, "EHS": 0.0}
    assert predict_baq(trained, movs, {"BVAR": 0.3}) == 100.0


def test_prediction_is_monotone(trained, rng):
    for _ in range(100):
        movs = {"RmsNoiseLoud": rng.uniform(0, 2), "SegmentalNMR": rng.uniform(-20, 5), "EHS": rng.uniform(0, 0.6)}
        cems = {"BVAR": rng.uniform(0, 0.2)}
        base = predict_baq(trained, movs, cems)
        for dm, step in (("RmsNoiseLoud", 0.1), ("SegmentalNMR", 1.0), ("EHS", 0.05)):
            assert predict_baq(trained, {**movs, dm: movs[dm] + step}, cems) <= base + 1e-9
        assert predict_baq(trained, movs, {"BVAR": cems["BVAR"] + 0.01}) >= base - 1e-9


def _hand_model(weight):
    return SalienceMappingModel(
        dm_names=DMS,
        bases={dm: BasisFunction(knots=[0.0, 1.0], values=[0.0, 50.0]) for dm in DMS},
        gates=[GateWeight(dm=dm, cem="BVAR", sign=-1, weight=weight) for dm in DMS],
        cem_stats={"BVAR": CemStats(mean=0.0, std=1.0)},
    )


def test_closed_gates_give_full_score():
    movs = dict.fromkeys(DMS, 1.0)
    assert predict_baq(_hand_model(-10.0), movs, {"BVAR": 1.0}) == 100.0
    assert predict_baq(_hand_model(-10.0), movs, {"BVAR": 0.0}) == 0.0


def test_untrained_and_incomplete_models():
    with pytest.raises(ModelError):
        predict_baq(None, {}, {})
    with pytest.raises(ModelError):
        predict_baq(SalienceMappingModel(dm_names=DMS, bases={}), dict.fromkeys(DMS, 0.0), {})
    with pytest.raises(ModelError, match="missing"):
        predict_baq(_hand_model(-0.1), {"EHS": 0.1}, {"BVAR": 0.0})


def test_model_json_round_trip_and_version_check(trained):
    text = trained.model_dump_json()
    assert load_model(text) == trained
    with pytest.raises(ModelError):
        load_model(text.replace("paqm-salience-model/1", "paqm-salience-model/0"))
    with pytest.raises(ModelError):
        load_model("{not json")
