"""
Tests for src.storage.artifact_store
"""

import json

import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st

from src.meta_classifier.gradient_boosting import fit, predict_proba_matrix
from src.radar_network.radar_model import forward, init_weights
from src.radar_network.radar_trainer import EpochRecord
from src.scene_simulator.world_generator import generate_world
from src.shared.config import BoostConfig, CameraSimConfig, NetworkConfig, RadarSimConfig, WorldConfig
from src.shared.exceptions import ArtifactParseError, ArtifactValidationError, DataError, SchemaError
from src.shared.models import BoxLabel, FeatureVector, LabeledExample
from src.shared.utils import seed_stream
from src.storage.artifact_store import (
    ReportTable,
    dumps,
    format_float,
    load_artifact,
    read_header,
    save_artifact,
)

TINY = NetworkConfig(n_slices=8, width=4)


def _ensemble(seed: int = 0):
    rng = seed_stream(seed, "test", "store-ensemble")
    X = rng.normal(size=(150, 9))
    labels = (X[:, 0] + 0.3 * rng.normal(size=150) > 0).astype(float)
    return fit(X, labels, BoostConfig(n_rounds=6, seed=seed))


def _example(i: int, label: BoxLabel) -> LabeledExample:
    features = FeatureVector(
        z=0.1 * (i % 10), p_vehicle=0.9, cx=10.0 / 3.0 + i, cy=200.5, w=12.25, h=8.0, area=98.0, mu=1.0 / 7.0, sigma=0.2
    )
    return LabeledExample(scene_id=f"train-{i:05d}", box_id=i, features=features, label=label)


# ========== NUMBERS ==========

@hyp_settings(max_examples=200)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_seventeen_digits_read_back_exactly(value):
    assert float(format_float(value)) == value


def test_dumps_formats_nested_values():
    assert dumps({"a": [1, 0.1, None, True], "b": "x"}) == '{"a":[1,0.10000000000000001,null,true],"b":"x"}'


def test_non_finite_values_are_refused():
    with pytest.raises(DataError):
        dumps([float("nan")])


# ========== ROUND TRIPS ==========

def test_weights_round_trip_gives_bit_identical_forward(tmp_path):
    weights = init_weights(TINY, 3)
    path = save_artifact("radar_weights", weights, tmp_path / "radar_weights.json", digest="abc")
    restored = load_artifact("radar_weights", path)
    assert restored.equals(weights)
    sample = seed_stream(3, "test", "sample").normal(size=(5, 8, 3, 4))
    np.testing.assert_array_equal(forward(sample, restored), forward(sample, weights))
    assert json.loads(path.read_text())["header"]["digest"] == "abc"


def test_ensemble_round_trip_predicts_identically(tmp_path):
    ensemble = _ensemble()
    path = save_artifact("ensemble", ensemble, tmp_path / "ensemble.json")
    restored = load_artifact("ensemble", path)
    samples = seed_stream(1, "test", "samples").normal(size=(1000, 9))
    np.testing.assert_array_equal(predict_proba_matrix(restored, samples), predict_proba_matrix(ensemble, samples))
    assert restored == ensemble


def test_world_round_trip(tmp_path, camera, grid):
    world = generate_world(WorldConfig(n_scenes=4, seed=2), CameraSimConfig(), RadarSimConfig(), camera, grid)
    path = save_artifact("world", world, tmp_path / "world_train.jsonl")
    assert load_artifact("world", path) == world
    lines = path.read_text().splitlines()
    assert len(lines) == 5
    assert json.loads(lines[0])["schema_name"] == "yodar.world"


def test_empty_world_round_trip(tmp_path):
    path = save_artifact("world", [], tmp_path / "world.jsonl")
    assert load_artifact("world", path) == []


def test_training_set_round_trip(tmp_path):
    rows = [_example(i, BoxLabel.TP if i % 3 else BoxLabel.FP) for i in range(7)]
    path = save_artifact("training_set", rows, tmp_path / "fusion_train.csv")
    assert load_artifact("training_set", path) == rows
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# {")
    assert lines[1] == "scene_id,box_id,z,p_vehicle,cx,cy,w,h,area,mu,sigma,label"


def test_loss_curve_round_trip(tmp_path):
    records = [
        EpochRecord(epoch=1, phase=1, learning_rate=1e-3, train_loss=0.6931471805599453, val_loss=0.7),
        EpochRecord(epoch=2, phase=2, learning_rate=1e-4, train_loss=0.5),
    ]
    path = save_artifact("loss_curve", records, tmp_path / "radar_loss.csv")
    assert load_artifact("loss_curve", path) == records


def test_report_table_round_trip(tmp_path):
    table = ReportTable(columns=["detector", "mean_ap", "tp", "note"], rows=[["fused", 0.123, 7, None], ["camera", 1e-17, 0, "x"]])
    path = save_artifact("report_table", table, tmp_path / "summary.csv")
    assert load_artifact("report_table", path) == table


def test_manifest_round_trip(tmp_path):
    manifest = {"seed": 1, "splits": {"train": {"scenes": 3, "night_fraction": 0.3333333333333333}}}
    path = save_artifact("manifest", manifest, tmp_path / "manifest.json")
    assert load_artifact("manifest", path) == manifest
    assert read_header(path).schema_name == "yodar.manifest"


@hyp_settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.integers(-5, 5), st.text(alphabet="abc", min_size=1)), max_size=8))
def test_random_report_tables_round_trip(tmp_path_factory, rows):
    table = ReportTable(columns=["value", "count", "name"], rows=[[v, c, n] for v, c, n in rows])
    path = save_artifact("report_table", table, tmp_path_factory.mktemp("tables") / "t.csv")
    restored = load_artifact("report_table", path)
    assert restored.columns == table.columns
    for got, want in zip(restored.rows, table.rows):
        assert got[0] == want[0] and got[1] == want[1] and got[2] == want[2]


# ========== FAILURES ==========

def test_newer_schema_version_is_rejected(tmp_path):
    path = save_artifact("ensemble", _ensemble(), tmp_path / "ensemble.json")
    document = json.loads(path.read_text())
    document["header"]["schema_version"] = 2
    path.write_text(json.dumps(document))
    with pytest.raises(SchemaError, match="newer"):
        load_artifact("ensemble", path)


def test_wrong_kind_is_rejected(tmp_path):
    path = save_artifact("ensemble", _ensemble(), tmp_path / "ensemble.json")
    with pytest.raises(SchemaError, match="ensemble"):
        load_artifact("radar_weights", path)


def test_unknown_schema_is_rejected(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"header":{"schema_name":"other","schema_version":1,"digest":""},\n"payload":{}}\n')
    with pytest.raises(SchemaError, match="unknown schema"):
        load_artifact("ensemble", path)


def test_malformed_world_line_reports_line_number(tmp_path, camera, grid):
    world = generate_world(WorldConfig(n_scenes=3, seed=2), CameraSimConfig(), RadarSimConfig(), camera, grid)
    path = save_artifact("world", world, tmp_path / "world.jsonl")
    lines = path.read_text().splitlines()
    lines[2] = lines[2][:-5]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ArtifactParseError) as info:
        load_artifact("world", path)
    assert info.value.line == 3


def test_bad_training_row_reports_line_number(tmp_path):
    path = save_artifact("training_set", [_example(1, BoxLabel.TP)], tmp_path / "fusion_train.csv")
    path.write_text(path.read_text().replace("200.5", "oops"))
    with pytest.raises(ArtifactParseError) as info:
        load_artifact("training_set", path)
    assert info.value.line == 3


def test_invariant_violation_names_the_field(tmp_path):
    path = save_artifact("training_set", [_example(2, BoxLabel.TP)], tmp_path / "fusion_train.csv")
    path.write_text(path.read_text().replace(",0.20000000000000001,", ",0.90000000000000002,"))
    with pytest.raises(ArtifactValidationError) as info:
        load_artifact("training_set", path)
    assert "sigma" in info.value.invariant


def test_truncated_weights_fail_validation(tmp_path):
    path = save_artifact("radar_weights", init_weights(TINY, 1), tmp_path / "w.json")
    document = json.loads(path.read_text())
    document["payload"]["parameters"][2]["values"].pop()
    path.write_text(json.dumps(document))
    with pytest.raises(ArtifactValidationError):
        load_artifact("radar_weights", path)


def test_missing_file_is_data_error(tmp_path):
    with pytest.raises(DataError, match="missing"):
        load_artifact("world", tmp_path / "nope.jsonl")


def test_unwritable_target_is_data_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(DataError):
        save_artifact("manifest", {}, blocker / "manifest.json")


def test_save_leaves_no_temporary_files(tmp_path):
    save_artifact("manifest", {"a": 1}, tmp_path / "manifest.json")
    save_artifact("manifest", {"a": 2}, tmp_path / "manifest.json")
    assert [p.name for p in tmp_path.iterdir()] == ["manifest.json"]
