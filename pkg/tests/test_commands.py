"""
Tests for src.pipeline.commands and the main.py entry point
"""

import json

import pytest

import main as entry_point
from src.evaluation.report_writer import summaries_from_table
from src.meta_classifier.gradient_boosting import Ensemble
from src.pipeline.commands import (
    cmd_gen_data,
    cmd_report,
    cmd_run,
    evaluate_world,
    load_run_config,
)
from src.shared.config import RunConfig, SplitConfig
from src.shared.exceptions import ConfigError, DataError, NumericError
from src.storage.artifact_store import load_artifact

RUN_FILES = [
    "config.json",
    "manifest.json",
    "world_train.jsonl",
    "world_val.jsonl",
    "world_test.jsonl",
    "radar_weights.json",
    "radar_loss.csv",
    "fusion_train.csv",
    "fusion_val.csv",
    "ensemble.json",
    "report/summary.csv",
    "report/summary.md",
    "report/distance_bins.csv",
    "report/distance_recall.svg",
    "report/heatmap_gt.csv",
    "report/heatmap_gt.svg",
    "report/heatmap_difference.csv",
    "report/heatmap_difference.svg",
    "report/heatmap_recall_fused.svg",
    "report/fp_at_matched_tp.csv",
    "report/radar_1d.csv",
    "report/radar_loss.svg",
    "report/index.md",
]


@pytest.fixture
def quiet_main(monkeypatch):
    monkeypatch.setattr(entry_point, "configure_logging", lambda: None)
    return entry_point


def _files(run_dir):
    return {p.relative_to(run_dir).as_posix(): p.read_bytes() for p in run_dir.rglob("*") if p.is_file()}


# ========== FULL RUN ==========

def test_run_writes_every_artifact(finished_run):
    for name in RUN_FILES:
        assert (finished_run / name).is_file(), name


def test_summary_covers_three_detectors(finished_run):
    summaries = summaries_from_table(load_artifact("report_table", finished_run / "report" / "summary.csv"))
    assert [s.detector for s in summaries] == ["radar", "camera", "fused"]
    for s in summaries:
        assert 0.0 <= s.mean_ap <= 1.0
        assert 0.0 <= s.accuracy <= 1.0


def test_two_runs_are_byte_identical(finished_run, tmp_path, tiny_run_config):
    second = tmp_path / "run"
    cmd_run(tiny_run_config, second)
    first_files, second_files = _files(finished_run), _files(second)
    assert set(first_files) == set(second_files)
    for name, content in first_files.items():
        if name != "manifest.json":
            assert second_files[name] == content, name


def test_manifest_records_split_profiles(finished_run):
    manifest = load_artifact("manifest", finished_run / "manifest.json")
    assert manifest["seed"] == 7
    assert manifest["splits"]["test"]["night_fraction"] == 1.0
    assert manifest["splits"]["train"]["scenes"] == 24
    assert manifest["created_utc"].endswith("Z")


def test_exported_training_rows_keep_the_nine_metric_contract(finished_run):
    rows = load_artifact("training_set", finished_run / "fusion_train.csv")
    assert rows
    for row in rows:
        f = row.features
        assert 0.0 <= f.mu <= 1.0
        assert 0.0 <= f.sigma <= 0.5
        assert f.area == pytest.approx(f.w * f.h, abs=1e-9)


def test_constant_zero_ensemble_fuses_nothing(finished_run, tiny_run_config):
    scenes = load_artifact("world", finished_run / "world_test.jsonl")
    weights = load_artifact("radar_weights", finished_run / "radar_weights.json")
    silent = Ensemble(base_score=-50.0, trees=[], shrinkage=0.1)
    fused = evaluate_world(scenes, weights, silent, tiny_run_config).summary("fused")
    assert fused.tp == 0 and fused.fp == 0
    assert fused.accuracy == 0.0
    assert fused.mean_ap == 0.0


# ========== GEN-DATA ==========

def test_empty_split_is_rejected(tmp_path, tiny_run_config):
    config = tiny_run_config.model_copy(
        update={
            "splits": SplitConfig(
                scenes={"train": 4, "val": 0, "test": 2},
                night_fraction={"train": 0.09, "val": 0.09, "test": 1.0},
            )
        }
    )
    with pytest.raises(ConfigError, match="empty split"):
        cmd_gen_data(config, tmp_path)


def test_default_config_night_profiles(tmp_path):
    cmd_gen_data(RunConfig(), tmp_path)
    splits = load_artifact("manifest", tmp_path / "manifest.json")["splits"]
    assert splits["test"]["night_fraction"] == 1.0
    assert 0.05 <= splits["train"]["night_fraction"] <= 0.13
    assert splits["val"]["scenes"] == 100


def test_gen_data_twice_gives_identical_worlds(tmp_path, tiny_run_config):
    first = cmd_gen_data(tiny_run_config, tmp_path / "a")
    second = cmd_gen_data(tiny_run_config, tmp_path / "b")
    assert first == second
    for split in ("train", "val", "test"):
        name = f"world_{split}.jsonl"
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


# ========== CONFIGURATION ==========

def test_unknown_config_key_names_the_field(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"world": {"bogus": 1}}))
    with pytest.raises(ConfigError, match="world.bogus"):
        load_run_config(path)


def test_malformed_config_is_config_error(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_run_config(path)


def test_seed_flag_overrides_file_seeds(tmp_path, tiny_run_config):
    path = tmp_path / "config.json"
    path.write_text(tiny_run_config.model_dump_json())
    loaded = load_run_config(path, seed=3)
    assert loaded.seed == 3
    assert loaded.world.seed != tiny_run_config.world.seed
    assert loaded == tiny_run_config.with_seed(3)


def test_saved_config_reloads_identically(finished_run, tiny_run_config):
    assert load_run_config(finished_run / "config.json") == tiny_run_config


def _config_file_with_seed(tmp_path, tiny_run_config, seed):
    document = json.loads(tiny_run_config.model_dump_json())
    document["seed"] = seed
    for component in ("world", "train_schedule", "boost"):
        del document[component]["seed"]
    path = tmp_path / f"config_{seed}.json"
    path.write_text(json.dumps(document))
    return path


def test_config_file_seed_changes_the_generated_world(quiet_main, tmp_path, tiny_run_config):
    runs = {}
    for seed in (5, 9):
        path = _config_file_with_seed(tmp_path, tiny_run_config, seed)
        run_dir = tmp_path / f"run{seed}"
        assert quiet_main.main(["gen-data", "--config", str(path), "--out", str(run_dir)]) == 0
        runs[seed] = run_dir
    manifests = {seed: load_artifact("manifest", run_dir / "manifest.json") for seed, run_dir in runs.items()}
    assert manifests[5]["config_digest"] != manifests[9]["config_digest"]
    assert manifests[5]["world_seed"] != manifests[9]["world_seed"]
    assert manifests[5]["world_seed"] == tiny_run_config.with_seed(5).world.seed
    assert (runs[5] / "world_train.jsonl").read_bytes() != (runs[9] / "world_train.jsonl").read_bytes()


# ========== REPORT ==========

def test_report_on_empty_directory_fails(tmp_path):
    with pytest.raises(DataError, match="empty"):
        cmd_report([tmp_path])


def test_report_on_missing_directory_fails(tmp_path):
    with pytest.raises(DataError, match="missing"):
        cmd_report([tmp_path / "nope"])


def test_index_lists_every_artifact(finished_run):
    index = (finished_run / "report" / "index.md").read_text()
    for name in RUN_FILES:
        if name != "report/index.md":
            assert f"[{name}]({name})" in index


def test_report_rerun_is_identical(finished_run):
    before = _files(finished_run / "report")
    cmd_report([finished_run])
    assert _files(finished_run / "report") == before


def test_report_averages_several_runs(finished_run, tmp_path):
    cmd_report([finished_run, finished_run], out=tmp_path)
    single = summaries_from_table(load_artifact("report_table", finished_run / "report" / "summary.csv"))
    averaged = summaries_from_table(load_artifact("report_table", tmp_path / "summary_averaged.csv"))
    assert [a.detector for a in averaged] == [s.detector for s in single]
    for a, s in zip(averaged, single):
        assert a.mean_ap == s.mean_ap
        assert a.tp == s.tp
        assert a.runs == 2
    assert (tmp_path / "summary_averaged.md").is_file()


# ========== EXIT CODES ==========

def test_unknown_subcommand_exits_with_usage_code(quiet_main):
    assert quiet_main.main(["bogus"]) == 1


def test_invalid_config_exits_with_config_code(quiet_main, tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"seed": "many"}))
    assert quiet_main.main(["gen-data", "--config", str(path), "--out", str(tmp_path / "run")]) == 1


def test_missing_artifacts_exit_with_data_code(quiet_main, tmp_path, tiny_run_config):
    path = tmp_path / "config.json"
    path.write_text(tiny_run_config.model_dump_json())
    assert quiet_main.main(["eval", "--config", str(path), "--out", str(tmp_path / "run")]) == 2


def test_numeric_failure_exits_with_numeric_code(quiet_main, monkeypatch, tmp_path, tiny_run_config):
    def diverge(config, run_dir):
        raise NumericError("non-finite radar loss")

    monkeypatch.setattr(quiet_main, "cmd_train_radar", diverge)
    path = tmp_path / "config.json"
    path.write_text(tiny_run_config.model_dump_json())
    assert quiet_main.main(["train-radar", "--config", str(path), "--out", str(tmp_path)]) == 3


def test_eval_prints_one_line_per_detector(quiet_main, finished_run, capsys):
    assert quiet_main.main(["eval", "--out", str(finished_run)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [line.split(":")[0].strip() for line in lines[:3]] == ["radar", "camera", "fused"]
    assert len(lines) == 4


def test_report_subcommand_succeeds(quiet_main, finished_run):
    assert quiet_main.main(["report", str(finished_run)]) == 0
