"""
Pipeline Commands for the YOdar Fusion Pipeline
===============================================
Author: Perception Fusion Team

Bodies of the command-line stages. Each stage reads its inputs from a run
directory, writes its artifacts back into it and returns what it produced, so the
stages can be chained by ``cmd_run`` or called one by one from ``main.py``.

Run directory layout:
- config.json, manifest.json
- world_train.jsonl, world_val.jsonl, world_test.jsonl
- radar_weights.json, radar_loss.csv
- fusion_train.csv, fusion_val.csv, ensemble.json
- report/*.csv, report/*.svg, report/*.md

Every artifact except the manifest is a pure function of the configuration and
seed, so repeated runs reproduce them byte for byte.

Dependencies: pydantic
"""

# Standard library imports
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

# Third-party imports
from pydantic import ValidationError

# Local imports
from ..evaluation.detection_metrics import (
    EvalReport,
    MetaClassifierScores,
    average_summaries,
    build_eval_report,
    meta_classifier_scores,
    radar_only_detections,
)
from ..evaluation.report_writer import (
    index_markdown,
    plot_loss_curve,
    summaries_from_table,
    summary_markdown,
    summary_table,
    write_eval_report,
)
from ..fusion_engine.fusion_processor import (
    FusionProcessor,
    build_training_set,
    radar_targets,
    scene_tensors,
    training_arrays,
)
from ..meta_classifier.gradient_boosting import BoostedTreeClassifier, Ensemble, predict_proba_matrix
from ..radar_network.radar_model import NetworkWeights
from ..radar_network.radar_trainer import RadarTrainer
from ..scene_simulator.world_generator import generate_world
from ..shared.config import SPLITS, RunConfig
from ..shared.exceptions import ConfigError, DataError
from ..shared.models import LabeledExample, Scene
from ..shared.utils import config_digest, utc_timestamp
from ..storage.artifact_store import (
    ReportTable,
    load_artifact,
    save_artifact,
    write_text_atomic,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CONFIG_FILE = "config.json"
MANIFEST_FILE = "manifest.json"
WEIGHTS_FILE = "radar_weights.json"
LOSS_FILE = "radar_loss.csv"
TRAINING_SET_FILE = "fusion_train.csv"
VALIDATION_FILE = "fusion_val.csv"
ENSEMBLE_FILE = "ensemble.json"
REPORT_DIR = "report"
INDEX_FILE = "index.md"


def world_file(split: str) -> str:
    return f"world_{split}.jsonl"


# ========== CONFIGURATION ==========

def _field_path(location: Sequence[Union[str, int]]) -> str:
    return ".".join(str(part) for part in location) or "<root>"


def load_run_config(path: Optional[PathLike] = None, seed: Optional[int] = None) -> RunConfig:
    """
    Read a JSON run configuration; ``seed`` overrides every seed in it.

    Without a path the built-in defaults are used.

    Raises:
        ConfigError: Unreadable file, malformed JSON, unknown keys or invalid values
    """
    if path is None:
        config = RunConfig()
    else:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {str(e)}") from e
        try:
            config = RunConfig.model_validate_json(text)
        except ValidationError as e:
            problems = "; ".join(f"{_field_path(err['loc'])}: {err['msg']}" for err in e.errors())
            raise ConfigError(f"invalid config {path}: {problems}") from e
    if seed is not None:
        config = config.with_seed(seed)
    logger.debug(f"Run config digest {config_digest(config)} (seed {config.seed})")
    return config


def _write_config(config: RunConfig, run_dir: Path) -> Path:
    return write_text_atomic(run_dir / CONFIG_FILE, config.model_dump_json(indent=2) + "\n")


def _load_world(run_dir: Path, split: str) -> List[Scene]:
    return load_artifact("world", run_dir / world_file(split))


# ========== GEN-DATA ==========

def cmd_gen_data(config: RunConfig, run_dir: PathLike) -> Dict[str, List[Scene]]:
    """
    Generate the train, val and test worlds and the run manifest.

    Raises:
        ConfigError: A split has zero scenes
    """
    run_dir = Path(run_dir)
    empty = [split for split in SPLITS if config.splits.scenes[split] == 0]
    if empty:
        raise ConfigError(f"empty split: {', '.join(empty)} has zero scenes")

    digest = config_digest(config)
    worlds: Dict[str, List[Scene]] = {}
    split_stats: Dict[str, Dict[str, Union[int, float]]] = {}
    for split in SPLITS:
        scenes = generate_world(
            config.world_for_split(split),
            config.camera_sim,
            config.radar_sim,
            config.camera,
            config.grid,
            config.network.n_frames,
        )
        save_artifact("world", scenes, run_dir / world_file(split), digest)
        nights = sum(1 for s in scenes if s.night)
        split_stats[split] = {
            "scenes": len(scenes),
            "night_scenes": nights,
            "night_fraction": nights / len(scenes),
            "vehicles": sum(len(s.vehicles) for s in scenes),
            "radar_visible": sum(sum(s.radar_visible) for s in scenes),
        }
        worlds[split] = scenes

    manifest = {
        "seed": config.seed,
        "world_seed": config.world.seed,
        "radar_seed": config.train_schedule.seed,
        "boost_seed": config.boost.seed,
        "config_digest": digest,
        "created_utc": utc_timestamp(),
        "splits": split_stats,
    }
    save_artifact("manifest", manifest, run_dir / MANIFEST_FILE, digest)
    _write_config(config, run_dir)
    for split, stats in split_stats.items():
        logger.info(f"Split '{split}': {stats['scenes']} scenes, {stats['night_fraction']:.1%} at night")
    return worlds


# ========== TRAIN-RADAR ==========

def cmd_train_radar(config: RunConfig, run_dir: PathLike) -> NetworkWeights:
    """Train the radar network on the train world, monitoring the val world."""
    run_dir = Path(run_dir)
    train_scenes = _load_world(run_dir, "train")
    val_scenes = _load_world(run_dir, "val")
    n_frames = config.network.n_frames

    trainer = RadarTrainer(config.network, config.train_schedule)
    weights = trainer.fit(
        scene_tensors(train_scenes, config.grid, n_frames),
        radar_targets(train_scenes, config.grid),
        scene_tensors(val_scenes, config.grid, n_frames),
        radar_targets(val_scenes, config.grid),
    )
    digest = config_digest(config)
    save_artifact("radar_weights", weights, run_dir / WEIGHTS_FILE, digest)
    save_artifact("loss_curve", trainer.history, run_dir / LOSS_FILE, digest)
    final = trainer.history[-1]
    logger.info(f"Radar training finished after {final.epoch} epochs, train loss {final.train_loss:.6f}")
    return weights


# ========== TRAIN-FUSION ==========

def cmd_train_fusion(config: RunConfig, run_dir: PathLike) -> Ensemble:
    """
    Fit the meta-classifier on the train world and score it on the val world.

    Raises:
        DataError: No candidate survives the low threshold on the train world
    """
    run_dir = Path(run_dir)
    weights: NetworkWeights = load_artifact("radar_weights", run_dir / WEIGHTS_FILE)
    digest = config_digest(config)

    rows = build_training_set(_load_world(run_dir, "train"), weights, config.fusion, config.grid)
    if not rows:
        raise DataError("fusion training set is empty: no candidate passes t_f")
    save_artifact("training_set", rows, run_dir / TRAINING_SET_FILE, digest)
    features, labels = training_arrays(rows)
    ensemble = BoostedTreeClassifier(config.boost).fit(features, labels)
    save_artifact("ensemble", ensemble, run_dir / ENSEMBLE_FILE, digest)

    val_rows = build_training_set(_load_world(run_dir, "val"), weights, config.fusion, config.grid)
    save_artifact("training_set", val_rows, run_dir / VALIDATION_FILE, digest)
    if val_rows:
        scores = validate_ensemble(ensemble, val_rows, config)
        auroc = "n/a" if scores.auroc is None else f"{scores.auroc:.4f}"
        logger.info(
            f"Meta-classifier on {scores.n_rows} val rows: log loss {scores.log_loss:.4f}, "
            f"accuracy {scores.accuracy:.4f}, AUROC {auroc}"
        )
    else:
        logger.warning("Validation world has no candidates above t_f; skipping meta-classifier scores")
    return ensemble


def validate_ensemble(ensemble: Ensemble, rows: Sequence[LabeledExample], config: RunConfig) -> MetaClassifierScores:
    features, labels = training_arrays(rows)
    return meta_classifier_scores(labels, predict_proba_matrix(ensemble, features), config.fusion.t_fuse)


# ========== EVAL ==========

def evaluate_world(
    scenes: Sequence[Scene], weights: NetworkWeights, ensemble: Ensemble, config: RunConfig
) -> EvalReport:
    """Run all three detectors over ``scenes`` and score them."""
    processor = FusionProcessor(weights, ensemble, config.fusion, config.grid)
    probs = processor.slice_probs(scenes)
    detections = {
        "radar": [radar_only_detections(y, config.fusion.t_g, config.grid) for y in probs],
        "camera": processor.camera_only(scenes),
        "fused": processor.detect(scenes, probs),
    }
    return build_eval_report(scenes, detections, probs, config.fusion, config.evaluation, config.grid)


def cmd_eval(config: RunConfig, run_dir: PathLike) -> EvalReport:
    """Score radar-only, camera-only and fused detection on the test world."""
    run_dir = Path(run_dir)
    weights: NetworkWeights = load_artifact("radar_weights", run_dir / WEIGHTS_FILE)
    ensemble: Ensemble = load_artifact("ensemble", run_dir / ENSEMBLE_FILE)
    scenes = _load_world(run_dir, "test")
    if not any(s.gt_boxes for s in scenes):
        raise DataError("test world has no ground-truth vehicles")

    report = evaluate_world(scenes, weights, ensemble, config)
    write_eval_report(
        report,
        run_dir / REPORT_DIR,
        config.evaluation.bin_width_m,
        config.evaluation.column_bin_px,
        config_digest(config),
    )
    return report


# ========== REPORT ==========

def _require_run_dir(run_dir: Path) -> None:
    if not run_dir.is_dir():
        raise DataError(f"missing run directory {run_dir}")
    if not any(run_dir.iterdir()):
        raise DataError(f"empty run directory {run_dir}")


def _artifacts(run_dir: Path) -> List[Path]:
    return [p for p in run_dir.rglob("*") if p.is_file() and p.name != INDEX_FILE]


def cmd_report(run_dirs: Sequence[PathLike], out: Optional[PathLike] = None) -> List[Path]:
    """
    Consolidate finished runs.

    For each run directory the radar loss curve is plotted and ``report/index.md``
    lists every artifact. Given several runs, their summaries are averaged into
    ``summary_averaged.csv`` and ``summary_averaged.md`` under ``out`` (default: the
    first run's report directory).

    Raises:
        DataError: A run directory is missing, empty or has no evaluation summary
    """
    if not run_dirs:
        raise DataError("no run directory given")
    written: List[Path] = []
    per_run = []
    for run_dir in map(Path, run_dirs):
        _require_run_dir(run_dir)
        report_dir = run_dir / REPORT_DIR
        loss_path = run_dir / LOSS_FILE
        if loss_path.exists():
            written.append(plot_loss_curve(load_artifact("loss_curve", loss_path), report_dir / "radar_loss.svg"))
        summary_path = report_dir / "summary.csv"
        if len(run_dirs) > 1:
            per_run.append(summaries_from_table(load_artifact("report_table", summary_path)))
        index = write_text_atomic(report_dir / INDEX_FILE, index_markdown(run_dir, _artifacts(run_dir)))
        written.append(index)
        logger.info(f"Indexed run {run_dir}")

    if per_run:
        averaged = average_summaries(per_run)
        out_dir = Path(out) if out is not None else Path(run_dirs[0]) / REPORT_DIR
        table: ReportTable = summary_table(averaged)
        written.append(save_artifact("report_table", table, out_dir / "summary_averaged.csv"))
        sources = [f"Averaged over: {', '.join(str(Path(d).name) for d in run_dirs)}."]
        written.append(write_text_atomic(out_dir / "summary_averaged.md", summary_markdown(averaged, sources)))
        logger.info(f"Averaged {len(per_run)} runs into {out_dir}")
    return written


# ========== RUN ==========

def cmd_run(config: RunConfig, run_dir: PathLike) -> EvalReport:
    """All stages in order: gen-data, train-radar, train-fusion, eval, report."""
    run_dir = Path(run_dir)
    logger.info(f"Starting full run in {run_dir} (seed {config.seed})")
    cmd_gen_data(config, run_dir)
    cmd_train_radar(config, run_dir)
    cmd_train_fusion(config, run_dir)
    report = cmd_eval(config, run_dir)
    cmd_report([run_dir])
    return report

