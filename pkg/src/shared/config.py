"""
Configuration Management for the YOdar Fusion Pipeline
======================================================
Author: Perception Fusion Team

This module centralizes every tunable of the pipeline. Process-level settings
(parallelism, logging) come from environment variables, optionally loaded from a
.env file. Experiment settings come from a single JSON run configuration that is
validated strictly: unknown keys are rejected and every component checks its own
invariants.

Configuration Categories:
- Environment: YODAR_THREADS, YODAR_LOG_LEVEL, YODAR_LOG_FILE
- World simulation: scene layout, camera detector and radar sensor models
- Radar network: architecture constants and the phase training schedule
- Meta-classifier: gradient boosting hyperparameters
- Fusion and evaluation thresholds
- Data splits: scene counts and night fractions

Dependencies: pydantic, pydantic-settings, python-dotenv
"""

# Standard library imports
import os                                    # CPU count fallback for thread settings
from typing import Dict, List, Optional, Tuple

# Third-party imports
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    PositiveInt,
    model_validator,
)
from pydantic_settings import BaseSettings, SettingsConfigDict

# Local imports
from .models import CameraModel, ImageGrid

SPLITS: Tuple[str, ...] = ("train", "val", "test")

# RunConfig field and derive_seed label of every component with its own seed.
SEEDED_COMPONENTS: Tuple[Tuple[str, str], ...] = (
    ("world", "world"),
    ("train_schedule", "radar"),
    ("boost", "boost"),
)


# ========== ENVIRONMENT SETTINGS ==========

class Settings(BaseSettings):
    """
    Process settings loaded from ``YODAR_*`` environment variables or a .env file.

    Attributes:
        threads (Optional[int]): Cap on worker threads; all cores when unset
        log_level (str): Root logging level
        log_file (Optional[str]): Extra log file next to the console output
        run_benchmark (bool): Enables the multi-seed benchmark tests
        update_golden (bool): Lets tests write missing golden files instead of failing
    """

    model_config = SettingsConfigDict(env_prefix="YODAR_", env_file=".env", extra="ignore")

    threads: Optional[int] = Field(None, ge=1)
    log_level: str = "INFO"
    log_file: Optional[str] = None
    run_benchmark: bool = False
    update_golden: bool = False

    @property
    def thread_count(self) -> int:
        return self.threads or os.cpu_count() or 1


# ========== WORLD SIMULATION ==========

def _check_range(name: str, bounds: Tuple[float, float]) -> None:
    if bounds[0] > bounds[1]:
        raise ValueError(f"{name} must be a nonempty range, got {bounds}")


class WorldConfig(BaseModel):
    """
    Layout of the synthetic world for one split.

    Attributes:
        n_scenes (int): Number of scenes to generate
        vehicles_per_scene (Tuple[int, int]): Inclusive vehicle count range
        distance_range_m (Tuple[float, float]): Vehicle range interval
        lateral_range_m (Tuple[float, float]): Vehicle lateral offset interval,
            further narrowed to the camera's field of view
        moving_fraction (float): Probability that a vehicle moves
        moving_speed_range_mps (Tuple[float, float]): Longitudinal speed magnitude
        lateral_speed_std_mps (float): Spread of lateral speed for movers
        night (bool): Force every scene to night
        night_fraction (float): Probability of night when ``night`` is off
        split (str): Split label used to derive independent random streams
        seed (int): World seed
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_scenes: int = Field(600, ge=0)
    vehicles_per_scene: Tuple[int, int] = (2, 8)
    distance_range_m: Tuple[float, float] = (5.0, 100.0)
    lateral_range_m: Tuple[float, float] = (-15.0, 15.0)
    moving_fraction: float = Field(0.6, ge=0.0, le=1.0)
    moving_speed_range_mps: Tuple[float, float] = (2.0, 15.0)
    lateral_speed_std_mps: float = Field(0.5, ge=0.0)
    night: bool = False
    night_fraction: float = Field(0.0, ge=0.0, le=1.0)
    split: str = "train"
    seed: int = 1

    @model_validator(mode="after")
    def _check_ranges(self) -> "WorldConfig":
        _check_range("vehicles_per_scene", self.vehicles_per_scene)
        _check_range("distance_range_m", self.distance_range_m)
        _check_range("lateral_range_m", self.lateral_range_m)
        _check_range("moving_speed_range_mps", self.moving_speed_range_mps)
        if self.vehicles_per_scene[0] < 0:
            raise ValueError("vehicles_per_scene must be non-negative")
        if self.distance_range_m[0] <= 0:
            raise ValueError("distance_range_m must start above zero")
        return self


class CameraSimConfig(BaseModel):
    """
    Box-level model of the camera detector.

    Recall at range r is ``base_recall * (1 - recall_decay_per_m * r)``, reduced by
    ``night_recall_penalty`` at night and clamped to ``[recall_floor, 1]``.
    ``box_jitter_px`` is the pixel standard deviation of box center and size noise.
    ``duplicates_per_detection`` (off by default) adds near-copies of detections.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    base_recall: float = Field(0.9, ge=0.0, le=1.0)
    recall_decay_per_m: float = Field(0.006, ge=0.0)
    night_recall_penalty: float = Field(0.25, ge=0.0, le=1.0)
    recall_floor: float = Field(0.05, ge=0.0, le=1.0)
    score_tp_mean: float = Field(0.8, ge=0.0, le=1.0)
    score_tp_std: float = Field(0.1, ge=0.0)
    score_fp_mean: float = Field(0.3, ge=0.0, le=1.0)
    score_fp_std: float = Field(0.15, ge=0.0)
    class_prob_tp_mean: float = Field(0.9, ge=0.0, le=1.0)
    class_prob_fp_mean: float = Field(0.6, ge=0.0, le=1.0)
    class_prob_std: float = Field(0.08, ge=0.0)
    fp_rate_per_scene: float = Field(1.5, ge=0.0)
    box_jitter_px: float = Field(1.5, ge=0.0)
    low_score_emit_prob: float = Field(0.5, ge=0.0, le=1.0)
    low_score_range: Tuple[float, float] = (0.05, 0.25)
    duplicates_per_detection: float = Field(0.0, ge=0.0)

    @model_validator(mode="after")
    def _check_ranges(self) -> "CameraSimConfig":
        _check_range("low_score_range", self.low_score_range)
        return self


class RadarSimConfig(BaseModel):
    """Sparse radar sensor model; movers are seen far more often than parked cars."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    detect_prob_moving: float = Field(0.7, ge=0.0, le=1.0)
    detect_prob_static: float = Field(0.02, ge=0.0, le=1.0)
    max_range_m: float = Field(120.0, gt=0.0)
    range_noise_m: float = Field(0.3, ge=0.0)
    velocity_noise_mps: float = Field(0.2, ge=0.0)
    points_per_vehicle: Tuple[int, int] = (1, 3)
    clutter_points_per_scene: Tuple[int, int] = (0, 4)
    clutter_min_range_m: float = Field(2.0, gt=0.0)
    clutter_speed_std_mps: float = Field(3.0, ge=0.0)
    min_valid_speed_mps: float = Field(0.5, ge=0.0)
    frame_interval_s: float = Field(1.0 / 13.0, gt=0.0)

    @model_validator(mode="after")
    def _check_ranges(self) -> "RadarSimConfig":
        _check_range("points_per_vehicle", self.points_per_vehicle)
        _check_range("clutter_points_per_scene", self.clutter_points_per_scene)
        if self.points_per_vehicle[0] < 0 or self.clutter_points_per_scene[0] < 0:
            raise ValueError("point counts must be non-negative")
        return self


# ========== RADAR NETWORK ==========

class NetworkConfig(BaseModel):
    """
    Architecture constants of the 1D radar segmentation network.

    ``width`` is the channel count of the first block; the encoder doubles it twice.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_slices: int = Field(160, gt=0)
    n_frames: int = Field(3, gt=0)
    n_features: int = Field(4, gt=0)
    width: int = Field(16, gt=0)
    conv_kernel: int = Field(5, gt=0)
    deconv_kernel: int = Field(4, gt=0)
    head_kernel: int = Field(3, gt=0)
    leaky_slope: float = Field(0.1, ge=0.0)
    bn_momentum: float = Field(0.9, ge=0.0, lt=1.0)
    bn_eps: float = Field(1e-5, gt=0.0)

    @model_validator(mode="after")
    def _check_shapes(self) -> "NetworkConfig":
        if self.n_slices % 8 != 0:
            raise ValueError("n_slices must be divisible by 8 (three stride-2 stages)")
        if self.conv_kernel % 2 == 0 or self.head_kernel % 2 == 0:
            raise ValueError("convolution kernels must have odd length")
        if self.deconv_kernel % 2 != 0:
            raise ValueError("deconvolution kernel must have even length")
        return self


class TrainSchedule(BaseModel):
    """
    Phase schedule for radar training.

    Attributes:
        phases (List[Tuple[int, float]]): (epochs, learning_rate) per phase
        batch_size (int): Mini-batch size
        weight_decay (float): L2 coefficient on kernels and dense weights
        alpha (float): Positive-class weight of the loss
        seed (int): Initialization and shuffling seed
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    phases: List[Tuple[PositiveInt, NonNegativeFloat]] = Field(
        default_factory=lambda: [(20, 1e-3), (10, 1e-4), (10, 1e-5)], min_length=1
    )
    batch_size: int = Field(128, gt=0)
    weight_decay: float = Field(3e-4, ge=0.0)
    alpha: float = Field(4.0, gt=0.0)
    seed: int = 1

    @property
    def total_epochs(self) -> int:
        return sum(epochs for epochs, _ in self.phases)


# ========== META-CLASSIFIER ==========

class BoostConfig(BaseModel):
    """Stochastic gradient boosting hyperparameters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_rounds: int = Field(200, ge=1)
    max_depth: int = Field(3, ge=1)
    shrinkage: float = Field(0.1, gt=0.0, le=1.0)
    subsample: float = Field(0.5, gt=0.0, le=1.0)
    min_leaf: int = Field(5, ge=1)
    seed: int = 1


# ========== FUSION AND EVALUATION ==========

class FusionConfig(BaseModel):
    """
    Thresholds of the fused detector.

    Attributes:
        t_f (float): Low candidate threshold on z * p_vehicle
        t_fuse (float): Decision threshold on the meta-classifier probability
        t_iou_label (float): IoU threshold T for TP/FP training labels (strict)
        nms_iou (float): Non-maximum suppression IoU threshold
        t_camera (float): Default camera-only threshold on z * p_vehicle
        t_g (float): Radar slice threshold for bundles
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    t_f: float = Field(0.05, ge=0.0, le=1.0)
    t_fuse: float = Field(0.5, ge=0.0, le=1.0)
    t_iou_label: float = Field(0.5, ge=0.0, le=1.0)
    nms_iou: float = Field(0.45, ge=0.0, le=1.0)
    t_camera: float = Field(0.5, ge=0.0, le=1.0)
    t_g: float = Field(0.5, gt=0.0, lt=1.0)


class EvalConfig(BaseModel):
    """Evaluation protocol constants."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    t_eval: float = Field(0.5, ge=0.0, le=1.0)
    bin_width_m: float = Field(10.0, gt=0.0)
    max_range_m: float = Field(100.0, gt=0.0)
    column_bin_px: int = Field(100, gt=0)
    t_iou_1d: float = Field(0.3, ge=0.0, le=1.0)


class SplitConfig(BaseModel):
    """Scene counts and night fractions of the train/val/test worlds."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    scenes: Dict[str, int] = Field(default_factory=lambda: {"train": 600, "val": 100, "test": 200})
    night_fraction: Dict[str, float] = Field(
        default_factory=lambda: {"train": 0.09, "val": 0.09, "test": 1.0}
    )

    @model_validator(mode="after")
    def _check_splits(self) -> "SplitConfig":
        for table_name, table in (("scenes", self.scenes), ("night_fraction", self.night_fraction)):
            if set(table) != set(SPLITS):
                raise ValueError(f"{table_name} must define exactly the splits {SPLITS}")
        for split, fraction in self.night_fraction.items():
            if not 0.0 <= fraction <= 1.0:
                raise ValueError(f"night_fraction[{split}] must lie in [0, 1]")
        for split, count in self.scenes.items():
            if count < 0:
                raise ValueError(f"scenes[{split}] must be non-negative")
        return self


# ========== RUN CONFIGURATION ==========

class RunConfig(BaseModel):
    """
    Complete, strictly validated configuration of one pipeline run.

    Component seeds (world, radar training, boosting) that are not given
    explicitly derive from the global ``seed``.

    Usage:
        config = RunConfig.model_validate_json(path.read_text())
        config = config.with_seed(3)
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = 1
    grid: ImageGrid = Field(default_factory=ImageGrid)
    camera: CameraModel = Field(default_factory=CameraModel)
    world: WorldConfig = Field(default_factory=WorldConfig)
    camera_sim: CameraSimConfig = Field(default_factory=CameraSimConfig)
    radar_sim: RadarSimConfig = Field(default_factory=RadarSimConfig)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    train_schedule: TrainSchedule = Field(default_factory=TrainSchedule)
    boost: BoostConfig = Field(default_factory=BoostConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    evaluation: EvalConfig = Field(default_factory=EvalConfig)
    splits: SplitConfig = Field(default_factory=SplitConfig)

    @model_validator(mode="after")
    def _check_consistency(self) -> "RunConfig":
        if self.network.n_slices != self.grid.n_slices:
            raise ValueError("network.n_slices must equal grid.n_slices")
        if self.grid.width_px % self.evaluation.column_bin_px != 0:
            raise ValueError("grid.width_px must be divisible by evaluation.column_bin_px")
        return self

    @model_validator(mode="after")
    def _derive_component_seeds(self) -> "RunConfig":
        # Local import: utils imports this module.
        from .utils import derive_seed

        for name, label in SEEDED_COMPONENTS:
            component = getattr(self, name)
            if "seed" not in component.model_fields_set:
                derived = component.model_copy(update={"seed": derive_seed(self.seed, label)})
                object.__setattr__(self, name, derived)
        return self

    def with_seed(self, seed: int) -> "RunConfig":
        """Return a copy whose global and component seeds all derive from ``seed``."""
        from .utils import derive_seed

        update: Dict[str, object] = {"seed": seed}
        for name, label in SEEDED_COMPONENTS:
            update[name] = getattr(self, name).model_copy(update={"seed": derive_seed(seed, label)})
        return self.model_copy(update=update)

    def world_for_split(self, split: str) -> WorldConfig:
        """World configuration of one split: scene count and night profile applied."""
        if split not in SPLITS:
            raise ValueError(f"unknown split '{split}'")
        fraction = self.splits.night_fraction[split]
        return self.world.model_copy(
            update={
                "n_scenes": self.splits.scenes[split],
                "night": fraction >= 1.0,
                "night_fraction": fraction,
                "split": split,
            }
        )


# Global settings instance
settings = Settings()
