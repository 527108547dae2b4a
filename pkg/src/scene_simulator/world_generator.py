"""
Synthetic World Generator
=========================
Author: Perception Fusion Team

Seeded generator of driving scenes with ground truth, a box-level camera detector
model and a sparse radar sensor model whose failure modes complement each other:

- Camera: recall falls with distance and at night; missed vehicles may still show
  up as low-score candidates, and false positives look like vehicles
- Radar: moving vehicles are seen often, parked ones almost never; a few clutter
  returns appear anywhere in the image

Every scene draws from its own random streams keyed by (seed, split, scene index,
purpose), so a world is a pure function of its configuration and adding scenes never
changes earlier ones. Scenes are generated in parallel and returned in index order.

Dependencies: numpy
"""

# Standard library imports
import logging
import math
from typing import List, Optional, Sequence, Tuple

# Third-party imports
import numpy as np

# Local imports
from ..geometry.image_geometry import project_to_image
from ..shared.config import CameraSimConfig, RadarSimConfig, WorldConfig
from ..shared.models import (
    Box2D,
    CameraModel,
    CandidateBox,
    GroundTruthVehicle,
    ImageGrid,
    RadarPoint,
    Scene,
)
from ..shared.utils import parallel_map, seed_stream

logger = logging.getLogger(__name__)

CLUTTER = -1
FP_WIDTH_RANGE_M = (1.5, 2.2)
FP_HEIGHT_RANGE_M = (1.2, 2.0)
DUPLICATE_JITTER_FACTOR = 3.0
DUPLICATE_SCORE_RANGE = (0.3, 0.9)
MIN_BOX_PX = 1.0


# ========== GEOMETRY HELPERS ==========

def lateral_limit(range_m: float, cam: CameraModel, grid: ImageGrid) -> float:
    """Largest |lateral offset| whose center still projects into the image."""
    return range_m * (grid.width_px / 2.0) / cam.focal_px


def vehicle_box(
    lateral_m: float, range_m: float, width_m: float, height_m: float, cam: CameraModel, grid: ImageGrid
) -> Box2D:
    """Image box of an object standing on the ground: perspective-scaled, bottom at the ground row."""
    column, row = project_to_image(lateral_m, range_m, cam, grid)
    w = width_m * cam.focal_px / range_m
    h = height_m * cam.focal_px / range_m
    return Box2D(cx=column, cy=row - h / 2.0, w=w, h=h)


def camera_recall(range_m: float, night: bool, cam_cfg: CameraSimConfig) -> float:
    """Probability that the camera detector reports a vehicle at full confidence."""
    recall = cam_cfg.base_recall * (1.0 - cam_cfg.recall_decay_per_m * range_m)
    if night:
        recall *= 1.0 - cam_cfg.night_recall_penalty
    return min(1.0, max(cam_cfg.recall_floor, recall))


def _clip01(value: float) -> float:
    return min(1.0, max(0.0, value))


# ========== SCENE LAYOUT ==========

def sample_vehicles(cfg: WorldConfig, cam: CameraModel, grid: ImageGrid, rng: np.random.Generator) -> List[GroundTruthVehicle]:
    lo, hi = cfg.vehicles_per_scene
    vehicles = []
    for _ in range(int(rng.integers(lo, hi + 1))):
        range_m = float(rng.uniform(*cfg.distance_range_m))
        limit = lateral_limit(range_m, cam, grid)
        lat_lo = max(cfg.lateral_range_m[0], -limit)
        lat_hi = min(cfg.lateral_range_m[1], limit)
        lateral_m = float(rng.uniform(lat_lo, lat_hi)) if lat_lo < lat_hi else 0.0
        speed_long, speed_lat = 0.0, 0.0
        if rng.random() < cfg.moving_fraction:
            sign = 1.0 if rng.random() < 0.5 else -1.0
            speed_long = sign * float(rng.uniform(*cfg.moving_speed_range_mps))
            speed_lat = float(rng.normal(0.0, cfg.lateral_speed_std_mps))
        vehicles.append(
            GroundTruthVehicle(lateral_m=lateral_m, range_m=range_m, speed_long=speed_long, speed_lat=speed_lat)
        )
    return vehicles


# ========== CAMERA DETECTOR MODEL ==========

def _jittered(box: Box2D, jitter_px: float, rng: np.random.Generator) -> Box2D:
    """Gaussian pixel noise of standard deviation ``jitter_px`` on center and size."""
    cx = box.cx + float(rng.normal(0.0, jitter_px))
    cy = box.cy + float(rng.normal(0.0, jitter_px))
    w = max(MIN_BOX_PX, box.w + float(rng.normal(0.0, jitter_px)))
    h = max(MIN_BOX_PX, box.h + float(rng.normal(0.0, jitter_px)))
    return Box2D(cx=cx, cy=cy, w=w, h=h)


def simulate_camera_detector(
    scene: Scene,
    cam_cfg: CameraSimConfig,
    rng: np.random.Generator,
    cam: Optional[CameraModel] = None,
    grid: Optional[ImageGrid] = None,
    distance_range_m: Tuple[float, float] = (5.0, 100.0),
) -> List[CandidateBox]:
    """
    Candidate boxes a single-frame detector would emit for ``scene``.

    Detected vehicles get jittered boxes and TP-distributed scores; missed vehicles
    reappear as low-score candidates with probability ``low_score_emit_prob``;
    Poisson-distributed false positives are vehicle-shaped boxes at random places.
    With ``duplicates_per_detection > 0`` each detection also yields a Poisson number
    of lower-scored near-copies for non-maximum suppression to remove.
    """
    cam = cam or CameraModel()
    grid = grid or ImageGrid()
    candidates: List[CandidateBox] = []
    for vehicle, box in zip(scene.vehicles, scene.gt_boxes):
        if rng.random() < camera_recall(vehicle.range_m, scene.night, cam_cfg):
            detected = _jittered(box, cam_cfg.box_jitter_px, rng)
            z = _clip01(float(rng.normal(cam_cfg.score_tp_mean, cam_cfg.score_tp_std)))
            p = _clip01(float(rng.normal(cam_cfg.class_prob_tp_mean, cam_cfg.class_prob_std)))
            candidates.append(CandidateBox(box=detected, z=z, p_vehicle=p))
            n_duplicates = 0
            if cam_cfg.duplicates_per_detection > 0:
                n_duplicates = int(rng.poisson(cam_cfg.duplicates_per_detection))
            for _ in range(n_duplicates):
                duplicate = _jittered(detected, DUPLICATE_JITTER_FACTOR * cam_cfg.box_jitter_px, rng)
                damp = float(rng.uniform(*DUPLICATE_SCORE_RANGE))
                candidates.append(CandidateBox(box=duplicate, z=z * damp, p_vehicle=p))
        elif rng.random() < cam_cfg.low_score_emit_prob:
            weak = _jittered(box, cam_cfg.box_jitter_px, rng)
            score = float(rng.uniform(*cam_cfg.low_score_range))
            p = max(score, _clip01(float(rng.normal(cam_cfg.class_prob_tp_mean, cam_cfg.class_prob_std))))
            candidates.append(CandidateBox(box=weak, z=min(1.0, score / p), p_vehicle=p))

    for _ in range(int(rng.poisson(cam_cfg.fp_rate_per_scene))):
        range_m = float(rng.uniform(*distance_range_m))
        limit = lateral_limit(range_m, cam, grid)
        lateral_m = float(rng.uniform(-limit, limit))
        box = vehicle_box(
            lateral_m,
            range_m,
            float(rng.uniform(*FP_WIDTH_RANGE_M)),
            float(rng.uniform(*FP_HEIGHT_RANGE_M)),
            cam,
            grid,
        )
        z = _clip01(float(rng.normal(cam_cfg.score_fp_mean, cam_cfg.score_fp_std)))
        p = _clip01(float(rng.normal(cam_cfg.class_prob_fp_mean, cam_cfg.class_prob_std)))
        candidates.append(CandidateBox(box=box, z=z, p_vehicle=p))
    return candidates


# ========== RADAR SENSOR MODEL ==========

def simulate_radar_with_sources(
    vehicles: Sequence[GroundTruthVehicle],
    radar_cfg: RadarSimConfig,
    rng: np.random.Generator,
    cam: CameraModel,
    grid: ImageGrid,
    n_frames: int = 3,
) -> Tuple[List[List[RadarPoint]], List[List[int]]]:
    """
    Radar frames (oldest first) plus, per point, the index of the vehicle that
    produced it or ``CLUTTER``.

    Earlier frames place each vehicle at its constant-velocity position one radar
    cycle back per frame.
    """
    frames: List[List[RadarPoint]] = []
    sources: List[List[int]] = []
    for f in range(n_frames):
        elapsed = (n_frames - 1 - f) * radar_cfg.frame_interval_s
        points: List[RadarPoint] = []
        owners: List[int] = []
        for index, vehicle in enumerate(vehicles):
            range_m = vehicle.range_m - vehicle.speed_long * elapsed
            lateral_m = vehicle.lateral_m - vehicle.speed_lat * elapsed
            if range_m <= 0.0 or range_m > radar_cfg.max_range_m:
                continue
            detect_prob = radar_cfg.detect_prob_moving if vehicle.is_moving else radar_cfg.detect_prob_static
            if not rng.random() < detect_prob:
                continue
            lo, hi = radar_cfg.points_per_vehicle
            for _ in range(int(rng.integers(lo, hi + 1))):
                point_lateral = lateral_m + float(rng.uniform(-vehicle.width_m / 2.0, vehicle.width_m / 2.0))
                point_range = max(0.1, range_m + float(rng.normal(0.0, radar_cfg.range_noise_m)))
                column, row = project_to_image(point_lateral, point_range, cam, grid)
                points.append(
                    RadarPoint(
                        range_m=point_range,
                        proj_height_px=row,
                        v_lat=vehicle.speed_lat + float(rng.normal(0.0, radar_cfg.velocity_noise_mps)),
                        v_long=vehicle.speed_long + float(rng.normal(0.0, radar_cfg.velocity_noise_mps)),
                        column_px=column,
                    )
                )
                owners.append(index)
        lo, hi = radar_cfg.clutter_points_per_scene
        for _ in range(int(rng.integers(lo, hi + 1))):
            column = float(rng.uniform(0.0, grid.width_px))
            range_m = float(rng.uniform(radar_cfg.clutter_min_range_m, max(radar_cfg.clutter_min_range_m, radar_cfg.max_range_m)))
            lateral_m = (column - grid.width_px / 2.0) * range_m / cam.focal_px
            _, row = project_to_image(lateral_m, range_m, cam, grid)
            points.append(
                RadarPoint(
                    range_m=range_m,
                    proj_height_px=row,
                    v_lat=float(rng.normal(0.0, radar_cfg.clutter_speed_std_mps)),
                    v_long=float(rng.normal(0.0, radar_cfg.clutter_speed_std_mps)),
                    column_px=column,
                )
            )
            owners.append(CLUTTER)
        frames.append(points)
        sources.append(owners)
    return frames, sources


def simulate_radar(
    scene: Scene,
    radar_cfg: RadarSimConfig,
    rng: np.random.Generator,
    cam: Optional[CameraModel] = None,
    grid: Optional[ImageGrid] = None,
    n_frames: int = 3,
) -> List[List[RadarPoint]]:
    """N_t radar frames for the vehicles of ``scene``, oldest first."""
    frames, _ = simulate_radar_with_sources(
        scene.vehicles, radar_cfg, rng, cam or CameraModel(), grid or ImageGrid(), n_frames
    )
    return frames


def radar_visibility(
    n_vehicles: int,
    frames: Sequence[Sequence[RadarPoint]],
    sources: Sequence[Sequence[int]],
    min_valid_speed_mps: float,
) -> List[bool]:
    """Vehicles with a current-frame point carrying a valid (non-negligible) velocity."""
    visible = [False] * n_vehicles
    if not frames:
        return visible
    for point, owner in zip(frames[-1], sources[-1]):
        if owner != CLUTTER and math.hypot(point.v_lat, point.v_long) >= min_valid_speed_mps:
            visible[owner] = True
    return visible


# ========== WORLD ==========

def generate_scene(
    index: int,
    cfg: WorldConfig,
    cam_cfg: CameraSimConfig,
    radar_cfg: RadarSimConfig,
    cam: CameraModel,
    grid: ImageGrid,
    n_frames: int = 3,
) -> Scene:
    """Scene ``index`` of the world described by ``cfg``."""
    layout_rng = seed_stream(cfg.seed, cfg.split, "scene", index, "layout")
    night = cfg.night or bool(layout_rng.random() < cfg.night_fraction)
    vehicles = sample_vehicles(cfg, cam, grid, layout_rng)
    gt_boxes = [vehicle_box(v.lateral_m, v.range_m, v.width_m, v.height_m, cam, grid) for v in vehicles]

    radar_rng = seed_stream(cfg.seed, cfg.split, "scene", index, "radar")
    frames, sources = simulate_radar_with_sources(vehicles, radar_cfg, radar_rng, cam, grid, n_frames)
    visible = radar_visibility(len(vehicles), frames, sources, radar_cfg.min_valid_speed_mps)

    skeleton = Scene(
        scene_id=f"{cfg.split}-{index:05d}",
        night=night,
        vehicles=vehicles,
        gt_boxes=gt_boxes,
        radar_visible=visible,
        radar_frames=frames,
    )
    camera_rng = seed_stream(cfg.seed, cfg.split, "scene", index, "camera")
    candidates = simulate_camera_detector(skeleton, cam_cfg, camera_rng, cam, grid, cfg.distance_range_m)
    return skeleton.model_copy(update={"candidates": candidates})


def generate_world(
    cfg: WorldConfig,
    cam_cfg: CameraSimConfig,
    radar_cfg: RadarSimConfig,
    cam: CameraModel,
    grid: ImageGrid,
    n_frames: int = 3,
) -> List[Scene]:
    """All ``cfg.n_scenes`` scenes of one split, in index order."""
    scenes = parallel_map(
        lambda i: generate_scene(i, cfg, cam_cfg, radar_cfg, cam, grid, n_frames),
        range(cfg.n_scenes),
    )
    nights = sum(1 for s in scenes if s.night)
    logger.info(
        f"Generated {len(scenes)} '{cfg.split}' scenes ({nights} at night, "
        f"{sum(len(s.vehicles) for s in scenes)} vehicles)"
    )
    return scenes
