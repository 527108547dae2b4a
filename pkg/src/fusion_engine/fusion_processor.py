"""
Fusion Engine for the YOdar Fusion Pipeline
===========================================
Author: Perception Fusion Team

Late fusion of the camera detector and the radar network. The camera threshold is
lowered to T_f so that weak candidates survive; each candidate then gets nine
metrics (its detector tuple, its area and the mean and spread of the radar slice
probabilities underneath it) and a boosted meta-classifier decides whether it is
kept.

Processing Flow:
1. Radar tensors of every scene -> slice probabilities (batched, infer mode)
2. Candidates with z * p_vehicle >= T_f -> nine-metric feature vectors
3. Meta-classifier probability >= T_fuse -> non-maximum suppression
4. Detections sorted by fused score, highest first

Training rows are labeled TP when the candidate's best IoU against any ground-truth
box is strictly above T; several candidates may be TP against the same vehicle.

Dependencies: numpy
"""

# Standard library imports
import logging
import math
from typing import List, Optional, Sequence, Tuple

# Third-party imports
import numpy as np

# Local imports
from ..geometry.image_geometry import ScoredBox, max_iou, nms, occupancy_from_gt, slices_overlapping_box
from ..meta_classifier.gradient_boosting import Ensemble, predict_proba_matrix
from ..radar_network.radar_model import NetworkWeights, build_input_tensor, predict_slices
from ..shared.config import FusionConfig
from ..shared.models import (
    FEATURE_NAMES,
    Box2D,
    BoxLabel,
    CandidateBox,
    FeatureVector,
    ImageGrid,
    LabeledExample,
    Scene,
)

logger = logging.getLogger(__name__)


# ========== FUSION METRICS ==========

def radar_stats_over_box(box: Box2D, y: np.ndarray, grid: ImageGrid) -> Tuple[float, float]:
    """
    Mean and population standard deviation of slice probabilities under the box.

    Returns (0, 0) when the box covers no slice of the image.
    """
    members = sorted(slices_overlapping_box(box, grid))
    if not members:
        return 0.0, 0.0
    values = [float(y[s - 1]) for s in members]
    mu = math.fsum(values) / len(values)
    variance = math.fsum((v - mu) ** 2 for v in values) / len(values)
    return min(max(mu, 0.0), 1.0), min(math.sqrt(variance), 0.5)


def build_features(c: CandidateBox, y: np.ndarray, grid: ImageGrid) -> FeatureVector:
    """The nine metrics (z, p_vehicle, cx, cy, w, h, area, mu, sigma) of one candidate."""
    mu, sigma = radar_stats_over_box(c.box, y, grid)
    return FeatureVector(
        z=c.z,
        p_vehicle=c.p_vehicle,
        cx=c.box.cx,
        cy=c.box.cy,
        w=c.box.w,
        h=c.box.h,
        area=c.box.w * c.box.h,
        mu=mu,
        sigma=sigma,
    )


def feature_matrix(features: Sequence[FeatureVector]) -> np.ndarray:
    """Stack feature vectors into an (n, 9) array in the documented column order."""
    if not features:
        return np.zeros((0, len(FEATURE_NAMES)))
    return np.array([f.as_tuple() for f in features], dtype=np.float64)


def label_candidates(cands: Sequence[CandidateBox], gt: Sequence[Box2D], t_iou_label: float) -> List[BoxLabel]:
    """TP iff the largest IoU against any ground-truth box is strictly above the threshold."""
    return [BoxLabel.TP if max_iou(c.box, gt) > t_iou_label else BoxLabel.FP for c in cands]


def prefilter(cands: Sequence[CandidateBox], t_f: float) -> List[Tuple[int, CandidateBox]]:
    """Candidates whose detector confidence reaches T_f, with their original indices."""
    return [(i, c) for i, c in enumerate(cands) if c.score >= t_f]


# ========== DETECTORS ==========

def fuse_scene(
    cands: Sequence[CandidateBox],
    y: np.ndarray,
    e: Ensemble,
    cfg: FusionConfig,
    grid: ImageGrid,
) -> List[ScoredBox]:
    """
    Fused detections of one scene.

    ``cands`` are expected to be pre-filtered at T_f already.

    Returns:
        List[ScoredBox]: (box, fused probability), highest first, after NMS
    """
    if not cands:
        return []
    probs = predict_proba_matrix(e, feature_matrix([build_features(c, y, grid) for c in cands]))
    kept = [(c.box, float(p)) for c, p in zip(cands, probs) if p >= cfg.t_fuse]
    return nms(kept, cfg.nms_iou)


def camera_only_scene(cands: Sequence[CandidateBox], cfg: FusionConfig, threshold: Optional[float] = None) -> List[ScoredBox]:
    """Camera baseline: z * p_vehicle at or above the camera threshold, then NMS."""
    cut = cfg.t_camera if threshold is None else threshold
    return nms([(c.box, c.score) for c in cands if c.score >= cut], cfg.nms_iou)


# ========== BATCH PROCESSING ==========

def scene_tensors(scenes: Sequence[Scene], grid: ImageGrid, n_frames: int) -> np.ndarray:
    """Radar input tensors of every scene, shape (n_scenes, N_s, N_t, N_f)."""
    if not scenes:
        return np.zeros((0, grid.n_slices, n_frames, 4))
    return np.stack([build_input_tensor(s.radar_frames, grid, n_frames) for s in scenes])


def scene_slice_probs(scenes: Sequence[Scene], weights: NetworkWeights, grid: ImageGrid) -> np.ndarray:
    """Infer-mode radar probabilities for every scene, shape (n_scenes, N_s)."""
    if not scenes:
        return np.zeros((0, grid.n_slices))
    return predict_slices(scene_tensors(scenes, grid, weights.network.n_frames), weights)


def radar_targets(scenes: Sequence[Scene], grid: ImageGrid) -> np.ndarray:
    """Occupancy training targets built from radar-visible ground truth."""
    if not scenes:
        return np.zeros((0, grid.n_slices))
    return np.stack([occupancy_from_gt(s.radar_target_boxes(), grid) for s in scenes]).astype(np.float64)


def build_training_set(
    scenes: Sequence[Scene],
    radar_model: NetworkWeights,
    cfg: FusionConfig,
    grid: ImageGrid,
) -> List[LabeledExample]:
    """
    One labeled row per candidate at T_f, in scene order then candidate order.

    ``box_id`` is the candidate's index in the scene's full candidate list.
    """
    probs = scene_slice_probs(scenes, radar_model, grid)
    rows: List[LabeledExample] = []
    for scene, y in zip(scenes, probs):
        kept = prefilter(scene.candidates, cfg.t_f)
        labels = label_candidates([c for _, c in kept], scene.gt_boxes, cfg.t_iou_label)
        for (box_id, cand), label in zip(kept, labels):
            rows.append(
                LabeledExample(
                    scene_id=scene.scene_id,
                    box_id=box_id,
                    features=build_features(cand, y, grid),
                    label=label,
                )
            )
    positives = sum(1 for r in rows if r.label == BoxLabel.TP)
    logger.info(f"Built {len(rows)} fusion rows from {len(scenes)} scenes ({positives} TP)")
    return rows


def training_arrays(rows: Sequence[LabeledExample]) -> Tuple[np.ndarray, np.ndarray]:
    """Feature matrix and 0/1 label vector of a training set."""
    X = feature_matrix([r.features for r in rows])
    labels = np.array([int(r.label) for r in rows], dtype=np.float64)
    return X, labels


class FusionProcessor:
    """
    Runs the camera-only, radar-assisted fused detector over whole worlds.

    Attributes:
        weights (NetworkWeights): Trained radar network
        ensemble (Ensemble): Trained meta-classifier
        cfg (FusionConfig): Fusion thresholds
        grid (ImageGrid): Image layout

    Usage:
        processor = FusionProcessor(weights, ensemble, cfg, grid)
        fused = processor.detect(scenes)
    """

    def __init__(self, weights: NetworkWeights, ensemble: Ensemble, cfg: FusionConfig, grid: ImageGrid):
        self.weights = weights
        self.ensemble = ensemble
        self.cfg = cfg
        self.grid = grid

    def slice_probs(self, scenes: Sequence[Scene]) -> np.ndarray:
        """
        Radar slice probabilities of every scene, shape (len(scenes), n_slices).

        Args:
            scenes (Sequence[Scene]): Scenes whose radar frames feed the network
        """
        return scene_slice_probs(scenes, self.weights, self.grid)

    def detect(self, scenes: Sequence[Scene], probs: Optional[np.ndarray] = None) -> List[List[ScoredBox]]:
        """Fused detections per scene."""
        if probs is None:
            probs = self.slice_probs(scenes)
        detections = []
        for scene, y in zip(scenes, probs):
            cands = [c for _, c in prefilter(scene.candidates, self.cfg.t_f)]
            detections.append(fuse_scene(cands, y, self.ensemble, self.cfg, self.grid))
        logger.info(f"Fused detector kept {sum(len(d) for d in detections)} boxes in {len(scenes)} scenes")
        return detections

    def camera_only(self, scenes: Sequence[Scene]) -> List[List[ScoredBox]]:
        """
        Camera-only baseline per scene: candidates with z·p_vehicle at or above
        ``t_camera`` after non-maximum suppression.

        Args:
            scenes (Sequence[Scene]): Scenes to detect in
        """
        return [camera_only_scene(scene.candidates, self.cfg) for scene in scenes]

    def meta_probabilities(self, scenes: Sequence[Scene], probs: Optional[np.ndarray] = None) -> np.ndarray:
        """Meta-classifier output for every pre-filtered candidate, scene order."""
        if probs is None:
            probs = self.slice_probs(scenes)
        features = [
            build_features(c, y, self.grid)
            for scene, y in zip(scenes, probs)
            for _, c in prefilter(scene.candidates, self.cfg.t_f)
        ]
        return predict_proba_matrix(self.ensemble, feature_matrix(features))
