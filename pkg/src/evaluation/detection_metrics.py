"""
Detection Metrics for the YOdar Fusion Pipeline
===============================================
Author: Perception Fusion Team

Scoring of the three detectors (radar-only, camera-only, fused) against ground truth.

Key Features:
- Greedy one-to-one matching by descending score at IoU >= t
- Single-class average precision with all-point interpolation over a global ranking
- Detection accuracy TP / (TP + FP + FN)
- Distance-binned recall with both one-to-one and per-box TP counts
- Spatial heatmaps over (distance bin, 100 px column bin) cells
- Camera threshold search that matches the fused detector's TP level
- Radar slice bundles matched in one dimension, meta-classifier scores, multi-run
  averaging

Every table is a pure function of its inputs; ties are broken by input order.

Dependencies: numpy, pydantic, scikit-learn
"""

# Standard library imports
import logging
import math
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

# Third-party imports
import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from sklearn.metrics import roc_auc_score

# Local imports
from ..fusion_engine.fusion_processor import camera_only_scene
from ..geometry.image_geometry import (
    ScoredBox,
    clamp_columns,
    iou_1d,
    iou_2d,
    max_iou,
    slice_range_box,
    slice_range_interval,
)
from ..meta_classifier.gradient_boosting import log_loss
from ..radar_network.radar_model import extract_bundles
from ..shared.config import EvalConfig, FusionConfig
from ..shared.exceptions import DomainError
from ..shared.models import Box2D, ImageGrid, Interval1D, Scene

logger = logging.getLogger(__name__)

DETECTORS = ("radar", "camera", "fused")


# ========== MATCHING ==========

class MatchedPair(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    det_index: int = Field(ge=0)
    gt_index: int = Field(ge=0)
    iou: float
    score: float


class MatchResult(BaseModel):
    """
    Outcome of matching one scene's detections against its ground truth.

    Attributes:
        matched (List[MatchedPair]): True positives in matching order
        false_positives (List[int]): Indices of unmatched detections
        false_negatives (List[int]): Indices of unmatched ground-truth boxes
        det_scores (List[float]): Score of every detection, input order
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    matched: List[MatchedPair] = Field(default_factory=list)
    false_positives: List[int] = Field(default_factory=list)
    false_negatives: List[int] = Field(default_factory=list)
    det_scores: List[float] = Field(default_factory=list)

    @property
    def n_tp(self) -> int:
        return len(self.matched)

    @property
    def n_fp(self) -> int:
        return len(self.false_positives)

    @property
    def n_fn(self) -> int:
        return len(self.false_negatives)

    def is_tp(self) -> List[bool]:
        """Per-detection TP flag in input order."""
        flags = [False] * len(self.det_scores)
        for pair in self.matched:
            flags[pair.det_index] = True
        return flags

    def matched_gt(self) -> Dict[int, int]:
        return {pair.gt_index: pair.det_index for pair in self.matched}


def _check_threshold(t: float) -> None:
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"IoU threshold must lie in [0, 1], got {t}")


def _greedy_match(scores: Sequence[float], ious: np.ndarray, t: float) -> MatchResult:
    """Shared greedy rule: best remaining ground truth per detection, highest score first."""
    n_det = len(scores)
    n_gt = ious.shape[1] if ious.ndim == 2 else 0
    order = sorted(range(n_det), key=lambda i: (-scores[i], i))
    free = [True] * n_gt
    matched: List[MatchedPair] = []
    false_positives: List[int] = []
    for i in order:
        best, best_iou = -1, -1.0
        for j in range(n_gt):
            if free[j] and ious[i, j] > best_iou:
                best, best_iou = j, float(ious[i, j])
        if best >= 0 and best_iou >= t:
            free[best] = False
            matched.append(MatchedPair(det_index=i, gt_index=best, iou=best_iou, score=float(scores[i])))
        else:
            false_positives.append(i)
    return MatchResult(
        matched=matched,
        false_positives=sorted(false_positives),
        false_negatives=[j for j in range(n_gt) if free[j]],
        det_scores=[float(s) for s in scores],
    )


def match_detections(dets: Sequence[ScoredBox], gt: Sequence[Box2D], t: float) -> MatchResult:
    """
    Greedy one-to-one matching of scored boxes to ground truth.

    Detections are visited by descending score (input order on ties); each takes the
    unmatched ground-truth box with the largest IoU when that IoU reaches ``t``.
    """
    _check_threshold(t)
    ious = np.array([[iou_2d(box, g) for g in gt] for box, _ in dets]).reshape(len(dets), len(gt))
    return _greedy_match([score for _, score in dets], ious, t)


def match_bundles_1d(
    y: np.ndarray, t_g: float, gt_boxes: Sequence[Box2D], t: float, grid: ImageGrid
) -> MatchResult:
    """
    Match the radar's slice bundles to ground-truth column intervals.

    Bundles are ranked by mean probability; ground-truth boxes are clamped to the
    image, and boxes entirely outside the image are left out.
    """
    _check_threshold(t)
    bundles = extract_bundles(y, t_g)
    intervals: List[Interval1D] = [iv for iv in (clamp_columns(b, grid) for b in gt_boxes) if iv is not None]
    spans = [slice_range_interval(b.first, b.last, grid) for b in bundles]
    ious = np.array([[iou_1d(span, iv) for iv in intervals] for span in spans]).reshape(len(spans), len(intervals))
    return _greedy_match([b.mean_probability(y) for b in bundles], ious, t)


def perbox_hits(dets: Sequence[ScoredBox], gt: Sequence[Box2D], t: float) -> List[bool]:
    """Ground-truth boxes some detection overlaps with IoU strictly above ``t``."""
    boxes = [box for box, _ in dets]
    return [max_iou(g, boxes) > t for g in gt]


# ========== SUMMARY METRICS ==========

def average_precision(
    detections: Sequence[Sequence[ScoredBox]], gts: Sequence[Sequence[Box2D]], t: float
) -> float:
    """
    Single-class AP over all scenes.

    Detections of all scenes are ranked together by score; precision is replaced by
    its non-increasing envelope and integrated exactly over recall.

    Raises:
        DomainError: If there is no ground truth at all
    """
    n_gt = sum(len(g) for g in gts)
    if n_gt == 0:
        raise DomainError("average precision is undefined without ground truth")
    ranked: List[Tuple[float, int, int, bool]] = []
    for scene_index, (dets, gt) in enumerate(zip(detections, gts)):
        flags = match_detections(dets, gt, t).is_tp()
        for det_index, ((_, score), hit) in enumerate(zip(dets, flags)):
            ranked.append((score, scene_index, det_index, hit))
    ranked.sort(key=lambda r: (-r[0], r[1], r[2]))
    return ap_from_ranking([r[3] for r in ranked], n_gt)


def ap_from_ranking(hits: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated AP of a ranked TP/FP sequence."""
    if n_gt <= 0:
        raise DomainError("average precision is undefined without ground truth")
    if not hits:
        return 0.0
    flags = np.asarray(hits, dtype=np.float64)
    tp = np.cumsum(flags)
    fp = np.cumsum(1.0 - flags)
    recall = np.concatenate([[0.0], tp / n_gt, [1.0]])
    precision = np.concatenate([[0.0], tp / (tp + fp), [0.0]])
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.nonzero(recall[1:] != recall[:-1])[0]
    return math.fsum(float((recall[i + 1] - recall[i]) * precision[i + 1]) for i in steps)


class DetectionCounts(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    tp: int = Field(0, ge=0)
    fp: int = Field(0, ge=0)
    fn: int = Field(0, ge=0)


def total_counts(results: Sequence[MatchResult]) -> DetectionCounts:
    return DetectionCounts(
        tp=sum(r.n_tp for r in results),
        fp=sum(r.n_fp for r in results),
        fn=sum(r.n_fn for r in results),
    )


def detection_accuracy(results: Sequence[MatchResult]) -> float:
    """TP / (TP + FP + FN) over all scenes."""
    counts = total_counts(results)
    denominator = counts.tp + counts.fp + counts.fn
    if denominator == 0:
        raise DomainError("accuracy is undefined with no detections and no ground truth")
    return counts.tp / denominator


class DetectorSummary(BaseModel):
    """One row of the summary table; counts are floats so runs can be averaged."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    detector: str
    mean_ap: float = Field(ge=0.0, le=1.0)
    accuracy: float = Field(ge=0.0, le=1.0)
    tp: float = Field(ge=0.0)
    fp: float = Field(ge=0.0)
    fn: float = Field(ge=0.0)
    runs: int = Field(1, ge=1)


def summarize_detector(
    name: str, detections: Sequence[Sequence[ScoredBox]], scenes: Sequence[Scene], t: float
) -> Tuple[DetectorSummary, List[MatchResult]]:
    results = [match_detections(d, s.gt_boxes, t) for d, s in zip(detections, scenes)]
    counts = total_counts(results)
    has_gt = any(s.gt_boxes for s in scenes)
    summary = DetectorSummary(
        detector=name,
        mean_ap=average_precision(detections, [s.gt_boxes for s in scenes], t) if has_gt else 0.0,
        accuracy=detection_accuracy(results) if counts.tp + counts.fp + counts.fn else 0.0,
        tp=counts.tp,
        fp=counts.fp,
        fn=counts.fn,
    )
    return summary, results


def average_summaries(runs: Sequence[Sequence[DetectorSummary]]) -> List[DetectorSummary]:
    """Per-detector mean over repeated runs, in first-seen detector order."""
    if not runs:
        raise DomainError("cannot average zero runs")
    grouped: Dict[str, List[DetectorSummary]] = {}
    for rows in runs:
        for row in rows:
            grouped.setdefault(row.detector, []).append(row)
    averaged = []
    for name, rows in grouped.items():
        n = len(rows)
        averaged.append(
            DetectorSummary(
                detector=name,
                mean_ap=math.fsum(r.mean_ap for r in rows) / n,
                accuracy=math.fsum(r.accuracy for r in rows) / n,
                tp=math.fsum(r.tp for r in rows) / n,
                fp=math.fsum(r.fp for r in rows) / n,
                fn=math.fsum(r.fn for r in rows) / n,
                runs=sum(r.runs for r in rows),
            )
        )
    return averaged


class RecallGain(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    extra_vehicles: float
    recall_points: float

    def describe(self) -> str:
        return (
            f"fused detector finds {self.extra_vehicles:+g} ground-truth vehicles versus camera-only "
            f"({self.recall_points:+.2f} recall points)"
        )


def recall_gain(camera: DetectorSummary, fused: DetectorSummary, n_gt: int) -> RecallGain:
    extra = fused.tp - camera.tp
    points = 100.0 * extra / n_gt if n_gt else 0.0
    return RecallGain(extra_vehicles=extra, recall_points=points)


class MetaClassifierScores(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    log_loss: float
    accuracy: float
    auroc: Optional[float] = None
    n_rows: int


def auroc(labels: np.ndarray, probs: np.ndarray) -> Optional[float]:
    """Area under the ROC curve; None when only one class is present."""
    labels = np.asarray(labels, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if len(np.unique(labels)) < 2:
        return None
    return float(roc_auc_score(labels, probs))


def meta_classifier_scores(labels: np.ndarray, probs: np.ndarray, t_fuse: float) -> MetaClassifierScores:
    labels = np.asarray(labels, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if len(labels) == 0:
        raise DomainError("cannot score a meta-classifier on zero rows")
    accuracy = float(np.mean((probs >= t_fuse) == (labels == 1.0)))
    return MetaClassifierScores(
        log_loss=log_loss(labels, probs), accuracy=accuracy, auroc=auroc(labels, probs), n_rows=len(labels)
    )


# ========== DISTANCE BINS ==========

class DistanceBin(BaseModel):
    """Ground truth in [lo_m, hi_m) and how many of it each counting rule found."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    lo_m: float
    hi_m: float
    gt_count: int = Field(0, ge=0)
    tp_matched: int = Field(0, ge=0)
    tp_perbox: int = Field(0, ge=0)


def n_distance_bins(cfg: EvalConfig) -> int:
    return int(math.ceil(cfg.max_range_m / cfg.bin_width_m))


def distance_bin(range_m: float, cfg: EvalConfig) -> Optional[int]:
    if not 0.0 <= range_m < cfg.max_range_m:
        return None
    return min(int(range_m // cfg.bin_width_m), n_distance_bins(cfg) - 1)


def distance_binned_recall(
    results: Sequence[MatchResult],
    scenes: Sequence[Scene],
    cfg: EvalConfig,
    perbox: Optional[Sequence[Sequence[bool]]] = None,
) -> List[DistanceBin]:
    """
    Ground-truth and detected counts per distance bin.

    A one-to-one TP counts in the bin of the ground truth it matched; ``perbox`` gives,
    per scene, which ground-truth boxes some detection overlaps above the threshold.
    """
    n_bins = n_distance_bins(cfg)
    gt_count = [0] * n_bins
    tp_matched = [0] * n_bins
    tp_perbox = [0] * n_bins
    for scene_index, (result, scene) in enumerate(zip(results, scenes)):
        found = result.matched_gt()
        hits = perbox[scene_index] if perbox is not None else [False] * len(scene.vehicles)
        for j, vehicle in enumerate(scene.vehicles):
            b = distance_bin(vehicle.range_m, cfg)
            if b is None:
                continue
            gt_count[b] += 1
            tp_matched[b] += int(j in found)
            tp_perbox[b] += int(hits[j])
    return [
        DistanceBin(
            lo_m=b * cfg.bin_width_m,
            hi_m=min((b + 1) * cfg.bin_width_m, cfg.max_range_m),
            gt_count=gt_count[b],
            tp_matched=tp_matched[b],
            tp_perbox=tp_perbox[b],
        )
        for b in range(n_bins)
    ]


# ========== SPATIAL HEATMAPS ==========

class Heatmaps(BaseModel):
    """
    Cell tables over (distance bin, column bin).

    Recall cells with no ground truth are None.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    gt_counts: List[List[int]]
    detected: Dict[str, List[List[int]]]
    recall: Dict[str, List[List[Optional[float]]]]
    difference: List[List[int]]

    def as_array(self, cells: Sequence[Sequence[Optional[float]]]) -> np.ndarray:
        return np.array([[np.nan if v is None else v for v in row] for row in cells], dtype=np.float64)


def heatmap_cell(box: Box2D, range_m: float, grid: ImageGrid, cfg: EvalConfig) -> Optional[Tuple[int, int]]:
    """(distance bin, column bin) holding a box center, 0-indexed; None outside the domain."""
    row = distance_bin(range_m, cfg)
    if row is None or not 0.0 <= box.cx <= grid.width_px:
        return None
    n_columns = grid.width_px // cfg.column_bin_px
    return row, min(int(box.cx // cfg.column_bin_px), n_columns - 1)


def _count_cells(scenes: Sequence[Scene], selected: Sequence[Sequence[bool]], grid: ImageGrid, cfg: EvalConfig) -> np.ndarray:
    counts = np.zeros((n_distance_bins(cfg), grid.width_px // cfg.column_bin_px), dtype=np.int64)
    for scene, flags in zip(scenes, selected):
        for vehicle, box, flag in zip(scene.vehicles, scene.gt_boxes, flags):
            cell = heatmap_cell(box, vehicle.range_m, grid, cfg)
            if flag and cell is not None:
                counts[cell] += 1
    return counts


def spatial_heatmap(
    scenes: Sequence[Scene],
    results: Mapping[str, Sequence[MatchResult]],
    grid: ImageGrid,
    cfg: EvalConfig,
    minuend: str = "fused",
    subtrahend: str = "camera",
) -> Heatmaps:
    """
    Ground-truth counts, per-detector recall and the detected-count difference per cell.

    ``difference`` is ``minuend`` minus ``subtrahend`` when both are present, else zeros.
    """
    gt = _count_cells(scenes, [[True] * len(s.vehicles) for s in scenes], grid, cfg)
    detected: Dict[str, np.ndarray] = {}
    recall: Dict[str, List[List[Optional[float]]]] = {}
    for name, per_scene in results.items():
        found = []
        for r, s in zip(per_scene, scenes):
            hit = r.matched_gt()
            found.append([j in hit for j in range(len(s.vehicles))])
        detected[name] = _count_cells(scenes, found, grid, cfg)
        recall[name] = [
            [float(d) / float(g) if g else None for d, g in zip(d_row, g_row)]
            for d_row, g_row in zip(detected[name].tolist(), gt.tolist())
        ]
    if minuend in detected and subtrahend in detected:
        difference = detected[minuend] - detected[subtrahend]
    else:
        difference = np.zeros_like(gt)
    return Heatmaps(
        gt_counts=gt.tolist(),
        detected={name: counts.tolist() for name, counts in detected.items()},
        recall=recall,
        difference=difference.tolist(),
    )


# ========== MATCHED-TP COMPARISON ==========

class ThresholdRow(BaseModel):
    """
    One line of the FP-at-matched-TP table.

    ``status`` is "default", "matched", "unmatchable" or "fused".
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    detector: str
    status: str
    threshold: Optional[float]
    tp: int = Field(ge=0)
    fp: int = Field(ge=0)


def _camera_counts(
    scenes: Sequence[Scene], fusion_cfg: FusionConfig, threshold: float, t: float
) -> DetectionCounts:
    results = [
        match_detections(camera_only_scene(s.candidates, fusion_cfg, threshold), s.gt_boxes, t) for s in scenes
    ]
    return total_counts(results)


def fp_at_matched_tp(
    scenes: Sequence[Scene],
    fused: Sequence[Sequence[ScoredBox]],
    fusion_cfg: FusionConfig,
    t: float,
) -> List[ThresholdRow]:
    """
    Lower the camera threshold until it finds as many true positives as the fused
    detector, and compare false positives at that level.

    The search runs over the candidate scores below the default threshold, keeping the
    highest threshold whose TP count reaches the fused TP count. When even the lowest
    candidate score falls short, the lowest threshold is reported as "unmatchable".
    """
    fused_counts = total_counts([match_detections(d, s.gt_boxes, t) for d, s in zip(fused, scenes)])
    default_counts = _camera_counts(scenes, fusion_cfg, fusion_cfg.t_camera, t)
    rows = [
        ThresholdRow(
            detector="camera",
            status="default",
            threshold=fusion_cfg.t_camera,
            tp=default_counts.tp,
            fp=default_counts.fp,
        )
    ]

    lower = sorted({c.score for s in scenes for c in s.candidates if c.score < fusion_cfg.t_camera}, reverse=True)
    thresholds = [fusion_cfg.t_camera] + lower
    cache: Dict[int, DetectionCounts] = {0: default_counts}

    def counts_at(k: int) -> DetectionCounts:
        if k not in cache:
            cache[k] = _camera_counts(scenes, fusion_cfg, thresholds[k], t)
        return cache[k]

    target = fused_counts.tp
    if counts_at(len(thresholds) - 1).tp < target:
        k, status = len(thresholds) - 1, "unmatchable"
    else:
        lo, hi = 0, len(thresholds) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if counts_at(mid).tp >= target:
                hi = mid
            else:
                lo = mid + 1
        k, status = lo, "matched"
    matched = counts_at(k)
    rows.append(ThresholdRow(detector="camera", status=status, threshold=thresholds[k], tp=matched.tp, fp=matched.fp))
    rows.append(
        ThresholdRow(
            detector="fused", status="fused", threshold=fusion_cfg.t_fuse, tp=fused_counts.tp, fp=fused_counts.fp
        )
    )
    logger.info(
        f"Camera threshold {thresholds[k]:.4f} ({status}) gives TP={matched.tp} FP={matched.fp}; "
        f"fused TP={fused_counts.tp} FP={fused_counts.fp}"
    )
    return rows


# ========== RADAR-ONLY DETECTOR ==========

def radar_only_detections(y: np.ndarray, t_g: float, grid: ImageGrid) -> List[ScoredBox]:
    """Slice bundles lifted to full-height boxes, scored by mean bundle probability."""
    scored = [(slice_range_box(b.first, b.last, grid), b.mean_probability(y)) for b in extract_bundles(y, t_g)]
    return sorted(scored, key=lambda item: -item[1])


# ========== REPORT ==========

class EvalReport(BaseModel):
    """Everything the evaluation stage writes for one test world."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    summaries: List[DetectorSummary]
    distance_bins: Dict[str, List[DistanceBin]]
    heatmaps: Heatmaps
    threshold_table: List[ThresholdRow]
    radar_1d: DetectionCounts
    recall_gain: RecallGain
    n_gt: int

    def summary(self, detector: str) -> DetectorSummary:
        for row in self.summaries:
            if row.detector == detector:
                return row
        raise KeyError(detector)


def build_eval_report(
    scenes: Sequence[Scene],
    detections: Mapping[str, Sequence[Sequence[ScoredBox]]],
    slice_probs: np.ndarray,
    fusion_cfg: FusionConfig,
    eval_cfg: EvalConfig,
    grid: ImageGrid,
) -> EvalReport:
    """
    Score every detector in ``detections`` (keys from ``DETECTORS``) on ``scenes``.

    ``slice_probs`` are the radar network's outputs for the same scenes and feed the
    one-dimensional bundle evaluation.
    """
    t = eval_cfg.t_eval
    summaries: List[DetectorSummary] = []
    results: Dict[str, List[MatchResult]] = {}
    bins: Dict[str, List[DistanceBin]] = {}
    for name in DETECTORS:
        if name not in detections:
            continue
        summary, per_scene = summarize_detector(name, detections[name], scenes, t)
        summaries.append(summary)
        results[name] = per_scene
        hits = [perbox_hits(d, s.gt_boxes, t) for d, s in zip(detections[name], scenes)]
        bins[name] = distance_binned_recall(per_scene, scenes, eval_cfg, hits)
        logger.info(
            f"{name}: mAP={summary.mean_ap:.4f} accuracy={summary.accuracy:.4f} "
            f"TP={summary.tp:g} FP={summary.fp:g} FN={summary.fn:g}"
        )

    radar_1d = total_counts(
        [match_bundles_1d(y, fusion_cfg.t_g, s.gt_boxes, eval_cfg.t_iou_1d, grid) for y, s in zip(slice_probs, scenes)]
    )
    n_gt = sum(len(s.gt_boxes) for s in scenes)
    by_name = {row.detector: row for row in summaries}
    if "camera" in by_name and "fused" in by_name:
        gain = recall_gain(by_name["camera"], by_name["fused"], n_gt)
        threshold_table = fp_at_matched_tp(scenes, detections["fused"], fusion_cfg, t)
    else:
        gain = RecallGain(extra_vehicles=0.0, recall_points=0.0)
        threshold_table = []
    return EvalReport(
        summaries=summaries,
        distance_bins=bins,
        heatmaps=spatial_heatmap(scenes, results, grid, eval_cfg),
        threshold_table=threshold_table,
        radar_1d=radar_1d,
        recall_gain=gain,
        n_gt=n_gt,
    )
