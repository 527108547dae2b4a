"""
Tests for src.fusion_engine.fusion_processor
"""

import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st

from src.fusion_engine.fusion_processor import (
    FusionProcessor,
    build_features,
    build_training_set,
    camera_only_scene,
    fuse_scene,
    label_candidates,
    prefilter,
    radar_stats_over_box,
    training_arrays,
)
from src.geometry.image_geometry import nms
from src.meta_classifier.gradient_boosting import Ensemble, TreeNode
from src.radar_network.radar_model import init_weights
from src.shared.config import FusionConfig, NetworkConfig
from src.shared.models import Box2D, BoxLabel, CandidateBox, GroundTruthVehicle, ImageGrid, Scene

TINY = NetworkConfig(n_slices=8, width=4)
NO_RADAR = [[], [], []]
CONSTANT = Ensemble(base_score=50.0, trees=[], shrinkage=0.1)


def _candidate(x0, x1, z=0.9, p=0.9, y0=10.0, y1=40.0) -> CandidateBox:
    return CandidateBox(box=Box2D.from_corners(x0, y0, x1, y1), z=z, p_vehicle=p)


def _mu_tree() -> Ensemble:
    """Keeps candidates whose mean radar probability exceeds one half."""
    split = TreeNode(feature_index=7, threshold=0.5, left=TreeNode.leaf(-3.0), right=TreeNode.leaf(3.0))
    return Ensemble(base_score=0.0, trees=[split], shrinkage=1.0)


# ========== METRICS ==========

def test_constant_probabilities_have_no_spread(small_grid):
    mu, sigma = radar_stats_over_box(Box2D.from_corners(5.0, 0.0, 35.0, 20.0), np.full(8, 0.7), small_grid)
    assert mu == pytest.approx(0.7)
    assert sigma == pytest.approx(0.0, abs=1e-15)


def test_two_slice_statistics(small_grid):
    y = np.array([0.2, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    mu, sigma = radar_stats_over_box(Box2D.from_corners(2.0, 0.0, 18.0, 20.0), y, small_grid)
    assert mu == pytest.approx(0.5)
    assert sigma == pytest.approx(0.3)


def test_box_outside_image_has_zero_statistics(small_grid):
    box = Box2D.from_corners(100.0, 0.0, 120.0, 20.0)
    assert radar_stats_over_box(box, np.full(8, 0.9), small_grid) == (0.0, 0.0)


def test_features_are_nine_in_documented_order(small_grid):
    c = CandidateBox(box=Box2D(cx=40.0, cy=30.0, w=10.0, h=20.0), z=0.6, p_vehicle=0.7)
    features = build_features(c, np.full(8, 0.5), small_grid).as_tuple()
    assert len(features) == 9
    assert features[:6] == (0.6, 0.7, 40.0, 30.0, 10.0, 20.0)
    assert features[6] == 200.0
    assert features[7] == pytest.approx(0.5)
    assert features[8] == pytest.approx(0.0, abs=1e-15)


def test_pinned_feature_vector(small_grid, golden):
    y = np.array([0.05, 0.9, 0.75, 0.3, 0.1, 0.0, 0.6, 0.2])
    c = CandidateBox(box=Box2D.from_corners(13.0, 5.0, 37.5, 41.0), z=0.42, p_vehicle=0.81)
    golden("fusion_feature_vector", list(build_features(c, y, small_grid).as_tuple()))


@hyp_settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(0.0, 1.0), min_size=8, max_size=8),
    st.floats(-20.0, 90.0),
    st.floats(0.5, 60.0),
)
def test_statistics_stay_bounded(values, x0, width):
    grid = ImageGrid(width_px=80, height_px=60, n_slices=8)
    mu, sigma = radar_stats_over_box(Box2D.from_corners(x0, 0.0, x0 + width, 10.0), np.array(values), grid)
    assert 0.0 <= mu <= 1.0
    assert 0.0 <= sigma <= 0.5


# ========== LABELS ==========

def test_labels_use_strict_threshold():
    gt = [Box2D.from_corners(0.0, 0.0, 10.0, 10.0)]
    identical = _candidate(0.0, 10.0, y0=0.0, y1=10.0)
    half = _candidate(0.0, 10.0, y0=0.0, y1=5.0)
    assert label_candidates([identical, half], gt, 0.5) == [BoxLabel.TP, BoxLabel.FP]


def test_no_ground_truth_means_all_false_positives():
    assert label_candidates([_candidate(0.0, 10.0)], [], 0.5) == [BoxLabel.FP]


@hyp_settings(max_examples=50, deadline=None)
@given(st.floats(-10.0, 10.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_raising_label_threshold_never_adds_positives(shift, t_low, t_high):
    t_low, t_high = sorted((t_low, t_high))
    gt = [Box2D.from_corners(0.0, 0.0, 10.0, 10.0), Box2D.from_corners(20.0, 0.0, 30.0, 10.0)]
    cands = [_candidate(shift, shift + 10.0, y0=0.0, y1=10.0), _candidate(15.0 + shift, 27.0, y0=0.0, y1=10.0)]
    low = label_candidates(cands, gt, t_low)
    high = label_candidates(cands, gt, t_high)
    assert all(h <= l for l, h in zip(low, high))


def test_prefilter_keeps_original_indices():
    cands = [_candidate(0.0, 10.0, z=0.1, p=0.2), _candidate(0.0, 10.0, z=0.5, p=0.5)]
    assert [i for i, _ in prefilter(cands, 0.05)] == [1]


# ========== FUSION ==========

def test_constant_ensemble_reduces_to_nms(small_grid):
    cands = [_candidate(0.0, 20.0), _candidate(2.0, 22.0), _candidate(50.0, 70.0)]
    cfg = FusionConfig(t_fuse=0.0)
    fused = fuse_scene(cands, np.zeros(8), CONSTANT, cfg, small_grid)
    score = fused[0][1]
    assert fused == nms([(c.box, score) for c in cands], cfg.nms_iou)
    assert len(fused) == 2


def test_fuse_threshold_of_one_rejects_everything(small_grid):
    cands = [_candidate(0.0, 20.0), _candidate(50.0, 70.0)]
    assert fuse_scene(cands, np.zeros(8), CONSTANT, FusionConfig(t_fuse=1.0), small_grid) == []


def test_empty_candidate_list(small_grid):
    assert fuse_scene([], np.zeros(8), CONSTANT, FusionConfig(), small_grid) == []


def test_radar_rescues_weak_candidate(small_grid):
    y = np.array([0.95, 0.9, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05])
    over_mover = _candidate(1.0, 19.0, z=0.2, p=0.6)
    over_nothing = _candidate(51.0, 69.0, z=0.2, p=0.6)
    cfg = FusionConfig()
    assert camera_only_scene([over_mover, over_nothing], cfg) == []
    fused = fuse_scene([over_mover, over_nothing], y, _mu_tree(), cfg, small_grid)
    assert [box for box, _ in fused] == [over_mover.box]


@hyp_settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=8, max_size=8), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_fusion_output_is_anti_monotone_in_threshold(values, t_a, t_b):
    grid = ImageGrid(width_px=80, height_px=60, n_slices=8)
    t_low, t_high = sorted((t_a, t_b))
    cands = [_candidate(10.0 * i, 10.0 * i + 12.0, z=0.3) for i in range(7)]
    y = np.array(values)
    low = fuse_scene(cands, y, _mu_tree(), FusionConfig(t_fuse=t_low), grid)
    high = fuse_scene(cands, y, _mu_tree(), FusionConfig(t_fuse=t_high), grid)
    input_boxes = [c.box for c in cands]
    assert all(box in input_boxes for box, _ in low)
    assert {id(b) for b, _ in high} <= {id(b) for b, _ in low}
    scores = [s for _, s in low]
    assert scores == sorted(scores, reverse=True)


def test_camera_baseline_threshold_override():
    cands = [_candidate(0.0, 10.0, z=0.5, p=0.5), _candidate(50.0, 60.0, z=0.9, p=0.9)]
    cfg = FusionConfig()
    assert len(camera_only_scene(cands, cfg)) == 1
    assert len(camera_only_scene(cands, cfg, threshold=0.2)) == 2


# ========== TRAINING SET ==========

def test_zero_scenes_give_empty_training_set(small_grid):
    rows = build_training_set([], init_weights(TINY, 1), FusionConfig(), small_grid)
    assert rows == []
    X, labels = training_arrays(rows)
    assert X.shape == (0, 9) and labels.shape == (0,)


def test_one_candidate_gives_one_row(small_grid):
    gt = Box2D.from_corners(10.0, 10.0, 30.0, 40.0)
    scene = Scene(
        scene_id="train-00000",
        vehicles=[GroundTruthVehicle(lateral_m=0.0, range_m=20.0)],
        gt_boxes=[gt],
        radar_visible=[False],
        radar_frames=NO_RADAR,
        candidates=[_candidate(0.0, 5.0, z=0.01, p=0.5), CandidateBox(box=gt, z=0.3, p_vehicle=0.5)],
    )
    rows = build_training_set([scene], init_weights(TINY, 1), FusionConfig(), small_grid)
    assert len(rows) == 1
    assert (rows[0].scene_id, rows[0].box_id, rows[0].label) == ("train-00000", 1, BoxLabel.TP)
    X, labels = training_arrays(rows)
    assert X.shape == (1, 9) and labels.tolist() == [1.0]


def test_processor_detects_per_scene(small_grid):
    scenes = [
        Scene(scene_id="test-00000", radar_frames=NO_RADAR, candidates=[_candidate(0.0, 20.0), _candidate(40.0, 60.0, z=0.01)]),
        Scene(scene_id="test-00001", radar_frames=NO_RADAR),
    ]
    processor = FusionProcessor(init_weights(TINY, 2), CONSTANT, FusionConfig(), small_grid)
    fused = processor.detect(scenes)
    assert [len(d) for d in fused] == [1, 0]
    assert [len(d) for d in processor.camera_only(scenes)] == [1, 0]
    assert processor.meta_probabilities(scenes).shape == (1,)
