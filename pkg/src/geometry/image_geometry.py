"""
Image Geometry for the YOdar Fusion Pipeline
============================================
Author: Perception Fusion Team

The geometric substrate shared by every other stage: pinhole projection of ego
coordinates into the front image, the division of the image into vertical slices,
1D and 2D intersection over union, ground-truth occupancy arrays and greedy
non-maximum suppression.

Conventions:
- Slices are 1-indexed, half-open column spans [(s-1)*W/N_s, s*W/N_s)
- A box occupies a slice only when the overlap has strictly positive length
- Boxes are clamped to the image before any slice computation, never before
  box-to-box IoU

All functions are pure and thread-safe.

Dependencies: numpy
"""

# Standard library imports
import math
from typing import FrozenSet, List, Optional, Sequence, Tuple

# Third-party imports
import numpy as np

# Local imports
from ..shared.exceptions import DomainError
from ..shared.models import Box2D, CameraModel, ImageGrid, Interval1D

ScoredBox = Tuple[Box2D, float]


# ========== PROJECTION ==========

def project_to_image(
    lateral_m: float, range_m: float, cam: CameraModel, grid: ImageGrid
) -> Tuple[float, float]:
    """
    Project a ground-level point in ego coordinates into the image.

    Args:
        lateral_m (float): Lateral offset, positive to the right
        range_m (float): Distance along the driving direction, must be positive
        cam (CameraModel): Pinhole camera parameters
        grid (ImageGrid): Image size

    Returns:
        Tuple[float, float]: (column, row) in pixels

    Raises:
        DomainError: If ``range_m`` is not positive
    """
    if not range_m > 0:
        raise DomainError(f"range must be positive, got {range_m}")
    column = grid.width_px / 2.0 + cam.focal_px * lateral_m / range_m
    row = cam.horizon_row + cam.focal_px * cam.cam_height / range_m
    return column, row


# ========== SLICES ==========

def clamp_columns(box: Box2D, grid: ImageGrid) -> Optional[Interval1D]:
    """Column extent of ``box`` inside the image, or None if nothing is visible."""
    lo = max(box.x_min, 0.0)
    hi = min(box.x_max, float(grid.width_px))
    if hi <= lo:
        return None
    return Interval1D(lo=lo, hi=hi)


def slices_overlapping_box(box: Box2D, grid: ImageGrid) -> FrozenSet[int]:
    """
    Set S_i of slices the box intersects with positive length.

    An empty set means the box lies entirely outside the image.
    """
    extent = clamp_columns(box, grid)
    if extent is None:
        return frozenset()
    width = grid.slice_width
    first = max(1, int(math.floor(extent.lo / width)))
    last = min(grid.n_slices, int(math.ceil(extent.hi / width)) + 1)
    members = set()
    for s in range(first, last + 1):
        span_lo, span_hi = grid.slice_span(s)
        if min(extent.hi, span_hi) - max(extent.lo, span_lo) > 0:
            members.add(s)
    return frozenset(members)


def slice_range_interval(first: int, last: int, grid: ImageGrid) -> Interval1D:
    """Column interval covered by the inclusive slice run [first, last]."""
    return Interval1D(lo=(first - 1) * grid.slice_width, hi=last * grid.slice_width)


def slice_range_box(first: int, last: int, grid: ImageGrid) -> Box2D:
    """Full-height image box covering the inclusive slice run [first, last]."""
    span = slice_range_interval(first, last, grid)
    return Box2D.from_corners(span.lo, 0.0, span.hi, float(grid.height_px))


def occupancy_from_gt(gt_boxes: Sequence[Box2D], grid: ImageGrid) -> np.ndarray:
    """
    Binary occupancy array t over the slices.

    Returns:
        np.ndarray: uint8 vector of length N_s; t[s-1] = 1 iff some box overlaps slice s
    """
    t = np.zeros(grid.n_slices, dtype=np.uint8)
    for box in gt_boxes:
        for s in slices_overlapping_box(box, grid):
            t[s - 1] = 1
    return t


# ========== INTERSECTION OVER UNION ==========

def iou_1d(a: Interval1D, b: Interval1D) -> float:
    """Length of the intersection over length of the union; 0 for degenerate pairs."""
    inter = max(0.0, min(a.hi, b.hi) - max(a.lo, b.lo))
    union = a.length + b.length - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, inter / union)


def iou_2d(a: Box2D, b: Box2D) -> float:
    """Rectangle intersection area over union area."""
    ax0, ax1, ay0, ay1 = a.x_min, a.x_max, a.y_min, a.y_max
    bx0, bx1, by0, by1 = b.x_min, b.x_max, b.y_min, b.y_max
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    # Areas from the same corners as the intersection so identical boxes give exactly 1.
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    return min(1.0, inter / (area_a + area_b - inter))


def iou_matrix(boxes_a: Sequence[Box2D], boxes_b: Sequence[Box2D]) -> np.ndarray:
    """Pairwise ``iou_2d`` as an (len(a), len(b)) array."""
    out = np.zeros((len(boxes_a), len(boxes_b)), dtype=np.float64)
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = iou_2d(a, b)
    return out


def max_iou(box: Box2D, others: Sequence[Box2D]) -> float:
    """Largest IoU of ``box`` against ``others``; 0 for an empty sequence."""
    return max((iou_2d(box, other) for other in others), default=0.0)


# ========== NON-MAXIMUM SUPPRESSION ==========

def nms(boxes: Sequence[ScoredBox], iou_thresh: float) -> List[ScoredBox]:
    """
    Greedy non-maximum suppression.

    Repeatedly keeps the highest-scoring remaining box and drops every remaining box
    whose IoU with it is at least ``iou_thresh``. Equal scores are resolved in favor
    of the lower input index.

    Returns:
        List[ScoredBox]: Kept boxes ordered by descending score
    """
    if not 0.0 <= iou_thresh <= 1.0:
        raise DomainError(f"iou_thresh must lie in [0, 1], got {iou_thresh}")
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i][1], i))
    kept: List[ScoredBox] = []
    suppressed = [False] * len(boxes)
    for rank, i in enumerate(order):
        if suppressed[i]:
            continue
        kept.append(boxes[i])
        for j in order[rank + 1:]:
            if not suppressed[j] and iou_2d(boxes[i][0], boxes[j][0]) >= iou_thresh:
                suppressed[j] = True
    return kept
