"""
Domain Models for the YOdar Fusion Pipeline
===========================================
Author: Perception Fusion Team

This module defines the pydantic models shared by every stage of the pipeline: the
image grid and camera model, boxes and intervals, radar points, camera candidates,
ground-truth vehicles, whole scenes and the nine-metric fusion feature vector.

Key Features:
- Frozen, validated value objects (boxes never have non-positive size)
- Unknown fields rejected everywhere so persisted artifacts stay strict
- Small geometric helpers (corners, area, slice spans) live on the models

Dependencies: pydantic
"""

# Standard library imports
from enum import IntEnum                 # TP/FP labels with stable integer codes
from typing import List, Tuple           # Type hints for containers

# Third-party imports
from pydantic import BaseModel, ConfigDict, Field, model_validator


# ========== IMAGE GEOMETRY TYPES ==========

class ImageGrid(BaseModel):
    """
    Front-view image size and its division into vertical slices.

    Attributes:
        width_px (int): Image width in pixels
        height_px (int): Image height in pixels
        n_slices (int): Number of equal-width column slices (N_s)
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    width_px: int = Field(1600, gt=0)
    height_px: int = Field(900, gt=0)
    n_slices: int = Field(160, gt=0)

    @model_validator(mode="after")
    def _check_divisible(self) -> "ImageGrid":
        if self.width_px % self.n_slices != 0:
            raise ValueError(
                f"width_px ({self.width_px}) must be divisible by n_slices ({self.n_slices})"
            )
        return self

    @property
    def slice_width(self) -> float:
        """Width of one slice in pixels."""
        return self.width_px / self.n_slices

    def slice_span(self, s: int) -> Tuple[float, float]:
        """Half-open column span [lo, hi) of 1-indexed slice ``s``."""
        return ((s - 1) * self.slice_width, s * self.slice_width)


class Box2D(BaseModel):
    """
    Axis-aligned image box in center/size form.

    Attributes:
        cx (float): Center column in pixels
        cy (float): Center row in pixels
        w (float): Width in pixels, strictly positive
        h (float): Height in pixels, strictly positive
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    cx: float
    cy: float
    w: float = Field(gt=0)
    h: float = Field(gt=0)

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "Box2D":
        """Build a box from its top-left and bottom-right corners."""
        return cls(cx=(x0 + x1) / 2.0, cy=(y0 + y1) / 2.0, w=x1 - x0, h=y1 - y0)

    @property
    def x_min(self) -> float:
        return self.cx - self.w / 2.0

    @property
    def x_max(self) -> float:
        return self.cx + self.w / 2.0

    @property
    def y_min(self) -> float:
        return self.cy - self.h / 2.0

    @property
    def y_max(self) -> float:
        return self.cy + self.h / 2.0

    @property
    def area(self) -> float:
        """A = w * h."""
        return self.w * self.h

    def shifted(self, dx: float, dy: float) -> "Box2D":
        return Box2D(cx=self.cx + dx, cy=self.cy + dy, w=self.w, h=self.h)


class Interval1D(BaseModel):
    """Closed pixel interval [lo, hi] on the column axis."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    lo: float
    hi: float

    @model_validator(mode="after")
    def _check_order(self) -> "Interval1D":
        if self.lo > self.hi:
            raise ValueError(f"interval lo ({self.lo}) exceeds hi ({self.hi})")
        return self

    @property
    def length(self) -> float:
        return self.hi - self.lo


class CameraModel(BaseModel):
    """
    Idealized pinhole camera looking along the driving direction.

    Attributes:
        focal_px (float): Focal length in pixels
        cam_height (float): Mounting height above ground in meters
        horizon_row (float): Image row of the horizon in pixels
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    focal_px: float = Field(800.0, gt=0)
    cam_height: float = 0.5
    horizon_row: float = 450.0


# ========== SENSOR OUTPUT TYPES ==========

class RadarPoint(BaseModel):
    """
    One radar reflection already projected into the image.

    Attributes:
        range_m (float): Distance along the driving direction in meters
        proj_height_px (float): Image row of the projected point
        v_lat (float): Relative lateral velocity in m/s
        v_long (float): Relative longitudinal velocity in m/s
        column_px (float): Image column, only used to assign the point to a slice
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    range_m: float = Field(gt=0)
    proj_height_px: float
    v_lat: float
    v_long: float
    column_px: float


class CandidateBox(BaseModel):
    """
    One camera detection before thresholding and suppression.

    Attributes:
        box (Box2D): Predicted box
        z (float): Objectness score in [0, 1]
        p_vehicle (float): Vehicle class probability in [0, 1]
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    box: Box2D
    z: float = Field(ge=0.0, le=1.0)
    p_vehicle: float = Field(ge=0.0, le=1.0)

    @property
    def score(self) -> float:
        """Detector confidence z * p_vehicle."""
        return self.z * self.p_vehicle


class GroundTruthVehicle(BaseModel):
    """A simulated vehicle in ego coordinates."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    lateral_m: float
    range_m: float = Field(gt=0)
    width_m: float = Field(1.8, gt=0)
    height_m: float = Field(1.5, gt=0)
    speed_long: float = 0.0
    speed_lat: float = 0.0

    @property
    def is_moving(self) -> bool:
        return self.speed_long != 0.0 or self.speed_lat != 0.0


class Scene(BaseModel):
    """
    Everything known about one timestamp.

    Attributes:
        scene_id (str): Stable identifier, unique within a world
        night (bool): Night-time capture flag
        vehicles (List[GroundTruthVehicle]): Ground-truth vehicles
        gt_boxes (List[Box2D]): Image boxes of ``vehicles``, same order
        radar_visible (List[bool]): Whether each vehicle has a current-frame radar
            point with a valid velocity; only these enter the radar training target
        candidates (List[CandidateBox]): Simulated camera detector output
        radar_frames (List[List[RadarPoint]]): N_t radar frames, oldest first
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    scene_id: str
    night: bool = False
    vehicles: List[GroundTruthVehicle] = Field(default_factory=list)
    gt_boxes: List[Box2D] = Field(default_factory=list)
    radar_visible: List[bool] = Field(default_factory=list)
    candidates: List[CandidateBox] = Field(default_factory=list)
    radar_frames: List[List[RadarPoint]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_alignment(self) -> "Scene":
        if not (len(self.vehicles) == len(self.gt_boxes) == len(self.radar_visible)):
            raise ValueError("vehicles, gt_boxes and radar_visible must have equal length")
        return self

    def radar_target_boxes(self) -> List[Box2D]:
        """Ground-truth boxes kept for radar training (those radar actually saw)."""
        return [b for b, seen in zip(self.gt_boxes, self.radar_visible) if seen]

    @property
    def gt_ranges(self) -> List[float]:
        return [v.range_m for v in self.vehicles]


# ========== FUSION TYPES ==========

FEATURE_NAMES: Tuple[str, ...] = ("z", "p_vehicle", "cx", "cy", "w", "h", "area", "mu", "sigma")


class BoxLabel(IntEnum):
    """Meta-classification target: was the candidate a true or a false positive."""

    FP = 0
    TP = 1


class FeatureVector(BaseModel):
    """
    The nine fusion metrics of one candidate box, in fixed order.

    The first six entries are the detector tuple (z, p_vehicle, cx, cy, w, h), then the
    box area and the mean/standard deviation of the radar slice probabilities under
    the box.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    z: float = Field(ge=0.0, le=1.0)
    p_vehicle: float = Field(ge=0.0, le=1.0)
    cx: float
    cy: float
    w: float = Field(gt=0)
    h: float = Field(gt=0)
    area: float = Field(gt=0)
    mu: float = Field(ge=0.0, le=1.0)
    sigma: float = Field(ge=0.0, le=0.5)

    @model_validator(mode="after")
    def _check_area(self) -> "FeatureVector":
        if abs(self.area - self.w * self.h) > 1e-9 * max(1.0, abs(self.area)):
            raise ValueError("area must equal w * h")
        return self

    def as_tuple(self) -> Tuple[float, ...]:
        return tuple(getattr(self, name) for name in FEATURE_NAMES)


class LabeledExample(BaseModel):
    """One row of the fusion training set."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    scene_id: str
    box_id: int = Field(ge=0)
    features: FeatureVector
    label: BoxLabel
