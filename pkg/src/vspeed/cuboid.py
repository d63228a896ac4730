"""3D bounding boxes from rectified 2D detections with the ``c_c`` parameter.

In rectified space every edge of a vehicle box along the road is vertical,
every cross-road edge is horizontal and every height edge points at
``vp3_rect``.  Because the road plane maps affinely into rectified space, the
floor of the box is the roof shrunk towards ``vp3_rect`` by a common ratio.
``c_c`` places the top edge of the camera-facing face inside the 2D box, which
fixes that ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from .errors import DegenerateBox, OutOfBox, ValidationError
from .geometry import (
    CameraCalibration,
    ImagePoint,
    RectifiedSpace,
    RoadPlaneMapping,
    road_plane_mapping,
)

APPROACHING = "approaching"
RECEDING = "receding"
DIRECTIONS = (APPROACHING, RECEDING)

VERTEX_NAMES = tuple(
    f"{fr}_{tb}_{lr}"
    for fr in ("front", "rear")
    for tb in ("top", "bottom")
    for lr in ("left", "right")
)


@dataclass(frozen=True)
class RectBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"box has non-finite coordinates: {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValidationError(f"box must satisfy min < max: {vals}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_list(self) -> list:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def contains(self, p: ImagePoint) -> bool:
        return self.x_min <= p[0] <= self.x_max and self.y_min <= p[1] <= self.y_max


@dataclass(frozen=True)
class DetectionCc:
    frame_index: int
    class_id: int
    confidence: float
    box: RectBox
    c_c: float

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise ValidationError(f"frame_index must be non-negative, got {self.frame_index}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence must be in [0, 1], got {self.confidence}")
        if not 0.0 <= self.c_c <= 1.0:
            raise ValidationError(f"c_c must be in [0, 1], got {self.c_c}")


@dataclass(frozen=True)
class Cuboid3D:
    """Reconstructed vehicle box.

    ``vertices`` and ``rect_vertices`` are keyed by ``VERTEX_NAMES``; the first
    live in the original image, the second in rectified space.  ``front`` is the
    leading face in the direction of travel.
    """

    vertices: Dict[str, ImagePoint]
    rect_vertices: Dict[str, ImagePoint]
    front_bottom_world: Tuple[Tuple[float, float], Tuple[float, float]]
    tracking_point_image: ImagePoint
    tracking_point_world: Tuple[float, float]


def cc_from_projection(rect_bbox: RectBox, y_top_front: float) -> float:
    """Relative position of the top frontal edge inside the box height."""
    slack = 1e-9 * rect_bbox.height
    if not (rect_bbox.y_min - slack <= y_top_front <= rect_bbox.y_max + slack):
        raise OutOfBox(
            f"top frontal edge y={y_top_front} outside box [{rect_bbox.y_min}, {rect_bbox.y_max}]"
        )
    cc = (y_top_front - rect_bbox.y_min) / rect_bbox.height
    return min(1.0, max(0.0, cc))


def rect_cuboid(
    box: RectBox, c_c: float, vp3_rect: ImagePoint, direction: str = APPROACHING
) -> Dict[str, ImagePoint]:
    """Cuboid vertices in rectified space.

    ``c_c`` always locates the top edge of the face nearest the bottom of the
    rectified image; for approaching traffic that is the front face, for
    receding traffic the rear face.
    """
    if direction not in DIRECTIONS:
        raise ValidationError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    vx, vy = vp3_rect
    x0, y0, x1, y1 = box.x_min, box.y_min, box.x_max, box.y_max
    if box.contains(vp3_rect):
        raise DegenerateBox(f"vp3 {vp3_rect} lies inside box {box.as_list()}")
    if not vy > y1:
        # height edges would have to converge above the floor
        raise DegenerateBox(f"vp3 {vp3_rect} is not below box {box.as_list()}")

    y_near = y0 + c_c * (y1 - y0)
    # floor = vp3 + lam * (roof - vp3)
    lam = (vy - y1) / (vy - y_near)
    # roof x-extent; the box side on the far side of vp3 comes from the floor
    a = vx + (x0 - vx) / (1.0 if x0 <= vx else lam)
    b = vx + (x1 - vx) / (1.0 if x1 >= vx else lam)

    def floor(p: ImagePoint) -> ImagePoint:
        return (vx + lam * (p[0] - vx), vy + lam * (p[1] - vy))

    near_top = {"left": (a, y_near), "right": (b, y_near)}
    far_top = {"left": (a, y0), "right": (b, y0)}
    front_top, rear_top = (near_top, far_top) if direction == APPROACHING else (far_top, near_top)

    out: Dict[str, ImagePoint] = {}
    for side in ("left", "right"):
        out[f"front_top_{side}"] = front_top[side]
        out[f"front_bottom_{side}"] = floor(front_top[side])
        out[f"rear_top_{side}"] = rear_top[side]
        out[f"rear_bottom_{side}"] = floor(rear_top[side])
    return {k: out[k] for k in VERTEX_NAMES}


def reconstruct_cuboid(
    det: DetectionCc,
    rect: RectifiedSpace,
    calib: CameraCalibration,
    direction: str = APPROACHING,
    mapping: Optional[RoadPlaneMapping] = None,
) -> Cuboid3D:
    """Lift a rectified detection to a 3D box in the original image.

    ``mapping`` may be passed to avoid rebuilding the road-plane homography per
    detection.

    Raises:
        DegenerateBox: ``vp3_rect`` inside (or not below) the 2D box.
        PointAboveHorizon: the tracking point does not hit the road.
    """
    if mapping is None:
        mapping = road_plane_mapping(calib)
    rv = rect_cuboid(det.box, det.c_c, rect.vp3_rect, direction)
    verts = {k: rect.h_inv(p) for k, p in rv.items()}
    fl = mapping(verts["front_bottom_left"])
    fr = mapping(verts["front_bottom_right"])
    (lx, ly), (rx, ry) = rv["front_bottom_left"], rv["front_bottom_right"]
    tp_image = rect.h_inv(((lx + rx) / 2.0, (ly + ry) / 2.0))
    return Cuboid3D(
        vertices=verts,
        rect_vertices=rv,
        front_bottom_world=(fl, fr),
        tracking_point_image=tp_image,
        tracking_point_world=mapping(tp_image),
    )


def tracking_point(cuboid: Cuboid3D) -> Tuple[float, float]:
    """Centre of the bottom frontal edge on the road plane, in metres."""
    (x0, y0), (x1, y1) = cuboid.front_bottom_world
    return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)
