"""Vanishing-point geometry, rectifying homographies and road-plane mapping.

Conventions
-----------
Image coordinates are pixels with x to the right and y down.  The camera frame
is right-handed with X right, Y down and Z along the optical axis.  A
calibration provides three pieces of information:

* ``vp1``: vanishing point of the travel direction,
* ``vp2``: vanishing point of the cross-road direction (orthogonal to ``vp1``),
* ``scale``: metres per unit of the road plane ``n . X = 1`` where ``n`` is the
  unit road normal pointing down, away from the camera.

The rectified space sends ``vp1`` to infinity along -y and ``vp2`` to infinity
along +x, so the road plane maps to the rectified image by an axis-aligned
affine map.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence, Tuple

import numpy as np

from .errors import (
    DegenerateConfiguration,
    MapsToInfinity,
    NonOrthogonalVanishingPoints,
    PointAboveHorizon,
    ValidationError,
)

ImagePoint = Tuple[float, float]

# |det| floor for a normalised homography
DET_EPS = 1e-12
# |w| floor when de-homogenising
W_EPS = 1e-12
# min homogeneous weight of an image corner after removing the horizon;
# smaller values mean the horizon grazes the frame
CORNER_W_EPS = 1e-6


def _as_point(p: Iterable[float], name: str = "point") -> ImagePoint:
    x, y = (float(v) for v in p)
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValidationError(f"{name} must be finite, got ({x}, {y})")
    return (x, y)


@dataclass(frozen=True, eq=False)
class Homography:
    """Projective map of the plane, stored with its largest-magnitude entry equal to 1."""

    m: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.m, dtype=float)
        if m.shape != (3, 3):
            raise ValidationError(f"homography must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValidationError("homography has non-finite entries")
        k = np.unravel_index(np.argmax(np.abs(m)), m.shape)
        if m[k] == 0.0:
            raise DegenerateConfiguration("zero homography")
        m = m / m[k]
        if abs(np.linalg.det(m)) <= DET_EPS:
            raise DegenerateConfiguration("singular homography")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "_rows", tuple(tuple(r) for r in m.tolist()))

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def __call__(self, p: Sequence[float]) -> ImagePoint:
        return apply_homography(self, p)

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.m @ other.m)

    def homogeneous(self, p: Sequence[float]) -> Tuple[float, float, float]:
        (a, b, c), (d, e, f), (g, h, i) = self._rows
        x, y = p
        return (a * x + b * y + c, d * x + e * y + f, g * x + h * y + i)

    def apply_many(self, pts: np.ndarray) -> np.ndarray:
        """Map an (N, 2) array of points; raises MapsToInfinity if any lands at infinity."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        hom = pts @ self.m[:, :2].T + self.m[:, 2]
        w = hom[:, 2]
        if np.any(np.abs(w) <= W_EPS):
            raise MapsToInfinity("point maps to infinity")
        return hom[:, :2] / w[:, None]

    @cached_property
    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))


def apply_homography(h: Homography, p: Sequence[float]) -> ImagePoint:
    x, y, w = h.homogeneous(p)
    if abs(w) <= W_EPS:
        raise MapsToInfinity(f"point {tuple(p)} maps to infinity")
    return (x / w, y / w)


def focal_from_vps(vp1: Sequence[float], vp2: Sequence[float], pp: Sequence[float]) -> float:
    """Focal length implied by two orthogonal vanishing points.

    Raises:
        NonOrthogonalVanishingPoints: if ``(vp1 - pp) . (vp2 - pp) >= 0``.
    """
    dot = (vp1[0] - pp[0]) * (vp2[0] - pp[0]) + (vp1[1] - pp[1]) * (vp2[1] - pp[1])
    if not dot < 0:
        raise NonOrthogonalVanishingPoints(
            f"(vp1 - pp).(vp2 - pp) = {dot} must be negative for a real focal length"
        )
    return math.sqrt(-dot)


def _direction(vp: Sequence[float], pp: Sequence[float], focal: float) -> np.ndarray:
    d = np.array([vp[0] - pp[0], vp[1] - pp[1], focal], dtype=float)
    return d / np.linalg.norm(d)


def third_vanishing_point(
    vp1: Sequence[float], vp2: Sequence[float], pp: Sequence[float], focal: float
) -> ImagePoint:
    """Vanishing point of the direction orthogonal to both ``vp1`` and ``vp2``."""
    if not focal > 0:
        raise ValidationError(f"focal must be positive, got {focal}")
    d3 = np.cross(_direction(vp1, pp, focal), _direction(vp2, pp, focal))
    if abs(d3[2]) < 1e-9 * np.linalg.norm(d3):
        raise DegenerateConfiguration("third vanishing point is at infinity")
    return (pp[0] + focal * d3[0] / d3[2], pp[1] + focal * d3[1] / d3[2])


@dataclass(frozen=True)
class CameraCalibration:
    vp1: ImagePoint
    vp2: ImagePoint
    principal_point: ImagePoint
    scale: float
    image_size: Tuple[int, int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "vp1", _as_point(self.vp1, "vp1"))
        object.__setattr__(self, "vp2", _as_point(self.vp2, "vp2"))
        object.__setattr__(self, "principal_point", _as_point(self.principal_point, "pp"))
        w, h = self.image_size
        if not (w > 0 and h > 0):
            raise ValidationError(f"image_size must be positive, got {self.image_size}")
        object.__setattr__(self, "image_size", (int(w), int(h)))
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValidationError(f"scale must be positive, got {self.scale}")
        focal_from_vps(self.vp1, self.vp2, self.principal_point)

    @cached_property
    def focal(self) -> float:
        return focal_from_vps(self.vp1, self.vp2, self.principal_point)

    @cached_property
    def vp3(self) -> ImagePoint:
        return third_vanishing_point(self.vp1, self.vp2, self.principal_point, self.focal)

    @cached_property
    def K(self) -> np.ndarray:
        cx, cy = self.principal_point
        f = self.focal
        return np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])

    @cached_property
    def road_basis(self) -> np.ndarray:
        """Rows (lateral, along-road, normal) in camera coordinates.

        ``normal`` points down (positive optical-axis component), ``along``
        points away from the camera towards ``vp1`` and ``lateral = normal x along``
        completes a frame whose in-plane axes are right-handed seen from above.
        """
        f, pp = self.focal, self.principal_point
        along = _direction(self.vp1, pp, f)
        normal = np.cross(along, _direction(self.vp2, pp, f))
        normal /= np.linalg.norm(normal)
        if normal[2] < 0:
            normal = -normal
        lateral = np.cross(normal, along)
        return np.vstack([lateral, along, normal])

    def orthogonality_residual(self) -> float:
        """``(vp1-pp).(vp2-pp) + f^2`` relative to ``f^2``."""
        pp = self.principal_point
        dot = (self.vp1[0] - pp[0]) * (self.vp2[0] - pp[0]) + (self.vp1[1] - pp[1]) * (
            self.vp2[1] - pp[1]
        )
        return abs(dot + self.focal**2) / self.focal**2

    def to_dict(self) -> dict:
        return {
            "vp1": list(self.vp1),
            "vp2": list(self.vp2),
            "pp": list(self.principal_point),
            "scale": self.scale,
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraCalibration":
        try:
            return cls(
                vp1=tuple(d["vp1"]),
                vp2=tuple(d["vp2"]),
                principal_point=tuple(d["pp"]),
                scale=float(d["scale"]),
                image_size=tuple(d["image_size"]),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed calibration: {exc!r}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "CameraCalibration":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


@dataclass(frozen=True, eq=False)
class RectifiedSpace:
    h_fwd: Homography
    h_inv: Homography
    target_size: Tuple[int, int]
    vp3_rect: ImagePoint

    def to_rect(self, p: Sequence[float]) -> ImagePoint:
        return self.h_fwd(p)

    def to_image(self, p: Sequence[float]) -> ImagePoint:
        return self.h_inv(p)


def rectification_homography(
    calib: CameraCalibration, target_size: Sequence[int]
) -> RectifiedSpace:
    """Build the rectifying warp for ``calib`` fitted into ``target_size``.

    The horizon ``vp1 x vp2`` becomes the line at infinity; a linear map then
    sends the two vanishing directions to -y and +x; a final uniform scale and
    translation fit the warped image corners into the target rectangle.
    """
    tw, th = (float(v) for v in target_size)
    if not (tw > 0 and th > 0):
        raise ValidationError(f"target_size must be positive, got {tuple(target_size)}")
    w, h = calib.image_size
    cx, cy = w / 2.0, h / 2.0
    centre = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])

    v1 = np.array(calib.vp1) - (cx, cy)
    v2 = np.array(calib.vp2) - (cx, cy)
    if np.linalg.norm(v1 - v2) <= 1e-9 * max(np.linalg.norm(v1), np.linalg.norm(v2), 1.0):
        raise DegenerateConfiguration("vp1 and vp2 coincide")
    horizon = np.cross(np.append(v1, 1.0), np.append(v2, 1.0))
    if abs(horizon[2]) <= 1e-12 * np.linalg.norm(horizon[:2]) * max(w, h):
        raise DegenerateConfiguration("horizon passes through the image centre")
    horizon = horizon / horizon[2]

    corners = np.array([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]]) - (cx, cy)
    corner_w = corners @ horizon[:2] + 1.0
    if np.any(corner_w <= CORNER_W_EPS):
        raise DegenerateConfiguration("horizon crosses the image; rectified frame is unbounded")

    projective = np.eye(3)
    projective[2] = horizon

    u = np.column_stack([v1 / np.linalg.norm(v1), v2 / np.linalg.norm(v2)])
    if abs(np.linalg.det(u)) < 1e-9:
        raise DegenerateConfiguration("vanishing directions are parallel as seen from the image centre")
    # u1 -> (0, -1), u2 -> (1, 0)
    align = np.eye(3)
    align[:2, :2] = np.array([[0.0, 1.0], [-1.0, 0.0]]) @ np.linalg.inv(u)

    h1 = align @ projective @ centre
    hom = np.column_stack([corners + (cx, cy), np.ones(4)]) @ h1.T
    warped = hom[:, :2] / hom[:, 2:]
    lo, hi = warped.min(axis=0), warped.max(axis=0)
    span = hi - lo
    s = min(tw / span[0], th / span[1])
    ox = (tw - s * span[0]) / 2.0 - s * lo[0]
    oy = (th - s * span[1]) / 2.0 - s * lo[1]
    fit = np.array([[s, 0.0, ox], [0.0, s, oy], [0.0, 0.0, 1.0]])

    h_fwd = Homography(fit @ h1)
    try:
        vp3_rect = h_fwd(calib.vp3)
    except MapsToInfinity as exc:
        raise DegenerateConfiguration("vp3 lies on the horizon") from exc
    return RectifiedSpace(
        h_fwd=h_fwd,
        h_inv=h_fwd.inverse,
        target_size=(int(target_size[0]), int(target_size[1])),
        vp3_rect=vp3_rect,
    )


@dataclass(frozen=True, eq=False)
class RoadPlaneMapping(Homography):
    """Image -> metric road-plane homography that refuses points above the horizon.

    Output coordinates are ``(lateral, along)`` in metres with the origin at the
    foot of the camera.
    """

    front_sign: float = field(default=1.0)

    def __call__(self, p: Sequence[float]) -> ImagePoint:
        x, y, w = self.homogeneous(p)
        g, hh, i = self._rows[2]
        if w * self.front_sign <= W_EPS * (abs(g * p[0]) + abs(hh * p[1]) + abs(i)):
            raise PointAboveHorizon(f"ray through {tuple(p)} does not hit the road in front")
        return (x / w, y / w)

    def apply_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        hom = pts @ self.m[:, :2].T + self.m[:, 2]
        if np.any(hom[:, 2] * self.front_sign <= W_EPS):
            raise PointAboveHorizon("at least one ray does not hit the road in front")
        return hom[:, :2] / hom[:, 2:]


def road_plane_mapping(calib: CameraCalibration) -> RoadPlaneMapping:
    """Homography from image pixels to road-plane metres.

    A pixel's ray ``r = K^-1 [u, v, 1]`` meets the plane ``n . X = 1`` at
    ``r / (n . r)``; its lateral/along coordinates times ``calib.scale`` are
    metres.
    """
    m = np.diag([calib.scale, calib.scale, 1.0]) @ calib.road_basis @ np.linalg.inv(calib.K)
    h = Homography(m)
    # the ray along the road normal (through vp3) is in front by construction
    w_front = h.homogeneous(calib.vp3)[2]
    return RoadPlaneMapping(h.m, front_sign=1.0 if w_front > 0 else -1.0)
