"""Per-track speed from the median inter-frame displacement, plus gate crossings."""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

from shapely.geometry import Point, Polygon

from .errors import NoCrossing, TooShort, ValidationError
from .tracking import Track

MS_TO_KMH = 3.6
NO_LANE = -1


@dataclass(frozen=True)
class SpeedMeasurement:
    track_id: int
    speed_kmh: float
    gate_time: float
    lane: int
    n_samples: int
    video: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        if not self.video:
            del d["video"]
        if math.isnan(self.gate_time):
            d["gate_time"] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SpeedMeasurement":
        return cls(
            track_id=int(d["track_id"]),
            speed_kmh=float(d["speed_kmh"]),
            gate_time=math.nan if d["gate_time"] is None else float(d["gate_time"]),
            lane=int(d["lane"]),
            n_samples=int(d["n_samples"]),
            video=int(d.get("video", 0)),
        )


@dataclass(frozen=True)
class GateLine:
    """Measurement line on the road plane plus lane polygons (metres).

    Lane ``i`` is ``lanes[i]``.
    """

    p0: Tuple[float, float]
    p1: Tuple[float, float]
    lanes: Tuple[Tuple[Tuple[float, float], ...], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        p0, p1 = tuple(map(float, self.p0)), tuple(map(float, self.p1))
        if p0 == p1:
            raise ValidationError("gate endpoints must be distinct")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)
        lanes = tuple(tuple((float(x), float(y)) for x, y in poly) for poly in self.lanes)
        polys = []
        for i, poly in enumerate(lanes):
            shape = Polygon(poly)
            if len(poly) < 3 or not shape.is_valid or shape.area <= 0:
                raise ValidationError(f"lane {i} polygon is degenerate")
            polys.append(shape)
        object.__setattr__(self, "lanes", lanes)
        object.__setattr__(self, "_polys", tuple(polys))

    def signed_distance(self, p: Sequence[float]) -> float:
        (x0, y0), (x1, y1) = self.p0, self.p1
        dx, dy = x1 - x0, y1 - y0
        return (dx * (p[1] - y0) - dy * (p[0] - x0)) / math.hypot(dx, dy)

    def lane_of(self, p: Sequence[float]) -> int:
        pt = Point(p[0], p[1])
        for i, poly in enumerate(self._polys):
            if poly.covers(pt):
                return i
        return NO_LANE

    def to_dict(self) -> dict:
        return {"p0": list(self.p0), "p1": list(self.p1), "lanes": [[list(v) for v in poly] for poly in self.lanes]}

    @classmethod
    def from_dict(cls, d: dict) -> "GateLine":
        try:
            return cls(p0=tuple(d["p0"]), p1=tuple(d["p1"]), lanes=tuple(tuple(map(tuple, p)) for p in d.get("lanes", [])))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed gate: {exc!r}") from exc


def _world_points(track: Track) -> List[Tuple[float, float]]:
    pts = [e.world_point for e in track.entries]
    if any(p is None for p in pts):
        raise ValidationError(f"track {track.id} has entries without world points")
    return pts


def estimate_speed(track: Track, fps: float, gate: GateLine | None = None) -> SpeedMeasurement:
    """Median per-frame displacement times frame rate, in km/h.

    Displacements across skipped frames are divided by the frame gap.  Without
    a ``gate`` the measurement carries ``gate_time = nan`` and ``lane = -1``.
    """
    if not fps > 0:
        raise ValidationError(f"fps must be positive, got {fps}")
    if len(track.entries) < 2:
        raise TooShort(f"track {track.id} has {len(track.entries)} entries")
    pts = _world_points(track)
    per_frame = []
    for (e0, p0), (e1, p1) in zip(zip(track.entries, pts), zip(track.entries[1:], pts[1:])):
        gap = abs(e1.frame_index - e0.frame_index)
        per_frame.append(math.hypot(p1[0] - p0[0], p1[1] - p0[1]) / gap)
    speed = statistics.median(per_frame) * fps * MS_TO_KMH
    gate_time, lane = (math.nan, NO_LANE) if gate is None else gate_crossing(track, gate, fps)
    return SpeedMeasurement(track.id, speed, gate_time, lane, len(per_frame))


def gate_crossing(track: Track, gate: GateLine, fps: float) -> Tuple[float, int]:
    """Time (frame / fps, linearly interpolated) and lane where the track crosses the gate.

    Returns ``lane = -1`` when the crossing point lies outside every lane polygon.
    """
    pts = _world_points(track)
    for (e0, p0), (e1, p1) in zip(zip(track.entries, pts), zip(track.entries[1:], pts[1:])):
        s0, s1 = gate.signed_distance(p0), gate.signed_distance(p1)
        if s0 == 0.0 and s1 == 0.0:
            continue
        if s0 == 0.0 or s0 * s1 < 0 or s1 == 0.0:
            alpha = s0 / (s0 - s1)
            t0, t1 = e0.frame_index / fps, e1.frame_index / fps
            crossing = (p0[0] + alpha * (p1[0] - p0[0]), p0[1] + alpha * (p1[1] - p0[1]))
            return t0 + alpha * (t1 - t0), gate.lane_of(crossing)
    raise NoCrossing(f"track {track.id} never crosses the gate")


def write_measurements(measurements: Sequence[SpeedMeasurement], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump([m.to_dict() for m in measurements], fh, indent=1)
        fh.write("\n")


def read_measurements(path: str | Path) -> List[SpeedMeasurement]:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
            return [SpeedMeasurement.from_dict(d) for d in data]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: {exc}") from exc
