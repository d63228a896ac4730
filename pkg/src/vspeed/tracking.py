"""Greedy IoU tracker (no motion model).

Each frame, active tracks pick their best-IoU detection in order of their last
confidence.  A track that misses more than ``max_gap`` consecutive frames is
closed; closed tracks are kept only if they are long and confident enough.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from .cuboid import DetectionCc
from .detections import FrameDetections, iou
from .errors import OutOfOrderFrame, ValidationError

ACTIVE = "active"
FINISHED = "finished"


@dataclass(frozen=True)
class TrackerParams:
    sigma_iou: float = 0.5
    sigma_h: float = 0.5
    t_min: int = 5
    max_gap: int = 1

    def __post_init__(self) -> None:
        if not (0.0 <= self.sigma_iou <= 1.0 and 0.0 <= self.sigma_h <= 1.0):
            raise ValidationError("tracker thresholds must lie in [0, 1]")
        if self.t_min < 2:
            raise ValidationError(f"t_min must be >= 2, got {self.t_min}")
        if self.max_gap < 0:
            raise ValidationError(f"max_gap must be >= 0, got {self.max_gap}")


@dataclass(frozen=True)
class TrackEntry:
    frame_index: int
    detection: DetectionCc
    world_point: Optional[Tuple[float, float]] = None


@dataclass
class Track:
    id: int
    entries: List[TrackEntry] = field(default_factory=list)
    max_confidence: float = 0.0
    state: str = ACTIVE

    @property
    def last(self) -> TrackEntry:
        return self.entries[-1]

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, entry: TrackEntry) -> None:
        if self.entries and entry.frame_index <= self.last.frame_index:
            raise OutOfOrderFrame(f"track {self.id}: frame {entry.frame_index} not after {self.last.frame_index}")
        self.entries.append(entry)
        self.max_confidence = max(self.max_confidence, entry.detection.confidence)


class IOUTracker:
    """Single-stream tracker state; not thread-safe, one instance per video."""

    def __init__(self, params: TrackerParams | None = None):
        self.params = params or TrackerParams()
        self.active: List[Track] = []
        self._next_id = 1
        self._last_frame: Optional[int] = None

    def _keep(self, track: Track) -> bool:
        p = self.params
        return track.max_confidence >= p.sigma_h and len(track) >= p.t_min

    def _close(self, tracks: Sequence[Track]) -> List[Track]:
        out = []
        for t in tracks:
            t.state = FINISHED
            if self._keep(t):
                out.append(t)
        return out

    def step(
        self,
        frame: FrameDetections,
        world_points: Optional[Sequence[Optional[Tuple[float, float]]]] = None,
    ) -> List[Track]:
        """Consume one frame; returns tracks that finished (and qualified) at this frame.

        ``world_points`` optionally pairs each detection with its road-plane
        tracking point.
        """
        fi = frame.frame_index
        if self._last_frame is not None and fi <= self._last_frame:
            raise OutOfOrderFrame(f"frame {fi} presented after frame {self._last_frame}")
        self._last_frame = fi
        if world_points is None:
            world_points = [None] * len(frame.detections)
        if len(world_points) != len(frame.detections):
            raise ValidationError("world_points must pair one-to-one with detections")

        free = list(range(len(frame.detections)))
        order = sorted(self.active, key=lambda t: (-t.last.detection.confidence, t.id))
        still_active: List[Track] = []
        closing: List[Track] = []
        for track in order:
            best, best_iou = None, -1.0
            last_box = track.last.detection.box
            for j in free:
                v = iou(last_box, frame.detections[j].box)
                if v > best_iou:
                    best, best_iou = j, v
            if best is not None and best_iou >= self.params.sigma_iou:
                free.remove(best)
                track.append(TrackEntry(fi, frame.detections[best], world_points[best]))
                still_active.append(track)
            elif fi - track.last.frame_index > self.params.max_gap:
                closing.append(track)
            else:
                still_active.append(track)

        for j in free:
            t = Track(id=self._next_id)
            self._next_id += 1
            t.append(TrackEntry(fi, frame.detections[j], world_points[j]))
            still_active.append(t)
        self.active = sorted(still_active, key=lambda t: t.id)
        return self._close(sorted(closing, key=lambda t: t.id))

    def flush(self) -> List[Track]:
        """Close every active track, applying the usual length/confidence filter."""
        tracks, self.active = self.active, []
        return self._close(tracks)
