"""Detection stream I/O and class-wise greedy non-maximum suppression.

Stream format: UTF-8 JSON lines, one frame per line::

    {"frame": 12, "t": 0.24, "dets": [{"cls": 0, "conf": 0.91,
                                       "box": [x_min, y_min, x_max, y_max], "cc": 0.37}]}

Box coordinates are rectified pixels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, List, Sequence

from .cuboid import DetectionCc, RectBox
from .errors import NonMonotonicTimestamps, ParseError, ValidationError

DEFAULT_IOU_THRESHOLD = 0.65
DEFAULT_CONF_THRESHOLD = 0.4


@dataclass(frozen=True)
class FrameDetections:
    frame_index: int
    timestamp: float
    detections: List[DetectionCc] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise ValidationError(f"frame_index must be non-negative, got {self.frame_index}")
        if not math.isfinite(self.timestamp):
            raise ValidationError(f"timestamp must be finite, got {self.timestamp}")


def iou(a: RectBox, b: RectBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def priority_key(d: DetectionCc):
    """Processing order: confidence descending, ties by (class, x_min, y_min)."""
    return (-d.confidence, d.class_id, d.box.x_min, d.box.y_min)


def nms(
    dets: Sequence[DetectionCc],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
) -> List[DetectionCc]:
    """Greedy per-class suppression; survivors keep their own ``c_c``."""
    if not (0.0 <= iou_threshold <= 1.0 and 0.0 <= conf_threshold <= 1.0):
        raise ValidationError("NMS thresholds must lie in [0, 1]")
    kept: List[DetectionCc] = []
    for d in sorted((d for d in dets if d.confidence >= conf_threshold), key=priority_key):
        if all(k.class_id != d.class_id or iou(k.box, d.box) <= iou_threshold for k in kept):
            kept.append(d)
    return kept


def detection_to_dict(d: DetectionCc) -> dict:
    return {"cls": d.class_id, "conf": d.confidence, "box": d.box.as_list(), "cc": d.c_c}


def frame_to_dict(f: FrameDetections) -> dict:
    return {"frame": f.frame_index, "t": f.timestamp, "dets": [detection_to_dict(d) for d in f.detections]}


def frame_from_dict(obj: dict) -> FrameDetections:
    frame = obj["frame"]
    if not isinstance(frame, int) or isinstance(frame, bool):
        raise ValidationError(f"frame must be an integer, got {frame!r}")
    dets = []
    for d in obj["dets"]:
        cls = d["cls"]
        if not isinstance(cls, int) or isinstance(cls, bool):
            raise ValidationError(f"cls must be an integer, got {cls!r}")
        box = d["box"]
        if len(box) != 4:
            raise ValidationError(f"box must have 4 coordinates, got {box!r}")
        dets.append(
            DetectionCc(
                frame_index=frame,
                class_id=cls,
                confidence=float(d["conf"]),
                box=RectBox(*(float(v) for v in box)),
                c_c=float(d["cc"]),
            )
        )
    return FrameDetections(frame_index=frame, timestamp=float(obj["t"]), detections=dets)


def iter_stream(path: str | Path) -> Iterator[FrameDetections]:
    """Lazily parse a detection stream; blank lines are skipped."""
    last_t = -math.inf
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                frame = frame_from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(lineno, str(exc)) from exc
            if not frame.timestamp > last_t:
                raise NonMonotonicTimestamps(
                    f"line {lineno}: timestamp {frame.timestamp} does not exceed {last_t}"
                )
            last_t = frame.timestamp
            yield frame


def read_stream(path: str | Path) -> List[FrameDetections]:
    return list(iter_stream(path))


def write_stream(frames: Iterable[FrameDetections], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for f in frames:
            fh.write(json.dumps(frame_to_dict(f), allow_nan=False))
            fh.write("\n")
