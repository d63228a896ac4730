"""Speed-measurement accuracy and detection metrics.

Speed: predictions and ground-truth vehicles are matched one-to-one within the
same lane by closest gate time.  Detection: COCO-style AP/AR averaged over IoU
thresholds 0.50:0.05:0.95 and the mean squared ``c_c`` error over matched
pairs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from decimal import Decimal
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cuboid import DetectionCc
from .detections import FrameDetections, iou
from .errors import EmptyGroundTruth, NoMatches, ValidationError
from .speed import GateLine, SpeedMeasurement

DEFAULT_TIME_WINDOW = 1.0
IOU_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
MAX_DETS = 100
CC_MATCH_IOU = 0.5


@dataclass(frozen=True)
class GroundTruthVehicle:
    id: int
    lane: int
    gate_time: float
    speed_kmh: float

    def __post_init__(self) -> None:
        if not self.speed_kmh > 0:
            raise ValidationError(f"vehicle {self.id}: speed must be positive")


@dataclass(frozen=True)
class GroundTruth:
    vehicles: List[GroundTruthVehicle]
    gate: Optional[GateLine] = None

    def to_dict(self) -> dict:
        out: dict = {}
        if self.gate is not None:
            g = self.gate.to_dict()
            out["gate"] = {"p0": g["p0"], "p1": g["p1"]}
            out["lanes"] = g["lanes"]
        out["vehicles"] = [asdict(v) for v in self.vehicles]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        try:
            gate = None
            if "gate" in d:
                gate = GateLine.from_dict({**d["gate"], "lanes": d.get("lanes", [])})
            vehicles = [
                GroundTruthVehicle(int(v["id"]), int(v["lane"]), float(v["gate_time"]), float(v["speed_kmh"]))
                for v in d["vehicles"]
            ]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed ground truth: {exc!r}") from exc
        return cls(vehicles=vehicles, gate=gate)

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruth":
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: {exc}") from exc

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


@dataclass(frozen=True)
class MatchResult:
    pairs: List[Tuple[SpeedMeasurement, GroundTruthVehicle]]
    false_positives: List[SpeedMeasurement]
    misses: List[GroundTruthVehicle]


def match_measurements(
    preds: Sequence[SpeedMeasurement],
    gts: Sequence[GroundTruthVehicle],
    time_window: float = DEFAULT_TIME_WINDOW,
) -> MatchResult:
    """Greedy one-to-one matching by ascending gate-time difference within a lane.

    Ties are broken by ground-truth id, then by prediction position.
    """
    if not time_window > 0:
        raise ValidationError(f"time_window must be positive, got {time_window}")
    candidates = []
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            dt = abs(p.gate_time - g.gate_time)
            if p.lane == g.lane and dt <= time_window:
                candidates.append((dt, g.id, i, j))
    candidates.sort()
    used_p, used_g = set(), set()
    pairs = []
    for _, _, i, j in candidates:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((preds[i], gts[j]))
    return MatchResult(
        pairs=pairs,
        false_positives=[p for i, p in enumerate(preds) if i not in used_p],
        misses=[g for j, g in enumerate(gts) if j not in used_g],
    )


@dataclass(frozen=True)
class SpeedEvalReport:
    mean_error_kmh: float
    median_error_kmh: float
    p95_error_kmh: float
    mean_precision_pct: float
    mean_recall_pct: float
    matched: int
    false_positives: int
    misses: int

    def to_dict(self) -> dict:
        return asdict(self)


def _pct(num: int, den: int) -> float:
    return 100.0 * num / den if den else 0.0


def speed_report(match: MatchResult, *, require_matches: bool = False) -> SpeedEvalReport:
    """Absolute-error statistics and precision/recall of a matching.

    With no matched pairs the error fields are NaN; pass ``require_matches``
    to raise ``NoMatches`` instead.
    """
    n, fp, fn = len(match.pairs), len(match.false_positives), len(match.misses)
    if n == 0:
        if require_matches:
            raise NoMatches("no prediction matched any ground-truth vehicle")
        mean = median = p95 = math.nan
    else:
        err = np.array([abs(p.speed_kmh - g.speed_kmh) for p, g in match.pairs])
        mean = float(err.mean())
        median = float(np.median(err))
        p95 = float(np.percentile(err, 95, method="linear"))
    return SpeedEvalReport(
        mean_error_kmh=mean,
        median_error_kmh=median,
        p95_error_kmh=p95,
        mean_precision_pct=_pct(n, n + fp),
        mean_recall_pct=_pct(n, n + fn),
        matched=n,
        false_positives=fp,
        misses=fn,
    )


SPEED_COLUMNS = (
    "Mean error (km/h)",
    "Median error (km/h)",
    "95-th percentile (km/h)",
    "Mean precision (%)",
    "Mean recall (%)",
)


def format_speed_table(rows: Dict[str, SpeedEvalReport]) -> str:
    """Plain-text table with one row per labelled report."""
    header = ("Run",) + SPEED_COLUMNS
    body = [
        (label, f"{r.mean_error_kmh:.2f}", f"{r.median_error_kmh:.2f}", f"{r.p95_error_kmh:.2f}",
         f"{r.mean_precision_pct:.2f}", f"{r.mean_recall_pct:.2f}")
        for label, r in rows.items()
    ]
    widths = [max(len(str(row[i])) for row in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(str(c).rjust(w) for c, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(str(c).rjust(w) for c, w in zip(row, widths)) for row in body]
    return "\n".join(lines)


# ---------------------------------------------------------------- detection


@dataclass(frozen=True)
class DetEvalReport:
    map_50_95: float
    mar_50_95: float
    cc_error: Optional[float]
    n_cc_pairs: int

    def to_dict(self) -> dict:
        return asdict(self)


def cc_error(pred_cc: Sequence[float], gt_cc: Sequence[float]) -> Optional[float]:
    """Mean squared ``c_c`` error over assigned pairs.

    Computed in decimal arithmetic over the shortest repr of each value so
    that decimal inputs give the correctly rounded decimal answer.
    """
    if len(pred_cc) != len(gt_cc):
        raise ValidationError("pred and gt c_c sequences differ in length")
    if not pred_cc:
        return None
    total = sum((Decimal(repr(float(p))) - Decimal(repr(float(g)))) ** 2 for p, g in zip(pred_cc, gt_cc))
    return float(total / len(pred_cc))


def greedy_match(
    preds: Sequence[DetectionCc], gts: Sequence[DetectionCc], threshold: float
) -> List[Tuple[int, int]]:
    """COCO-style matching inside one frame and class.

    ``preds`` must already be in score order.  Each prediction takes the
    unmatched ground truth with the highest IoU >= ``threshold`` (ties: lowest
    index).  Returns ``(pred_index, gt_index)`` pairs.
    """
    taken = set()
    out = []
    for i, p in enumerate(preds):
        best, best_iou = -1, threshold
        for j, g in enumerate(gts):
            if j in taken:
                continue
            v = iou(p.box, g.box)
            if v > best_iou or (v == best_iou and best < 0):
                best, best_iou = j, v
        if best >= 0:
            taken.add(best)
            out.append((i, best))
    return out


def _score_order(dets: Sequence[DetectionCc]) -> List[DetectionCc]:
    return sorted(dets, key=lambda d: -d.confidence)


def _interpolated_ap(tp: np.ndarray, n_gt: int) -> Tuple[float, float]:
    """101-point interpolated AP and final recall for score-sorted TP flags."""
    if tp.size == 0:
        return 0.0, 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(sampled.mean()), float(recall[-1])


def det_report(
    pred_frames: Sequence[FrameDetections], gt_frames: Sequence[FrameDetections]
) -> DetEvalReport:
    """mAP / mAR over IoU 0.50:0.95 and mean squared ``c_c`` error.

    Frames are aligned by ``frame_index``; at most ``MAX_DETS`` highest-scoring
    predictions per frame are considered.  Classes without ground truth are
    ignored.
    """
    gt_by_frame: Dict[int, List[DetectionCc]] = {f.frame_index: list(f.detections) for f in gt_frames}
    pred_by_frame: Dict[int, List[DetectionCc]] = {
        f.frame_index: _score_order(f.detections)[:MAX_DETS] for f in pred_frames
    }
    classes = sorted({d.class_id for ds in gt_by_frame.values() for d in ds})
    if not classes:
        raise EmptyGroundTruth("ground truth contains no boxes")
    frames = sorted(set(gt_by_frame) | set(pred_by_frame))

    aps, ars = [], []
    for cls in classes:
        per_frame = [
            (
                [d for d in pred_by_frame.get(fi, []) if d.class_id == cls],
                [d for d in gt_by_frame.get(fi, []) if d.class_id == cls],
            )
            for fi in frames
        ]
        n_gt = sum(len(g) for _, g in per_frame)
        for t in IOU_THRESHOLDS:
            scores, flags = [], []
            for preds, gts in per_frame:
                matched = {i for i, _ in greedy_match(preds, gts, t)}
                scores += [p.confidence for p in preds]
                flags += [i in matched for i in range(len(preds))]
            order = np.argsort(-np.asarray(scores, dtype=float), kind="mergesort")
            ap, ar = _interpolated_ap(np.asarray(flags, dtype=bool)[order], n_gt)
            aps.append(ap)
            ars.append(ar)

    pc, gc = [], []
    for fi in frames:
        preds_all, gts_all = pred_by_frame.get(fi, []), gt_by_frame.get(fi, [])
        for cls in classes:
            preds = [d for d in preds_all if d.class_id == cls]
            gts = [d for d in gts_all if d.class_id == cls]
            for i, j in greedy_match(preds, gts, CC_MATCH_IOU):
                pc.append(preds[i].c_c)
                gc.append(gts[j].c_c)
    return DetEvalReport(
        map_50_95=float(np.mean(aps)),
        mar_50_95=float(np.mean(ars)),
        cc_error=cc_error(pc, gc),
        n_cc_pairs=len(pc),
    )


def format_det_table(rows: Dict[str, DetEvalReport]) -> str:
    header = ("Run", "mAP 0.5:0.95", "mAR 0.5:0.95", "c_c error")
    body = [
        (label, f"{100 * r.map_50_95:.1f} %", f"{100 * r.mar_50_95:.1f} %",
         "-" if r.cc_error is None else f"{r.cc_error:.4f}")
        for label, r in rows.items()
    ]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(header, widths)), "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in body]
    return "\n".join(lines)
