"""Brute-force reference implementations used to check the fast code paths."""

from __future__ import annotations

from typing import List, Sequence

import numpy as np

from vspeed.cuboid import DetectionCc, RectBox


def box_iou(a: RectBox, b: RectBox) -> float:
    # inclusion-exclusion on explicit corner lists
    ix0, iy0 = max(a.x_min, b.x_min), max(a.y_min, b.y_min)
    ix1, iy1 = min(a.x_max, b.x_max), min(a.y_max, b.y_max)
    inter = max(0.0, ix1 - ix0) * max(0.0, iy1 - iy0)
    union = (a.x_max - a.x_min) * (a.y_max - a.y_min) + (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter
    return inter / union if inter > 0 else 0.0


def nms_oracle(dets: Sequence[DetectionCc], iou_threshold: float, conf_threshold: float) -> List[DetectionCc]:
    """Search every keep-set for the one greedy suppression must produce.

    A keep-set S is consistent when each candidate is in S exactly if no
    higher-priority member of S of its class overlaps it by more than the
    threshold.  Exactly one subset is consistent; it is returned in priority
    order.
    """
    cand = sorted(
        (d for d in dets if d.confidence >= conf_threshold),
        key=lambda d: (-d.confidence, d.class_id, d.box.x_min, d.box.y_min),
    )
    n = len(cand)
    blockers = [0] * n
    for i in range(n):
        for j in range(i):
            if cand[i].class_id == cand[j].class_id and box_iou(cand[i].box, cand[j].box) > iou_threshold:
                blockers[i] |= 1 << j
    found = [
        s for s in range(1 << n)
        if all(bool(s >> i & 1) == (s & blockers[i] == 0) for i in range(n))
    ]
    assert len(found) == 1, f"{len(found)} consistent keep-sets"
    return [cand[i] for i in range(n) if found[0] >> i & 1]


def _match_count(preds: Sequence[DetectionCc], gts: Sequence[DetectionCc], t: float) -> int:
    # score-ordered preds each claim the best remaining gt with IoU >= t
    free = list(range(len(gts)))
    hits = 0
    for p in preds:
        scored = [(box_iou(p.box, gts[j].box), -j) for j in free]
        scored = [s for s in scored if s[0] >= t]
        if scored:
            free.remove(-max(scored)[1])
            hits += 1
    return hits


def ap_oracle(preds: Sequence[DetectionCc], gts: Sequence[DetectionCc]):
    """(AP, AR) over IoU 0.50:0.95 for one frame and one class.

    The precision/recall point of every score cutoff is recomputed from
    scratch, and each recall sample takes the best precision at or beyond it.
    """
    order = sorted(preds, key=lambda d: -d.confidence)
    rec_points = np.linspace(0.0, 1.0, 101)
    aps, ars = [], []
    for t in np.round(np.linspace(0.5, 0.95, 10), 2):
        curve = []
        for k in range(1, len(order) + 1):
            tp = _match_count(order[:k], gts, t)
            curve.append((tp / len(gts), tp / k))
        ap = np.mean([max([p for r, p in curve if r >= rp], default=0.0) for rp in rec_points])
        aps.append(ap)
        ars.append(curve[-1][0] if curve else 0.0)
    return float(np.mean(aps)), float(np.mean(ars))


def random_detections(rng: np.random.Generator, n: int, n_classes: int = 2, frame: int = 0) -> List[DetectionCc]:
    """Heavily overlapping boxes on a coarse grid with repeated confidences."""
    out = []
    for _ in range(n):
        x0, y0 = rng.integers(0, 6, size=2).astype(float)
        w, h = rng.integers(1, 5, size=2).astype(float)
        conf = float(rng.choice([0.3, 0.5, 0.7, 0.9])) if rng.random() < 0.5 else float(rng.uniform(0, 1))
        out.append(DetectionCc(frame, int(rng.integers(n_classes)), conf, RectBox(x0, y0, x0 + w, y0 + h), float(rng.uniform())))
    return out
