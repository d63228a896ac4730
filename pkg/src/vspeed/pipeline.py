"""Staged speed-measurement pipeline and its throughput benchmark.

ingest -> [detect (inference delay + NMS) -> reconstruct] x workers -> reorder
-> track -> speed

The stateless middle stages fan out across worker threads.  Every frame holds
one of ``queue_capacity`` slots from ingest until the tracker has consumed it,
so the frames held anywhere in the pipeline (queues, workers, reorder buffer)
never exceed the capacity whatever the stream length.  Frames reach the tracker
in sequence order, so the output does not depend on the worker count.
"""

from __future__ import annotations

import json
import logging
import math
import queue
import statistics
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from .cuboid import APPROACHING, DIRECTIONS, reconstruct_cuboid
from .detections import (
    DEFAULT_CONF_THRESHOLD,
    DEFAULT_IOU_THRESHOLD,
    FrameDetections,
    iter_stream,
    nms,
)
from .errors import DegenerateBox, NoCrossing, PointAboveHorizon, StageError, ValidationError
from .evaluation import GroundTruth
from .geometry import CameraCalibration, RectifiedSpace, RoadPlaneMapping, rectification_homography, road_plane_mapping
from .speed import GateLine, SpeedMeasurement, estimate_speed
from .tracking import IOUTracker, Track, TrackerParams

log = logging.getLogger(__name__)

STAGES = ("ingest", "detect", "reconstruct", "track", "speed")
_POLL = 0.05


@dataclass
class PipelineConfig:
    calibration: CameraCalibration
    target_size: Tuple[int, int]
    fps: float
    gate: Optional[GateLine] = None
    detections: List[Path] = field(default_factory=list)
    nms_iou: float = DEFAULT_IOU_THRESHOLD
    nms_conf: float = DEFAULT_CONF_THRESHOLD
    tracker: TrackerParams = field(default_factory=TrackerParams)
    workers: int = 1
    queue_capacity: int = 64
    inference_delay: float = 0.0
    direction: str = APPROACHING

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValidationError(f"workers must be >= 1, got {self.workers}")
        if self.queue_capacity < 1:
            raise ValidationError(f"queue_capacity must be >= 1, got {self.queue_capacity}")
        if not self.fps > 0:
            raise ValidationError(f"fps must be positive, got {self.fps}")
        if self.inference_delay < 0:
            raise ValidationError("inference_delay must be non-negative")
        if self.direction not in DIRECTIONS:
            raise ValidationError(f"direction must be one of {DIRECTIONS}")
        for p in self.detections:
            if not Path(p).is_file():
                raise ValidationError(f"detection source {p} does not exist")

    @classmethod
    def from_dict(
        cls,
        d: dict,
        base_dir: Path = Path("."),
        *,
        calibration: str | Path | None = None,
        detections: Sequence[str | Path] | None = None,
    ) -> "PipelineConfig":
        """Build from a config mapping; relative paths resolve against ``base_dir``.

        ``calibration`` and ``detections`` override the corresponding keys.
        """

        def resolve(p) -> Path:
            p = Path(p)
            return p if p.is_absolute() else base_dir / p

        try:
            calib_src = calibration if calibration is not None else resolve(d["calibration"])
            if not Path(calib_src).is_file():
                raise ValidationError(f"calibration file {calib_src} does not exist")
            calib = CameraCalibration.load(calib_src)
            if detections is not None:
                dets = [Path(p) for p in detections]
            else:
                raw = d.get("detections", [])
                dets = [resolve(p) for p in ([raw] if isinstance(raw, str) else raw)]
            gate = None
            g = d.get("gate")
            if isinstance(g, str):
                gate = GroundTruth.load(resolve(g)).gate
            elif isinstance(g, dict):
                gate = GateLine.from_dict(g)
            nms_cfg = d.get("nms", {})
            return cls(
                calibration=calib,
                target_size=tuple(int(v) for v in d["target_size"]),
                fps=float(d["fps"]),
                gate=gate,
                detections=dets,
                nms_iou=float(nms_cfg.get("iou_threshold", DEFAULT_IOU_THRESHOLD)),
                nms_conf=float(nms_cfg.get("conf_threshold", DEFAULT_CONF_THRESHOLD)),
                tracker=TrackerParams(**d.get("tracker", {})),
                workers=int(d.get("workers", 1)),
                queue_capacity=int(d.get("queue_capacity", 64)),
                inference_delay=float(d.get("inference_delay", 0.0)),
                direction=d.get("direction", APPROACHING),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed pipeline config: {exc!r}") from exc

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "PipelineConfig":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: {exc}") from exc
        return cls.from_dict(data, path.parent, **overrides)


@dataclass
class VideoBench:
    name: str
    frames: int
    elapsed_s: float
    stage_ms: Dict[str, float] = field(default_factory=dict)
    max_in_flight: int = 0
    dropped_detections: int = 0

    @property
    def empty(self) -> bool:
        return self.frames == 0

    @property
    def mean_fps(self) -> float:
        """Frames per wall-clock second; 0.0 for an empty video."""
        if self.frames == 0 or self.elapsed_s <= 0:
            return 0.0
        return self.frames / self.elapsed_s

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean_fps"] = self.mean_fps
        d["empty"] = self.empty
        return d


def aggregate_fps(videos: Sequence[VideoBench]) -> float:
    """Overall FPS as the arithmetic mean of the per-video mean FPS.

    Empty videos are excluded; returns 0.0 if nothing was processed.
    """
    vals = [v.mean_fps for v in videos if not v.empty]
    return statistics.fmean(vals) if vals else 0.0


@dataclass
class BenchReport:
    label: str
    videos: List[VideoBench]

    @property
    def overall_fps(self) -> float:
        return aggregate_fps(self.videos)

    @property
    def empty(self) -> bool:
        return all(v.empty for v in self.videos)

    @property
    def stage_ms(self) -> Dict[str, float]:
        used = [v for v in self.videos if not v.empty]
        if not used:
            return {s: 0.0 for s in STAGES}
        return {s: statistics.fmean(v.stage_ms.get(s, 0.0) for v in used) for s in STAGES}

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "overall_fps": self.overall_fps,
            "empty": self.empty,
            "stage_ms": self.stage_ms,
            "videos": [v.to_dict() for v in self.videos],
        }

    def format(self) -> str:
        lines = [f"[{self.label}] overall FPS {self.overall_fps:.1f} (mean of per-video means)"]
        for v in self.videos:
            flag = "  (no frames)" if v.empty else ""
            lines.append(f"  {v.name}: {v.frames} frames, {v.mean_fps:.1f} FPS{flag}")
        lines.append("  per-frame stage latency (ms): " + ", ".join(f"{s} {ms:.3f}" for s, ms in self.stage_ms.items()))
        return "\n".join(lines)


@dataclass
class _Context:
    rect: RectifiedSpace
    mapping: RoadPlaneMapping
    config: PipelineConfig


def make_context(config: PipelineConfig) -> _Context:
    return _Context(
        rect=rectification_homography(config.calibration, config.target_size),
        mapping=road_plane_mapping(config.calibration),
        config=config,
    )


@dataclass
class _FrameResult:
    frame: FrameDetections
    world_points: List[Tuple[float, float]]
    dropped: int
    detect_s: float
    reconstruct_s: float


def process_frame(frame: FrameDetections, ctx: _Context, clock: Callable[[], float] = time.perf_counter) -> _FrameResult:
    """Stateless per-frame work: NMS then 3D reconstruction.

    Detections whose box cannot be lifted to a cuboid on the road are dropped.
    """
    cfg = ctx.config
    t0 = clock()
    if cfg.inference_delay:
        time.sleep(cfg.inference_delay)
    kept = nms(frame.detections, cfg.nms_iou, cfg.nms_conf)
    t1 = clock()
    dets, points, dropped = [], [], 0
    for d in kept:
        try:
            cub = reconstruct_cuboid(d, ctx.rect, cfg.calibration, cfg.direction, ctx.mapping)
        except (DegenerateBox, PointAboveHorizon):
            dropped += 1
            continue
        dets.append(d)
        points.append(cub.tracking_point_world)
    t2 = clock()
    out = FrameDetections(frame.frame_index, frame.timestamp, dets)
    return _FrameResult(out, points, dropped, t1 - t0, t2 - t1)


class _SpeedStage:
    def __init__(self, config: PipelineConfig, video: int):
        self.config = config
        self.video = video
        self.out: List[SpeedMeasurement] = []

    def __call__(self, tracks: Sequence[Track]) -> None:
        for t in tracks:
            try:
                m = estimate_speed(t, self.config.fps, self.config.gate)
            except NoCrossing:
                log.debug("track %d never crosses the gate", t.id)
                continue
            if self.video:
                m = SpeedMeasurement(m.track_id, m.speed_kmh, m.gate_time, m.lane, m.n_samples, self.video)
            self.out.append(m)


def run_sequential(frames: Iterable[FrameDetections], config: PipelineConfig, video: int = 0) -> List[SpeedMeasurement]:
    """Reference composition of the stage functions on the calling thread."""
    ctx = make_context(config)
    tracker = IOUTracker(config.tracker)
    speed = _SpeedStage(config, video)
    for frame in frames:
        r = process_frame(frame, ctx)
        speed(tracker.step(r.frame, r.world_points))
    speed(tracker.flush())
    return speed.out


def run_stream(
    frames: Iterable[FrameDetections],
    config: PipelineConfig,
    name: str = "stream",
    video: int = 0,
    clock: Callable[[], float] = time.perf_counter,
) -> Tuple[List[SpeedMeasurement], VideoBench]:
    """Run one video through the threaded pipeline."""
    ctx = make_context(config)
    cap = config.queue_capacity
    nworkers = config.workers
    in_q: "queue.Queue" = queue.Queue(maxsize=cap)
    out_q: "queue.Queue" = queue.Queue(maxsize=cap)
    slots = threading.Semaphore(cap)
    stop = threading.Event()
    lock = threading.Lock()
    stats = {"in_flight": 0, "max_in_flight": 0, "ingest_s": 0.0}
    done = object()

    def put(q: "queue.Queue", item) -> bool:
        while not stop.is_set():
            try:
                q.put(item, timeout=_POLL)
                return True
            except queue.Full:
                continue
        return False

    def producer() -> None:
        it = iter(frames)
        seq = 0
        try:
            while not stop.is_set():
                t0 = clock()
                try:
                    frame = next(it)
                except StopIteration:
                    break
                stats["ingest_s"] += clock() - t0
                while not slots.acquire(timeout=_POLL):
                    if stop.is_set():
                        return
                with lock:
                    stats["in_flight"] += 1
                    stats["max_in_flight"] = max(stats["max_in_flight"], stats["in_flight"])
                if not put(in_q, (seq, frame)):
                    return
                seq += 1
        except BaseException as exc:  # parse errors surface in order
            put(out_q, (seq, exc))
        finally:
            for _ in range(nworkers):
                put(in_q, done)

    def worker() -> None:
        while not stop.is_set():
            try:
                item = in_q.get(timeout=_POLL)
            except queue.Empty:
                continue
            if item is done:
                put(out_q, done)
                return
            seq, frame = item
            try:
                res = process_frame(frame, ctx, clock)
            except BaseException as exc:
                res = StageError("reconstruct", frame.frame_index, exc)
            if not put(out_q, (seq, res)):
                return

    threads = [threading.Thread(target=producer, name=f"{name}-ingest", daemon=True)]
    threads += [threading.Thread(target=worker, name=f"{name}-worker{i}", daemon=True) for i in range(nworkers)]

    tracker = IOUTracker(config.tracker)
    speed = _SpeedStage(config, video)
    pending: Dict[int, object] = {}
    next_seq, finished_workers, n_frames, dropped = 0, 0, 0, 0
    stage_s = {s: 0.0 for s in STAGES}

    start = clock()
    for t in threads:
        t.start()
    try:
        while True:
            while next_seq in pending:
                res = pending.pop(next_seq)
                if isinstance(res, StageError):
                    raise res
                if isinstance(res, BaseException):
                    raise res
                t0 = clock()
                try:
                    finished = tracker.step(res.frame, res.world_points)
                except Exception as exc:
                    raise StageError("track", res.frame.frame_index, exc) from exc
                t1 = clock()
                speed(finished)
                t2 = clock()
                stage_s["detect"] += res.detect_s
                stage_s["reconstruct"] += res.reconstruct_s
                stage_s["track"] += t1 - t0
                stage_s["speed"] += t2 - t1
                dropped += res.dropped
                n_frames += 1
                next_seq += 1
                with lock:
                    stats["in_flight"] -= 1
                slots.release()
            if finished_workers == nworkers and not pending:
                break
            item = out_q.get()
            if item is done:
                finished_workers += 1
                continue
            seq, res = item
            pending[seq] = res
        t0 = clock()
        speed(tracker.flush())
        stage_s["speed"] += clock() - t0
    finally:
        stop.set()
        for t in threads:
            t.join()
    elapsed = clock() - start
    stage_s["ingest"] = stats["ingest_s"]
    bench = VideoBench(
        name=name,
        frames=n_frames,
        elapsed_s=elapsed,
        stage_ms={s: (1000.0 * v / n_frames if n_frames else 0.0) for s, v in stage_s.items()},
        max_in_flight=stats["max_in_flight"],
        dropped_detections=dropped,
    )
    return speed.out, bench


def run(
    config: PipelineConfig,
    sources: Sequence[Iterable[FrameDetections]] | None = None,
    label: str = "run",
    clock: Callable[[], float] = time.perf_counter,
) -> Tuple[List[SpeedMeasurement], BenchReport]:
    """Process every video of ``config`` (or the given in-memory ``sources``).

    Videos run one after another, each through its own pipeline; with more
    than one video, measurements carry the video index.
    """
    if sources is None:
        sources = [iter_stream(p) for p in config.detections]
        names = [Path(p).name for p in config.detections]
    else:
        names = [f"video{i}" for i in range(len(sources))]
    multi = len(sources) > 1
    measurements: List[SpeedMeasurement] = []
    videos: List[VideoBench] = []
    for i, (src, nm) in enumerate(zip(sources, names)):
        ms, vb = run_stream(src, config, name=nm, video=i if multi else 0, clock=clock)
        measurements += ms
        videos.append(vb)
    return measurements, BenchReport(label=label, videos=videos)


@dataclass
class DensityReport:
    low: BenchReport
    high: BenchReport

    @property
    def ratio(self) -> Optional[float]:
        """High-density FPS over low-density FPS (None if either is empty)."""
        if self.low.overall_fps <= 0 or self.high.overall_fps <= 0:
            return None
        return self.high.overall_fps / self.low.overall_fps

    def to_dict(self) -> dict:
        return {"low": self.low.to_dict(), "high": self.high.to_dict(), "ratio": self.ratio}

    def format(self) -> str:
        r = self.ratio
        drop = "n/a" if r is None else f"{100.0 * (1.0 - r):.1f} %"
        return "\n".join([self.low.format(), self.high.format(), f"high/low FPS ratio: {'n/a' if r is None else f'{r:.3f}'} (drop {drop})"])


def bench_density(config: PipelineConfig, low_scenario, high_scenario) -> DensityReport:
    """Benchmark a low- and a high-density simulated scene with the same settings.

    Calibration, target size, fps and gate come from each scenario; NMS,
    tracker, worker and delay settings from ``config``.
    """
    from .simulator import generate

    reports = []
    for label, scn in (("low density", low_scenario), ("high density", high_scenario)):
        out = generate(scn)
        cfg = PipelineConfig(
            calibration=out.calibration,
            target_size=out.rect.target_size,
            fps=scn.fps,
            gate=out.gate,
            nms_iou=config.nms_iou,
            nms_conf=config.nms_conf,
            tracker=config.tracker,
            workers=config.workers,
            queue_capacity=config.queue_capacity,
            inference_delay=config.inference_delay,
            direction=scn.direction,
        )
        _, rep = run(cfg, sources=[out.frames], label=label)
        reports.append(rep)
    return DensityReport(*reports)
