"""Synthetic traffic scenes: pinhole camera over a straight road with box-shaped vehicles.

World frame: x across the road, y along the road away from the camera, z up.
The camera sits at ``(0, 0, height)``, looks towards +y, is pitched down by
``pitch`` and turned by ``yaw`` about the vertical axis.  With this placement
the world ground coordinates coincide with the calibration's road-plane
coordinates.

All randomness comes from ``numpy.random.default_rng(seed)`` (PCG64).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cuboid import APPROACHING, DIRECTIONS, RECEDING, DetectionCc, RectBox, cc_from_projection
from .detections import FrameDetections, write_stream
from .errors import BehindCamera, InvalidScenario, VSpeedError
from .evaluation import GroundTruth, GroundTruthVehicle
from .geometry import CameraCalibration, RectifiedSpace, rectification_homography
from .speed import GateLine

KMH_TO_MS = 1 / 3.6
MIN_DEPTH = 1e-6
SIM_CONFIDENCE = 0.9


@dataclass(frozen=True)
class CameraSpec:
    height: float
    pitch: float
    yaw: float
    focal: float
    image_size: Tuple[int, int] = (1920, 1080)

    @property
    def centre(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.height])

    @property
    def principal_point(self) -> Tuple[float, float]:
        return (self.image_size[0] / 2.0, self.image_size[1] / 2.0)

    @property
    def rotation(self) -> np.ndarray:
        """World -> camera rotation; rows are the camera right, down and forward axes."""
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        forward = np.array([sy * cp, cy * cp, -sp])
        right = np.array([cy, -sy, 0.0])
        down = np.cross(forward, right)
        return np.vstack([right, down, forward])

    @property
    def K(self) -> np.ndarray:
        cx, cy = self.principal_point
        return np.array([[self.focal, 0.0, cx], [0.0, self.focal, cy], [0.0, 0.0, 1.0]])

    def vanishing_point(self, direction: Sequence[float]) -> Tuple[float, float]:
        v = self.K @ self.rotation @ np.asarray(direction, dtype=float)
        if abs(v[2]) < 1e-12 * np.linalg.norm(v):
            raise InvalidScenario(f"direction {tuple(direction)} vanishes at infinity")
        return (float(v[0] / v[2]), float(v[1] / v[2]))

    def calibration(self) -> CameraCalibration:
        return CameraCalibration(
            vp1=self.vanishing_point((0.0, 1.0, 0.0)),
            vp2=self.vanishing_point((1.0, 0.0, 0.0)),
            principal_point=self.principal_point,
            scale=self.height,
            image_size=self.image_size,
        )


@dataclass(frozen=True)
class RoadSpec:
    lane_count: int = 2
    lane_width: float = 3.5
    gate_y: float = 20.0
    y_near: float = 0.0
    y_far: float = 100.0
    x_start: Optional[float] = None

    @property
    def left_edge(self) -> float:
        return -self.lane_count * self.lane_width / 2.0 if self.x_start is None else self.x_start

    def lane_centre(self, lane: int) -> float:
        return self.left_edge + (lane + 0.5) * self.lane_width

    def gate(self) -> GateLine:
        x0 = self.left_edge
        lanes = []
        for i in range(self.lane_count):
            a, b = x0 + i * self.lane_width, x0 + (i + 1) * self.lane_width
            lanes.append(((a, self.y_near), (b, self.y_near), (b, self.y_far), (a, self.y_far)))
        return GateLine(
            p0=(x0, self.gate_y), p1=(x0 + self.lane_count * self.lane_width, self.gate_y), lanes=tuple(lanes)
        )


@dataclass(frozen=True)
class VehicleSpec:
    dims: Tuple[float, float, float]  # length, width, height (m)
    lane: int
    speed_kmh: float
    spawn_time: float
    class_id: int = 0


@dataclass(frozen=True)
class NoiseSpec:
    bbox_sigma: float = 0.0
    cc_sigma: float = 0.0
    dropout_prob: float = 0.0


@dataclass(frozen=True)
class SimScenario:
    camera: CameraSpec
    road: RoadSpec
    vehicles: Tuple[VehicleSpec, ...]
    fps: float = 50.0
    duration: float = 10.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    target_size: Tuple[int, int] = (960, 960)
    direction: str = APPROACHING

    def validate(self) -> None:
        bad = []
        if not self.fps > 0:
            bad.append("fps must be positive")
        if not self.duration >= 0:
            bad.append("duration must be non-negative")
        for i, v in enumerate(self.vehicles):
            if not v.speed_kmh > 0:
                bad.append(f"vehicle {i}: speed must be positive")
            if not all(d > 0 for d in v.dims):
                bad.append(f"vehicle {i}: dims must be positive")
            if not 0 <= v.lane < self.road.lane_count:
                bad.append(f"vehicle {i}: lane {v.lane} outside road")
        if not 0.0 <= self.noise.dropout_prob <= 1.0:
            bad.append("dropout_prob must lie in [0, 1]")
        if self.noise.bbox_sigma < 0 or self.noise.cc_sigma < 0:
            bad.append("noise sigmas must be non-negative")
        if not self.road.y_near < self.road.gate_y < self.road.y_far:
            bad.append("gate must lie strictly between y_near and y_far")
        if self.road.lane_count < 1 or not self.road.lane_width > 0:
            bad.append("road needs at least one lane of positive width")
        if self.camera.height <= 0 or self.camera.focal <= 0:
            bad.append("camera height and focal must be positive")
        if self.direction not in DIRECTIONS:
            bad.append(f"direction must be one of {DIRECTIONS}")
        if bad:
            raise InvalidScenario("; ".join(bad))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vehicles"] = [asdict(v) for v in self.vehicles]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimScenario":
        try:
            cam = d["camera"]
            camera = CameraSpec(
                height=float(cam["height"]),
                pitch=float(cam["pitch"]),
                yaw=float(cam["yaw"]),
                focal=float(cam["focal"]),
                image_size=tuple(cam.get("image_size", (1920, 1080))),
            )
            road = RoadSpec(**d.get("road", {}))
            vehicles = [
                VehicleSpec(
                    dims=tuple(v["dims"]),
                    lane=int(v["lane"]),
                    speed_kmh=float(v["speed_kmh"]),
                    spawn_time=float(v["spawn_time"]),
                    class_id=int(v.get("class_id", 0)),
                )
                for v in d.get("vehicles", [])
            ]
            fps = float(d.get("fps", 50.0))
            duration = float(d.get("duration", 10.0))
            seed = int(d.get("seed", 0))
            if "traffic" in d:
                t = d["traffic"]
                vehicles += random_traffic(
                    rate_per_min=float(t["rate_per_min"]),
                    duration=duration,
                    road=road,
                    seed=int(t.get("seed", seed)),
                    speed_range=tuple(t.get("speed_range", (50.0, 130.0))),
                )
            return cls(
                camera=camera,
                road=road,
                vehicles=tuple(vehicles),
                fps=fps,
                duration=duration,
                noise=NoiseSpec(**d.get("noise", {})),
                seed=seed,
                target_size=tuple(d.get("target_size", (960, 960))),
                direction=d.get("direction", APPROACHING),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidScenario(f"malformed scenario: {exc!r}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "SimScenario":
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise InvalidScenario(f"{path}: {exc}") from exc


def random_traffic(
    rate_per_min: float,
    duration: float,
    road: RoadSpec,
    seed: int = 0,
    speed_range: Tuple[float, float] = (50.0, 130.0),
    headway: float = 1.0,
) -> List[VehicleSpec]:
    """Poisson arrivals with uniform lanes and speeds.

    A vehicle never gets closer than ``headway`` seconds to the one ahead of it
    in its lane anywhere on the road, so there is no overtaking within a lane.
    """
    rng = np.random.default_rng(seed)
    out: List[VehicleSpec] = []
    last: Dict[int, Tuple[float, float]] = {}
    span = road.y_far - road.y_near
    t = 0.0
    if rate_per_min <= 0:
        return out
    while True:
        t += rng.exponential(60.0 / rate_per_min)
        if t >= duration:
            break
        lane = int(rng.integers(road.lane_count))
        v = float(rng.uniform(*speed_range))
        dims = (float(rng.uniform(3.8, 5.2)), float(rng.uniform(1.6, 2.0)), float(rng.uniform(1.3, 1.9)))
        spawn = t
        if lane in last:
            t_prev, v_prev = last[lane]
            # arrival-time gap at both road ends must exceed the headway
            end_gap = (spawn + span / (v * KMH_TO_MS)) - (t_prev + span / (v_prev * KMH_TO_MS))
            spawn = max(spawn, t_prev + headway, spawn + headway - end_gap)
        out.append(VehicleSpec(dims=dims, lane=lane, speed_kmh=v, spawn_time=spawn))
        last[lane] = (spawn, v)
    return sorted(out, key=lambda s: s.spawn_time)


def project_points(points: np.ndarray, camera: CameraSpec) -> np.ndarray:
    """Pinhole projection of (..., 3) world points to (..., 2) pixels."""
    pc = (np.asarray(points, dtype=float) - camera.centre) @ camera.rotation.T
    if np.any(pc[..., 2] <= MIN_DEPTH):
        raise BehindCamera("point at or behind the camera plane")
    uv = pc @ camera.K.T
    return uv[..., :2] / uv[..., 2:]


def project_cuboid(world_cuboid: np.ndarray, camera: CameraSpec) -> np.ndarray:
    """Project the 8 vertices of a world-space box; returns an (8, 2) array."""
    pts = np.asarray(world_cuboid, dtype=float).reshape(8, 3)
    return project_points(pts, camera)


# vertex order matches cuboid.VERTEX_NAMES: {front,rear} x {top,bottom} x {left,right}
_FRONT = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=float)
_TOP = np.array([1, 1, 0, 0, 1, 1, 0, 0], dtype=float)
_LEFT = np.array([1, 0, 1, 0, 1, 0, 1, 0], dtype=float)


def vehicle_cuboid(
    front_y: np.ndarray, x_centre: float, dims: Sequence[float], direction: str
) -> np.ndarray:
    """World vertices for an array of front-face positions; shape (F, 8, 3)."""
    length, width, height = dims
    front_y = np.atleast_1d(np.asarray(front_y, dtype=float))
    back = length if direction == APPROACHING else -length
    x = x_centre + np.where(_LEFT == 1, -width / 2, width / 2)
    y = front_y[:, None] + np.where(_FRONT == 1, 0.0, back)[None, :]
    z = _TOP * height
    return np.stack([np.broadcast_to(x, y.shape), y, np.broadcast_to(z, y.shape)], axis=-1)


@dataclass
class VehicleTruth:
    """Per-vehicle ground truth over the frames where it is visible."""

    vehicle_id: int
    frames: np.ndarray
    tracking_points: np.ndarray  # (F, 2) metres
    image_vertices: np.ndarray  # (F, 8, 2) pixels
    boxes: np.ndarray  # (F, 4) rectified pixels
    cc: np.ndarray  # (F,)


@dataclass
class SimOutput:
    scenario: SimScenario
    calibration: CameraCalibration
    rect: RectifiedSpace
    gate: GateLine
    ground_truth: List[GroundTruthVehicle]
    frames: List[FrameDetections]
    clean_frames: List[FrameDetections]
    owners: List[List[int]]  # vehicle id of each detection in ``frames``
    truth: Dict[int, VehicleTruth]

    def ground_truth_file(self) -> GroundTruth:
        return GroundTruth(vehicles=self.ground_truth, gate=self.gate)


def _front_start(scn: SimScenario) -> Tuple[float, float]:
    if scn.direction == APPROACHING:
        return scn.road.y_far, -1.0
    return scn.road.y_near, 1.0


def generate(scenario: SimScenario) -> SimOutput:
    """Render calibration, ground truth and detection streams for a scenario.

    Deterministic given ``scenario.seed``.  A vehicle is emitted in a frame only
    when all eight vertices project inside the image; its box is the exact
    rectified bound and ``c_c`` the exact position of the camera-facing top
    edge, before noise and dropout.
    """
    scenario.validate()
    cam = scenario.camera
    try:
        calib = cam.calibration()
        rect = rectification_homography(calib, scenario.target_size)
    except VSpeedError as exc:
        raise InvalidScenario(f"camera geometry unusable: {exc}") from exc
    road = scenario.road
    fps = scenario.fps
    n_frames = int(round(scenario.duration * fps))
    start, sign = _front_start(scenario)
    w, h = cam.image_size
    tw, th = rect.target_size

    truth: Dict[int, VehicleTruth] = {}
    gts: List[GroundTruthVehicle] = []
    for vid, spec in enumerate(scenario.vehicles):
        v = spec.speed_kmh * KMH_TO_MS
        xc = road.lane_centre(spec.lane)
        gts.append(
            GroundTruthVehicle(
                id=vid,
                lane=spec.lane,
                gate_time=spec.spawn_time + abs(road.gate_y - start) / v,
                speed_kmh=spec.speed_kmh,
            )
        )
        # frames from spawn until the whole body has left [y_near, y_far]
        exit_time = spec.spawn_time + (road.y_far - road.y_near + spec.dims[0]) / v
        f0 = max(0, math.ceil(spec.spawn_time * fps))
        f1 = min(n_frames - 1, math.floor(exit_time * fps))
        frames = np.arange(f0, f1 + 1)
        front = start + sign * v * (frames / fps - spec.spawn_time)
        verts = vehicle_cuboid(front, xc, spec.dims, scenario.direction)
        pc = (verts - cam.centre) @ cam.rotation.T
        in_front = np.all(pc[..., 2] > MIN_DEPTH, axis=1)
        frames, front, verts = frames[in_front], front[in_front], verts[in_front]
        img = project_points(verts, cam) if len(frames) else np.zeros((0, 8, 2))
        inside = np.all((img[..., 0] >= 0) & (img[..., 0] <= w) & (img[..., 1] >= 0) & (img[..., 1] <= h), axis=1)
        frames, front, img = frames[inside], front[inside], img[inside]
        if len(frames) == 0:
            truth[vid] = VehicleTruth(vid, frames, np.zeros((0, 2)), img, np.zeros((0, 4)), np.zeros(0))
            continue
        rv = rect.h_fwd.apply_many(img.reshape(-1, 2)).reshape(-1, 8, 2)
        boxes = np.concatenate([rv.min(axis=1), rv.max(axis=1)], axis=1)
        # camera-facing face has the smaller world y
        near = [0, 1] if scenario.direction == APPROACHING else [4, 5]
        y_near_edge = rv[:, near, 1].mean(axis=1)
        cc = np.array([
            cc_from_projection(RectBox(*b), y) for b, y in zip(boxes.tolist(), y_near_edge.tolist())
        ])
        ok = np.all((boxes[:, :2] >= 0) & (boxes[:, 2:] <= (tw, th)), axis=1)
        truth[vid] = VehicleTruth(
            vehicle_id=vid,
            frames=frames[ok],
            tracking_points=np.column_stack([np.full(ok.sum(), xc), front[ok]]),
            image_vertices=img[ok],
            boxes=boxes[ok],
            cc=cc[ok],
        )

    per_frame: List[List[Tuple[int, int]]] = [[] for _ in range(n_frames)]
    for vid, vt in truth.items():
        for k, fi in enumerate(vt.frames.tolist()):
            per_frame[fi].append((vid, k))

    rng = np.random.default_rng(scenario.seed)
    noise = scenario.noise
    frames_out, clean_out, owners = [], [], []
    for fi, items in enumerate(per_frame):
        t = fi / fps
        clean, noisy, own = [], [], []
        for vid, k in items:
            vt = truth[vid]
            cls = scenario.vehicles[vid].class_id
            box = vt.boxes[k]
            cc = float(vt.cc[k])
            clean.append(DetectionCc(fi, cls, 1.0, RectBox(*box.tolist()), cc))
            jitter = rng.normal(0.0, 1.0, size=4) * noise.bbox_sigma
            cc_jitter = rng.normal() * noise.cc_sigma
            drop = rng.random() < noise.dropout_prob
            if drop:
                continue
            nb = box + jitter
            x0, x1 = sorted((nb[0], nb[2]))
            y0, y1 = sorted((nb[1], nb[3]))
            if not (x0 < x1 and y0 < y1):
                continue
            noisy.append(
                DetectionCc(fi, cls, SIM_CONFIDENCE, RectBox(float(x0), float(y0), float(x1), float(y1)),
                            float(min(1.0, max(0.0, cc + cc_jitter))))
            )
            own.append(vid)
        frames_out.append(FrameDetections(fi, t, noisy))
        clean_out.append(FrameDetections(fi, t, clean))
        owners.append(own)

    return SimOutput(
        scenario=scenario,
        calibration=calib,
        rect=rect,
        gate=road.gate(),
        ground_truth=gts,
        frames=frames_out,
        clean_frames=clean_out,
        owners=owners,
        truth=truth,
    )


def write_outputs(out: SimOutput, directory: str | Path) -> Dict[str, Path]:
    """Write calibration, ground truth, detection streams and a pipeline config."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {
        "calibration": d / "calib.json",
        "ground_truth": d / "gt.json",
        "detections": d / "dets.jsonl",
        "detections_gt": d / "dets_gt.jsonl",
        "config": d / "config.json",
    }
    out.calibration.save(paths["calibration"])
    out.ground_truth_file().save(paths["ground_truth"])
    write_stream(out.frames, paths["detections"])
    write_stream(out.clean_frames, paths["detections_gt"])
    config = {
        "calibration": paths["calibration"].name,
        "detections": [paths["detections"].name],
        "target_size": list(out.rect.target_size),
        "fps": out.scenario.fps,
        "gate": paths["ground_truth"].name,
        "direction": out.scenario.direction,
    }
    with open(paths["config"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(config, fh, indent=1)
        fh.write("\n")
    return paths
