"""Vehicle speed estimation from rectified 3D-box detections."""

from .cuboid import Cuboid3D, DetectionCc, RectBox, cc_from_projection, reconstruct_cuboid, tracking_point
from .detections import FrameDetections, iou, nms, read_stream, write_stream
from .evaluation import GroundTruthVehicle, det_report, match_measurements, speed_report
from .geometry import (
    CameraCalibration,
    Homography,
    RectifiedSpace,
    apply_homography,
    focal_from_vps,
    rectification_homography,
    road_plane_mapping,
    third_vanishing_point,
)
from .pipeline import PipelineConfig, bench_density, run
from .speed import GateLine, SpeedMeasurement, estimate_speed, gate_crossing
from .tracking import IOUTracker, Track, TrackerParams

__version__ = "0.1.0"
