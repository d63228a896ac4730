import json
import math
import statistics
import sys

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from scenes import ROAD, single_vehicle
from vspeed.cuboid import DetectionCc, RectBox
from vspeed.errors import NoCrossing, TooShort, ValidationError
from vspeed.pipeline import PipelineConfig, run_sequential
from vspeed.simulator import generate
from vspeed.speed import (
    GateLine,
    SpeedMeasurement,
    estimate_speed,
    gate_crossing,
    read_measurements,
    write_measurements,
)
from vspeed.tracking import Track, TrackEntry

_DET = DetectionCc(0, 0, 0.9, RectBox(0, 0, 1, 1), 0.5)
GATE = GateLine(p0=(-10.0, 20.0), p1=(10.0, 20.0), lanes=(((-10, 0), (0, 0), (0, 50), (-10, 50)), ((0, 0), (10, 0), (10, 50), (0, 50))))


def _track(points, frames=None, tid=1):
    frames = frames if frames is not None else range(len(points))
    t = Track(tid)
    for f, p in zip(frames, points):
        t.append(TrackEntry(f, _DET, p))
    return t


def _from_steps(steps, start=(0.0, 0.0)):
    pts = [start]
    for s in steps:
        pts.append((pts[-1][0], pts[-1][1] + s))
    return pts


def test_constant_motion():
    m = estimate_speed(_track(_from_steps([0.5] * 10)), 50.0)
    assert m.speed_kmh == pytest.approx(90.0, rel=1e-12)
    assert m.n_samples == 10
    assert math.isnan(m.gate_time) and m.lane == -1


def test_outlier_is_ignored():
    m = estimate_speed(_track(_from_steps([0.5, 0.5, 0.5, 5.0])), 50.0)
    assert m.speed_kmh == pytest.approx(90.0, rel=1e-12)


def test_even_count_median_averages():
    m = estimate_speed(_track(_from_steps([0.4, 0.6])), 50.0)
    assert m.speed_kmh == pytest.approx(0.5 * 50 * 3.6, rel=1e-12)


def test_frame_gap_normalised():
    pts = _from_steps([0.5, 1.0, 0.5])
    m = estimate_speed(_track(pts, frames=[0, 1, 3, 4]), 50.0)
    assert m.speed_kmh == pytest.approx(90.0, rel=1e-12)


def test_too_short_and_bad_fps():
    with pytest.raises(TooShort):
        estimate_speed(_track([(0.0, 0.0)]), 50.0)
    with pytest.raises(ValidationError):
        estimate_speed(_track(_from_steps([1.0])), 0.0)
    t = Track(1)
    t.append(TrackEntry(0, _DET))
    t.append(TrackEntry(1, _DET))
    with pytest.raises(ValidationError):
        estimate_speed(t, 50.0)


def test_simulated_vehicle_at_72():
    out = generate(single_vehicle(72.0, lane=1))
    cfg = PipelineConfig(out.calibration, out.rect.target_size, out.scenario.fps, out.gate)
    (m,) = run_sequential(out.frames, cfg)
    assert m.speed_kmh == pytest.approx(72.0, abs=0.1)
    gt = out.ground_truth[0]
    assert abs(m.gate_time - gt.gate_time) <= 1.0 / out.scenario.fps
    assert m.lane == gt.lane == 1


# gate ------------------------------------------------------------------------

def test_gate_midpoint_interpolation():
    # samples at t = 1.0 s and 1.5 s (frames 50, 75 at 50 fps), 1 m either side
    t = _track([(-5.0, 19.0), (-5.0, 21.0)], frames=[50, 75])
    assert gate_crossing(t, GATE, 50.0) == (pytest.approx(1.25, rel=1e-12), 0)
    assert estimate_speed(t, 50.0, GATE).gate_time == pytest.approx(1.25)


def test_gate_lane_and_outside_lanes():
    assert gate_crossing(_track([(5.0, 30.0), (5.0, 10.0)]), GATE, 10.0)[1] == 1
    assert gate_crossing(_track([(50.0, 30.0), (50.0, 10.0)]), GATE, 10.0)[1] == -1


def test_no_crossing():
    with pytest.raises(NoCrossing):
        gate_crossing(_track(_from_steps([1.0] * 5, start=(0.0, 0.0))), GATE, 50.0)


def test_gate_validation():
    with pytest.raises(ValidationError):
        GateLine((0, 0), (0, 0))
    with pytest.raises(ValidationError):
        GateLine((0, 0), (1, 0), lanes=(((0, 0), (1, 0), (2, 0)),))
    with pytest.raises(ValidationError):
        GateLine.from_dict({"p0": [0, 0]})
    g = ROAD.gate()
    assert GateLine.from_dict(json.loads(json.dumps(g.to_dict()))) == g


def test_measurements_file_round_trip(tmp_path):
    ms = [SpeedMeasurement(1, 90.0, 1.25, 0, 10), SpeedMeasurement(2, 80.5, math.nan, -1, 3, video=2)]
    path = tmp_path / "m.json"
    write_measurements(ms, path)
    data = json.loads(path.read_text())
    assert set(data[0]) == {"track_id", "speed_kmh", "gate_time", "lane", "n_samples"}
    assert data[1]["gate_time"] is None
    back = read_measurements(path)
    assert back[0] == ms[0]
    assert back[1].video == 2 and math.isnan(back[1].gate_time)
    path.write_text("[{}]")
    with pytest.raises(ValidationError):
        read_measurements(path)


# properties --------------------------------------------------------------------

steps = st.lists(st.floats(0.0, 5.0), min_size=1, max_size=40)
drift = st.lists(st.floats(-0.2, 0.2), min_size=40, max_size=40)


def _wiggly(ys, xs):
    pts = [(0.0, 0.0)]
    for s, dx in zip(ys, xs):
        pts.append((pts[-1][0] + dx, pts[-1][1] + s))
    return pts


@settings(max_examples=200)
@given(steps, drift, st.integers(-20, 20))
def test_scale_equivariance(ys, xs, e):
    k = 2.0 ** e
    pts = _wiggly(ys, xs)
    a = estimate_speed(_track(pts), 25.0).speed_kmh
    b = estimate_speed(_track([(k * x, k * y) for x, y in pts]), 25.0).speed_kmh
    assert b == k * a


@settings(max_examples=200)
@given(steps, drift, st.floats(0.5, 3.0))
def test_scale_equivariance_any_factor(ys, xs, k):
    pts = _wiggly(ys, xs)
    a = estimate_speed(_track(pts), 25.0).speed_kmh
    b = estimate_speed(_track([(k * x, k * y) for x, y in pts]), 25.0).speed_kmh
    assert b == pytest.approx(k * a, rel=1e-12, abs=1e-300)


@settings(max_examples=200)
@given(steps, drift)
def test_time_reversal(ys, xs):
    pts = _wiggly(ys, xs)
    assert estimate_speed(_track(pts[::-1]), 30.0).speed_kmh == estimate_speed(_track(pts), 30.0).speed_kmh


@settings(max_examples=300)
@given(st.lists(st.floats(0.1, 2.0), min_size=3, max_size=30), st.data())
def test_median_robust_to_minority_corruption(clean, data):
    n_bad = data.draw(st.integers(0, (len(clean) - 1) // 2))
    idx = data.draw(st.lists(st.integers(0, len(clean) - 1), min_size=n_bad, max_size=n_bad, unique=True))
    assume(len(clean) - len(idx) > len(idx))
    corrupted = list(clean)
    for i in idx:
        corrupted[i] = data.draw(st.floats(0.0, 1e6))
    good = [c for i, c in enumerate(clean) if i not in idx]
    pts = _from_steps(corrupted)
    v = estimate_speed(_track(pts), 50.0).speed_kmh
    # differencing cumulative positions costs a few ulps of the largest coordinate
    slack = 4 * sys.float_info.epsilon * pts[-1][1] * 50 * 3.6
    lo, hi = min(good) * 50 * 3.6, max(good) * 50 * 3.6
    assert lo - slack <= v <= hi + slack
    assert v == pytest.approx(statistics.median(corrupted) * 50 * 3.6, rel=1e-9, abs=slack)
