import json
import resource
import statistics
import threading

import pytest

from scenes import fixed_speeds, traffic
from vspeed import pipeline as pl
from vspeed.detections import FrameDetections, write_stream
from vspeed.errors import ParseError, StageError, ValidationError
from vspeed.evaluation import match_measurements
from vspeed.pipeline import (
    STAGES,
    BenchReport,
    PipelineConfig,
    VideoBench,
    aggregate_fps,
    bench_density,
    run,
    run_sequential,
    run_stream,
)
from vspeed.simulator import NoiseSpec, generate, write_outputs
from vspeed.speed import write_measurements


def _config(out, **kw):
    return PipelineConfig(out.calibration, out.rect.target_size, out.scenario.fps, out.gate, **kw)


class MainThreadClock:
    """Advances one tick per call from the thread that created it; other threads read it."""

    def __init__(self, tick=0.001):
        self.tick = tick
        self.now = 0.0
        self.owner = threading.get_ident()

    def __call__(self):
        if threading.get_ident() == self.owner:
            self.now += self.tick
        return self.now


@pytest.fixture(scope="module")
def noisy_out():
    return generate(traffic(24.38, 60.0, seed=1, noise=NoiseSpec(1.0, 0.02, 0.05)))


def test_noiseless_speeds_recovered():
    out = generate(fixed_speeds([50, 72, 90, 130]))
    ms, rep = run(_config(out, workers=4), sources=[out.frames])
    m = match_measurements(ms, out.ground_truth)
    assert len(m.pairs) == 4 and not m.false_positives
    for p, g in m.pairs:
        assert p.speed_kmh == pytest.approx(g.speed_kmh, abs=0.1)
    assert rep.videos[0].frames == len(out.frames)


@pytest.mark.parametrize("workers", [1, 2, 8])
def test_parallel_equals_sequential(noisy_out, workers, tmp_path):
    ref = run_sequential(noisy_out.frames, _config(noisy_out))
    ms, _ = run(_config(noisy_out, workers=workers, queue_capacity=4), sources=[noisy_out.frames])
    assert len(ref) > 10
    write_measurements(ref, tmp_path / "a.json")
    write_measurements(ms, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_files_and_multi_video(noisy_out, tmp_path):
    paths = write_outputs(noisy_out, tmp_path)
    cfg = PipelineConfig.load(paths["config"])
    assert cfg.detections == [paths["detections"]]
    cfg.detections = [paths["detections"], paths["detections"]]
    ms, rep = run(cfg)
    assert {m.video for m in ms} == {0, 1}
    assert [m.track_id for m in ms if m.video == 0] == [m.track_id for m in ms if m.video == 1]
    assert [v.name for v in rep.videos] == ["dets.jsonl", "dets.jsonl"]


def test_mean_of_means():
    a = VideoBench("a", frames=100, elapsed_s=1.0)
    b = VideoBench("b", frames=400, elapsed_s=2.0)
    assert (a.mean_fps, b.mean_fps) == (100.0, 200.0)
    assert aggregate_fps([a, b]) == 150.0
    # pooled frames / time would give 166.7; the aggregation must not do that
    assert BenchReport("x", [a, b]).overall_fps == 150.0


def test_empty_video_does_not_divide_by_zero():
    e = VideoBench("e", frames=0, elapsed_s=0.0)
    assert e.empty and e.mean_fps == 0.0
    assert aggregate_fps([e]) == 0.0
    assert aggregate_fps([e, VideoBench("a", 10, 0.1)]) == pytest.approx(100.0)
    out = generate(fixed_speeds([90]))
    ms, rep = run(_config(out), sources=[[]])
    assert ms == [] and rep.empty and rep.overall_fps == 0.0
    assert "no frames" in rep.format()
    assert rep.stage_ms == {s: 0.0 for s in STAGES}


def test_injected_clock_gives_exact_mean_of_means():
    out = generate(fixed_speeds([80, 100]))
    short = out.frames[:100]
    reports = []
    for _ in range(2):
        clock = MainThreadClock(tick=0.5)
        _, rep = run(_config(out, workers=3), sources=[out.frames, short], clock=clock)
        reports.append(rep)
    a, b = reports
    assert [v.elapsed_s for v in a.videos] == [v.elapsed_s for v in b.videos]
    fps = [v.frames / v.elapsed_s for v in a.videos]
    assert a.overall_fps == statistics.fmean(fps)
    assert a.overall_fps == b.overall_fps
    # the main thread reads the clock once per run boundary plus three times
    # per frame and twice for the final flush
    for v in a.videos:
        assert v.elapsed_s == pytest.approx(0.5 * (3 * v.frames + 3))


def test_bounded_queue():
    out = generate(fixed_speeds([90]))
    frames = out.frames
    n_total = 100_000

    def stream():
        for i in range(n_total):
            f = frames[i % len(frames)]
            yield FrameDetections(i, i / 50, f.detections)

    rss0 = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    _, vb = run_stream(stream(), _config(out, workers=4, queue_capacity=16))
    grown_mb = (resource.getrusage(resource.RUSAGE_SELF).ru_maxrss - rss0) / 1024
    assert vb.frames == n_total
    assert 1 <= vb.max_in_flight <= 16
    assert grown_mb < 64


def test_stage_error_carries_frame(monkeypatch):
    out = generate(fixed_speeds([90]))
    real = pl.reconstruct_cuboid
    target = [f.frame_index for f in out.frames if f.detections][5]

    def flaky(det, *a, **kw):
        if det.frame_index == target:
            raise RuntimeError("boom")
        return real(det, *a, **kw)

    monkeypatch.setattr(pl, "reconstruct_cuboid", flaky)
    for workers in (1, 4):
        with pytest.raises(StageError) as info:
            run(_config(out, workers=workers), sources=[out.frames])
        assert info.value.frame_index == target
        assert isinstance(info.value.cause, RuntimeError)


def test_parse_error_propagates(tmp_path):
    out = generate(fixed_speeds([90]))
    path = tmp_path / "d.jsonl"
    write_stream(out.frames[:20], path)
    with open(path, "a") as fh:
        fh.write("{oops\n")
    cfg = _config(out, detections=[path], workers=2)
    with pytest.raises(ParseError) as info:
        run(cfg)
    assert info.value.line == 21


def test_inference_delay_costs_time():
    out = generate(fixed_speeds([90]))
    _, rep = run(_config(out, inference_delay=0.002), sources=[out.frames[:50]])
    assert rep.videos[0].elapsed_s >= 50 * 0.002
    assert rep.stage_ms["detect"] >= 2.0


def test_config_validation(tmp_path):
    out = generate(fixed_speeds([90]))
    for kw in ({"workers": 0}, {"queue_capacity": 0}, {"inference_delay": -1.0}, {"direction": "up"},
               {"detections": [tmp_path / "missing.jsonl"]}):
        with pytest.raises(ValidationError):
            _config(out, **kw)
    paths = write_outputs(out, tmp_path)
    data = json.loads(paths["config"].read_text())
    for broken in ({**data, "calibration": "nope.json"}, {k: v for k, v in data.items() if k != "fps"}):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(broken))
        with pytest.raises(ValidationError):
            PipelineConfig.load(p)
    inline = {**data, "gate": out.gate.to_dict(), "nms": {"iou_threshold": 0.5}, "tracker": {"t_min": 3}, "workers": 2}
    p = tmp_path / "inline.json"
    p.write_text(json.dumps(inline))
    cfg = PipelineConfig.load(p)
    assert cfg.gate == out.gate and cfg.nms_iou == 0.5 and cfg.tracker.t_min == 3 and cfg.workers == 2


def test_density_reports():
    low = traffic(7.0, 60.0, seed=1)
    high = traffic(33.0, 60.0, seed=1)
    out = generate(low)
    rep = bench_density(_config(out, workers=2), low, high)
    assert rep.low.label == "low density" and rep.high.label == "high density"
    for r in (rep.low, rep.high):
        assert r.overall_fps > 0
        assert set(r.stage_ms) == set(STAGES)
    assert rep.ratio == rep.high.overall_fps / rep.low.overall_fps
    text = rep.format()
    assert "low density" in text and "high density" in text and "ratio" in text
    same = bench_density(_config(out), low, low)
    assert 0.2 < same.ratio < 5.0
