"""Command line entry point: ``vspeed {simulate,run,eval,det-eval,bench}``.

Exit codes: 0 success, 2 invalid input, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .detections import read_stream
from .errors import ValidationError, VSpeedError
from .evaluation import (
    DEFAULT_TIME_WINDOW,
    GroundTruth,
    det_report,
    format_det_table,
    format_speed_table,
    match_measurements,
    speed_report,
)
from .pipeline import PipelineConfig, bench_density, run
from .simulator import SimScenario, generate, write_outputs
from .speed import read_measurements, write_measurements

log = logging.getLogger("vspeed")


def _emit(payload: dict, table: str, json_out: Optional[Path]) -> None:
    if json_out is not None:
        with open(json_out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
    print(json.dumps(payload, indent=1))
    print()
    print(table)


def cmd_simulate(args) -> int:
    scn = SimScenario.load(args.scenario)
    out = generate(scn)
    paths = write_outputs(out, args.output)
    n_dets = sum(len(f.detections) for f in out.frames)
    print(f"{len(out.frames)} frames, {len(out.ground_truth)} vehicles, {n_dets} detections")
    for k, p in paths.items():
        print(f"  {k}: {p}")
    return 0


def cmd_run(args) -> int:
    overrides = {}
    if args.calib:
        overrides["calibration"] = args.calib
    if args.detections:
        overrides["detections"] = args.detections
    config = PipelineConfig.load(args.config, **overrides)
    if args.workers:
        config.workers = args.workers
    if not config.detections:
        raise ValidationError("no detection source given")
    measurements, bench = run(config, label=Path(args.config).stem)
    write_measurements(measurements, args.output)
    print(f"{len(measurements)} measurements written to {args.output}")
    if args.bench:
        print(json.dumps(bench.to_dict(), indent=1))
        print(bench.format())
    return 0


def cmd_eval(args) -> int:
    preds = read_measurements(args.pred)
    gt = GroundTruth.load(args.gt)
    match = match_measurements(preds, gt.vehicles, args.window)
    rep = speed_report(match)
    _emit(rep.to_dict(), format_speed_table({Path(args.pred).stem: rep}), args.json)
    return 0


def cmd_det_eval(args) -> int:
    rep = det_report(read_stream(args.pred), read_stream(args.gt))
    _emit(rep.to_dict(), format_det_table({Path(args.pred).stem: rep}), args.json)
    return 0


def cmd_bench(args) -> int:
    config = PipelineConfig.load(args.config)
    if args.workers:
        config.workers = args.workers
    rep = bench_density(config, SimScenario.load(args.low), SimScenario.load(args.high))
    _emit(rep.to_dict(), rep.format(), args.json)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vspeed", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic scene")
    s.add_argument("scenario", type=Path)
    s.add_argument("-o", "--output", type=Path, required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("run", help="measure speeds from a detection stream")
    s.add_argument("-c", "--config", type=Path, required=True)
    s.add_argument("-d", "--detections", type=Path, action="append", help="detection stream (repeatable)")
    s.add_argument("--calib", type=Path)
    s.add_argument("-o", "--output", type=Path, required=True)
    s.add_argument("--workers", type=int)
    s.add_argument("--bench", action="store_true", help="print throughput report")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("eval", help="speed accuracy against ground truth")
    s.add_argument("--pred", type=Path, required=True)
    s.add_argument("--gt", type=Path, required=True)
    s.add_argument("--window", type=float, default=DEFAULT_TIME_WINDOW)
    s.add_argument("--json", type=Path, help="also write the report here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("det-eval", help="mAP / mAR / c_c error of a detection stream")
    s.add_argument("--pred", type=Path, required=True)
    s.add_argument("--gt", type=Path, required=True)
    s.add_argument("--json", type=Path)
    s.set_defaults(func=cmd_det_eval)

    s = sub.add_parser("bench", help="low vs high traffic density throughput")
    s.add_argument("-c", "--config", type=Path, required=True)
    s.add_argument("--low", type=Path, required=True)
    s.add_argument("--high", type=Path, required=True)
    s.add_argument("--workers", type=int)
    s.add_argument("--json", type=Path)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VSpeedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
