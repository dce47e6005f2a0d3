"""Operator entry points: run the pipeline, analyze logs, validate slot
maps, generate synthetic scenarios, and serve the live event stream.

Exit codes: 0 success, 1 usage/config error, 2 data error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import analytics, ingest, serve as serve_mod
from .analytics import (
    LogFormatError,
    LogHeader,
    LogOrderingError,
    LogWriter,
    UnsupportedFormatError,
    occupancy_timeseries,
    overstays,
    read_log,
    slot_durations,
    slot_stats,
    slot_vehicle_counts,
)
from .ingest import ScenarioError, StreamFormatError, parse_stream
from .occupancy import DuplicateVehicleIdError, SlotCountMismatchError
from .pipeline import run_pipeline
from .slots import (
    SlotMap,
    SlotMapError,
    load_slot_map,
    save_slot_map,
    slot_map_digest,
    slot_overlap_report,
)
from .tracking import TrackerParams

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

DATA_ERRORS = (
    StreamFormatError,
    SlotMapError,
    LogFormatError,
    LogOrderingError,
    ScenarioError,
    DuplicateVehicleIdError,
    SlotCountMismatchError,
)


class UsageError(Exception):
    pass


@dataclass
class OccupancyConfig:
    min_dwell_frames: int = 0


@dataclass
class ServeConfig:
    enabled: bool = False
    host: str = "127.0.0.1"
    port: int = 8787


@dataclass
class EngineConfig:
    slot_map: str = ""
    log_path: str = "occupancy.ndjson"
    fps: float = 30.0
    export_formats: tuple[str, ...] = ("csv", "json")
    tracker: TrackerParams = field(default_factory=TrackerParams)
    occupancy: OccupancyConfig = field(default_factory=OccupancyConfig)
    serve: ServeConfig = field(default_factory=ServeConfig)


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {value!r}")


# (dotted name, type) pairs; every config field is overridable by a flag of
# the same dotted name.
_OVERRIDES: list[tuple[str, object]] = [
    ("slot_map", str),
    ("log_path", str),
    ("fps", float),
    ("tracker.iou_min", float),
    ("tracker.lambda_weight", float),
    ("tracker.mahalanobis_gate", float),
    ("tracker.max_age", int),
    ("tracker.n_init", int),
    ("tracker.gallery_capacity", int),
    ("tracker.iou_gating", _parse_bool),
    ("tracker.class_consistent_matching", _parse_bool),
    ("occupancy.min_dwell_frames", int),
    ("serve.enabled", _parse_bool),
    ("serve.host", str),
    ("serve.port", int),
]


def load_config(path: str) -> EngineConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    if not isinstance(doc, dict):
        raise UsageError(f"config {path}: root must be a JSON object")
    return config_from_dict(doc, where=path)


def config_from_dict(doc: dict, where: str = "config") -> EngineConfig:
    try:
        tracker = TrackerParams(**doc.get("tracker", {}))
        occupancy = OccupancyConfig(**doc.get("occupancy", {}))
        serve_cfg = ServeConfig(**doc.get("serve", {}))
        formats = doc.get("export_formats", ["csv", "json"])
        return EngineConfig(
            slot_map=doc.get("slot_map", ""),
            log_path=doc.get("log_path", "occupancy.ndjson"),
            fps=float(doc.get("fps", 30.0)),
            export_formats=tuple(formats),
            tracker=tracker,
            occupancy=occupancy,
            serve=serve_cfg,
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{where}: {exc}")


def apply_overrides(config: EngineConfig, args: argparse.Namespace) -> EngineConfig:
    for dotted, _ in _OVERRIDES:
        value = getattr(args, dotted.replace(".", "__"), None)
        if value is None:
            continue
        target = config
        parts = dotted.split(".")
        for part in parts[:-1]:
            target = getattr(target, part)
        try:
            setattr(target, parts[-1], value)
        except ValueError as exc:
            raise UsageError(str(exc))
    # Re-validate ranges after overrides.
    try:
        TrackerParams(**dataclasses.asdict(config.tracker))
    except ValueError as exc:
        raise UsageError(str(exc))
    return config


def _load_slot_map_file(path: str) -> SlotMap:
    if not path:
        raise UsageError("no slot map configured (set slot_map in the config)")
    try:
        with open(path, "rb") as fh:
            return load_slot_map(fh)
    except FileNotFoundError:
        raise UsageError(f"slot map file not found: {path}")


def _open_input(spec: Optional[str]):
    if spec is None or spec == "-":
        return sys.stdin
    try:
        return open(spec, "r", encoding="utf-8")
    except FileNotFoundError:
        raise UsageError(f"input file not found: {spec}")


def cmd_run(args: argparse.Namespace) -> int:
    config = apply_overrides(load_config(args.config), args)
    slot_map = _load_slot_map_file(config.slot_map)

    hub = None
    server = None
    if config.serve.enabled:
        hub = serve_mod.EventHub()
        try:
            server = serve_mod.start_server(config.serve.host, config.serve.port,
                                            slot_map, hub, config.log_path)
        except OSError as exc:
            raise UsageError(
                f"cannot bind {config.serve.host}:{config.serve.port}: {exc}"
            )
        log.info("serving on http://%s:%d", config.serve.host, config.serve.port)

    source = _open_input(args.input)
    writer: Optional[LogWriter] = None
    digest = slot_map_digest(slot_map)
    n_frames = 0
    last_summary = None
    try:
        frames = parse_stream(source)
        for result in run_pipeline(slot_map, frames, config.tracker,
                                   config.occupancy.min_dwell_frames):
            if writer is None:
                writer = LogWriter(config.log_path, LogHeader(
                    fps=config.fps,
                    slot_count=len(slot_map),
                    slot_map_sha256=digest,
                    start_timestamp_ms=result.frame.timestamp_ms,
                    slot_ids=slot_map.slot_ids,
                ))
            writer.append(result.frame)
            if hub is not None:
                hub.publish(result)
            n_frames += 1
            last_summary = result.summary
    finally:
        if writer is None:
            # Empty stream still produces a valid, header-only log.
            writer = LogWriter(config.log_path, LogHeader(
                fps=config.fps,
                slot_count=len(slot_map),
                slot_map_sha256=digest,
                start_timestamp_ms=None,
                slot_ids=slot_map.slot_ids,
            ))
        writer.close()
        if source is not sys.stdin:
            source.close()
        if server is not None:
            server.shutdown()

    if last_summary is None:
        print(f"processed 0 frames; log written to {config.log_path}")
    else:
        print(
            f"processed {n_frames} frames; final occupancy "
            f"{last_summary.occupied_count}/{last_summary.total_slots} "
            f"({last_summary.free_count} free); log written to {config.log_path}"
        )
    return EXIT_OK


_FORMAT_ALIASES = {"csv": "csv", "json": "json", "svg": "svg-heatmap",
                   "svg-heatmap": "svg-heatmap"}


def cmd_analyze(args: argparse.Namespace) -> int:
    formats = []
    for name in args.formats.split(","):
        name = name.strip()
        if name not in _FORMAT_ALIASES:
            raise UsageError(f"unsupported format {name!r}")
        formats.append(_FORMAT_ALIASES[name])

    slot_map = None
    if args.slots:
        slot_map = _load_slot_map_file(args.slots)
    if "svg-heatmap" in formats and slot_map is None:
        raise UsageError("svg output needs slot geometry: pass --slots MAP")

    occ_log = read_log(args.log)
    if slot_map is not None and slot_map_digest(slot_map) != occ_log.header.slot_map_sha256:
        log.warning("slot map digest does not match the log header; "
                    "heatmaps may not correspond to this recording")

    os.makedirs(args.out, exist_ok=True)
    series = occupancy_timeseries(occ_log)
    durations = slot_durations(occ_log)
    counts = slot_vehicle_counts(occ_log)
    stats = slot_stats(occ_log)

    written = []

    def emit(name: str, result, fmt: str, **kwargs) -> None:
        ext = "svg" if fmt == "svg-heatmap" else fmt
        path = os.path.join(args.out, f"{name}.{ext}")
        analytics.export(result, fmt, path, **kwargs)
        written.append(path)

    for fmt in formats:
        if fmt == "svg-heatmap":
            emit("slot_durations", durations, fmt, slot_map=slot_map,
                 value_name="occupied_seconds", seconds=True)
            emit("slot_vehicle_counts", counts, fmt, slot_map=slot_map,
                 value_name="distinct_vehicles")
        else:
            emit("occupancy_timeseries", series, fmt)
            emit("slot_durations", durations, fmt,
                 value_name="occupied_seconds", seconds=True)
            emit("slot_vehicle_counts", counts, fmt, value_name="distinct_vehicles")

    stats_path = os.path.join(args.out, "slot_stats.json")
    stats_doc = [
        {
            "slot_id": s.slot_id,
            "occupied_seconds": round(s.occupied_seconds, 3),
            "distinct_vehicles": s.distinct_vehicles,
            "visits": s.visits,
            "intervals": [
                {"start_frame": iv.start_frame, "end_frame": iv.end_frame,
                 "vehicle_id": iv.vehicle_id}
                for iv in s.intervals
            ],
        }
        for _, s in sorted(stats.items())
    ]
    with open(stats_path, "w", encoding="utf-8") as fh:
        json.dump(stats_doc, fh, indent=2)
        fh.write("\n")
    written.append(stats_path)

    if args.overstay is not None:
        over = overstays(stats, args.overstay, occ_log.header.fps)
        over_path = os.path.join(args.out, "overstays.json")
        with open(over_path, "w", encoding="utf-8") as fh:
            json.dump(
                [
                    {"slot_id": o.slot_id, "vehicle_id": o.vehicle_id,
                     "duration_seconds": round(o.duration_seconds, 3)}
                    for o in over
                ],
                fh, indent=2,
            )
            fh.write("\n")
        written.append(over_path)

    for path in written:
        print(path)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    config = apply_overrides(load_config(args.config), args)
    slot_map = _load_slot_map_file(config.slot_map)
    hub = serve_mod.EventHub()
    try:
        server = serve_mod.start_server(config.serve.host, config.serve.port,
                                        slot_map, hub,
                                        args.replay or config.log_path)
    except OSError as exc:
        raise UsageError(f"cannot bind {config.serve.host}:{config.serve.port}: {exc}")
    print(f"serving on http://{config.serve.host}:{config.serve.port}")

    if args.replay:
        occ_log = read_log(args.replay)
        serve_mod.replay_log(occ_log, hub, speed=args.speed)
        print(f"replayed {len(occ_log)} frames")
        if not args.keep_alive:
            server.shutdown()
            return EXIT_OK
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        server.shutdown()
    return EXIT_OK


def cmd_validate_slots(args: argparse.Namespace) -> int:
    try:
        with open(args.map, "rb") as fh:
            slot_map = load_slot_map(fh)
    except FileNotFoundError:
        raise UsageError(f"slot map file not found: {args.map}")
    except SlotMapError as exc:
        for violation in exc.errors:
            print(violation, file=sys.stderr)
        return EXIT_DATA
    for a, b, _ in slot_overlap_report(slot_map):
        print(f"warning: slots {a} and {b} overlap", file=sys.stderr)
    print(f"OK, {len(slot_map)} slots")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    try:
        with open(args.spec, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"scenario spec not found: {args.spec}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.spec}: invalid JSON at line {exc.lineno}: {exc.msg}")

    if "builder" in doc:
        try:
            scenario = ingest.build_parking_scenario(**doc["builder"])
        except TypeError as exc:
            raise ScenarioError(f"bad builder spec: {exc}")
    else:
        scenario = ingest.scenario_from_dict(doc)

    generated = ingest.generate_scenario(scenario, n_init=args.gt_n_init)
    os.makedirs(args.out, exist_ok=True)

    stream_path = os.path.join(args.out, "detections.ndjson")
    with open(stream_path, "w", encoding="utf-8") as fh:
        for line in generated.stream_lines:
            fh.write(line + "\n")

    gt_path = os.path.join(args.out, "ground_truth.ndjson")
    analytics.write_log(gt_path, generated.ground_truth.header,
                        generated.ground_truth.frames)

    map_path = os.path.join(args.out, "slot_map.json")
    with open(map_path, "wb") as fh:
        fh.write(save_slot_map(scenario.slot_map))

    ids_path = os.path.join(args.out, "id_map.json")
    with open(ids_path, "w", encoding="utf-8") as fh:
        json.dump(generated.id_map, fh, indent=2, sort_keys=True)
        fh.write("\n")

    for path in (stream_path, gt_path, map_path, ids_path):
        print(path)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    for dotted, typ in _OVERRIDES:
        parser.add_argument(f"--{dotted}", dest=dotted.replace(".", "__"),
                            type=typ, default=None, metavar="V",
                            help=f"override config field {dotted}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="parklot",
                     description="Parking occupancy analytics engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the tracking/occupancy pipeline")
    p_run.add_argument("--config", required=True, help="engine config JSON")
    p_run.add_argument("--input", default="-",
                       help="detection stream file, or - for stdin")
    _add_override_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_an = sub.add_parser("analyze", help="compute analytics from a log")
    p_an.add_argument("--log", required=True)
    p_an.add_argument("--out", required=True, help="output directory")
    p_an.add_argument("--formats", default="csv,json",
                      help="comma-separated: csv,json,svg")
    p_an.add_argument("--slots", default=None,
                      help="slot map JSON (required for svg heatmaps)")
    p_an.add_argument("--overstay", type=float, default=None,
                      help="report occupations longer than this many seconds")
    p_an.set_defaults(func=cmd_analyze)

    p_sv = sub.add_parser("serve", help="serve slot map, analytics and event stream")
    p_sv.add_argument("--config", required=True)
    p_sv.add_argument("--replay", default=None, help="replay a recorded log")
    p_sv.add_argument("--speed", type=float, default=1.0,
                      help="replay pace multiplier; 0 = no pacing")
    p_sv.add_argument("--keep-alive", action="store_true",
                      help="keep serving after the replay finishes")
    _add_override_flags(p_sv)
    p_sv.set_defaults(func=cmd_serve)

    p_vs = sub.add_parser("validate-slots", help="validate a slot map file")
    p_vs.add_argument("map")
    p_vs.set_defaults(func=cmd_validate_slots)

    p_sy = sub.add_parser("synth", help="generate a synthetic scenario")
    p_sy.add_argument("--spec", required=True, help="scenario spec JSON")
    p_sy.add_argument("--out", required=True, help="output directory")
    p_sy.add_argument("--gt-n-init", type=int, default=1,
                      help="shift ground-truth expectations by the tracker's "
                           "confirmation latency")
    p_sy.set_defaults(func=cmd_synth)

    return parser


def _configure_logging() -> None:
    level_name = os.environ.get("PARKLOT_LOG_LEVEL", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(
        level=levels.get(level_name, logging.WARNING),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnsupportedFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
