"""Detector-agnostic parking analytics engine.

Turns per-frame vehicle detections into tracked identities, per-slot
occupancy, an append-only occupancy log, and occupancy analytics.
"""

from .geometry import (
    BoundingBox,
    InvalidPolygonError,
    Point,
    Polygon,
    bbox_center,
    iou,
    point_in_polygon,
    ray_intersects_segment,
    validate_polygon,
)
from .slots import Slot, SlotMap, SlotMapError, load_slot_map, save_slot_map
from .tracking import Detection, Tracker, TrackerParams, TrackStatus
from .occupancy import (
    FrameSummary,
    OccupancyEvent,
    OccupancyFrame,
    assign_frame,
    diff_frames,
    summarize,
)
from .analytics import (
    LogHeader,
    OccupancyLog,
    read_log,
    slot_durations,
    slot_stats,
    slot_vehicle_counts,
    occupancy_timeseries,
)
from .ingest import DetectionFrame, Scenario, VehicleScript, generate_scenario, parse_stream
from .pipeline import Pipeline, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "Detection",
    "DetectionFrame",
    "FrameSummary",
    "InvalidPolygonError",
    "LogHeader",
    "OccupancyEvent",
    "OccupancyFrame",
    "OccupancyLog",
    "Pipeline",
    "Point",
    "Polygon",
    "Scenario",
    "Slot",
    "SlotMap",
    "SlotMapError",
    "TrackStatus",
    "Tracker",
    "TrackerParams",
    "VehicleScript",
    "assign_frame",
    "bbox_center",
    "diff_frames",
    "generate_scenario",
    "iou",
    "load_slot_map",
    "occupancy_timeseries",
    "parse_stream",
    "point_in_polygon",
    "ray_intersects_segment",
    "read_log",
    "run_pipeline",
    "save_slot_map",
    "slot_durations",
    "slot_stats",
    "slot_vehicle_counts",
    "summarize",
    "validate_polygon",
]
