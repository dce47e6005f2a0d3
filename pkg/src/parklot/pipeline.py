"""The per-frame engine loop: track, assign to slots, derive events.

One pipeline instance is owned by one thread; outputs are immutable values
that may be handed to other threads (log writer, event hub) freely.
"""
from __future__ import annotations

from typing import Callable, Iterable, Iterator, NamedTuple, Optional

from .ingest import DetectionFrame
from .occupancy import (
    Debouncer,
    EventKind,
    FrameSummary,
    OccupancyEvent,
    OccupancyFrame,
    diff_frames,
    summarize,
    assign_frame,
)
from .slots import SlotMap
from .tracking import Tracker, TrackerParams


class FrameResult(NamedTuple):
    frame: OccupancyFrame
    events: list[OccupancyEvent]
    summary: FrameSummary


def initial_events(frame: OccupancyFrame) -> list[OccupancyEvent]:
    """Events bringing an all-free baseline up to the first frame's state."""
    return [
        OccupancyEvent(frame.frame_index, sid, EventKind.OCCUPIED, entry.vehicle_id)
        for sid, entry in zip(frame.slot_ids, frame.entries)
        if entry.occupied
    ]


class Pipeline:
    def __init__(self, slot_map: SlotMap, params: Optional[TrackerParams] = None,
                 min_dwell_frames: int = 0):
        self.slot_map = slot_map
        self.tracker = Tracker(params)
        self.debouncer = Debouncer(min_dwell_frames)
        self.prev_frame: Optional[OccupancyFrame] = None

    def process(self, det_frame: DetectionFrame) -> FrameResult:
        tracked = self.tracker.step(det_frame.detections)
        vehicles = [(tv.track_id, tv.center) for tv in tracked]
        frame = assign_frame(vehicles, self.slot_map, det_frame.frame_index,
                             det_frame.timestamp_ms)
        frame = self.debouncer.step(frame)
        if self.prev_frame is None:
            events = initial_events(frame)
        else:
            events = diff_frames(self.prev_frame, frame)
        self.prev_frame = frame
        return FrameResult(frame, events, summarize(frame))


def run_pipeline(slot_map: SlotMap, det_frames: Iterable[DetectionFrame],
                 params: Optional[TrackerParams] = None,
                 min_dwell_frames: int = 0,
                 on_frame: Optional[Callable[[FrameResult], None]] = None
                 ) -> Iterator[FrameResult]:
    """Drive the pipeline over a detection-frame stream."""
    pipeline = Pipeline(slot_map, params, min_dwell_frames)
    for det_frame in det_frames:
        result = pipeline.process(det_frame)
        if on_frame is not None:
            on_frame(result)
        yield result
