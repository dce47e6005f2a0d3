"""Per-frame vehicle-to-slot assignment, occupancy state, and change events.

Assignment scans vehicles in ascending vehicle_id order and slots in
ascending slot_id order; a vehicle takes the first slot containing its
center and stops scanning. Deterministic by construction: the same vehicle
list and slot map always produce an identical frame.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .geometry import Point
from .slots import SlotMap

log = logging.getLogger(__name__)


class DuplicateVehicleIdError(ValueError):
    pass


class SlotCountMismatchError(ValueError):
    pass


class SlotOccupancy(NamedTuple):
    occupied: bool
    vehicle_id: int  # 0 when the slot is free


class EventKind(Enum):
    OCCUPIED = "occupied"
    FREED = "freed"
    VEHICLE_CHANGED = "vehicle_changed"


@dataclass(frozen=True)
class OccupancyEvent:
    frame_index: int
    slot_id: int
    kind: EventKind
    vehicle_id: int  # new occupant for OCCUPIED/VEHICLE_CHANGED, previous for FREED


class FrameSummary(NamedTuple):
    frame_index: int
    occupied_count: int
    free_count: int
    total_slots: int


@dataclass(frozen=True)
class OccupancyFrame:
    """One frame's occupancy array: per slot (occupied, vehicle_id), in
    ascending slot_id order, plus vehicles whose center fell in no slot."""

    frame_index: int
    slot_ids: tuple[int, ...]
    entries: tuple[SlotOccupancy, ...]
    unassigned_vehicles: tuple[int, ...] = ()
    timestamp_ms: Optional[int] = None

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise ValueError(f"negative frame_index: {self.frame_index}")
        if len(self.slot_ids) != len(self.entries):
            raise ValueError("slot_ids and entries length mismatch")
        entries = tuple(SlotOccupancy(bool(e[0]), int(e[1])) for e in self.entries)
        object.__setattr__(self, "entries", entries)
        for slot_id, entry in zip(self.slot_ids, entries):
            if not entry.occupied and entry.vehicle_id != 0:
                raise ValueError(f"slot {slot_id}: free slot must carry vehicle_id 0")
            if entry.occupied and entry.vehicle_id < 1:
                raise ValueError(f"slot {slot_id}: occupied slot needs vehicle_id >= 1")


def assign_frame(vehicles: Sequence[tuple[int, Point]], slot_map: SlotMap,
                 frame_index: int, timestamp_ms: Optional[int] = None) -> OccupancyFrame:
    """Assign each vehicle center to the first slot polygon containing it.

    Vehicles are processed in ascending vehicle_id order; a slot keeps its
    first claimant and later claimants are logged as conflicts and left
    unassigned. Duplicate vehicle ids reject the whole frame.
    """
    ids = [int(v) for v, _ in vehicles]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise DuplicateVehicleIdError(
            f"frame {frame_index}: duplicate vehicle ids {dupes}"
        )

    n_slots = len(slot_map)
    entries = [SlotOccupancy(False, 0)] * n_slots
    unassigned: list[int] = []

    if vehicles and n_slots:
        order = sorted(range(len(vehicles)), key=lambda k: ids[k])
        px = np.array([float(vehicles[k][1][0]) for k in order])
        py = np.array([float(vehicles[k][1][1]) for k in order])
        # Full containment matrix, then first-containing-slot per vehicle:
        # equivalent to the per-vehicle early-stop scan, but vectorized.
        contains = slot_map.polygon_set.contains_points(px, py)
        first_slot = np.where(contains.any(axis=0), contains.argmax(axis=0), -1)
        for pos, k in enumerate(order):
            vid = ids[k]
            slot_pos = int(first_slot[pos])
            if slot_pos < 0:
                unassigned.append(vid)
            elif entries[slot_pos].occupied:
                log.warning(
                    "frame %d: slot %d already claimed by vehicle %d; "
                    "vehicle %d left unassigned",
                    frame_index, slot_map.slot_ids[slot_pos],
                    entries[slot_pos].vehicle_id, vid,
                )
                unassigned.append(vid)
            else:
                entries[slot_pos] = SlotOccupancy(True, vid)
    else:
        unassigned = sorted(ids)

    return OccupancyFrame(
        frame_index=frame_index,
        slot_ids=slot_map.slot_ids,
        entries=tuple(entries),
        unassigned_vehicles=tuple(unassigned),
        timestamp_ms=timestamp_ms,
    )


def diff_frames(prev: OccupancyFrame, curr: OccupancyFrame) -> list[OccupancyEvent]:
    """Change events between two consecutive frames of the same slot map."""
    if len(prev.entries) != len(curr.entries):
        raise SlotCountMismatchError(
            f"slot count changed between frames: {len(prev.entries)} != {len(curr.entries)}"
        )
    events: list[OccupancyEvent] = []
    for slot_id, before, after in zip(curr.slot_ids, prev.entries, curr.entries):
        if not before.occupied and after.occupied:
            events.append(OccupancyEvent(curr.frame_index, slot_id,
                                         EventKind.OCCUPIED, after.vehicle_id))
        elif before.occupied and not after.occupied:
            events.append(OccupancyEvent(curr.frame_index, slot_id,
                                         EventKind.FREED, before.vehicle_id))
        elif before.occupied and after.occupied and before.vehicle_id != after.vehicle_id:
            events.append(OccupancyEvent(curr.frame_index, slot_id,
                                         EventKind.VEHICLE_CHANGED, after.vehicle_id))
    return events


def apply_events(entries: Sequence[SlotOccupancy], slot_ids: Sequence[int],
                 events: Sequence[OccupancyEvent]) -> tuple[SlotOccupancy, ...]:
    """Fold change events onto an entries array (the snapshot-then-delta rule)."""
    index_of = {sid: i for i, sid in enumerate(slot_ids)}
    out = list(entries)
    for ev in events:
        i = index_of[ev.slot_id]
        if ev.kind is EventKind.FREED:
            out[i] = SlotOccupancy(False, 0)
        else:
            out[i] = SlotOccupancy(True, ev.vehicle_id)
    return tuple(out)


def summarize(frame: OccupancyFrame) -> FrameSummary:
    occupied = sum(1 for e in frame.entries if e.occupied)
    total = len(frame.entries)
    return FrameSummary(frame.frame_index, occupied, total - occupied, total)


class Debouncer:
    """Optional flicker suppression: a slot-state change must persist for
    ``min_dwell_frames`` consecutive frames before it is committed.

    With min_dwell_frames=0 (the default) frames pass through untouched.
    """

    def __init__(self, min_dwell_frames: int = 0):
        if min_dwell_frames < 0:
            raise ValueError("min_dwell_frames must be >= 0")
        self.min_dwell_frames = min_dwell_frames
        self._stable: Optional[list[SlotOccupancy]] = None
        self._pending: list[Optional[SlotOccupancy]] = []
        self._pending_count: list[int] = []

    def step(self, frame: OccupancyFrame) -> OccupancyFrame:
        if self.min_dwell_frames == 0:
            return frame
        n = len(frame.entries)
        if self._stable is None:
            self._stable = list(frame.entries)
            self._pending = [None] * n
            self._pending_count = [0] * n
            return frame
        if len(self._stable) != n:
            raise SlotCountMismatchError("slot count changed mid-run")
        for i, raw in enumerate(frame.entries):
            if raw == self._stable[i]:
                self._pending[i] = None
                self._pending_count[i] = 0
            elif raw == self._pending[i]:
                self._pending_count[i] += 1
                if self._pending_count[i] >= self.min_dwell_frames:
                    self._stable[i] = raw
                    self._pending[i] = None
                    self._pending_count[i] = 0
            else:
                self._pending[i] = raw
                self._pending_count[i] = 1
                if self._pending_count[i] >= self.min_dwell_frames:
                    self._stable[i] = raw
                    self._pending[i] = None
                    self._pending_count[i] = 0
        return OccupancyFrame(
            frame_index=frame.frame_index,
            slot_ids=frame.slot_ids,
            entries=tuple(self._stable),
            unassigned_vehicles=frame.unassigned_vehicles,
            timestamp_ms=frame.timestamp_ms,
        )
