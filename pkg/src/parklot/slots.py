"""Slot map: load, validate, and persist the annotated parking-slot polygons.

File format (UTF-8 JSON, produced by the dashboard's annotation export):

    {"version": 1, "frame_width": W, "frame_height": H,
     "reference_image": "path-or-null",
     "slots": [{"slot_id": 0, "label": "A1",
                "polygon": [[x0,y0], [x1,y1], ..., [x0,y0]]}, ...]}

The closing vertex is explicit in the file.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Optional, Union

import numpy as np

from .geometry import (
    Point,
    Polygon,
    PolygonSet,
    point_in_polygon,
    polygon_violations,
    segments_intersect,
)

log = logging.getLogger(__name__)

AUTO_CLOSE_TOLERANCE = 1e-6
SLOT_MAP_VERSION = 1


class SlotMapError(ValueError):
    """Aggregated slot-map validation or parse failure; nothing is silently dropped."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class Slot:
    slot_id: int
    polygon: Polygon
    label: Optional[str] = None


@dataclass(frozen=True)
class SlotMap:
    """Immutable after load; shareable across threads without restriction."""

    slots: tuple[Slot, ...]
    frame_width: float
    frame_height: float
    reference_image: Optional[str] = None
    version: int = SLOT_MAP_VERSION

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.slots, key=lambda s: s.slot_id))
        object.__setattr__(self, "slots", ordered)
        ids = [s.slot_id for s in ordered]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise SlotMapError([f"duplicate slot_id {i}" for i in dupes])

    @property
    def slot_ids(self) -> tuple[int, ...]:
        return tuple(s.slot_id for s in self.slots)

    def __len__(self) -> int:
        return len(self.slots)

    @cached_property
    def polygon_arrays(self) -> tuple[np.ndarray, ...]:
        """Per-slot closed vertex arrays, in slot_id order (occupancy hot path)."""
        return tuple(s.polygon.xy for s in self.slots)

    @cached_property
    def polygon_set(self) -> PolygonSet:
        return PolygonSet(self.polygon_arrays)


def _slot_errors(slot_id: int, raw_polygon: object, frame_width: float,
                 frame_height: float) -> tuple[Optional[Polygon], list[str], bool]:
    """Validate one slot's polygon; returns (polygon, errors, auto_closed)."""
    prefix = f"slot {slot_id}"
    if not isinstance(raw_polygon, list) or len(raw_polygon) < 3:
        return None, [f"{prefix}: polygon must be a list of at least 3 [x,y] pairs"], False
    points: list[Point] = []
    for k, pair in enumerate(raw_polygon):
        if (not isinstance(pair, (list, tuple)) or len(pair) != 2
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                           for v in pair)):
            return None, [f"{prefix}: vertex {k} is not an [x,y] number pair"], False
        points.append(Point(float(pair[0]), float(pair[1])))

    auto_closed = False
    first, last = points[0], points[-1]
    gap = max(abs(first.x - last.x), abs(first.y - last.y))
    if first != last and gap <= AUTO_CLOSE_TOLERANCE:
        # Snap the near-duplicate final vertex onto the first one; appending
        # another vertex instead would leave a degenerate sliver edge.
        points[-1] = first
        auto_closed = True

    violations = polygon_violations(points)
    if violations:
        return None, [f"{prefix}: {v}" for v in violations], auto_closed

    poly = Polygon(tuple(points))
    errors = []
    x_min, y_min, x_max, y_max = poly.bounds()
    if x_min < 0 or y_min < 0 or x_max > frame_width or y_max > frame_height:
        errors.append(
            f"{prefix}: polygon exceeds frame bounds "
            f"[0,{frame_width}]x[0,{frame_height}]"
        )
    return (poly if not errors else None), errors, auto_closed


def load_slot_map(source: Union[bytes, str, IO[bytes], IO[str]]) -> SlotMap:
    """Parse and fully validate a slot-map document.

    Polygons whose first/last vertices differ by <= 1e-6 are auto-closed
    (closure vertex appended) with a warning. Any validation failure raises
    SlotMapError carrying every error found; a partially valid map is never
    returned.
    """
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as exc:
        raise SlotMapError([f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"])

    errors: list[str] = []
    if not isinstance(doc, dict):
        raise SlotMapError(["document root must be a JSON object"])
    for req in ("version", "frame_width", "frame_height", "slots"):
        if req not in doc:
            errors.append(f"missing field: {req}")
    if errors:
        raise SlotMapError(errors)

    frame_width = doc["frame_width"]
    frame_height = doc["frame_height"]
    if not isinstance(frame_width, (int, float)) or frame_width <= 0:
        errors.append(f"frame_width must be a positive number: {frame_width!r}")
    if not isinstance(frame_height, (int, float)) or frame_height <= 0:
        errors.append(f"frame_height must be a positive number: {frame_height!r}")
    if not isinstance(doc["slots"], list):
        errors.append("slots must be a list")
    if errors:
        raise SlotMapError(errors)

    slots: list[Slot] = []
    seen_ids: set[int] = set()
    for idx, entry in enumerate(doc["slots"]):
        if not isinstance(entry, dict):
            errors.append(f"slots[{idx}]: not an object")
            continue
        slot_id = entry.get("slot_id")
        if not isinstance(slot_id, int) or isinstance(slot_id, bool) or slot_id < 0:
            errors.append(f"slots[{idx}]: slot_id must be a non-negative integer")
            continue
        if slot_id in seen_ids:
            errors.append(f"duplicate slot_id {slot_id}")
            continue
        seen_ids.add(slot_id)
        label = entry.get("label")
        if label is not None and not isinstance(label, str):
            errors.append(f"slot {slot_id}: label must be a string or null")
            continue
        poly, slot_errors, auto_closed = _slot_errors(
            slot_id, entry.get("polygon"), float(frame_width), float(frame_height)
        )
        if auto_closed:
            log.warning("slot %d: polygon auto-closed (first/last vertices within %g)",
                        slot_id, AUTO_CLOSE_TOLERANCE)
        if slot_errors:
            errors.extend(slot_errors)
        else:
            slots.append(Slot(slot_id=slot_id, polygon=poly, label=label))

    if errors:
        raise SlotMapError(errors)

    return SlotMap(
        slots=tuple(slots),
        frame_width=float(frame_width),
        frame_height=float(frame_height),
        reference_image=doc.get("reference_image"),
        version=int(doc["version"]),
    )


def slot_map_to_dict(slot_map: SlotMap) -> dict:
    return {
        "version": slot_map.version,
        "frame_width": slot_map.frame_width,
        "frame_height": slot_map.frame_height,
        "reference_image": slot_map.reference_image,
        "slots": [
            {
                "slot_id": s.slot_id,
                "label": s.label,
                "polygon": [[p.x, p.y] for p in s.polygon.vertices],
            }
            for s in slot_map.slots
        ],
    }


def save_slot_map(slot_map: SlotMap) -> bytes:
    """Canonical serialization; load(save(m)) equals m field-for-field."""
    return (json.dumps(slot_map_to_dict(slot_map), indent=2, sort_keys=False) + "\n").encode(
        "utf-8"
    )


def slot_map_digest(slot_map: SlotMap) -> str:
    """SHA-256 over the canonical serialization; recorded in log headers."""
    return hashlib.sha256(save_slot_map(slot_map)).hexdigest()


def _polygons_touch(a: Polygon, b: Polygon) -> bool:
    averts, bverts = a.vertices, b.vertices
    for i in range(len(averts) - 1):
        for j in range(len(bverts) - 1):
            if segments_intersect(averts[i], averts[i + 1], bverts[j], bverts[j + 1]):
                return True
    # No boundary contact; one polygon may still be nested inside the other.
    return point_in_polygon(averts[0], b) or point_in_polygon(bverts[0], a)


def slot_overlap_report(slot_map: SlotMap) -> list[tuple[int, int, bool]]:
    """Flag every slot pair whose polygons touch or overlap.

    Boundary rule: any shared point counts, including shared edges and
    corner contact; annotators get a warning, not an error, since overlapping
    slots make vehicle assignment order-dependent.
    """
    flagged = []
    for i in range(len(slot_map.slots)):
        for j in range(i + 1, len(slot_map.slots)):
            a, b = slot_map.slots[i], slot_map.slots[j]
            if _polygons_touch(a.polygon, b.polygon):
                flagged.append((a.slot_id, b.slot_id, True))
    return flagged
