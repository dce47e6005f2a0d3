"""Append-only occupancy log and the analytics computed from it.

Log file layout: line 1 is a JSON header object; every following line is
one frame record:

    {"version":1,"fps":30.0,"slot_count":N,"slot_map_sha256":"...",
     "start_timestamp_ms":...,"slot_ids":[...]}
    {"f":0,"t":0,"s":[[0,0],[1,7],...],"u":[3]}

A record is either fully on disk or absent: the writer flushes per line and
readers ignore a trailing line with no newline terminator, so a reader never
observes a torn record. One writer appends; any number of readers may read
completed records concurrently. All analytics are pure functions of the log.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, NamedTuple, Optional, Union

from .occupancy import FrameSummary, OccupancyFrame, SlotOccupancy, summarize
from .slots import SlotMap

EXPORT_FORMATS = ("csv", "json", "svg-heatmap")

# SVG heatmap color ramp endpoints (light -> dark as values grow).
RAMP_LOW = (0xFF, 0xFF, 0xCC)
RAMP_HIGH = (0x80, 0x00, 0x26)


class LogFormatError(ValueError):
    pass


class LogOrderingError(ValueError):
    pass


class UnsupportedFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LogHeader:
    fps: float
    slot_count: int
    slot_map_sha256: str
    start_timestamp_ms: Optional[int] = None
    slot_ids: Optional[tuple[int, ...]] = None
    version: int = 1

    def __post_init__(self) -> None:
        if self.fps <= 0:
            raise LogFormatError(f"fps must be positive: {self.fps}")
        if self.slot_count < 0:
            raise LogFormatError(f"negative slot_count: {self.slot_count}")
        if self.slot_ids is not None and len(self.slot_ids) != self.slot_count:
            raise LogFormatError("slot_ids length does not match slot_count")

    def resolved_slot_ids(self) -> tuple[int, ...]:
        if self.slot_ids is not None:
            return self.slot_ids
        return tuple(range(self.slot_count))


@dataclass(frozen=True)
class OccupancyLog:
    header: LogHeader
    frames: tuple[OccupancyFrame, ...]

    def __len__(self) -> int:
        return len(self.frames)


class Interval(NamedTuple):
    """Maximal run of frames where one vehicle occupied the slot;
    end_frame is exclusive."""

    start_frame: int
    end_frame: int
    vehicle_id: int


@dataclass(frozen=True)
class SlotStats:
    slot_id: int
    occupied_seconds: float
    distinct_vehicles: int
    intervals: tuple[Interval, ...]

    @property
    def visits(self) -> int:
        return len(self.intervals)


class Overstay(NamedTuple):
    slot_id: int
    vehicle_id: int
    duration_seconds: float


def header_to_json(header: LogHeader) -> str:
    doc = {
        "version": header.version,
        "fps": header.fps,
        "slot_count": header.slot_count,
        "slot_map_sha256": header.slot_map_sha256,
        "start_timestamp_ms": header.start_timestamp_ms,
    }
    if header.slot_ids is not None:
        doc["slot_ids"] = list(header.slot_ids)
    return json.dumps(doc, separators=(",", ":"))


def frame_to_json(frame: OccupancyFrame) -> str:
    return json.dumps(
        {
            "f": frame.frame_index,
            "t": frame.timestamp_ms,
            "s": [[1 if e.occupied else 0, e.vehicle_id] for e in frame.entries],
            "u": list(frame.unassigned_vehicles),
        },
        separators=(",", ":"),
    )


def _parse_header(line: str) -> LogHeader:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise LogFormatError(f"header: invalid JSON: {exc.msg}")
    if not isinstance(doc, dict):
        raise LogFormatError("header: not a JSON object")
    try:
        slot_ids = doc.get("slot_ids")
        return LogHeader(
            fps=float(doc["fps"]),
            slot_count=int(doc["slot_count"]),
            slot_map_sha256=str(doc["slot_map_sha256"]),
            start_timestamp_ms=doc.get("start_timestamp_ms"),
            slot_ids=tuple(slot_ids) if slot_ids is not None else None,
            version=int(doc.get("version", 1)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise LogFormatError(f"header: {exc}")


def _parse_frame(line: str, record_index: int, header: LogHeader) -> OccupancyFrame:
    try:
        doc = json.loads(line)
        entries = tuple(SlotOccupancy(bool(s[0]), int(s[1])) for s in doc["s"])
        if len(entries) != header.slot_count:
            raise ValueError(
                f"expected {header.slot_count} slot entries, found {len(entries)}"
            )
        return OccupancyFrame(
            frame_index=int(doc["f"]),
            slot_ids=header.resolved_slot_ids(),
            entries=entries,
            unassigned_vehicles=tuple(int(v) for v in doc.get("u", [])),
            timestamp_ms=doc.get("t"),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError) as exc:
        msg = getattr(exc, "msg", None) or str(exc)
        raise LogFormatError(f"record {record_index}: {msg}")


class LogWriter:
    """Single-writer appender; every record is flushed before the next append."""

    def __init__(self, sink: Union[str, IO[str]], header: LogHeader):
        self._owns = isinstance(sink, str)
        self._fh: IO[str] = open(sink, "w", encoding="utf-8") if self._owns else sink
        self.header = header
        self._last_index: Optional[int] = None
        self.frames_written = 0
        self._fh.write(header_to_json(header) + "\n")
        self._fh.flush()

    def append(self, frame: OccupancyFrame) -> None:
        if len(frame.entries) != self.header.slot_count:
            raise LogFormatError(
                f"frame {frame.frame_index} has {len(frame.entries)} entries, "
                f"log header says {self.header.slot_count}"
            )
        if self._last_index is not None and frame.frame_index <= self._last_index:
            raise LogOrderingError(
                f"frame_index {frame.frame_index} not greater than last "
                f"{self._last_index}"
            )
        self._fh.write(frame_to_json(frame) + "\n")
        self._fh.flush()
        self._last_index = frame.frame_index
        self.frames_written += 1

    def close(self) -> None:
        if self._owns:
            self._fh.close()

    def __enter__(self) -> "LogWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def iter_log(source: Union[str, IO[str]]) -> Iterator[Union[LogHeader, OccupancyFrame]]:
    """Yield the header then each complete frame record.

    A trailing line without a newline terminator is an in-flight append (or a
    torn final record from a killed writer) and is ignored.
    """
    fh = open(source, "r", encoding="utf-8") if isinstance(source, str) else source
    try:
        raw = fh.read()
    finally:
        if isinstance(source, str):
            fh.close()
    lines = raw.split("\n")
    complete = lines[:-1]  # text after the final '\n' (often '') is incomplete
    if not complete:
        raise LogFormatError("log has no complete header line")
    header = _parse_header(complete[0])
    yield header
    last_index: Optional[int] = None
    for i, line in enumerate(complete[1:]):
        frame = _parse_frame(line, i, header)
        if last_index is not None and frame.frame_index <= last_index:
            raise LogOrderingError(
                f"record {i}: frame_index {frame.frame_index} not greater "
                f"than previous {last_index}"
            )
        last_index = frame.frame_index
        yield frame


def read_log(source: Union[str, IO[str]]) -> OccupancyLog:
    it = iter_log(source)
    header = next(it)
    return OccupancyLog(header=header, frames=tuple(it))


def write_log(sink: Union[str, IO[str]], header: LogHeader,
              frames: Iterable[OccupancyFrame]) -> int:
    with LogWriter(sink, header) as writer:
        for frame in frames:
            writer.append(frame)
        return writer.frames_written


def occupancy_timeseries(log: OccupancyLog) -> list[tuple[int, Optional[int], int]]:
    """(frame_index, timestamp_ms, occupied_count) per frame: total parking
    usage over time."""
    return [
        (f.frame_index, f.timestamp_ms, summarize(f).occupied_count) for f in log.frames
    ]


def slot_durations(log: OccupancyLog) -> dict[int, float]:
    """Occupied seconds per slot: occupied-frame count divided by fps."""
    slot_ids = log.header.resolved_slot_ids()
    counts = [0] * len(slot_ids)
    for frame in log.frames:
        for i, entry in enumerate(frame.entries):
            if entry.occupied:
                counts[i] += 1
    return {sid: counts[i] / log.header.fps for i, sid in enumerate(slot_ids)}


def slot_vehicle_counts(log: OccupancyLog) -> dict[int, int]:
    """Distinct vehicles that ever occupied each slot (not visit counts)."""
    slot_ids = log.header.resolved_slot_ids()
    seen: list[set[int]] = [set() for _ in slot_ids]
    for frame in log.frames:
        for i, entry in enumerate(frame.entries):
            if entry.occupied:
                seen[i].add(entry.vehicle_id)
    return {sid: len(seen[i]) for i, sid in enumerate(slot_ids)}


def slot_visit_counts(log: OccupancyLog) -> dict[int, int]:
    """Occupation intervals per slot; a vehicle returning counts again."""
    return {sid: stats.visits for sid, stats in slot_stats(log).items()}


def slot_stats(log: OccupancyLog) -> dict[int, SlotStats]:
    """Full interval decomposition per slot.

    An interval is a maximal run of consecutive records where the same
    vehicle occupies the slot; a gap in frame indices ends the run.
    """
    slot_ids = log.header.resolved_slot_ids()
    n = len(slot_ids)
    intervals: list[list[Interval]] = [[] for _ in range(n)]
    run_start: list[Optional[int]] = [None] * n
    run_vehicle: list[int] = [0] * n
    run_frames: list[int] = [0] * n
    prev_index: Optional[int] = None

    def close_run(i: int, end_frame: int) -> None:
        if run_start[i] is not None:
            intervals[i].append(Interval(run_start[i], end_frame, run_vehicle[i]))
            run_start[i] = None
            run_frames[i] = 0

    for frame in log.frames:
        contiguous = prev_index is not None and frame.frame_index == prev_index + 1
        for i, entry in enumerate(frame.entries):
            if run_start[i] is not None and not contiguous and prev_index is not None:
                close_run(i, prev_index + 1)
            if entry.occupied:
                if run_start[i] is None:
                    run_start[i] = frame.frame_index
                    run_vehicle[i] = entry.vehicle_id
                    run_frames[i] = 1
                elif entry.vehicle_id != run_vehicle[i]:
                    close_run(i, frame.frame_index)
                    run_start[i] = frame.frame_index
                    run_vehicle[i] = entry.vehicle_id
                    run_frames[i] = 1
                else:
                    run_frames[i] += 1
            else:
                close_run(i, frame.frame_index)
        prev_index = frame.frame_index

    if prev_index is not None:
        for i in range(n):
            close_run(i, prev_index + 1)

    fps = log.header.fps
    out: dict[int, SlotStats] = {}
    for i, sid in enumerate(slot_ids):
        ivs = tuple(intervals[i])
        occupied_frames = sum(iv.end_frame - iv.start_frame for iv in ivs)
        out[sid] = SlotStats(
            slot_id=sid,
            occupied_seconds=occupied_frames / fps,
            distinct_vehicles=len({iv.vehicle_id for iv in ivs}),
            intervals=ivs,
        )
    return out


def overstays(stats: dict[int, SlotStats], threshold_seconds: float,
              fps: float) -> list[Overstay]:
    """Intervals whose duration exceeds the threshold."""
    found = []
    for sid in sorted(stats):
        for iv in stats[sid].intervals:
            duration = (iv.end_frame - iv.start_frame) / fps
            if duration > threshold_seconds:
                found.append(Overstay(sid, iv.vehicle_id, duration))
    return found


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

def _fmt_seconds(v: float) -> str:
    return f"{v:.3f}"


def export_timeseries(series: list[tuple[int, Optional[int], int]], fmt: str) -> bytes:
    if fmt == "csv":
        rows = ["frame_index,timestamp_ms,occupied_count"]
        rows += [f"{f},{'' if t is None else t},{c}" for f, t, c in series]
        return ("\n".join(rows) + "\n").encode()
    if fmt == "json":
        return (
            json.dumps(
                [
                    {"frame_index": f, "timestamp_ms": t, "occupied_count": c}
                    for f, t, c in series
                ]
            )
            + "\n"
        ).encode()
    raise UnsupportedFormatError(f"unsupported format {fmt!r} for time series")


def export_slot_values(values: dict[int, float | int], fmt: str, value_name: str,
                       seconds: bool = False,
                       slot_map: Optional[SlotMap] = None) -> bytes:
    """Per-slot scalar export (duration or count heatmap data)."""
    items = sorted(values.items())
    if fmt == "csv":
        rows = [f"slot_id,{value_name}"]
        rows += [
            f"{sid},{_fmt_seconds(v) if seconds else v}" for sid, v in items
        ]
        return ("\n".join(rows) + "\n").encode()
    if fmt == "json":
        payload = [
            {"slot_id": sid, value_name: float(_fmt_seconds(v)) if seconds else v}
            for sid, v in items
        ]
        return (json.dumps(payload) + "\n").encode()
    if fmt == "svg-heatmap":
        if slot_map is None:
            raise UnsupportedFormatError("svg-heatmap needs the slot map geometry")
        return export_heatmap_svg(values, slot_map, value_name, seconds=seconds)
    raise UnsupportedFormatError(f"unsupported format {fmt!r} for per-slot values")


def ramp_color(t: float) -> str:
    """Linear sRGB interpolation between the ramp endpoints, t in [0,1]."""
    t = min(max(t, 0.0), 1.0)
    rgb = [round(lo + (hi - lo) * t) for lo, hi in zip(RAMP_LOW, RAMP_HIGH)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def export_heatmap_svg(values: dict[int, float | int], slot_map: SlotMap,
                       value_name: str, seconds: bool = False) -> bytes:
    """Slot polygons filled on a value-proportional color ramp."""
    vals = {sid: float(v) for sid, v in values.items()}
    vmax = max(vals.values(), default=0.0)
    vmin = min(vals.values(), default=0.0)
    span = vmax - vmin

    def t_of(v: float) -> float:
        if span == 0.0:
            return 1.0  # all slots carry the max value
        return (v - vmin) / span

    fmt_val = _fmt_seconds if seconds else (lambda v: f"{v:g}")
    w, h = slot_map.frame_width, slot_map.frame_height
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f"<!-- {value_name} heatmap: fill interpolates linearly from "
        f"{ramp_color(0.0)} at value {fmt_val(vmin)} to {ramp_color(1.0)} "
        f"at value {fmt_val(vmax)} -->",
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:g}" height="{h:g}" '
        f'viewBox="0 0 {w:g} {h:g}">',
        f'<rect x="0" y="0" width="{w:g}" height="{h:g}" fill="#f5f5f5"/>',
    ]
    for slot in slot_map.slots:
        v = vals.get(slot.slot_id, 0.0)
        fill = ramp_color(t_of(v))
        pts = " ".join(f"{p.x:g},{p.y:g}" for p in slot.polygon.vertices[:-1])
        cx, cy = slot.polygon.centroid()
        parts.append(
            f'<polygon data-slot-id="{slot.slot_id}" data-value="{fmt_val(v)}" '
            f'points="{pts}" fill="{fill}" stroke="#333333" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{cx:g}" y="{cy:g}" font-size="10" text-anchor="middle" '
            f'fill="#111111">{slot.slot_id}: {fmt_val(v)}</text>'
        )
    parts.append("</svg>")
    return ("\n".join(parts) + "\n").encode()


def export(result, fmt: str, sink: Union[str, IO[bytes]], *,
           slot_map: Optional[SlotMap] = None, value_name: str = "value",
           seconds: bool = False) -> bytes:
    """Serialize an analytics result and write it to the sink.

    ``result`` is a time series (list of 3-tuples) or a per-slot value map;
    formats are csv, json and svg-heatmap.
    """
    if fmt not in EXPORT_FORMATS:
        raise UnsupportedFormatError(f"unsupported format {fmt!r}")
    if isinstance(result, list):
        if fmt == "svg-heatmap":
            raise UnsupportedFormatError("svg-heatmap applies to per-slot values only")
        data = export_timeseries(result, fmt)
    elif isinstance(result, dict):
        data = export_slot_values(result, fmt, value_name, seconds=seconds,
                                  slot_map=slot_map)
    else:
        raise TypeError(f"cannot export result of type {type(result).__name__}")
    if isinstance(sink, str):
        with open(sink, "wb") as fh:
            fh.write(data)
    else:
        sink.write(data)
    return data


def summary_series_from_stats(stats: dict[int, SlotStats],
                              frames: Iterable[OccupancyFrame]) -> list[int]:
    """Recompute the per-frame occupied count from interval decompositions.

    Used to cross-check the time series: both derivations must agree
    frame-by-frame.
    """
    counts: dict[int, int] = {}
    for slot in stats.values():
        for iv in slot.intervals:
            for f in range(iv.start_frame, iv.end_frame):
                counts[f] = counts.get(f, 0) + 1
    return [counts.get(frame.frame_index, 0) for frame in frames]
