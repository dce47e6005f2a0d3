"""HTTP surface for live monitoring: slot map, analytics snapshots, and a
chunked newline-delimited JSON event stream.

Stream contract: the first message a consumer receives is a full occupancy
snapshot; every following message is a per-frame summary or a change event.
Consumers that stop reading are disconnected once their queue fills; the
pipeline thread never blocks on a slow consumer.
"""
from __future__ import annotations

import json
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from .analytics import (
    OccupancyLog,
    occupancy_timeseries,
    read_log,
    slot_durations,
    slot_vehicle_counts,
)
from .occupancy import FrameSummary, OccupancyEvent, OccupancyFrame
from .pipeline import FrameResult, initial_events
from .slots import SlotMap, save_slot_map

log = logging.getLogger(__name__)

CONSUMER_QUEUE_SIZE = 1024


def frame_message(frame: OccupancyFrame, summary: FrameSummary) -> str:
    return json.dumps(
        {
            "type": "snapshot",
            "f": frame.frame_index,
            "t": frame.timestamp_ms,
            "slot_ids": list(frame.slot_ids),
            "s": [[1 if e.occupied else 0, e.vehicle_id] for e in frame.entries],
            "u": list(frame.unassigned_vehicles),
            "occupied": summary.occupied_count,
            "free": summary.free_count,
            "total": summary.total_slots,
        },
        separators=(",", ":"),
    )


def summary_message(summary: FrameSummary) -> str:
    return json.dumps(
        {
            "type": "summary",
            "f": summary.frame_index,
            "occupied": summary.occupied_count,
            "free": summary.free_count,
            "total": summary.total_slots,
        },
        separators=(",", ":"),
    )


def event_message(event: OccupancyEvent) -> str:
    return json.dumps(
        {
            "type": "event",
            "f": event.frame_index,
            "slot_id": event.slot_id,
            "kind": event.kind.value,
            "vehicle_id": event.vehicle_id,
        },
        separators=(",", ":"),
    )


@dataclass
class _Consumer:
    messages: queue.Queue = field(
        default_factory=lambda: queue.Queue(maxsize=CONSUMER_QUEUE_SIZE)
    )
    dropped: bool = False
    needs_snapshot: bool = True


class EventHub:
    """Fan-out of pipeline results to any number of stream consumers."""

    def __init__(self):
        self._lock = threading.Lock()
        self._consumers: dict[int, _Consumer] = {}
        self._next_id = 0
        self._latest: Optional[tuple[OccupancyFrame, FrameSummary]] = None

    def register(self) -> tuple[int, _Consumer]:
        with self._lock:
            cid = self._next_id
            self._next_id += 1
            consumer = _Consumer()
            if self._latest is not None:
                consumer.messages.put_nowait(frame_message(*self._latest))
                consumer.needs_snapshot = False
            self._consumers[cid] = consumer
            return cid, consumer

    def unregister(self, cid: int) -> None:
        with self._lock:
            self._consumers.pop(cid, None)

    def publish(self, result: FrameResult) -> None:
        """Called from the pipeline thread; never blocks."""
        frame, events, summary = result
        with self._lock:
            self._latest = (frame, summary)
            if not self._consumers:
                return
            # Events first, then the summary: the summary marks the frame
            # complete, so a folded state is consistent when it arrives.
            batch = [event_message(ev) for ev in events]
            batch.append(summary_message(summary))
            snapshot = None
            for cid, consumer in list(self._consumers.items()):
                if consumer.dropped:
                    continue
                try:
                    if consumer.needs_snapshot:
                        if snapshot is None:
                            snapshot = frame_message(frame, summary)
                        consumer.messages.put_nowait(snapshot)
                        consumer.needs_snapshot = False
                    else:
                        for msg in batch:
                            consumer.messages.put_nowait(msg)
                except queue.Full:
                    consumer.dropped = True
                    log.warning("dropping lagging stream consumer %d", cid)

    def snapshot(self) -> Optional[tuple[OccupancyFrame, FrameSummary]]:
        with self._lock:
            return self._latest


class ParklotServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], slot_map: SlotMap,
                 hub: EventHub, log_path: Optional[str] = None):
        super().__init__(address, _Handler)
        self.hub = hub
        self.slot_map_bytes = save_slot_map(slot_map)
        self.log_path = log_path


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: ParklotServer

    def log_message(self, fmt, *args):  # route through app logging, not stderr
        log.debug("http: " + fmt, *args)

    def _send_json(self, payload: bytes, status: int = 200,
                   content_type: str = "application/json") -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self):  # noqa: N802 (http.server naming)
        path = self.path.split("?", 1)[0]
        if path == "/slots":
            self._send_json(self.server.slot_map_bytes)
        elif path == "/analytics":
            self._send_json(self._analytics_payload())
        elif path == "/events":
            self._stream_events()
        else:
            self._send_json(b'{"error":"not found"}', status=404)

    def _analytics_payload(self) -> bytes:
        log_path = self.server.log_path
        payload: dict = {"timeseries": [], "slot_durations": {},
                         "slot_vehicle_counts": {}, "frames": 0}
        if log_path:
            try:
                occ_log = read_log(log_path)
            except (OSError, ValueError):
                occ_log = None
            if occ_log is not None:
                payload = {
                    "timeseries": [
                        {"frame_index": f, "timestamp_ms": t, "occupied_count": c}
                        for f, t, c in occupancy_timeseries(occ_log)
                    ],
                    "slot_durations": {
                        str(k): v for k, v in sorted(slot_durations(occ_log).items())
                    },
                    "slot_vehicle_counts": {
                        str(k): v
                        for k, v in sorted(slot_vehicle_counts(occ_log).items())
                    },
                    "frames": len(occ_log),
                }
        return json.dumps(payload).encode()

    def _write_chunk(self, data: bytes) -> None:
        self.wfile.write(b"%x\r\n" % len(data))
        self.wfile.write(data)
        self.wfile.write(b"\r\n")
        self.wfile.flush()

    def _stream_events(self) -> None:
        cid, consumer = self.server.hub.register()
        self.send_response(200)
        self.send_header("Content-Type", "application/x-ndjson")
        self.send_header("Transfer-Encoding", "chunked")
        self.send_header("Cache-Control", "no-cache")
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        try:
            while not consumer.dropped:
                try:
                    msg = consumer.messages.get(timeout=0.5)
                except queue.Empty:
                    continue
                self._write_chunk(msg.encode() + b"\n")
            self._write_chunk(b"")  # terminal chunk on orderly drop
        except (BrokenPipeError, ConnectionResetError, OSError):
            pass
        finally:
            self.server.hub.unregister(cid)
            self.close_connection = True


def start_server(host: str, port: int, slot_map: SlotMap, hub: EventHub,
                 log_path: Optional[str] = None) -> ParklotServer:
    """Bind and serve on a daemon thread; raises OSError if the port is taken."""
    server = ParklotServer((host, port), slot_map, hub, log_path)
    thread = threading.Thread(target=server.serve_forever, name="parklot-http",
                              daemon=True)
    thread.start()
    return server


def replay_log(occ_log: OccupancyLog, hub: EventHub, speed: float = 1.0) -> None:
    """Re-publish a recorded log through the hub, paced at the log's fps.

    ``speed`` scales the pace; 0 replays as fast as possible.
    """
    from .occupancy import diff_frames, summarize

    interval = 0.0 if speed <= 0 else 1.0 / (occ_log.header.fps * speed)
    prev: Optional[OccupancyFrame] = None
    for frame in occ_log.frames:
        events = initial_events(frame) if prev is None else diff_frames(prev, frame)
        hub.publish(FrameResult(frame, events, summarize(frame)))
        prev = frame
        if interval:
            time.sleep(interval)
