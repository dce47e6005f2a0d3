"""Detection-stream parsing and the deterministic synthetic scenario
generator used as the end-to-end test oracle.

Stream format: newline-delimited UTF-8 JSON, one frame per line:

    {"f":0,"t":0,"d":[{"b":[x0,y0,x1,y1],"c":"Car","p":0.93,"a":[...]}, ...]}

``b`` is a corner-form box, ``c`` one of the five vehicle classes, ``p`` the
confidence, ``a`` an optional appearance vector (unit-normalized on ingest).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Iterator, NamedTuple, Optional, Union

import numpy as np

from .geometry import BoundingBox, InvalidBoxError, Point, Polygon
from .occupancy import OccupancyFrame, assign_frame
from .analytics import LogHeader, OccupancyLog
from .slots import Slot, SlotMap, load_slot_map, slot_map_digest, slot_map_to_dict
from .tracking import VEHICLE_CLASSES, Detection

_CLASS_SET = frozenset(VEHICLE_CLASSES)


class StreamFormatError(ValueError):
    """Malformed detection stream; carries the offending line number."""

    def __init__(self, line_number: int, reason: str):
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"line {line_number}: {reason}")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionFrame:
    frame_index: int
    timestamp_ms: Optional[int]
    detections: tuple[Detection, ...]


def _parse_detection(raw: object, line_number: int, det_index: int,
                     expected_dim: Optional[int],
                     allow_unknown_class: bool) -> tuple[Detection, Optional[int]]:
    where = f"detection {det_index}"
    if not isinstance(raw, dict):
        raise StreamFormatError(line_number, f"{where}: not an object")
    box = raw.get("b")
    if (not isinstance(box, list) or len(box) != 4
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                       for v in box)):
        raise StreamFormatError(line_number, f"{where}: b must be [x_min,y_min,x_max,y_max]")
    try:
        bbox = BoundingBox(*map(float, box))
    except InvalidBoxError as exc:
        raise StreamFormatError(line_number, f"{where}: b: {exc}")

    cls = raw.get("c")
    if not isinstance(cls, str) or (cls not in _CLASS_SET
                                    and not (allow_unknown_class and cls == "Unknown")):
        raise StreamFormatError(
            line_number,
            f"{where}: c: unknown class {cls!r} (expected one of {sorted(_CLASS_SET)})",
        )
    conf = raw.get("p")
    if not isinstance(conf, (int, float)) or isinstance(conf, bool) or not 0 <= conf <= 1:
        raise StreamFormatError(line_number, f"{where}: p: confidence must be in [0,1]")

    appearance = raw.get("a")
    dim = expected_dim
    if appearance is not None:
        if (not isinstance(appearance, list) or len(appearance) == 0
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                           for v in appearance)):
            raise StreamFormatError(line_number, f"{where}: a: must be a number array")
        if expected_dim is not None and len(appearance) != expected_dim:
            raise StreamFormatError(
                line_number,
                f"{where}: a: dimension {len(appearance)} != stream dimension {expected_dim}",
            )
        dim = len(appearance)
        vec = np.asarray(appearance, dtype=np.float64)
        if not np.all(np.isfinite(vec)) or float(np.linalg.norm(vec)) == 0.0:
            raise StreamFormatError(line_number, f"{where}: a: non-finite or zero vector")
    else:
        vec = None
    return Detection(bbox=bbox, vehicle_class=cls, confidence=float(conf),
                     appearance=vec), dim


def parse_stream(source: Union[IO[str], IO[bytes], Iterable[str]],
                 allow_unknown_class: bool = False) -> Iterator[DetectionFrame]:
    """Incrementally parse a detection stream; frames yielded in order.

    The stream may be unbounded (a live pipe): each line is parsed as it
    arrives and a frame is never yielded partially populated.
    """
    expected_dim: Optional[int] = None
    last_index: Optional[int] = None
    for line_number, line in enumerate(source, start=1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        line = line.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise StreamFormatError(line_number, f"invalid JSON: {exc.msg}")
        if not isinstance(doc, dict):
            raise StreamFormatError(line_number, "frame must be a JSON object")
        frame_index = doc.get("f")
        if not isinstance(frame_index, int) or isinstance(frame_index, bool) or frame_index < 0:
            raise StreamFormatError(line_number, "f: must be a non-negative integer")
        if last_index is not None and frame_index <= last_index:
            raise StreamFormatError(
                line_number,
                f"f: frame_index {frame_index} not greater than previous {last_index}",
            )
        timestamp = doc.get("t")
        if timestamp is not None and (not isinstance(timestamp, int)
                                      or isinstance(timestamp, bool)):
            raise StreamFormatError(line_number, "t: must be an integer or null")
        raw_dets = doc.get("d")
        if not isinstance(raw_dets, list):
            raise StreamFormatError(line_number, "d: must be a list")
        detections = []
        for k, raw in enumerate(raw_dets):
            det, expected_dim = _parse_detection(
                raw, line_number, k, expected_dim, allow_unknown_class
            )
            detections.append(det)
        last_index = frame_index
        yield DetectionFrame(frame_index=frame_index, timestamp_ms=timestamp,
                             detections=tuple(detections))


def frame_to_stream_line(frame: DetectionFrame) -> str:
    dets = []
    for d in frame.detections:
        entry: dict = {
            "b": [d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max],
            "c": d.vehicle_class,
            "p": d.confidence,
        }
        if d.appearance is not None:
            entry["a"] = [float(v) for v in d.appearance]
        dets.append(entry)
    return json.dumps({"f": frame.frame_index, "t": frame.timestamp_ms, "d": dets},
                      separators=(",", ":"))


# ---------------------------------------------------------------------------
# Synthetic scenarios
# ---------------------------------------------------------------------------

def _snap(v: float) -> float:
    # Eighths of a pixel are exact in binary floating point, which keeps the
    # corner-form/center round trip lossless for the ground-truth comparison.
    return round(v * 8.0) / 8.0


@dataclass(frozen=True)
class VehicleScript:
    """One scripted vehicle: present on frames [entry_frame, exit_frame),
    its box center following the piecewise-linear keyframe path."""

    name: str
    entry_frame: int
    exit_frame: int
    keyframes: tuple[tuple[int, float, float], ...]
    width: float
    height: float
    vehicle_class: str = "Car"
    target_slot: Optional[int] = None
    dropout_windows: tuple[tuple[int, int], ...] = ()

    def center_at(self, frame: int) -> Point:
        kfs = self.keyframes
        if frame <= kfs[0][0]:
            return Point(_snap(kfs[0][1]), _snap(kfs[0][2]))
        if frame >= kfs[-1][0]:
            return Point(_snap(kfs[-1][1]), _snap(kfs[-1][2]))
        for (f0, x0, y0), (f1, x1, y1) in zip(kfs, kfs[1:]):
            if f0 <= frame <= f1:
                t = (frame - f0) / (f1 - f0)
                return Point(_snap(x0 + (x1 - x0) * t), _snap(y0 + (y1 - y0) * t))
        raise AssertionError("keyframes are sorted; unreachable")

    def present(self, frame: int) -> bool:
        return self.entry_frame <= frame < self.exit_frame

    def dropped(self, frame: int) -> bool:
        return any(s <= frame < e for s, e in self.dropout_windows)

    def bbox_at(self, frame: int, cx: Optional[float] = None,
                cy: Optional[float] = None) -> BoundingBox:
        if cx is None or cy is None:
            cx, cy = self.center_at(frame)
        hw, hh = self.width / 2.0, self.height / 2.0
        return BoundingBox(cx - hw, cy - hh, cx + hw, cy + hh)


@dataclass(frozen=True)
class Scenario:
    seed: int
    slot_map: SlotMap
    vehicles: tuple[VehicleScript, ...]
    fps: float
    frame_count: int
    jitter_std: float = 0.0
    dropout_probability: float = 0.0
    appearance_dim: Optional[int] = None
    appearance_jitter_std: float = 0.0

    def timestamp_ms(self, frame: int) -> int:
        return int(round(frame * 1000.0 / self.fps))


class GeneratedScenario(NamedTuple):
    stream_lines: list[str]
    ground_truth: OccupancyLog
    id_map: dict[str, int]


def validate_scenario(sc: Scenario) -> list[str]:
    problems = []
    if sc.fps <= 0:
        problems.append(f"fps must be positive: {sc.fps}")
    if sc.frame_count <= 0:
        problems.append(f"frame_count must be positive: {sc.frame_count}")
    names = [v.name for v in sc.vehicles]
    if len(set(names)) != len(names):
        problems.append("vehicle names must be unique")
    for v in sc.vehicles:
        if v.exit_frame <= v.entry_frame:
            problems.append(f"{v.name}: exit_frame {v.exit_frame} not after "
                            f"entry_frame {v.entry_frame}")
        if not v.keyframes:
            problems.append(f"{v.name}: no keyframes")
            continue
        frames = [k[0] for k in v.keyframes]
        if frames != sorted(frames) or len(set(frames)) != len(frames):
            problems.append(f"{v.name}: keyframe frames must strictly increase")
        for f, x, y in v.keyframes:
            if not (0 <= x <= sc.slot_map.frame_width
                    and 0 <= y <= sc.slot_map.frame_height):
                problems.append(
                    f"{v.name}: keyframe at frame {f} outside frame bounds: ({x},{y})"
                )
        if v.width <= 0 or v.height <= 0:
            problems.append(f"{v.name}: non-positive box size")
        for s, e in v.dropout_windows:
            if not (v.entry_frame <= s < e <= v.exit_frame):
                problems.append(f"{v.name}: dropout window [{s},{e}) outside presence")
    return problems


def _appearance_basis(sc: Scenario) -> dict[str, np.ndarray]:
    if sc.appearance_dim is None:
        return {}
    basis = {}
    for i, v in enumerate(sc.vehicles):
        rng = np.random.default_rng((sc.seed, 7, i))
        vec = rng.standard_normal(sc.appearance_dim)
        basis[v.name] = vec / np.linalg.norm(vec)
    return basis


def scenario_detection_frames(sc: Scenario) -> Iterator[DetectionFrame]:
    """The detector's view of the scripted world; deterministic per seed."""
    problems = validate_scenario(sc)
    if problems:
        raise ScenarioError("; ".join(problems))
    rng = np.random.default_rng((sc.seed, 1))
    basis = _appearance_basis(sc)
    for f in range(sc.frame_count):
        dets = []
        for v in sc.vehicles:
            if not v.present(f) or v.dropped(f):
                continue
            if sc.dropout_probability > 0 and rng.random() < sc.dropout_probability:
                continue
            cx, cy = v.center_at(f)
            if sc.jitter_std > 0:
                cx = _snap(cx + rng.normal(0.0, sc.jitter_std))
                cy = _snap(cy + rng.normal(0.0, sc.jitter_std))
            appearance = None
            if v.name in basis:
                vec = basis[v.name]
                if sc.appearance_jitter_std > 0:
                    vec = vec + rng.normal(0.0, sc.appearance_jitter_std, vec.shape)
                appearance = vec
            dets.append(
                Detection(bbox=v.bbox_at(f, cx, cy), vehicle_class=v.vehicle_class,
                          confidence=0.9, appearance=appearance)
            )
        yield DetectionFrame(frame_index=f, timestamp_ms=sc.timestamp_ms(f),
                             detections=tuple(dets))


def scenario_id_map(sc: Scenario) -> dict[str, int]:
    """Tracker ids the pipeline will assign: 1-based, in order of first
    appearance (entry frame, then script order)."""
    order = sorted(range(len(sc.vehicles)),
                   key=lambda i: (sc.vehicles[i].entry_frame, i))
    return {sc.vehicles[i].name: rank + 1 for rank, i in enumerate(order)}


def scenario_ground_truth(sc: Scenario, n_init: int = 1) -> OccupancyLog:
    """Geometric ground truth from the scripted paths.

    A vehicle occupies a slot exactly on frames where its scripted center is
    inside the slot polygon; ``n_init`` shifts each vehicle's first counted
    frame to absorb the tracker's confirmation latency.
    """
    problems = validate_scenario(sc)
    if problems:
        raise ScenarioError("; ".join(problems))
    ids = scenario_id_map(sc)
    frames = []
    for f in range(sc.frame_count):
        present = [
            (ids[v.name], v.center_at(f))
            for v in sc.vehicles
            if v.present(f) and f >= v.entry_frame + n_init - 1
        ]
        frames.append(assign_frame(present, sc.slot_map, f, sc.timestamp_ms(f)))
    header = LogHeader(
        fps=sc.fps,
        slot_count=len(sc.slot_map),
        slot_map_sha256=slot_map_digest(sc.slot_map),
        start_timestamp_ms=sc.timestamp_ms(0) if sc.frame_count else None,
        slot_ids=sc.slot_map.slot_ids,
    )
    return OccupancyLog(header=header, frames=tuple(frames))


def generate_scenario(sc: Scenario, n_init: int = 1) -> GeneratedScenario:
    """Detection stream plus geometric ground truth and the id map."""
    lines = [frame_to_stream_line(fr) for fr in scenario_detection_frames(sc)]
    return GeneratedScenario(
        stream_lines=lines,
        ground_truth=scenario_ground_truth(sc, n_init=n_init),
        id_map=scenario_id_map(sc),
    )


# ---------------------------------------------------------------------------
# Scenario (de)serialization
# ---------------------------------------------------------------------------

def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "seed": sc.seed,
        "fps": sc.fps,
        "frame_count": sc.frame_count,
        "jitter_std": sc.jitter_std,
        "dropout_probability": sc.dropout_probability,
        "appearance_dim": sc.appearance_dim,
        "appearance_jitter_std": sc.appearance_jitter_std,
        "slot_map": slot_map_to_dict(sc.slot_map),
        "vehicles": [
            {
                "name": v.name,
                "entry_frame": v.entry_frame,
                "exit_frame": v.exit_frame,
                "keyframes": [list(k) for k in v.keyframes],
                "width": v.width,
                "height": v.height,
                "class": v.vehicle_class,
                "target_slot": v.target_slot,
                "dropout_windows": [list(w) for w in v.dropout_windows],
            }
            for v in sc.vehicles
        ],
    }


def scenario_from_dict(doc: dict) -> Scenario:
    try:
        slot_map = load_slot_map(json.dumps(doc["slot_map"]))
        vehicles = tuple(
            VehicleScript(
                name=str(v["name"]),
                entry_frame=int(v["entry_frame"]),
                exit_frame=int(v["exit_frame"]),
                keyframes=tuple((int(k[0]), float(k[1]), float(k[2]))
                                for k in v["keyframes"]),
                width=float(v["width"]),
                height=float(v["height"]),
                vehicle_class=str(v.get("class", "Car")),
                target_slot=v.get("target_slot"),
                dropout_windows=tuple((int(w[0]), int(w[1]))
                                      for w in v.get("dropout_windows", [])),
            )
            for v in doc["vehicles"]
        )
        sc = Scenario(
            seed=int(doc["seed"]),
            slot_map=slot_map,
            vehicles=vehicles,
            fps=float(doc["fps"]),
            frame_count=int(doc["frame_count"]),
            jitter_std=float(doc.get("jitter_std", 0.0)),
            dropout_probability=float(doc.get("dropout_probability", 0.0)),
            appearance_dim=doc.get("appearance_dim"),
            appearance_jitter_std=float(doc.get("appearance_jitter_std", 0.0)),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ScenarioError(f"bad scenario document: {exc}")
    problems = validate_scenario(sc)
    if problems:
        raise ScenarioError("; ".join(problems))
    return sc


# ---------------------------------------------------------------------------
# Scripted-lot builder (randomized but fully seeded)
# ---------------------------------------------------------------------------

SLOT_W = 48.0
SLOT_H = 60.0
SLOT_GAP = 12.0
LANE_TOP = 160.0
LANE_PITCH = 30.0
MARGIN = 40.0


def grid_slot_map(n_slots: int, n_lanes: int) -> SlotMap:
    """Single row of slots along the top, open driving area below."""
    width = max(2 * MARGIN + n_slots * (SLOT_W + SLOT_GAP), 640.0)
    height = LANE_TOP + n_lanes * LANE_PITCH + MARGIN
    slots = []
    for i in range(n_slots):
        x0 = MARGIN + i * (SLOT_W + SLOT_GAP)
        y0 = MARGIN
        poly = Polygon(tuple(Point(*p) for p in [
            (x0, y0), (x0 + SLOT_W, y0), (x0 + SLOT_W, y0 + SLOT_H),
            (x0, y0 + SLOT_H), (x0, y0),
        ]))
        slots.append(Slot(slot_id=i, polygon=poly, label=f"S{i}"))
    return SlotMap(slots=tuple(slots), frame_width=width, frame_height=height)


def slot_center(slot_map: SlotMap, slot_id: int) -> Point:
    for s in slot_map.slots:
        if s.slot_id == slot_id:
            return s.polygon.centroid()
    raise KeyError(slot_id)


def build_parking_scenario(seed: int, n_slots: int = 12, n_vehicles: int = 8,
                           frame_count: int = 900, fps: float = 30.0,
                           pre_parked: int = 2, pass_through: int = 1,
                           dropout_gap: int = 0,
                           appearance_dim: Optional[int] = None) -> Scenario:
    """Script a parking session: cars drive in along their own lane, park,
    and drive out; some start parked, some only pass through.

    ``dropout_gap`` > 0 cuts that many detection frames out of the middle of
    each parked phase (an occlusion the tracker has to bridge).
    """
    rng = np.random.default_rng((seed, 42))
    slot_map = grid_slot_map(n_slots, n_vehicles)
    # Gentle motion keeps per-frame velocity changes small so the scripted
    # world stays physically plausible for a constant-velocity tracker.
    speed = 2  # px per frame
    leg = 240.0  # spawn/exit this far from the slot, not at the frame edge

    slot_free_from = {i: 0 for i in range(n_slots)}
    vehicles = []
    for v in range(n_vehicles):
        lane_y = LANE_TOP + v * LANE_PITCH
        name = f"veh{v:02d}"
        is_pre_parked = v < pre_parked
        is_pass_through = pre_parked <= v < pre_parked + pass_through

        if is_pass_through:
            entry = int(rng.integers(5, 30)) + v * 20
            travel = int((slot_map.frame_width - 20) // speed)
            exit_frame = max(entry + 1, min(frame_count, entry + travel))
            vehicles.append(VehicleScript(
                name=name, entry_frame=entry, exit_frame=exit_frame,
                keyframes=(
                    (entry, 10.0, lane_y),
                    (entry + travel, 10.0 + travel * speed, lane_y),
                ),
                width=36.0, height=20.0,
            ))
            continue

        park_frames = int(rng.integers(120, 320))
        if is_pre_parked:
            free = [s for s in range(n_slots) if slot_free_from[s] == 0]
            slot_id = int(rng.choice(free))
            park_target = slot_center(slot_map, slot_id)
            entry = 0
            arrive = 0
            depart = park_frames
            down = int(abs(lane_y - park_target.y) // speed)
            out = int(min(leg, slot_map.frame_width - 20 - park_target.x) // speed)
            exit_frame = max(1, min(frame_count, depart + down + out))
            keyframes = (
                (entry, park_target.x, park_target.y),
                (depart, park_target.x, park_target.y),
                (depart + down, park_target.x, lane_y),
                (depart + down + out, park_target.x + out * speed, lane_y),
            )
        else:
            candidates = rng.choice(n_slots, size=min(2, n_slots), replace=False)
            slot_id = int(min(candidates, key=lambda s: slot_free_from[int(s)]))
            park_target = slot_center(slot_map, slot_id)
            spawn_x = max(10.0, park_target.x - leg)
            approach = int((park_target.x - spawn_x) // speed)
            down = int(abs(lane_y - park_target.y) // speed)
            # Delay entry until the chosen slot is free again.
            entry = max(int(rng.integers(5, 30)) + v * 20,
                        slot_free_from[slot_id] - approach - down)
            arrive = entry + approach + down
            depart = arrive + park_frames
            out = int(min(leg, slot_map.frame_width - 20 - park_target.x) // speed)
            exit_frame = max(entry + 1, min(frame_count, depart + down + out))
            keyframes = (
                (entry, spawn_x, lane_y),
                (entry + approach, park_target.x, lane_y),
                (arrive, park_target.x, park_target.y),
                (depart, park_target.x, park_target.y),
                (depart + down, park_target.x, lane_y),
                (depart + down + out, park_target.x + out * speed, lane_y),
            )
        slot_free_from[slot_id] = depart + 40

        windows = ()
        # Occlusion windows start well after arrival so the filter's velocity
        # estimate has settled; a parked box then coasts in place.
        settle = 40
        if dropout_gap > 0 and depart - arrive > dropout_gap + settle + 15 \
                and arrive + settle + dropout_gap <= exit_frame:
            gap_start = arrive + settle
            windows = ((gap_start, gap_start + dropout_gap),)

        vehicles.append(VehicleScript(
            name=name, entry_frame=entry, exit_frame=exit_frame,
            keyframes=keyframes, width=36.0, height=20.0,
            target_slot=slot_id, dropout_windows=windows,
        ))

    return Scenario(
        seed=seed, slot_map=slot_map, vehicles=tuple(vehicles),
        fps=fps, frame_count=frame_count, appearance_dim=appearance_dim,
    )
