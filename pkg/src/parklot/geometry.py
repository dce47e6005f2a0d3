"""Planar geometry kernels: ray casting, point-in-polygon, IoU, box centers.

Everything here is a pure function on immutable values and safe to call
concurrently. Coordinates are double-precision pixels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np


class Point(NamedTuple):
    x: float
    y: float


class InvalidPolygonError(ValueError):
    """Raised when a vertex sequence does not form a valid closed polygon."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class InvalidBoxError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in corner form."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidBoxError(f"non-finite coordinates: {coords}")
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise InvalidBoxError(
                f"degenerate box: ({self.x_min},{self.y_min})-({self.x_max},{self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class Polygon:
    """A closed simple polygon: first vertex repeated as the last one.

    Construction validates all invariants; use ``validate_polygon`` to
    collect violations without raising.
    """

    vertices: tuple[Point, ...]

    def __post_init__(self) -> None:
        verts = tuple(Point(float(p[0]), float(p[1])) for p in self.vertices)
        object.__setattr__(self, "vertices", verts)
        violations = polygon_violations(verts)
        if violations:
            raise InvalidPolygonError(violations)

    @cached_property
    def xy(self) -> np.ndarray:
        """Vertex array of shape (n, 2), closure vertex included."""
        arr = np.asarray(self.vertices, dtype=np.float64)
        arr.setflags(write=False)
        return arr

    @property
    def edge_count(self) -> int:
        return len(self.vertices) - 1

    def contains(self, p: Point) -> bool:
        return point_in_polygon(p, self)

    def area(self) -> float:
        return abs(_signed_area(self.vertices))

    def centroid(self) -> Point:
        xy = self.xy[:-1]
        return Point(float(xy[:, 0].mean()), float(xy[:, 1].mean()))

    def bounds(self) -> tuple[float, float, float, float]:
        xy = self.xy
        return (
            float(xy[:, 0].min()),
            float(xy[:, 1].min()),
            float(xy[:, 0].max()),
            float(xy[:, 1].max()),
        )


def ray_intersects_segment(origin: Point, seg_a: Point, seg_b: Point) -> bool:
    """True iff the horizontal ray from ``origin`` toward +x crosses the segment.

    Half-open vertex rule: an endpoint lying exactly at the ray's y level
    counts only when it is the segment's lower-y endpoint, so each vertex of
    an edge chain contributes exactly one crossing. Points exactly on an
    edge are undefined-boundary territory (tolerance 1e-9) and may resolve
    either way.
    """
    ox, oy = origin
    ax, ay = seg_a
    bx, by = seg_b
    if (ay > oy) == (by > oy):
        return False
    # One endpoint is strictly above oy and the other at-or-below, so by != ay.
    x_cross = ax + (oy - ay) * (bx - ax) / (by - ay)
    return x_cross > ox


def point_in_polygon(p: Point, poly: Polygon) -> bool:
    """Crossing-parity containment: odd number of ray crossings means inside."""
    crossings = 0
    verts = poly.vertices
    for i in range(len(verts) - 1):
        if ray_intersects_segment(p, verts[i], verts[i + 1]):
            crossings += 1
    return crossings % 2 == 1


def polygon_contains_points(poly_xy: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Vectorized crossing-parity test for many points against one polygon.

    ``poly_xy`` is the (n, 2) closed vertex array (first row == last row).
    Uses the same half-open vertex rule as ``ray_intersects_segment``.
    """
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    ax, ay = poly_xy[:-1, 0], poly_xy[:-1, 1]
    bx, by = poly_xy[1:, 0], poly_xy[1:, 1]
    straddles = (ay[:, None] > py[None, :]) != (by[:, None] > py[None, :])
    dy = by - ay
    dy_safe = np.where(dy == 0.0, 1.0, dy)
    t = (py[None, :] - ay[:, None]) / dy_safe[:, None]
    x_cross = ax[:, None] + t * (bx - ax)[:, None]
    crossings = (straddles & (x_cross > px[None, :])).sum(axis=0)
    return crossings % 2 == 1


class PolygonSet:
    """Edge arrays of many polygons padded to one tensor so a frame's worth
    of points can be tested against every polygon in a single pass."""

    def __init__(self, polygons_xy: Sequence[np.ndarray]):
        self.count = len(polygons_xy)
        max_edges = max((xy.shape[0] - 1 for xy in polygons_xy), default=0)
        ax = np.zeros((self.count, max_edges))
        ay = np.zeros((self.count, max_edges))
        bx = np.zeros((self.count, max_edges))
        by = np.zeros((self.count, max_edges))
        for i, xy in enumerate(polygons_xy):
            n = xy.shape[0] - 1
            ax[i, :n], ay[i, :n] = xy[:-1, 0], xy[:-1, 1]
            bx[i, :n], by[i, :n] = xy[1:, 0], xy[1:, 1]
            # Padding edges are horizontal (ay == by == 0): never counted.
        self._ax, self._ay, self._bx, self._by = ax, ay, bx, by
        dy = by - ay
        self._dy_safe = np.where(dy == 0.0, 1.0, dy)
        self._dx = bx - ax

    def contains_points(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        """(polygon, point) containment matrix under the half-open ray rule."""
        px = np.asarray(px, dtype=np.float64)
        py = np.asarray(py, dtype=np.float64)
        if self.count == 0 or px.size == 0:
            return np.zeros((self.count, px.size), dtype=bool)
        ay = self._ay[:, :, None]
        by = self._by[:, :, None]
        p = py[None, None, :]
        straddles = (ay > p) != (by > p)
        t = (p - ay) / self._dy_safe[:, :, None]
        x_cross = self._ax[:, :, None] + t * self._dx[:, :, None]
        crossings = (straddles & (x_cross > px[None, None, :])).sum(axis=1)
        return crossings % 2 == 1


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU for (n, 4) x (m, 4) corner-form box arrays."""
    a = np.asarray(boxes_a, dtype=np.float64)
    b = np.asarray(boxes_b, dtype=np.float64)
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0.0, inter / union, 0.0)


def bbox_center(b: BoundingBox) -> Point:
    return Point((b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0)


def _signed_area(vertices: Sequence[Point]) -> float:
    # Shoelace over the closed ring; vertices include the closure point.
    total = 0.0
    for i in range(len(vertices) - 1):
        ax, ay = vertices[i]
        bx, by = vertices[i + 1]
        total += ax * by - bx * ay
    return total / 2.0


def _orient(p: Point, q: Point, r: Point) -> float:
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _on_segment(p: Point, a: Point, b: Point) -> bool:
    # p is collinear with (a, b); check it lies within the segment's extent.
    return (
        min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
        and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])
    )


def segments_intersect(a1: Point, a2: Point, b1: Point, b2: Point) -> bool:
    """True when the closed segments share at least one point."""
    d1 = _orient(b1, b2, a1)
    d2 = _orient(b1, b2, a2)
    d3 = _orient(a1, a2, b1)
    d4 = _orient(a1, a2, b2)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True
    if d1 == 0 and _on_segment(a1, b1, b2):
        return True
    if d2 == 0 and _on_segment(a2, b1, b2):
        return True
    if d3 == 0 and _on_segment(b1, a1, a2):
        return True
    if d4 == 0 and _on_segment(b2, a1, a2):
        return True
    return False


def polygon_violations(vertices: Sequence[Point | Sequence[float]]) -> list[str]:
    """Collect every invariant violation for a would-be closed polygon.

    Returns an empty list when the sequence is a valid polygon. Messages
    name the offending vertex (or edge) indices.
    """
    verts = [Point(float(p[0]), float(p[1])) for p in vertices]
    violations: list[str] = []

    for i, p in enumerate(verts):
        if not (math.isfinite(p.x) and math.isfinite(p.y)):
            violations.append(f"non-finite vertex at index {i}: {p}")
    if violations:
        return violations

    if len(verts) < 4:
        violations.append(
            f"too few vertices: {len(verts)} (need at least 4 including the closing vertex)"
        )
        return violations

    closed = verts[0] == verts[-1]
    if not closed:
        violations.append(
            f"not closed: first vertex {tuple(verts[0])} != last vertex "
            f"{tuple(verts[-1])} (index {len(verts) - 1})"
        )

    for i in range(len(verts) - 1):
        if verts[i] == verts[i + 1]:
            violations.append(f"duplicate consecutive vertices at indices {i},{i + 1}")

    # Edges of the ring as given; simplicity is judged on non-adjacent pairs.
    ring = verts if closed else verts + [verts[0]]
    n_edges = len(ring) - 1
    for i in range(n_edges):
        for j in range(i + 2, n_edges):
            if i == 0 and j == n_edges - 1:
                continue  # first and last edge share the closure vertex
            if segments_intersect(ring[i], ring[i + 1], ring[j], ring[j + 1]):
                violations.append(f"self-intersection between edges {i} and {j}")

    if abs(_signed_area(ring)) <= 0.0:
        violations.append("zero area")

    return violations


def validate_polygon(vertices: Sequence[Point | Sequence[float]]) -> Polygon:
    """Return the validated polygon or raise with every violated invariant."""
    violations = polygon_violations(vertices)
    if violations:
        raise InvalidPolygonError(violations)
    return Polygon(tuple(Point(float(p[0]), float(p[1])) for p in vertices))
