import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parklot.geometry import (
    BoundingBox,
    InvalidBoxError,
    InvalidPolygonError,
    Point,
    Polygon,
    PolygonSet,
    bbox_center,
    iou,
    iou_matrix,
    point_in_polygon,
    polygon_contains_points,
    polygon_violations,
    ray_intersects_segment,
    segments_intersect,
    validate_polygon,
)

from oracles import (
    min_edge_distance,
    random_simple_polygon,
    rasterized_iou,
    winding_number_inside,
)


class TestRayIntersectsSegment:
    def test_vertical_segment_ahead(self):
        assert ray_intersects_segment(Point(0, 0), Point(1, -1), Point(1, 1))

    def test_segment_behind_origin(self):
        assert not ray_intersects_segment(Point(2, 0), Point(1, -1), Point(1, 1))

    def test_ray_outside_segment_y_range(self):
        assert not ray_intersects_segment(Point(0, 2), Point(1, -1), Point(1, 1))

    def test_horizontal_segment_never_crosses(self):
        assert not ray_intersects_segment(Point(0, 0), Point(1, 0), Point(5, 0))

    def test_endpoint_order_irrelevant(self):
        a, b = Point(3, -2), Point(4, 5)
        origin = Point(0, 1)
        assert ray_intersects_segment(origin, a, b) == ray_intersects_segment(origin, b, a)

    def test_vertex_on_ray_counted_once_per_chain(self):
        # Chain passing through y=0 at a shared vertex: exactly one of the two
        # edges meeting there may count.
        origin = Point(0, 0)
        lo, mid, hi = Point(2, -1), Point(2, 0), Point(2, 1)
        crossings = int(ray_intersects_segment(origin, lo, mid)) + int(
            ray_intersects_segment(origin, mid, hi)
        )
        assert crossings == 1


class TestPointInPolygon:
    def test_interior_of_convex(self, unit_square):
        assert point_in_polygon(Point(2, 2), unit_square)

    def test_outside_bounding_box(self, unit_square):
        assert not point_in_polygon(Point(5, 2), unit_square)

    def test_concave_notch(self):
        poly = Polygon(tuple(Point(*p) for p in [
            (0, 0), (4, 0), (4, 2), (2, 2), (2, 4), (0, 4), (0, 0),
        ]))
        assert not point_in_polygon(Point(3, 3), poly)
        assert point_in_polygon(Point(1, 3), poly)
        assert point_in_polygon(Point(3, 1), poly)

    def test_agrees_with_winding_number_oracle(self):
        rng = np.random.default_rng(2024)
        disagreements = 0
        checked = 0
        for _ in range(2000):
            ring = random_simple_polygon(rng)
            poly = Polygon(tuple(Point(*p) for p in ring))
            pts = rng.uniform(-60, 60, size=(5, 2))
            for px, py in pts:
                if min_edge_distance(px, py, ring) <= 1e-9:
                    continue
                checked += 1
                if point_in_polygon(Point(px, py), poly) != winding_number_inside(px, py, ring):
                    disagreements += 1
        assert checked > 5000
        assert disagreements == 0

    def test_invariant_under_rotation_and_reversal(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            ring = random_simple_polygon(rng)
            base = ring[:-1]
            p = Point(*rng.uniform(-60, 60, size=2))
            if min_edge_distance(p.x, p.y, ring) <= 1e-9:
                continue
            reference = point_in_polygon(p, Polygon(tuple(Point(*q) for q in ring)))
            for shift in (1, len(base) // 2):
                rotated = base[shift:] + base[:shift]
                poly = Polygon(tuple(Point(*q) for q in rotated + [rotated[0]]))
                assert point_in_polygon(p, poly) == reference
            reversed_ring = base[::-1]
            poly = Polygon(tuple(Point(*q) for q in reversed_ring + [reversed_ring[0]]))
            assert point_in_polygon(p, poly) == reference

    def test_parity_stable_under_vertex_perturbation(self):
        # Half-open tie-breaking must not change parity for points off edges.
        rng = np.random.default_rng(99)
        for _ in range(200):
            ring = random_simple_polygon(rng)
            p = Point(*rng.uniform(-60, 60, size=2))
            if min_edge_distance(p.x, p.y, ring) <= 1e-6:
                continue
            poly = Polygon(tuple(Point(*q) for q in ring))
            sign = 1 if rng.random() < 0.5 else -1
            jittered = [(x, y + sign * 1e-12) for x, y in ring[:-1]]
            jittered.append(jittered[0])
            poly_j = Polygon(tuple(Point(*q) for q in jittered))
            assert point_in_polygon(p, poly) == point_in_polygon(p, poly_j)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            ring = random_simple_polygon(rng)
            poly = Polygon(tuple(Point(*p) for p in ring))
            px = rng.uniform(-60, 60, size=40)
            py = rng.uniform(-60, 60, size=40)
            vec = polygon_contains_points(poly.xy, px, py)
            scalar = [point_in_polygon(Point(x, y), poly) for x, y in zip(px, py)]
            assert vec.tolist() == scalar

    def test_polygon_set_matches_single_polygon_kernel(self):
        rng = np.random.default_rng(6)
        rings = [random_simple_polygon(rng) for _ in range(8)]
        polys = [np.asarray(r, dtype=float) for r in rings]
        pset = PolygonSet(polys)
        px = rng.uniform(-60, 60, size=30)
        py = rng.uniform(-60, 60, size=30)
        combined = pset.contains_points(px, py)
        for i, xy in enumerate(polys):
            assert combined[i].tolist() == polygon_contains_points(xy, px, py).tolist()


class TestIoU:
    def test_identical_boxes(self):
        b = BoundingBox(1, 2, 5, 7)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(BoundingBox(0, 0, 1, 1), BoundingBox(5, 5, 6, 6)) == 0.0

    def test_one_third_overlap(self):
        # Oracle: rasterize both boxes on a fine grid and count cells.
        a = BoundingBox(0, 0, 2, 2)
        b = BoundingBox(1, 0, 3, 2)
        oracle = rasterized_iou((0, 0, 2, 2), (1, 0, 3, 2))
        assert iou(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert iou(a, b) == pytest.approx(oracle, abs=2e-2)

    @given(
        st.tuples(
            st.floats(-100, 100), st.floats(-100, 100),
            st.floats(0.1, 50), st.floats(0.1, 50),
        ),
        st.tuples(
            st.floats(-100, 100), st.floats(-100, 100),
            st.floats(0.1, 50), st.floats(0.1, 50),
        ),
        st.tuples(st.floats(-30, 30), st.floats(-30, 30)),
    )
    @settings(max_examples=200, deadline=None)
    def test_symmetry_range_translation(self, spec_a, spec_b, shift):
        ax, ay, aw, ah = spec_a
        bx, by, bw, bh = spec_b
        a = BoundingBox(ax, ay, ax + aw, ay + ah)
        b = BoundingBox(bx, by, bx + bw, by + bh)
        v = iou(a, b)
        assert 0.0 <= v <= 1.0
        assert iou(b, a) == pytest.approx(v, rel=1e-12)
        dx, dy = shift
        a2 = BoundingBox(ax + dx, ay + dy, ax + aw + dx, ay + ah + dy)
        b2 = BoundingBox(bx + dx, by + dy, bx + bw + dx, by + bh + dy)
        assert iou(a2, b2) == pytest.approx(v, abs=1e-9)

    def test_matrix_matches_scalar(self):
        rng = np.random.default_rng(3)
        corners = rng.uniform(0, 100, size=(6, 2))
        sizes = rng.uniform(1, 40, size=(6, 2))
        boxes = [BoundingBox(x, y, x + w, y + h)
                 for (x, y), (w, h) in zip(corners, sizes)]
        arr = np.array([[b.x_min, b.y_min, b.x_max, b.y_max] for b in boxes])
        mat = iou_matrix(arr, arr)
        for i, a in enumerate(boxes):
            for j, b in enumerate(boxes):
                assert mat[i, j] == pytest.approx(iou(a, b), abs=1e-12)


class TestBBoxCenter:
    @pytest.mark.parametrize(
        "box,expected",
        [
            ((0, 0, 4, 2), (2, 1)),
            ((-2, -2, 2, 2), (0, 0)),
            ((10, 20, 11, 21), (10.5, 20.5)),
        ],
    )
    def test_examples(self, box, expected):
        assert bbox_center(BoundingBox(*box)) == Point(*expected)

    @given(
        st.floats(-1000, 1000), st.floats(-1000, 1000),
        st.floats(0.01, 500), st.floats(0.01, 500),
    )
    @settings(max_examples=100, deadline=None)
    def test_center_inside_box(self, x, y, w, h):
        b = BoundingBox(x, y, x + w, y + h)
        c = bbox_center(b)
        assert b.x_min <= c.x <= b.x_max
        assert b.y_min <= c.y <= b.y_max

    def test_degenerate_box_rejected(self):
        with pytest.raises(InvalidBoxError):
            BoundingBox(5, 0, 5, 2)
        with pytest.raises(InvalidBoxError):
            BoundingBox(0, 0, 4, float("nan"))


class TestValidatePolygon:
    def test_valid_square(self):
        poly = validate_polygon([(0, 0), (4, 0), (4, 4), (0, 4), (0, 0)])
        assert isinstance(poly, Polygon)
        assert len(poly.vertices) == 5

    def test_not_closed(self):
        violations = polygon_violations([(0, 0), (4, 0), (4, 4), (0, 4)])
        assert any("not closed" in v for v in violations)
        with pytest.raises(InvalidPolygonError):
            validate_polygon([(0, 0), (4, 0), (4, 4), (0, 4)])

    def test_bow_tie_self_intersection(self):
        # Oracle: brute-force pairwise segment intersection finds the cross.
        ring = [(0, 0), (4, 4), (4, 0), (0, 4), (0, 0)]
        crossing_pairs = []
        for i in range(4):
            for j in range(i + 2, 4):
                if i == 0 and j == 3:
                    continue
                if segments_intersect(
                    Point(*ring[i]), Point(*ring[i + 1]),
                    Point(*ring[j]), Point(*ring[j + 1]),
                ):
                    crossing_pairs.append((i, j))
        assert crossing_pairs == [(0, 2)]
        violations = polygon_violations(ring)
        assert any("self-intersection" in v for v in violations)

    def test_duplicate_consecutive_vertices(self):
        violations = polygon_violations([(0, 0), (4, 0), (4, 0), (4, 4), (0, 4), (0, 0)])
        assert any("duplicate consecutive" in v and "1,2" in v for v in violations)

    def test_zero_area(self):
        violations = polygon_violations([(0, 0), (4, 0), (8, 0), (0, 0)])
        assert any("zero area" in v for v in violations)

    def test_non_finite_vertex_named(self):
        violations = polygon_violations([(0, 0), (math.inf, 0), (4, 4), (0, 0)])
        assert any("index 1" in v for v in violations)

    def test_too_few_vertices(self):
        assert polygon_violations([(0, 0), (1, 1), (0, 0)])

    def test_polygon_constructor_validates(self):
        with pytest.raises(InvalidPolygonError) as exc:
            Polygon((Point(0, 0), Point(4, 4), Point(4, 0), Point(0, 4), Point(0, 0)))
        assert any("self-intersection" in v for v in exc.value.violations)

    def test_random_simple_polygons_validate(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            ring = random_simple_polygon(rng)
            assert polygon_violations(ring) == []
