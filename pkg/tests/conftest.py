import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from parklot.geometry import Point, Polygon
from parklot.slots import Slot, SlotMap


def square(x0: float, y0: float, size: float) -> Polygon:
    return Polygon(tuple(Point(*p) for p in [
        (x0, y0), (x0 + size, y0), (x0 + size, y0 + size), (x0, y0 + size), (x0, y0),
    ]))


@pytest.fixture
def unit_square() -> Polygon:
    return square(0.0, 0.0, 4.0)


@pytest.fixture
def ten_slot_map() -> SlotMap:
    slots = tuple(
        Slot(slot_id=i, polygon=square(10.0 + 60.0 * i, 10.0, 40.0), label=f"S{i}")
        for i in range(10)
    )
    return SlotMap(slots=slots, frame_width=640.0, frame_height=120.0)
