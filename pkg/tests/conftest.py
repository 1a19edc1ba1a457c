import math

import pytest

from pancad.drawing import Drawing, EntityRecord, LabelCatalog
from pancad.entities import Arc, Circle, Segment
from pancad.schemas import SynthConfig
from pancad.synth import generate_floorplan


def segment(x0, y0, x1, y1) -> Segment:
    return Segment(s=(x0, y0), t=(x1, y1))


def make_drawing(records, catalog=None, extent=(0.0, 0.0, 100.0, 100.0), drawing_id="test"):
    """records: list of (entity, label name or None, instance)."""
    catalog = catalog or LabelCatalog.synth5()
    return Drawing(
        id=drawing_id,
        extent=extent,
        catalog=catalog,
        records=[
            EntityRecord(
                entity=e, label=catalog.index(name) if name else -1, instance=z
            )
            for e, name, z in records
        ],
    )


@pytest.fixture
def catalog():
    return LabelCatalog.synth5()


@pytest.fixture
def door_and_wall(catalog):
    """Two doors (segment + quarter arc each), two wall faces and a stray line."""
    return make_drawing(
        [
            (segment(10, 10, 10, 19), "door", 1),
            (Arc(center=(10, 10), radius=9, start_angle=0, end_angle=math.pi / 2), "door", 1),
            (segment(60, 10, 60, 19), "door", 2),
            (Arc(center=(60, 10), radius=9, start_angle=0, end_angle=math.pi / 2), "door", 2),
            (segment(0, 0, 100, 0), "wall", 0),
            (segment(0, 5, 100, 5), "wall", 3),
            (Circle(center=(40, 60), radius=5), None, 0),
        ],
        catalog,
    )


@pytest.fixture(scope="session")
def synth_drawing():
    return generate_floorplan(SynthConfig(seed=3, overlap_free=True))
