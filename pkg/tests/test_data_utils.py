import io
import json

import ezdxf
import numpy as np
import pytest

from pancad.data_utils import (
    DrawingDataset,
    load_boxes,
    load_drawing,
    parse_drawing_lines,
    parse_dxf_subset,
    read_dxf_file,
    save_boxes,
    save_drawing,
    write_dxf,
)
from pancad.drawing import InstanceBox
from pancad.entities import Arc, Circle, Polyline, Segment
from pancad.exceptions import ParseError, UnknownClass
from pancad.geometry import sample_points
from pancad.schemas import SynthConfig
from tests.conftest import make_drawing, segment

HEADER = json.dumps({"id": "x", "extent": [0, 0, 10, 10], "classes": ["door", "wall"]})


def dxf_text(*entities: list[tuple[int, str]]) -> str:
    tags = [(0, "SECTION"), (2, "ENTITIES")]
    for entity in entities:
        tags += entity
    tags += [(0, "ENDSEC"), (0, "EOF")]
    return "\n".join(f"{code}\n{value}" for code, value in tags) + "\n"


def written_dxf(build) -> str:
    doc = ezdxf.new("R2010")
    build(doc.modelspace())
    stream = io.StringIO()
    doc.write(stream)
    return stream.getvalue()


def test_save_load_drawing(tmp_path, door_and_wall):
    path = tmp_path / "d.jsonl"
    save_drawing(door_and_wall, path)
    assert load_drawing(path) == door_and_wall


def test_save_load_synthetic_drawing(tmp_path, synth_drawing):
    path = tmp_path / "synth.jsonl"
    save_drawing(synth_drawing, path)
    loaded = load_drawing(path)
    assert loaded == synth_drawing
    np.testing.assert_array_equal(loaded.instances, synth_drawing.instances)


def test_unknown_class_in_file():
    row = json.dumps({"kind": "segment", "s": [0, 0], "t": [1, 1], "label": "boat"})
    with pytest.raises(UnknownClass):
        parse_drawing_lines([HEADER, row])


def test_malformed_lines():
    with pytest.raises(ParseError) as err:
        parse_drawing_lines([HEADER, "{not json"])
    assert err.value.line == 2

    degenerate = json.dumps({"kind": "segment", "s": [1, 1], "t": [1, 1], "label": "door"})
    with pytest.raises(ParseError) as err:
        parse_drawing_lines([HEADER, "", degenerate])
    assert err.value.line == 3

    with pytest.raises(ParseError):
        parse_drawing_lines([])
    with pytest.raises(ParseError):
        parse_drawing_lines([json.dumps({"id": "x", "classes": []})])


def test_box_file(tmp_path, catalog):
    boxes = [InstanceBox(label=catalog.index("door"), bbox=(0, 0, 5, 5), score=0.75)]
    save_boxes(boxes, tmp_path / "b.boxes.json", catalog)
    assert load_boxes(tmp_path / "b.boxes.json", catalog) == boxes

    (tmp_path / "stuff.boxes.json").write_text(
        json.dumps([{"class": "wall", "bbox": [0, 0, 1, 1], "score": 1.0}])
    )
    with pytest.raises(UnknownClass):
        load_boxes(tmp_path / "stuff.boxes.json", catalog)


def test_box_file_rejects_non_object_items(tmp_path, catalog):
    for payload in ([["door", [0, 0, 1, 1]]], ["door"], [None]):
        path = tmp_path / "bad.boxes.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(ParseError) as err:
            load_boxes(path, catalog)
        assert "JSON object" in str(err.value)


def test_parse_minimal_line():
    text = dxf_text([(0, "LINE"), (8, "0"), (10, "0"), (20, "0"), (11, "10"), (21, "0")])
    drawing, skipped = parse_dxf_subset(text)
    assert drawing.entities == [Segment(s=(0, 0), t=(10, 0))]
    assert (drawing.labels == -1).all()
    assert not skipped


def test_parse_empty_and_unsupported():
    drawing, skipped = parse_dxf_subset(dxf_text())
    assert len(drawing) == 0

    drawing, skipped = parse_dxf_subset(dxf_text([(0, "TEXT"), (10, "1"), (20, "1"), (1, "hi")]))
    assert len(drawing) == 0
    assert skipped["TEXT"] == 1


def test_parse_circle_arc_polyline():
    def build(msp):
        msp.add_circle((5, 5), 2)
        msp.add_arc((0, 0), 3, 90, 180)
        msp.add_lwpolyline([(0, 0), (4, 0), (4, 3)], format="xy", close=True)

    drawing, skipped = parse_dxf_subset(written_dxf(build))
    assert not skipped
    circle, arc, polyline = drawing.entities
    assert circle == Circle(center=(5, 5), radius=2)
    assert isinstance(arc, Arc)
    assert arc.start_angle == pytest.approx(np.pi / 2)
    assert arc.end_angle == pytest.approx(np.pi)
    assert isinstance(polyline, Polyline)
    assert polyline.closed
    assert len(polyline.vertices) == 4


def test_parse_errors():
    with pytest.raises(ParseError):
        parse_dxf_subset("0\nSECTION\n2\n")
    with pytest.raises(ParseError):
        parse_dxf_subset(dxf_text([(0, "LINE"), (10, "zero"), (20, "0"), (11, "1"), (21, "0")]))
    with pytest.raises(ParseError):
        parse_dxf_subset("abc\nSECTION\n")


def test_parse_error_reports_line():
    with pytest.raises(ParseError) as err:
        parse_dxf_subset("0\nSECTION\n2\n")
    assert err.value.line == 3


def test_polyline_bulges_are_counted():
    def build(msp):
        msp.add_lwpolyline([(0, 0, 0.5), (4, 0, 0), (4, 3, -1.0)], format="xyb")
        msp.add_lwpolyline([(0, 5), (4, 5)], format="xy")

    drawing, skipped = parse_dxf_subset(written_dxf(build))
    assert len(drawing) == 2
    assert drawing.entities[0].vertices[1].as_tuple() == (4, 0)
    assert skipped["LWPOLYLINE (bulge)"] == 2
    assert sum(skipped.values()) == 2


def test_dxf_export_parse_geometry(tmp_path):
    for seed in range(5):
        d = DrawingDataset.from_config(SynthConfig(seed=seed, class_set="full"), 1)[0]
        path = tmp_path / f"{d.id}.dxf"
        write_dxf(d, path)
        parsed, skipped = read_dxf_file(path)
        assert not skipped
        assert len(parsed) == len(d)
        for original, restored in zip(d.entities, parsed.entities):
            assert type(original) is type(restored)
            np.testing.assert_allclose(
                sample_points(restored, 8), sample_points(original, 8), atol=1e-6
            )


def test_dataset_directory(tmp_path):
    dataset = DrawingDataset.from_config(SynthConfig(seed=11), 3)
    written = dataset.to_directory(tmp_path, dxf=True)
    assert len(written) == 6
    loaded = DrawingDataset.from_directory(tmp_path)
    assert [d.id for d in loaded] == [d.id for d in dataset]
    assert loaded.by_id()["synth-00000012"] == dataset[1]


def test_dataset_generation_is_thread_independent():
    one = DrawingDataset.from_config(SynthConfig(seed=5), 4, n_jobs=1)
    many = DrawingDataset.from_config(SynthConfig(seed=5), 4, n_jobs=3)
    assert list(one) == list(many)
