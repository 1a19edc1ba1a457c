import io
import json
import logging
import math
import re
from collections import Counter
from collections.abc import Iterator
from pathlib import Path
from typing import Any

import ezdxf
from joblib import Parallel, delayed
from pydantic import TypeAdapter, ValidationError

from pancad.constants import BACKGROUND_NAME
from pancad.drawing import Drawing, EntityRecord, InstanceBox, LabelCatalog
from pancad.entities import AnyEntity, Arc, Circle, Entity, Polyline, Segment
from pancad.exceptions import ParseError, UnknownClass
from pancad.geometry import entity_bbox, union_bbox
from pancad.schemas import SynthConfig
from pancad.synth import generate_floorplan

logger = logging.getLogger(__name__)

_entity_adapter = TypeAdapter(AnyEntity)

DRAWING_SUFFIX = ".jsonl"
BOXES_SUFFIX = ".boxes.json"
_LINE_IN_MESSAGE = re.compile(r"line:?\s*(\d+)", re.IGNORECASE)


# ------------------------------------------------------------
# JSON-lines drawing files
# ------------------------------------------------------------
def drawing_to_lines(d: Drawing) -> list[str]:
    header = {
        "id": d.id,
        "extent": list(d.extent),
        "classes": list(d.catalog.names),
        "stuff": sorted(d.catalog.stuff),
    }
    lines = [json.dumps(header)]
    for record in d.records:
        row = record.entity.model_dump()
        row["label"] = d.catalog.name(record.label)
        row["instance"] = record.instance
        lines.append(json.dumps(row))
    return lines


def save_drawing(d: Drawing, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(drawing_to_lines(d)) + "\n", encoding="utf-8")
    logger.debug("Saved drawing '%s' (%d entities) to %s", d.id, len(d), path)


def load_drawing(path: str | Path) -> Drawing:
    """
    Load a JSON-lines drawing file.

    Raises:
        ParseError: malformed JSON, missing fields or invalid geometry.
        UnknownClass: an entity label outside the header's class list.
    """
    text = Path(path).read_text(encoding="utf-8")
    drawing = parse_drawing_lines(text.splitlines())
    logger.debug("Loaded drawing '%s' (%d entities) from %s", drawing.id, len(drawing), path)
    return drawing


def parse_drawing_lines(lines: list[str]) -> Drawing:
    numbered = [(i + 1, line) for i, line in enumerate(lines) if line.strip()]
    if not numbered:
        raise ParseError(1, "missing header line")

    header_line, header_text = numbered[0]
    header = _parse_json_object(header_line, header_text)
    try:
        catalog = LabelCatalog.from_names(header["classes"], header.get("stuff"))
        drawing_id = str(header["id"])
        extent = tuple(float(v) for v in header["extent"])
    except KeyError as e:
        raise ParseError(header_line, f"header is missing field {e}") from e
    except (TypeError, ValueError, ValidationError) as e:
        raise ParseError(header_line, f"invalid header: {e}") from e

    records = []
    for line_no, text in numbered[1:]:
        row = _parse_json_object(line_no, text)
        label_name = row.pop("label", BACKGROUND_NAME)
        instance = row.pop("instance", 0)
        label = catalog.index(label_name)  # UnknownClass propagates
        try:
            entity = _entity_adapter.validate_python(row)
            records.append(EntityRecord(entity=entity, label=label, instance=instance))
        except ValidationError as e:
            raise ParseError(line_no, _first_error(e)) from e

    try:
        return Drawing(id=drawing_id, extent=extent, catalog=catalog, records=records)
    except ValidationError as e:
        raise ParseError(header_line, _first_error(e)) from e


def _parse_json_object(line_no: int, text: str) -> dict[str, Any]:
    try:
        value = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(line_no, f"invalid JSON: {e.msg}") from e
    if not isinstance(value, dict):
        raise ParseError(line_no, "expected a JSON object")
    return value


def _first_error(e: ValidationError) -> str:
    err = e.errors()[0]
    location = ".".join(str(part) for part in err["loc"])
    return f"{location}: {err['msg']}" if location else err["msg"]


# ------------------------------------------------------------
# Box files
# ------------------------------------------------------------
def save_boxes(boxes: list[InstanceBox], path: str | Path, catalog: LabelCatalog) -> None:
    payload = [
        {"class": catalog.name(box.label), "bbox": list(box.bbox), "score": box.score}
        for box in boxes
    ]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1), encoding="utf-8")


def load_boxes(path: str | Path, catalog: LabelCatalog) -> list[InstanceBox]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(e.lineno, f"invalid JSON: {e.msg}") from e
    if not isinstance(payload, list):
        raise ParseError(1, "box file must hold a JSON array")

    boxes = []
    for index, item in enumerate(payload):
        if not isinstance(item, dict):
            raise ParseError(1, f"box {index} must be a JSON object, got {type(item).__name__}")
        label = catalog.index(item.get("class", ""))
        if not catalog.is_thing(label):
            raise UnknownClass(item.get("class", ""))
        try:
            boxes.append(
                InstanceBox(label=label, bbox=tuple(item["bbox"]), score=item.get("score", 1.0))
            )
        except (KeyError, ValidationError) as e:
            raise ParseError(1, f"invalid box {item}: {e}") from e
    return boxes


# ------------------------------------------------------------
# DXF subset
# ------------------------------------------------------------
def parse_dxf_subset(text: str, drawing_id: str = "dxf") -> tuple[Drawing, Counter]:
    """
    Extract LINE, CIRCLE, ARC and LWPOLYLINE entities from an ASCII DXF.

    Only modelspace entities are read. All records are labeled background.
    Unsupported or degenerate entities are skipped and counted. LWPOLYLINE
    bulges are dropped (the chord is kept) and counted under
    "LWPOLYLINE (bulge)".

    Args:
        text (str): DXF content with group codes and values on alternating lines.
        drawing_id (str): Id given to the resulting drawing.

    Returns:
        tuple[Drawing, Counter]: The drawing and skipped entity counts by type.

    Raises:
        ParseError: dangling group code, non-numeric value or broken structure.
    """
    doc = _read_dxf_document(text)
    skipped: Counter = Counter()
    records = []

    for dxf_entity in doc.modelspace():
        dxf_type = dxf_entity.dxftype()
        try:
            entity = _dxf_to_entity(dxf_entity, skipped)
        except ValidationError:
            logger.debug("Skipping degenerate %s #%s", dxf_type, dxf_entity.dxf.handle)
            skipped[f"{dxf_type} (degenerate)"] += 1
            continue
        if entity is None:
            skipped[dxf_type] += 1
            continue
        records.append(EntityRecord(entity=entity))

    if skipped:
        logger.warning("Skipped unsupported DXF entities: %s", dict(skipped))

    if records:
        extent = union_bbox([entity_bbox(r.entity) for r in records])
    else:
        extent = (0.0, 0.0, 0.0, 0.0)
    catalog = LabelCatalog.default()
    drawing = Drawing(id=drawing_id, extent=extent, catalog=catalog, records=records)
    return drawing, skipped


def read_dxf_file(path: str | Path) -> tuple[Drawing, Counter]:
    path = Path(path)
    text = path.read_text(encoding="utf-8", errors="replace")
    return parse_dxf_subset(text, drawing_id=path.stem)


def _read_dxf_document(text: str):
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if len(lines) % 2:
        raise ParseError(len(lines), "dangling group code without a value")
    try:
        return ezdxf.read(io.StringIO(text))
    except (ezdxf.DXFError, ValueError) as e:
        raise ParseError(_error_line(str(e)), str(e)) from e


def _error_line(message: str) -> int:
    match = _LINE_IN_MESSAGE.search(message)
    return int(match.group(1)) if match else 1


def _xy(v) -> tuple[float, float]:
    return float(v.x), float(v.y)


def _dxf_to_entity(e, skipped: Counter) -> Entity | None:
    match e.dxftype():
        case "LINE":
            return Segment(s=_xy(e.dxf.start), t=_xy(e.dxf.end))
        case "CIRCLE":
            return Circle(center=_xy(e.dxf.center), radius=e.dxf.radius)
        case "ARC":
            return Arc(
                center=_xy(e.dxf.center),
                radius=e.dxf.radius,
                start_angle=math.radians(e.dxf.start_angle),
                end_angle=math.radians(e.dxf.end_angle),
            )
        case "LWPOLYLINE":
            points = list(e.get_points("xyb"))
            bulges = sum(1 for _, _, bulge in points if bulge)
            if bulges:
                logger.debug("Dropping %d bulge(s) of LWPOLYLINE #%s", bulges, e.dxf.handle)
                skipped["LWPOLYLINE (bulge)"] += bulges
            vertices = [(x, y) for x, y, _ in points]
            if e.closed and vertices and vertices[0] != vertices[-1]:
                vertices.append(vertices[0])
            return Polyline(vertices=vertices)
        case _:
            return None


def write_dxf(d: Drawing, path: str | Path) -> None:
    """Export the drawing geometry as DXF, one layer per class name."""
    doc = ezdxf.new("R2010")
    msp = doc.modelspace()
    for record in d.records:
        layer = d.catalog.name(record.label)
        if layer not in doc.layers:
            doc.layers.add(layer)
        attribs = {"layer": layer}
        match record.entity:
            case Segment(s=s, t=t):
                msp.add_line(s.as_tuple(), t.as_tuple(), dxfattribs=attribs)
            case Circle(center=center, radius=radius):
                msp.add_circle(center.as_tuple(), radius, dxfattribs=attribs)
            case Arc() as arc:
                msp.add_arc(
                    arc.center.as_tuple(),
                    arc.radius,
                    math.degrees(arc.start_angle),
                    math.degrees(arc.end_angle),
                    dxfattribs=attribs,
                )
            case Polyline(vertices=vertices):
                points = [v.as_tuple() for v in vertices]
                msp.add_lwpolyline(points, format="xy", dxfattribs=attribs)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc.saveas(path)


# ------------------------------------------------------------
# Datasets
# ------------------------------------------------------------
class DrawingDataset:
    def __init__(self, drawings: list[Drawing]):
        self.drawings = drawings

    def __call__(self):
        return self.drawings

    def __len__(self) -> int:
        return len(self.drawings)

    def __iter__(self) -> Iterator[Drawing]:
        return iter(self.drawings)

    def __getitem__(self, index: int) -> Drawing:
        return self.drawings[index]

    @classmethod
    def from_directory(cls, path: str | Path) -> "DrawingDataset":
        path = Path(path)
        files = [path] if path.is_file() else sorted(path.glob(f"*{DRAWING_SUFFIX}"))
        drawings = [load_drawing(file) for file in files]
        logger.info("Loaded %d drawings from %s", len(drawings), path)
        return cls(drawings)

    @classmethod
    def from_config(cls, config: SynthConfig, count: int, n_jobs: int = 1) -> "DrawingDataset":
        drawings = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(generate_floorplan)(config.model_copy(update={"seed": config.seed + i}))
            for i in range(count)
        )
        return cls(drawings)

    def to_directory(self, path: str | Path, dxf: bool = False) -> list[Path]:
        path = Path(path)
        written = []
        for drawing in self.drawings:
            target = path / f"{drawing.id}{DRAWING_SUFFIX}"
            save_drawing(drawing, target)
            written.append(target)
            if dxf:
                dxf_target = path / f"{drawing.id}.dxf"
                write_dxf(drawing, dxf_target)
                written.append(dxf_target)
        logger.info("Wrote %d drawings to %s", len(self.drawings), path)
        return written

    def by_id(self) -> dict[str, Drawing]:
        return {drawing.id: drawing for drawing in self.drawings}
