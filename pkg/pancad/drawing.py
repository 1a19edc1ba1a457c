from collections import defaultdict
from typing import Literal

import numpy as np
from pydantic import ConfigDict, Field, field_validator, model_validator

from pancad.constants import (
    BACKGROUND,
    BACKGROUND_NAME,
    CLASS_CATEGORIES,
    STUFF_CLASSES,
    SYNTH_THING_CLASSES,
    THING_CLASSES,
)
from pancad.entities import AnyEntity
from pancad.exceptions import UnknownClass
from pancad.geometry import BBox, arc_length, entity_bbox, union_bbox
from pancad.schemas import BaseSchema


class FrozenSchema(BaseSchema):
    model_config = ConfigDict(frozen=True)


class LabelCatalog(FrozenSchema):
    """Ordered class names split into things and stuff; background is index -1."""

    names: tuple[str, ...]
    stuff: frozenset[str] = frozenset()

    @model_validator(mode="after")
    def check_partition(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("Class names must be unique.")
        if BACKGROUND_NAME in self.names:
            raise ValueError(f"'{BACKGROUND_NAME}' is reserved.")
        unknown = self.stuff - set(self.names)
        if unknown:
            raise ValueError(f"Stuff classes {sorted(unknown)} are not in the catalog.")
        return self

    @classmethod
    def default(cls) -> "LabelCatalog":
        return cls(names=THING_CLASSES + STUFF_CLASSES, stuff=frozenset(STUFF_CLASSES))

    @classmethod
    def synth5(cls) -> "LabelCatalog":
        return cls(
            names=SYNTH_THING_CLASSES + STUFF_CLASSES, stuff=frozenset(STUFF_CLASSES)
        )

    @classmethod
    def from_names(cls, names: list[str], stuff: list[str] | None = None) -> "LabelCatalog":
        if stuff is None:
            stuff = [name for name in names if name in STUFF_CLASSES]
        return cls(names=tuple(names), stuff=frozenset(stuff))

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        if name == BACKGROUND_NAME:
            return BACKGROUND
        try:
            return self.names.index(name)
        except ValueError as e:
            raise UnknownClass(name) from e

    def name(self, index: int) -> str:
        if index == BACKGROUND:
            return BACKGROUND_NAME
        return self.names[index]

    def is_stuff(self, index: int) -> bool:
        return index != BACKGROUND and self.names[index] in self.stuff

    def is_thing(self, index: int) -> bool:
        return index != BACKGROUND and self.names[index] not in self.stuff

    @property
    def thing_indices(self) -> list[int]:
        return [i for i in range(len(self.names)) if self.is_thing(i)]

    @property
    def stuff_indices(self) -> list[int]:
        return [i for i in range(len(self.names)) if self.is_stuff(i)]

    def category(self, index: int) -> str:
        name = self.name(index)
        return CLASS_CATEGORIES.get(name, name)


class EntityRecord(FrozenSchema):
    entity: AnyEntity
    label: int = Field(BACKGROUND, ge=BACKGROUND)
    instance: int = Field(0, ge=0)


class Drawing(FrozenSchema):
    id: str
    extent: tuple[float, float, float, float]
    catalog: LabelCatalog
    records: list[EntityRecord] = []

    @field_validator("extent")
    def check_extent(cls, value: BBox) -> BBox:
        if value[0] > value[2] or value[1] > value[3]:
            raise ValueError(f"Extent {value} has min > max.")
        return value

    @model_validator(mode="after")
    def check_records(self):
        n_classes = len(self.catalog)
        xmin, ymin, xmax, ymax = self.extent
        tol = 1e-6 * max(1.0, xmax - xmin, ymax - ymin)
        for i, record in enumerate(self.records):
            if record.label >= n_classes:
                raise ValueError(f"Record {i} label {record.label} outside catalog.")
            bx0, by0, bx1, by1 = entity_bbox(record.entity)
            if bx0 < xmin - tol or by0 < ymin - tol or bx1 > xmax + tol or by1 > ymax + tol:
                raise ValueError(f"Record {i} lies outside the drawing extent.")
        return self

    def __len__(self) -> int:
        return len(self.records)

    @property
    def entities(self) -> list:
        return [record.entity for record in self.records]

    @property
    def labels(self) -> np.ndarray:
        return np.array([record.label for record in self.records], dtype=np.int64)

    @property
    def instances(self) -> np.ndarray:
        return np.array([record.instance for record in self.records], dtype=np.int64)

    def log_lengths(self) -> np.ndarray:
        """Per-entity weights log(1 + L), natural log, L in millimeters."""
        return np.log1p(np.array([arc_length(r.entity) for r in self.records], dtype=float))

    def relabel(self, labels, instances=None) -> "Drawing":
        """Same geometry with replaced labels (and instances, zero when omitted)."""
        labels = [int(label) for label in labels]
        if instances is None:
            instances = [0] * len(labels)
        instances = [int(z) for z in instances]
        if len(labels) != len(self.records) or len(instances) != len(self.records):
            raise ValueError("Label count does not match the entity count.")
        records = [
            EntityRecord(entity=r.entity, label=label, instance=z)
            for r, label, z in zip(self.records, labels, instances)
        ]
        return self.model_copy(update={"records": records})


class Symbol(FrozenSchema):
    label: int
    instance: int = 0
    entities: frozenset[int] = Field(min_length=1)


class InstanceBox(FrozenSchema):
    label: int = Field(ge=0)
    bbox: tuple[float, float, float, float]
    score: float = Field(1.0, ge=0, le=1)


def group_symbols(
    d: Drawing, stuff_mode: Literal["class", "instance"] = "class"
) -> list[Symbol]:
    """
    Group entities into symbols.

    Things are grouped by (label, instance); thing entities with instance 0
    carry no instance and form no symbol. Each stuff class gives one symbol per
    drawing (or one per instance with stuff_mode="instance"). Background
    entities are excluded.
    """
    groups: dict[tuple[int, int], set[int]] = defaultdict(set)
    for i, record in enumerate(d.records):
        label = record.label
        if label == BACKGROUND:
            continue
        if d.catalog.is_stuff(label):
            key = (label, record.instance if stuff_mode == "instance" else 0)
        elif record.instance == 0:
            continue
        else:
            key = (label, record.instance)
        groups[key].add(i)
    return [
        Symbol(label=label, instance=z, entities=frozenset(members))
        for (label, z), members in sorted(groups.items())
    ]


def gt_instance_boxes(d: Drawing) -> list[InstanceBox]:
    """One box per thing symbol: the union of its entity boxes, confidence 1."""
    boxes = []
    for symbol in group_symbols(d):
        if not d.catalog.is_thing(symbol.label):
            continue
        bbox = union_bbox([entity_bbox(d.records[i].entity) for i in sorted(symbol.entities)])
        boxes.append(InstanceBox(label=symbol.label, bbox=bbox, score=1.0))
    return boxes
