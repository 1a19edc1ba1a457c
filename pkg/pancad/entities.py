import math
from typing import Annotated, Any, Literal

from pydantic import ConfigDict, Field, model_serializer, model_validator

from pancad.constants import TWO_PI
from pancad.schemas import BaseSchema


class Point2(BaseSchema):
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    x: float
    y: float

    @model_validator(mode="before")
    @classmethod
    def from_pair(cls, value: Any) -> Any:
        # Accept [x, y] / (x, y) as written in drawing files
        if isinstance(value, (list, tuple)):
            if len(value) != 2:
                raise ValueError(f"A point needs 2 coordinates, got {len(value)}.")
            return {"x": value[0], "y": value[1]}
        return value

    @model_serializer
    def to_pair(self) -> list[float]:
        return [self.x, self.y]

    def as_tuple(self) -> tuple[float, float]:
        return (self.x, self.y)


class Entity(BaseSchema):
    """Base class of the graphical primitives, all in millimeters."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    kind: str


class Segment(Entity):
    kind: Literal["segment"] = "segment"
    s: Point2
    t: Point2

    @model_validator(mode="after")
    def check_not_degenerate(self):
        if self.s == self.t:
            raise ValueError("Segment endpoints must differ.")
        return self


class Arc(Entity):
    """Counterclockwise arc from start_angle to end_angle (radians)."""

    kind: Literal["arc"] = "arc"
    center: Point2
    radius: float = Field(gt=0)
    start_angle: float
    end_angle: float

    @model_validator(mode="before")
    @classmethod
    def normalize_angles(cls, data: Any) -> Any:
        if isinstance(data, dict):
            data = dict(data)
            for key in ("start_angle", "end_angle"):
                if key in data and isinstance(data[key], (int, float)):
                    if not math.isfinite(data[key]):
                        raise ValueError(f"{key} must be finite.")
                    data[key] = normalize_angle(float(data[key]))
        return data

    @property
    def sweep(self) -> float:
        sweep = (self.end_angle - self.start_angle) % TWO_PI
        return sweep if sweep > 0 else TWO_PI


class Circle(Entity):
    kind: Literal["circle"] = "circle"
    center: Point2
    radius: float = Field(gt=0)


class Polyline(Entity):
    kind: Literal["polyline"] = "polyline"
    vertices: list[Point2] = Field(min_length=2)

    @model_validator(mode="after")
    def check_edges(self):
        for a, b in zip(self.vertices[:-1], self.vertices[1:]):
            if a == b:
                raise ValueError("Polyline has a zero-length edge.")
        return self

    @property
    def closed(self) -> bool:
        return len(self.vertices) > 2 and self.vertices[0] == self.vertices[-1]


AnyEntity = Annotated[Segment | Arc | Circle | Polyline, Field(discriminator="kind")]


def normalize_angle(angle: float) -> float:
    """Map an angle to [0, 2*pi)."""
    angle = angle % TWO_PI
    # x % 2pi can round up to exactly 2pi for tiny negative x
    return 0.0 if angle >= TWO_PI else angle
