"""Deterministic synthetic floor plans with full panoptic labels.

A block is a rows x cols grid of rooms inside a margin. Every grid edge is a
wall piece drawn as two parallel faces; openings cut a gap into a piece and
close it with jambs. Doors swing into rooms, windows sit in exterior walls,
parking rooms hold a row of stall outlines and the remaining rooms get furniture.
"""

import logging
import math
from collections import Counter
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from pancad.constants import BACKGROUND, BLOCK_SIZE_MM
from pancad.drawing import Drawing, EntityRecord, InstanceBox, LabelCatalog, gt_instance_boxes
from pancad.entities import Arc, Circle, Entity, Point2, Polyline, Segment
from pancad.exceptions import InfeasibleConfig, UnknownClass
from pancad.geometry import BBox, entity_bbox, union_bbox
from pancad.schemas import NoiseConfig, SynthConfig

logger = logging.getLogger(__name__)

OPENING_MARGIN_MM = 300.0
CLEARANCE_MM = 100.0
ROOM_INSET_MM = 200.0
PLACEMENT_TRIES = 50
DOOR_RADIUS_MM = 900.0
STALL_WIDTH_MM = 2500.0
STALL_DEPTH_MM = 5000.0
STALL_GAP_MM = 200.0
WINDOW_WIDTH_MM = (1200.0, 2400.0)

HALF_PI = math.pi / 2
QUARTER_TURNS = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))

DOOR_FAMILY = ("door", "single door", "double door", "sliding door")
WINDOW_FAMILY = ("window", "bay window", "blind window", "opening symbol")


# ------------------------------------------------------------
# Primitives in local coordinates
# ------------------------------------------------------------
Primitive = tuple


def _line(x0, y0, x1, y1) -> Primitive:
    return ("line", x0, y0, x1, y1)


def _rect(x0, y0, x1, y1) -> Primitive:
    return ("rect", x0, y0, x1, y1)


def _circle(cx, cy, r) -> Primitive:
    return ("circle", cx, cy, r)


def _arc(cx, cy, r, start, end) -> Primitive:
    return ("arc", cx, cy, r, start, end)


@dataclass(frozen=True)
class Frame:
    """Proper rotation by quarter turns followed by a translation."""

    ox: float = 0.0
    oy: float = 0.0
    turns: int = 0

    def point(self, a: float, b: float) -> Point2:
        ux, uy = QUARTER_TURNS[self.turns % 4]
        return Point2(x=self.ox + a * ux - b * uy, y=self.oy + a * uy + b * ux)

    def realize(self, primitive: Primitive) -> Entity:
        match primitive:
            case ("line", x0, y0, x1, y1):
                return Segment(s=self.point(x0, y0), t=self.point(x1, y1))
            case ("rect", x0, y0, x1, y1):
                corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]
                return Polyline(vertices=[self.point(a, b) for a, b in corners])
            case ("circle", cx, cy, r):
                return Circle(center=self.point(cx, cy), radius=r)
            case ("arc", cx, cy, r, start, end):
                offset = (self.turns % 4) * HALF_PI
                return Arc(
                    center=self.point(cx, cy),
                    radius=r,
                    start_angle=start + offset,
                    end_angle=end + offset,
                )
        raise ValueError(f"Unknown primitive {primitive[0]!r}.")


# ------------------------------------------------------------
# Room motifs: class -> builder of local primitives
# ------------------------------------------------------------
def _table(w=1600.0, h=900.0, r=250.0) -> list[Primitive]:
    gap = 100.0
    return [
        _rect(0, r * 2 + gap, w, r * 2 + gap + h),
        _circle(w / 2, r, r),
        _circle(w / 2, r * 3 + gap * 2 + h, r),
    ]


def _treads(w: float, h: float, steps: int) -> list[Primitive]:
    lines = [_line(w * k / steps, 0, w * k / steps, h) for k in range(1, steps)]
    return [_rect(0, 0, w, h), *lines]


ROOM_MOTIFS: dict[str, Callable[[], list[Primitive]]] = {
    "table": _table,
    "stairs": lambda: _treads(2400, 1200, 8),
    "escalator": lambda: _treads(1200, 4000, 12),
    "gas stove": lambda: [_rect(0, 0, 700, 600)]
    + [_circle(175 + 350 * i, 150 + 300 * j, 100) for i in range(2) for j in range(2)],
    "refrigerator": lambda: [_rect(0, 0, 700, 700), _line(0, 500, 700, 500)],
    "washing machine": lambda: [_rect(0, 0, 600, 600), _circle(300, 300, 200)],
    "sofa": lambda: [_rect(0, 0, 2000, 900), _rect(150, 0, 1850, 700)],
    "bed": lambda: [
        _rect(0, 0, 1800, 2000),
        _rect(150, 1600, 850, 1900),
        _rect(950, 1600, 1650, 1900),
        _line(0, 1400, 1800, 1400),
    ],
    "chair": lambda: [_rect(0, 0, 500, 400), _arc(250, 400, 250, 0.0, math.pi)],
    "bedside cupboard": lambda: [_rect(0, 0, 450, 450), _circle(225, 225, 60)],
    "TV cabinet": lambda: [
        _rect(0, 0, 1800, 450),
        _line(600, 0, 600, 450),
        _line(1200, 0, 1200, 450),
    ],
    "half-height cabinet": lambda: [_rect(0, 0, 1200, 600), _line(0, 0, 1200, 600)],
    "high cabinet": lambda: [_rect(0, 0, 900, 600), _line(0, 0, 900, 600), _line(0, 600, 900, 0)],
    "wardrobe": lambda: [
        _rect(0, 0, 1800, 600),
        _line(900, 0, 900, 600),
        _line(100, 300, 1700, 300),
    ],
    "sink": lambda: [_rect(0, 0, 600, 450), _circle(300, 200, 150), _circle(300, 400, 25)],
    "bath": lambda: [_rect(0, 0, 1700, 750), _rect(100, 100, 1600, 650)],
    "bath tub": lambda: [
        _rect(0, 0, 1700, 750),
        _line(375, 100, 1600, 100),
        _line(1600, 100, 1600, 650),
        _line(1600, 650, 375, 650),
        _arc(375, 375, 275, HALF_PI, 3 * HALF_PI),
    ],
    "squat toilet": lambda: [_rect(0, 0, 450, 650), _circle(225, 400, 150)],
    "urinal": lambda: [_line(0, 350, 400, 350), _arc(200, 350, 200, math.pi, 2 * math.pi)],
    "toilet": lambda: [_rect(0, 500, 450, 700), _circle(225, 250, 225)],
    "elevator": lambda: [_rect(0, 0, 1800, 1800), _line(0, 0, 1800, 1800), _line(0, 1800, 1800, 0)],
}


# ------------------------------------------------------------
# Openings: class -> builder in the wall frame
# ------------------------------------------------------------
def _opening_width(name: str, rng: np.random.Generator) -> float:
    match name:
        case "door" | "single door":
            return DOOR_RADIUS_MM
        case "double door":
            return 1600.0
        case "sliding door":
            return 1800.0
    return float(rng.uniform(*WINDOW_WIDTH_MM))


def _opening(
    name: str, g0: float, g1: float, half_t: float, c: float, side: int, high_end: bool
) -> list[Primitive]:
    """
    Primitives of an opening between jambs at g0 and g1.

    The wall face lies at b = +-half_t; side is +1 or -1, the room a door
    swings into or the outside a bay window projects to.
    """
    a0, a1 = g0 + c, g1 - c
    face = side * (half_t + c)
    match name:
        case "door" | "single door":
            r = a1 - a0
            if high_end:
                hinge = a1
                start, end = (HALF_PI, math.pi) if side > 0 else (math.pi, 3 * HALF_PI)
            else:
                hinge = a0
                start, end = (0.0, HALF_PI) if side > 0 else (3 * HALF_PI, 0.0)
            return [
                _line(hinge, face, hinge, face + side * r),
                _arc(hinge, face, r, start, end),
            ]
        case "double door":
            r = (a1 - a0) / 2
            left = (0.0, HALF_PI) if side > 0 else (3 * HALF_PI, 0.0)
            right = (HALF_PI, math.pi) if side > 0 else (math.pi, 3 * HALF_PI)
            return [
                _line(a0, face, a0, face + side * r),
                _arc(a0, face, r, *left),
                _line(a1, face, a1, face + side * r),
                _arc(a1, face, r, *right),
            ]
        case "sliding door":
            leaf = 0.55 * (a1 - a0)
            return [_rect(a0, -60, a0 + leaf, -10), _rect(a1 - leaf, 10, a1, 60)]
        case "window":
            return [_line(a0, b, a1, b) for b in (-80.0, 0.0, 80.0)]
        case "bay window":
            depth = side * 600.0
            return [
                _line(a0, 0.0, a1, 0.0),
                _line(a0, 0.0, a0 + 300, depth),
                _line(a0 + 300, depth, a1 - 300, depth),
                _line(a1 - 300, depth, a1, 0.0),
            ]
        case "blind window":
            return [_line(a0, -60.0, a1, -60.0), _line(a0, 60.0, a1, 60.0)]
        case "opening symbol":
            return [_line(a0, -80.0, a1, 80.0), _line(a0, 80.0, a1, -80.0)]
    raise UnknownClass(name)


# ------------------------------------------------------------
# Layout
# ------------------------------------------------------------
@dataclass
class WallPiece:
    frame: Frame
    length: float
    rooms: dict[int, tuple[int, int] | None]  # side -> room (row, col), None outside
    gap: tuple[float, float] | None = None

    @property
    def exterior(self) -> bool:
        return None in self.rooms.values()


def _overlaps(a: BBox, b: BBox, clearance: float) -> bool:
    return not (
        a[2] + clearance <= b[0]
        or b[2] + clearance <= a[0]
        or a[3] + clearance <= b[1]
        or b[3] + clearance <= a[1]
    )


class FloorPlanBuilder:
    def __init__(self, cfg: SynthConfig, catalog: LabelCatalog, requested: list[str]):
        self.cfg = cfg
        self.catalog = catalog
        self.requested = requested
        self.rng = np.random.default_rng(cfg.seed)
        self.records: list[EntityRecord] = []
        self.instance_counter: Counter = Counter()
        self.clearance = CLEARANCE_MM if cfg.overlap_free else 0.0

        span = BLOCK_SIZE_MM - 2 * cfg.margin_mm
        self.cell_w = span / cfg.cols
        self.cell_h = span / cfg.rows
        self.half_t = cfg.wall_thickness / 2
        if min(self.cell_w, self.cell_h) <= cfg.wall_thickness + 2 * ROOM_INSET_MM:
            raise InfeasibleConfig("Rooms are too small for the wall thickness.")

        self.rooms = [(r, c) for r in range(cfg.rows) for c in range(cfg.cols)]
        self.occupied: dict[tuple[int, int], list[BBox]] = {room: [] for room in self.rooms}
        self.parking_rooms: set[tuple[int, int]] = set()
        self.pieces = self._wall_pieces()

        self.doors = [name for name in DOOR_FAMILY if name in requested]
        self.windows = [name for name in WINDOW_FAMILY if name in requested]
        self.furniture = [
            name
            for name in requested
            if catalog.is_thing(catalog.index(name))
            and name not in DOOR_FAMILY
            and name not in WINDOW_FAMILY
        ]

    # Geometry helpers
    def room_interior(self, room: tuple[int, int]) -> BBox:
        r, c = room
        inset = self.half_t + ROOM_INSET_MM
        x0 = self.cfg.margin_mm + c * self.cell_w
        y0 = self.cfg.margin_mm + r * self.cell_h
        return (x0 + inset, y0 + inset, x0 + self.cell_w - inset, y0 + self.cell_h - inset)

    def _wall_pieces(self) -> list[WallPiece]:
        cfg = self.cfg
        m = cfg.margin_mm
        pieces = []
        for k in range(cfg.rows + 1):
            for c in range(cfg.cols):
                below = (k - 1, c) if k > 0 else None
                above = (k, c) if k < cfg.rows else None
                frame = Frame(m + c * self.cell_w, m + k * self.cell_h, 0)
                pieces.append(WallPiece(frame, self.cell_w, {1: above, -1: below}))
        for k in range(cfg.cols + 1):
            for r in range(cfg.rows):
                left = (r, k - 1) if k > 0 else None
                right = (r, k) if k < cfg.cols else None
                frame = Frame(m + k * self.cell_w, m + r * self.cell_h, 1)
                pieces.append(WallPiece(frame, self.cell_h, {1: left, -1: right}))
        return pieces

    # Emission
    def emit(self, name: str, entities: list[Entity]) -> None:
        label = self.catalog.index(name)
        instance = 0
        if self.catalog.is_thing(label):
            self.instance_counter[name] += 1
            instance = self.instance_counter[name]
        self.records += [EntityRecord(entity=e, label=label, instance=instance) for e in entities]

    def count(self, name: str) -> int:
        label = self.catalog.index(name)
        return sum(1 for record in self.records if record.label == label)

    # Steps
    def build(self) -> list[EntityRecord]:
        self.choose_parking_rooms()
        self.place_openings()
        if "wall" in self.requested:
            self.emit_walls()
        for room in sorted(self.parking_rooms):
            self.place_parking(room)
        self.place_furniture()
        return self.records

    def choose_parking_rooms(self) -> None:
        if "parking" not in self.requested:
            return
        x0, y0, x1, y1 = self.room_interior(self.rooms[0])
        if x1 - x0 < STALL_WIDTH_MM or y1 - y0 < STALL_DEPTH_MM:
            raise InfeasibleConfig("Rooms are too small for a parking stall.")
        draws = self.rng.random(len(self.rooms))
        density = self.cfg.parking_density
        self.parking_rooms = {room for room, u in zip(self.rooms, draws) if u < density}
        if not self.parking_rooms:
            self.parking_rooms.add(self.rooms[int(self.rng.integers(len(self.rooms)))])

        needs_rooms = bool(self.furniture or self.doors)
        if needs_rooms and len(self.parking_rooms) == len(self.rooms):
            if len(self.rooms) < 2:
                raise InfeasibleConfig("A single room cannot hold parking and other classes.")
            self.parking_rooms.discard(sorted(self.parking_rooms)[-1])

    def _door_side(self, piece: WallPiece) -> int | None:
        sides = [
            side
            for side, room in sorted(piece.rooms.items())
            if room is not None and room not in self.parking_rooms
        ]
        if piece.exterior or not sides:
            return None
        return sides[int(self.rng.integers(len(sides)))]

    def try_opening(self, piece: WallPiece, name: str) -> bool:
        if piece.gap is not None:
            return False
        width = _opening_width(name, self.rng) + 2 * self.clearance
        lo = self.half_t + OPENING_MARGIN_MM
        hi = piece.length - self.half_t - OPENING_MARGIN_MM - width
        if hi < lo:
            return False
        g0 = float(self.rng.uniform(lo, hi))
        g1 = g0 + width

        if name in DOOR_FAMILY:
            side = self._door_side(piece)
            if side is None:
                return False
            room = piece.rooms[side]
        else:
            side = next(s for s, room in piece.rooms.items() if room is None)
            room = None

        high_end = bool(self.rng.integers(2))
        primitives = _opening(name, g0, g1, self.half_t, self.clearance, side, high_end)
        entities = [piece.frame.realize(p) for p in primitives]
        if room is not None:
            box = union_bbox([entity_bbox(e) for e in entities])
            if any(_overlaps(box, other, self.clearance) for other in self.occupied[room]):
                return False
            self.occupied[room].append(box)
        piece.gap = (g0, g1)
        self.emit(name, entities)
        return True

    def place_openings(self) -> None:
        steps = (
            (self.doors, self.cfg.door_density, False),
            (self.windows, self.cfg.window_density, True),
        )
        for family, density, exterior in steps:
            if not family:
                continue
            candidates = [p for p in self.pieces if p.exterior == exterior]
            for piece in candidates:
                if self.rng.random() < density:
                    self.try_opening(piece, family[int(self.rng.integers(len(family)))])
            for name in family:
                if self.count(name):
                    continue
                order = self.rng.permutation(len(candidates))
                if not any(self.try_opening(candidates[i], name) for i in order):
                    raise InfeasibleConfig(f"No wall piece can hold a '{name}'.")

    def emit_walls(self) -> None:
        for piece in self.pieces:
            a0, a1, h = self.half_t, piece.length - self.half_t, self.half_t
            if piece.gap is None:
                primitives = [_line(a0, -h, a1, -h), _line(a0, h, a1, h)]
            else:
                g0, g1 = piece.gap
                primitives = [
                    _line(a0, -h, g0, -h),
                    _line(g1, -h, a1, -h),
                    _line(a0, h, g0, h),
                    _line(g1, h, a1, h),
                    _line(g0, -h, g0, h),
                    _line(g1, -h, g1, h),
                ]
            self.emit("wall", [piece.frame.realize(p) for p in primitives])

    def place_parking(self, room: tuple[int, int]) -> None:
        """A centered row of closed stall outlines."""
        x0, y0, x1, y1 = self.room_interior(room)
        pitch = STALL_WIDTH_MM + STALL_GAP_MM
        stalls = int((x1 - x0 + STALL_GAP_MM) // pitch)
        start = x0 + ((x1 - x0) - (stalls * pitch - STALL_GAP_MM)) / 2
        bottom = y0 + ((y1 - y0) - STALL_DEPTH_MM) / 2
        primitives = []
        for k in range(stalls):
            left = start + k * pitch
            primitives.append(_rect(left, bottom, left + STALL_WIDTH_MM, bottom + STALL_DEPTH_MM))
        self.emit("parking", [Frame().realize(p) for p in primitives])

    def try_motif(self, room: tuple[int, int], name: str) -> bool:
        primitives = ROOM_MOTIFS[name]()
        turns = int(self.rng.integers(4))
        rotated = [Frame(0.0, 0.0, turns).realize(p) for p in primitives]
        fx0, fy0, fx1, fy1 = union_bbox([entity_bbox(e) for e in rotated])
        x0, y0, x1, y1 = self.room_interior(room)
        if fx1 - fx0 > x1 - x0 or fy1 - fy0 > y1 - y0:
            return False
        for _ in range(PLACEMENT_TRIES):
            px = float(self.rng.uniform(x0, x1 - (fx1 - fx0)))
            py = float(self.rng.uniform(y0, y1 - (fy1 - fy0)))
            box = (px, py, px + fx1 - fx0, py + fy1 - fy0)
            if any(_overlaps(box, other, self.clearance) for other in self.occupied[room]):
                continue
            frame = Frame(px - fx0, py - fy0, turns)
            self.occupied[room].append(box)
            self.emit(name, [frame.realize(p) for p in primitives])
            return True
        return False

    def place_furniture(self) -> None:
        if not self.furniture:
            return
        rooms = [room for room in self.rooms if room not in self.parking_rooms]
        trials = 2 if len(self.furniture) == 1 else 4
        for room in rooms:
            for _ in range(int(self.rng.binomial(trials, self.cfg.furniture_density))):
                self.try_motif(room, self.furniture[int(self.rng.integers(len(self.furniture)))])
        for name in self.furniture:
            if self.count(name):
                continue
            order = self.rng.permutation(len(rooms))
            if not any(self.try_motif(rooms[i], name) for i in order):
                raise InfeasibleConfig(f"No room can hold a '{name}'.")


def _requested_classes(cfg: SynthConfig, catalog: LabelCatalog) -> list[str]:
    if cfg.classes is None:
        return list(catalog.names)
    for name in cfg.classes:
        catalog.index(name)
    unsupported = [
        name
        for name in cfg.classes
        if catalog.is_thing(catalog.index(name))
        and name not in ROOM_MOTIFS
        and name not in DOOR_FAMILY
        and name not in WINDOW_FAMILY
    ]
    if unsupported:
        raise InfeasibleConfig(f"No motif for classes {unsupported}.")
    return [name for name in catalog.names if name in cfg.classes]


def generate_floorplan(cfg: SynthConfig) -> Drawing:
    """
    One fully labeled 20 m x 20 m block, deterministic in cfg.

    Every requested class appears at least once.

    Raises:
        UnknownClass: a requested class is not in the catalog.
        InfeasibleConfig: the grid cannot hold every requested class.
    """
    catalog = LabelCatalog.synth5() if cfg.class_set == "synth5" else LabelCatalog.default()
    requested = _requested_classes(cfg, catalog)
    builder = FloorPlanBuilder(cfg, catalog, requested)
    records = builder.build()
    logger.debug("Generated synth-%08d with %d entities", cfg.seed, len(records))
    return Drawing(
        id=f"synth-{cfg.seed:08d}",
        extent=(0.0, 0.0, BLOCK_SIZE_MM, BLOCK_SIZE_MM),
        catalog=catalog,
        records=records,
    )


def corrupt_prediction(
    d: Drawing, noise: NoiseConfig, seed: int = 0
) -> tuple[np.ndarray, list[InstanceBox]]:
    """
    Controlled fake predictions: flipped entity labels and jittered GT boxes.

    Each label flips with probability flip_prob to a uniformly chosen other
    class; a background label may become any class. Each GT box is dropped
    with probability drop_prob, otherwise its corners move by up to jitter_mm
    and it gets a score in [min_score, 1].
    """
    rng = np.random.default_rng(seed)
    n_classes = len(d.catalog)
    labels = d.labels.copy()
    flips = rng.random(len(d)) < noise.flip_prob
    picks = rng.integers(0, max(n_classes - 1, 1), size=len(d))
    background_picks = rng.integers(0, max(n_classes, 1), size=len(d))
    if n_classes > 1:
        for i in np.flatnonzero(flips):
            own = labels[i]
            if own == BACKGROUND:
                labels[i] = background_picks[i]
            else:
                labels[i] = picks[i] if picks[i] < own else picks[i] + 1

    gt = gt_instance_boxes(d)
    drops = rng.random(len(gt)) < noise.drop_prob
    offsets = rng.uniform(-1.0, 1.0, size=(len(gt), 4)) * noise.jitter_mm
    scores = rng.uniform(noise.min_score, 1.0, size=len(gt))
    boxes = []
    for box, drop, offset, score in zip(gt, drops, offsets, scores):
        if drop:
            continue
        xs = sorted((box.bbox[0] + offset[0], box.bbox[2] + offset[2]))
        ys = sorted((box.bbox[1] + offset[1], box.bbox[3] + offset[3]))
        boxes.append(
            InstanceBox(label=box.label, bbox=(xs[0], ys[0], xs[1], ys[1]), score=float(score))
        )
    return labels, boxes
