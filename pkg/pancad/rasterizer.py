"""Label masks, label voting and the image-aligned feature pyramid."""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from pancad.constants import (
    BACKGROUND,
    DISTANCE_CLIP_PX,
    LINE_KERNEL_SIZE,
    LINE_WIDTH_PX,
    MAX_CANVAS_PIXELS,
    MAX_STROKE_PIECE_PX,
    PYRAMID_CHANNELS,
    PYRAMID_LEVELS,
    TWO_PI,
    VOTE_SAMPLES,
)
from pancad.drawing import Drawing
from pancad.entities import Arc, Circle, Entity, Point2, Polyline, Segment
from pancad.exceptions import CanvasTooLarge
from pancad.geometry import points_to_arc_distance, points_to_segment_distance, sample_points

logger = logging.getLogger(__name__)

# Row/column steps for the 0, 45, 90 and 135 degree line filters
LINE_DIRECTIONS = ((0, 1), (1, 1), (1, 0), (1, -1))


@dataclass(frozen=True)
class LabelMask:
    """
    Per-pixel class indices over a drawing extent.

    Pixel (r, c) has its center at world (origin.x + (c + 0.5) / scale,
    origin.y + (r + 0.5) / scale); rows grow with y.
    """

    width: int
    height: int
    scale: float
    origin: Point2
    data: np.ndarray

    def pixel_index(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row, column and on-canvas flag of world points."""
        cols = _pixel_floor((points[:, 0] - self.origin.x) * self.scale, self.width)
        rows = _pixel_floor((points[:, 1] - self.origin.y) * self.scale, self.height)
        inside = (cols >= 0) & (cols < self.width) & (rows >= 0) & (rows < self.height)
        return rows, cols, inside


@dataclass(frozen=True)
class FeaturePyramid:
    levels: list[np.ndarray]  # (H_l, W_l, C) each
    scale: float  # level 0, pixels per mm
    origin: Point2

    @property
    def channels(self) -> int:
        return self.levels[0].shape[2]

    @property
    def dimension(self) -> int:
        return len(self.levels) * self.channels

    def level_scale(self, level: int) -> float:
        return self.scale / (2**level)


def canvas_shape(d: Drawing, scale: float, max_pixels: int = MAX_CANVAS_PIXELS) -> tuple[int, int]:
    xmin, ymin, xmax, ymax = d.extent
    width = max(1, math.ceil((xmax - xmin) * scale))
    height = max(1, math.ceil((ymax - ymin) * scale))
    if width * height > max_pixels:
        raise CanvasTooLarge(
            f"Canvas {width}x{height} exceeds the cap of {max_pixels} pixels."
        )
    return height, width


def render_label_mask(
    d: Drawing,
    scale: float,
    line_width_px: float = LINE_WIDTH_PX,
    max_pixels: int = MAX_CANVAS_PIXELS,
) -> LabelMask:
    """
    Rasterize labeled entities as strokes of the given pixel width.

    A pixel belongs to a stroke when its center lies within line_width/2 of
    the entity. Entities are drawn in record order; later ones overwrite.
    Background entities are not drawn.
    """
    if scale <= 0:
        raise ValueError(f"Scale must be positive, got {scale}.")
    height, width = canvas_shape(d, scale, max_pixels)
    origin = Point2(x=d.extent[0], y=d.extent[1])
    data = np.full((height, width), BACKGROUND, dtype=np.int16)
    for record in d.records:
        if record.label == BACKGROUND:
            continue
        stroke_mask = _stroke_pixels(record.entity, data.shape, scale, origin, line_width_px)
        for rows, cols, hit in stroke_mask:
            data[rows, cols] = np.where(hit, record.label, data[rows, cols])
    return LabelMask(width=width, height=height, scale=scale, origin=origin, data=data)


def render_occupancy(
    d: Drawing,
    scale: float,
    line_width_px: float = LINE_WIDTH_PX,
    max_pixels: int = MAX_CANVAS_PIXELS,
) -> np.ndarray:
    """Binary stroke rasterization of all entities, labeled or not."""
    height, width = canvas_shape(d, scale, max_pixels)
    origin = Point2(x=d.extent[0], y=d.extent[1])
    occupancy = np.zeros((height, width), dtype=bool)
    for record in d.records:
        for rows, cols, hit in _stroke_pixels(
            record.entity, occupancy.shape, scale, origin, line_width_px
        ):
            occupancy[rows, cols] |= hit
    return occupancy


def vote_entity_labels(mask: LabelMask, d: Drawing, n_samples: int = VOTE_SAMPLES) -> np.ndarray:
    """
    Majority class of the mask at each entity's sample points.

    Background samples do not vote; ties go to the smallest class index; an
    entity whose samples all read background (or fall off-canvas) gets
    background.
    """
    predictions = np.full(len(d), BACKGROUND, dtype=np.int64)
    n_classes = max(len(d.catalog), int(mask.data.max(initial=BACKGROUND)) + 1)
    for i, record in enumerate(d.records):
        points = sample_points(record.entity, n_samples)
        rows, cols, inside = mask.pixel_index(points)
        values = mask.data[rows[inside], cols[inside]]
        values = values[values != BACKGROUND]
        if values.size:
            predictions[i] = int(np.argmax(np.bincount(values, minlength=n_classes)))
    return predictions


def build_feature_pyramid(
    d: Drawing,
    scale: float,
    levels: int = PYRAMID_LEVELS,
    channels: int = PYRAMID_CHANNELS,
    line_width_px: float = LINE_WIDTH_PX,
    max_pixels: int = MAX_CANVAS_PIXELS,
) -> FeaturePyramid:
    """
    Fixed filter-bank pyramid over the binary rasterization of the drawing.

    Level 0 channels: occupancy, x/y gradients of the clipped distance
    transform, four oriented line responses (0, 45, 90, 135 degrees) and the
    clipped distance transform. Higher levels are 2x average-pooled.
    """
    if not 1 <= channels <= PYRAMID_CHANNELS:
        raise ValueError(f"Channel count must be in 1..{PYRAMID_CHANNELS}, got {channels}.")
    occupancy = render_occupancy(d, scale, line_width_px, max_pixels).astype(np.float64)

    distance = ndimage.distance_transform_edt(occupancy == 0)
    distance = np.minimum(distance, DISTANCE_CLIP_PX) / DISTANCE_CLIP_PX
    grad_y, grad_x = _gradient(distance)
    lines = _line_responses(occupancy, LINE_KERNEL_SIZE)
    base = np.stack([occupancy, grad_x, grad_y, *lines, distance], axis=-1)[..., :channels]

    pyramid = [base.astype(np.float32)]
    for _ in range(1, levels):
        pyramid.append(_average_pool(pyramid[-1]))
    return FeaturePyramid(levels=pyramid, scale=scale, origin=Point2(x=d.extent[0], y=d.extent[1]))


def fetch_aligned_feature(p: FeaturePyramid, point) -> np.ndarray:
    """Bilinear feature at one world point, concatenated over levels."""
    xy = np.asarray(point.as_tuple() if isinstance(point, Point2) else point, dtype=float)
    return fetch_aligned_features(p, xy.reshape(1, 2))[0]


def fetch_aligned_features(p: FeaturePyramid, points: np.ndarray) -> np.ndarray:
    """Bilinear features at many world points; points outside are clamped."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    per_level = []
    for level, grid in enumerate(p.levels):
        height, width, _ = grid.shape
        scale = p.level_scale(level)
        u = np.clip((points[:, 0] - p.origin.x) * scale - 0.5, 0.0, width - 1)
        v = np.clip((points[:, 1] - p.origin.y) * scale - 0.5, 0.0, height - 1)
        c0 = np.floor(u).astype(np.int64)
        r0 = np.floor(v).astype(np.int64)
        c1 = np.minimum(c0 + 1, width - 1)
        r1 = np.minimum(r0 + 1, height - 1)
        fu = (u - c0)[:, None]
        fv = (v - r0)[:, None]
        top = grid[r0, c0] * (1 - fu) + grid[r0, c1] * fu
        bottom = grid[r1, c0] * (1 - fu) + grid[r1, c1] * fu
        per_level.append(top * (1 - fv) + bottom * fv)
    return np.concatenate(per_level, axis=1).astype(np.float64)


def write_pgm(mask: LabelMask, path: str | Path) -> None:
    """Binary PGM with gray = class index + 1 (0 is background)."""
    gray = (mask.data.astype(np.int32) + 1).clip(0, 255).astype(np.uint8)
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + gray.tobytes())


def _stroke_pixels(e: Entity, shape, scale: float, origin: Point2, line_width_px: float):
    """Yield (rows, cols, hit) windows covering the stroke of an entity."""
    radius_mm = line_width_px / (2.0 * scale)
    for piece in _stroke_pieces(e, MAX_STROKE_PIECE_PX / scale):
        kind, params, bbox = piece
        window = _window(bbox, radius_mm, shape, scale, origin)
        if window is None:
            continue
        rows, cols, centers = window
        if kind == "segment":
            distance = points_to_segment_distance(centers, *params)
        else:
            distance = points_to_arc_distance(centers, *params)
        yield rows, cols, (distance <= radius_mm).reshape(rows.shape)


def _stroke_pieces(e: Entity, max_len: float):
    match e:
        case Segment():
            yield from _segment_pieces(np.array(e.s.as_tuple()), np.array(e.t.as_tuple()), max_len)
        case Polyline():
            xy = np.array([v.as_tuple() for v in e.vertices])
            for a, b in zip(xy[:-1], xy[1:]):
                yield from _segment_pieces(a, b, max_len)
        case Arc():
            yield from _arc_pieces(e.center, e.radius, e.start_angle, e.sweep, max_len)
        case Circle():
            yield from _arc_pieces(e.center, e.radius, 0.0, TWO_PI, max_len)


def _segment_pieces(a: np.ndarray, b: np.ndarray, max_len: float):
    count = max(1, math.ceil(float(np.hypot(*(b - a))) / max_len))
    knots = a + np.linspace(0.0, 1.0, count + 1)[:, None] * (b - a)
    for p, q in zip(knots[:-1], knots[1:]):
        bbox = (min(p[0], q[0]), min(p[1], q[1]), max(p[0], q[0]), max(p[1], q[1]))
        yield "segment", (p, q), bbox


def _arc_pieces(center: Point2, radius: float, start: float, sweep: float, max_len: float):
    count = max(4, math.ceil(radius * sweep / max_len))
    c = np.array(center.as_tuple())
    step = sweep / count
    for k in range(count):
        a0 = start + k * step
        angles = np.linspace(a0, a0 + step, 9)
        pts = c + radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        # Arc pieces of at most a quarter turn bulge by less than radius * (1 - cos(step / 2))
        bulge = radius * (1.0 - math.cos(step / 2.0))
        bbox = (
            pts[:, 0].min() - bulge,
            pts[:, 1].min() - bulge,
            pts[:, 0].max() + bulge,
            pts[:, 1].max() + bulge,
        )
        yield "arc", (c, radius, a0 % TWO_PI, step), bbox


def _window(bbox, radius_mm: float, shape, scale: float, origin: Point2):
    height, width = shape
    c0 = max(0, math.floor((bbox[0] - radius_mm - origin.x) * scale))
    c1 = min(width - 1, math.ceil((bbox[2] + radius_mm - origin.x) * scale))
    r0 = max(0, math.floor((bbox[1] - radius_mm - origin.y) * scale))
    r1 = min(height - 1, math.ceil((bbox[3] + radius_mm - origin.y) * scale))
    if c0 > c1 or r0 > r1:
        return None
    rows, cols = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
    centers = np.stack(
        [origin.x + (cols.ravel() + 0.5) / scale, origin.y + (rows.ravel() + 0.5) / scale],
        axis=1,
    )
    return rows, cols, centers


def _gradient(grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if min(grid.shape) < 2:
        return np.zeros_like(grid), np.zeros_like(grid)
    return np.gradient(grid)


def _pixel_floor(u: np.ndarray, size: int) -> np.ndarray:
    """Pixel index of a canvas coordinate; the closing edge belongs to the last pixel."""
    index = np.floor(u).astype(np.int64)
    on_edge = (index == size) & (u - size <= 1e-9)
    return np.where(on_edge, size - 1, index)


def _line_responses(occupancy: np.ndarray, length: int) -> list[np.ndarray]:
    """Mean occupancy along centered lines of the given length, one per direction."""
    half = length // 2
    height, width = occupancy.shape
    padded = np.pad(occupancy, half)
    responses = []
    for dr, dc in LINE_DIRECTIONS:
        total = np.zeros_like(occupancy)
        for k in range(-half, half + 1):
            r0 = half + k * dr
            c0 = half + k * dc
            total += padded[r0 : r0 + height, c0 : c0 + width]
        responses.append(total / (2 * half + 1))
    return responses


def _average_pool(grid: np.ndarray) -> np.ndarray:
    height, width, channels = grid.shape
    padded = np.pad(grid, ((0, height % 2), (0, width % 2), (0, 0)), mode="edge")
    return padded.reshape(padded.shape[0] // 2, 2, padded.shape[1] // 2, 2, channels).mean(
        axis=(1, 3)
    )
