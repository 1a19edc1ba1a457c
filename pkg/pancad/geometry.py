"""Exact geometry on graphical entities.

All functions are pure and work on immutable entities, so they can be called
from any number of threads.
"""

import math

import numpy as np

from pancad.constants import BBOX_SAMPLES, CIRCLE_ANCHOR_SAMPLES, PARALLEL_ANGLE_TOL, TWO_PI
from pancad.entities import Arc, Circle, Entity, Point2, Polyline, Segment
from pancad.exceptions import NotParallel

BBox = tuple[float, float, float, float]


def arc_length(e: Entity) -> float:
    """Exact length of an entity in millimeters."""
    match e:
        case Segment():
            return math.hypot(e.t.x - e.s.x, e.t.y - e.s.y)
        case Arc():
            return e.radius * e.sweep
        case Circle():
            return TWO_PI * e.radius
        case Polyline():
            xy = _vertex_array(e)
            return float(np.hypot(*np.diff(xy, axis=0).T).sum())
        case _:
            raise TypeError(f"Unsupported entity type '{type(e).__name__}'.")


def sample_points(e: Entity, n: int) -> np.ndarray:
    """
    Sample n points uniformly by arc length.

    Open entities are sampled at fractions 0, 1/(n-1), ..., 1. Circles get n
    points at angular spacing 2*pi/n starting at angle 0, without repeating
    the closing point.

    Returns:
        np.ndarray: (n, 2) array of x, y coordinates.
    """
    if n < 2:
        raise ValueError(f"Need at least 2 samples, got {n}.")
    if isinstance(e, Circle):
        angles = TWO_PI * np.arange(n) / n
        return _on_circle(e.center, e.radius, angles)
    return points_at_fractions(e, np.linspace(0.0, 1.0, n))


def points_at_fractions(e: Entity, fractions: np.ndarray) -> np.ndarray:
    fractions = np.asarray(fractions, dtype=float)
    match e:
        case Segment():
            s = np.array(e.s.as_tuple())
            t = np.array(e.t.as_tuple())
            return s + fractions[:, None] * (t - s)
        case Arc():
            return _on_circle(e.center, e.radius, e.start_angle + fractions * e.sweep)
        case Circle():
            return _on_circle(e.center, e.radius, fractions * TWO_PI)
        case Polyline():
            xy = _vertex_array(e)
            cumulative = np.concatenate(
                [[0.0], np.cumsum(np.hypot(*np.diff(xy, axis=0).T))]
            )
            target = fractions * cumulative[-1]
            return np.stack(
                [np.interp(target, cumulative, xy[:, 0]), np.interp(target, cumulative, xy[:, 1])],
                axis=1,
            )
        case _:
            raise TypeError(f"Unsupported entity type '{type(e).__name__}'.")


def entity_endpoints(e: Entity) -> np.ndarray | None:
    """Start and end points as a (2, 2) array, None for circles."""
    match e:
        case Segment():
            return np.array([e.s.as_tuple(), e.t.as_tuple()])
        case Arc():
            return _on_circle(
                e.center, e.radius, np.array([e.start_angle, e.start_angle + e.sweep])
            )
        case Polyline():
            return np.array([e.vertices[0].as_tuple(), e.vertices[-1].as_tuple()])
        case _:
            return None


def anchor_points(e: Entity) -> np.ndarray:
    """Points entering the proximity distance D: endpoints, or circle samples."""
    endpoints = entity_endpoints(e)
    if endpoints is None:
        return sample_points(e, CIRCLE_ANCHOR_SAMPLES)
    return endpoints


def entity_distance(a: Entity, b: Entity) -> float:
    """Minimum distance over endpoint pairs (sampled circles have no endpoints)."""
    pa = anchor_points(a)
    pb = anchor_points(b)
    diff = pa[:, None, :] - pb[None, :, :]
    return float(np.sqrt((diff**2).sum(axis=-1)).min())


def direction_angle(e: Segment) -> float:
    """Undirected direction of a segment in [0, pi)."""
    return math.atan2(e.t.y - e.s.y, e.t.x - e.s.x) % math.pi


def is_parallel(a: Entity, b: Entity, tol: float = PARALLEL_ANGLE_TOL) -> bool:
    if not (isinstance(a, Segment) and isinstance(b, Segment)):
        return False
    diff = abs(direction_angle(a) - direction_angle(b))
    return min(diff, math.pi - diff) < tol


def parallel_distance(
    a: Entity, b: Entity, eta: float, tol: float = PARALLEL_ANGLE_TOL
) -> float:
    """Scaled point-set distance D_par = eta * min distance of two parallel segments."""
    if not is_parallel(a, b, tol):
        raise NotParallel("Parallel distance needs two parallel segments.")
    return eta * segment_min_distance(a, b)


def segment_min_distance(a: Segment, b: Segment) -> float:
    """Exact distance between two segments as continuous point sets; 0 iff they meet."""
    p1, p2 = np.array(a.s.as_tuple()), np.array(a.t.as_tuple())
    q1, q2 = np.array(b.s.as_tuple()), np.array(b.t.as_tuple())
    if _segments_intersect(p1, p2, q1, q2):
        return 0.0
    return float(
        min(
            points_to_segment_distance(p1[None], q1, q2)[0],
            points_to_segment_distance(p2[None], q1, q2)[0],
            points_to_segment_distance(q1[None], p1, p2)[0],
            points_to_segment_distance(q2[None], p1, p2)[0],
        )
    )


def points_to_segment_distance(
    points: np.ndarray, a: np.ndarray, b: np.ndarray
) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.hypot(*(points - a).T)
    t = np.clip(((points - a) @ ab) / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.hypot(*(points - closest).T)


def points_to_arc_distance(
    points: np.ndarray, center: np.ndarray, radius: float, start: float, sweep: float
) -> np.ndarray:
    rel = points - center
    radial = np.abs(np.hypot(*rel.T) - radius)
    if sweep >= TWO_PI:
        return radial
    offset = (np.arctan2(rel[:, 1], rel[:, 0]) - start) % TWO_PI
    ends = center + radius * np.array(
        [[math.cos(start), math.sin(start)], [math.cos(start + sweep), math.sin(start + sweep)]]
    )
    to_ends = np.minimum(np.hypot(*(points - ends[0]).T), np.hypot(*(points - ends[1]).T))
    return np.where(offset <= sweep, radial, to_ends)


def point_stroke_distance(points: np.ndarray, e: Entity) -> np.ndarray:
    """Distance from each point to the entity's point set."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    match e:
        case Segment():
            return points_to_segment_distance(
                points, np.array(e.s.as_tuple()), np.array(e.t.as_tuple())
            )
        case Arc():
            return points_to_arc_distance(
                points, np.array(e.center.as_tuple()), e.radius, e.start_angle, e.sweep
            )
        case Circle():
            return points_to_arc_distance(
                points, np.array(e.center.as_tuple()), e.radius, 0.0, TWO_PI
            )
        case Polyline():
            xy = _vertex_array(e)
            return np.min(
                [points_to_segment_distance(points, a, b) for a, b in zip(xy[:-1], xy[1:])],
                axis=0,
            )
        case _:
            raise TypeError(f"Unsupported entity type '{type(e).__name__}'.")


def entity_bbox(e: Entity) -> BBox:
    """Axis-aligned box; exact for segments and polylines, 64-sample for curves."""
    match e:
        case Segment() | Polyline():
            xy = _vertex_array(e)
        case _:
            xy = sample_points(e, BBOX_SAMPLES)
    xmin, ymin = xy.min(axis=0)
    xmax, ymax = xy.max(axis=0)
    return (float(xmin), float(ymin), float(xmax), float(ymax))


def union_bbox(boxes: list[BBox]) -> BBox:
    arr = np.asarray(boxes, dtype=float)
    return (
        float(arr[:, 0].min()),
        float(arr[:, 1].min()),
        float(arr[:, 2].max()),
        float(arr[:, 3].max()),
    )


def entity_type(e: Entity) -> str:
    """Type class of the one-hot type feature: segment, circle or curve."""
    match e:
        case Segment():
            return "segment"
        case Circle():
            return "circle"
        case _:
            return "curve"


def entity_midpoint(e: Entity) -> np.ndarray:
    """Point at half the arc length."""
    return points_at_fractions(e, np.array([0.5]))[0]


def entity_center(e: Entity) -> np.ndarray:
    xmin, ymin, xmax, ymax = entity_bbox(e)
    return np.array([(xmin + xmax) / 2.0, (ymin + ymax) / 2.0])


def _vertex_array(e: Segment | Polyline) -> np.ndarray:
    if isinstance(e, Segment):
        return np.array([e.s.as_tuple(), e.t.as_tuple()])
    return np.array([v.as_tuple() for v in e.vertices])


def _on_circle(center: Point2, radius: float, angles: np.ndarray) -> np.ndarray:
    angles = np.asarray(angles, dtype=float)
    return np.stack(
        [center.x + radius * np.cos(angles), center.y + radius * np.sin(angles)], axis=1
    )


def _cross(o: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return float((a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]))


def _on_segment(p: np.ndarray, q: np.ndarray, r: np.ndarray) -> bool:
    # r collinear with p-q: is it inside the p-q box
    return min(p[0], q[0]) <= r[0] <= max(p[0], q[0]) and min(p[1], q[1]) <= r[1] <= max(
        p[1], q[1]
    )


def _segments_intersect(p1, p2, q1, q2) -> bool:
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    if ((d1 > 0 > d2) or (d1 < 0 < d2)) and ((d3 > 0 > d4) or (d3 < 0 < d4)):
        return True
    if d1 == 0 and _on_segment(q1, q2, p1):
        return True
    if d2 == 0 and _on_segment(q1, q2, p2):
        return True
    if d3 == 0 and _on_segment(p1, p2, q1):
        return True
    if d4 == 0 and _on_segment(p1, p2, q2):
        return True
    return False
