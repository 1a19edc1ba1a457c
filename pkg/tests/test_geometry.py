import math

import numpy as np
import pytest
from pydantic import ValidationError

from pancad.entities import Arc, Circle, Point2, Polyline, Segment, normalize_angle
from pancad.exceptions import NotParallel
from pancad.geometry import (
    arc_length,
    entity_bbox,
    entity_distance,
    entity_midpoint,
    entity_type,
    is_parallel,
    parallel_distance,
    sample_points,
    segment_min_distance,
)
from tests.conftest import segment


def test_arc_length():
    assert arc_length(segment(0, 0, 3, 4)) == pytest.approx(5.0)
    assert arc_length(Circle(center=(0, 0), radius=10)) == pytest.approx(62.83185307179586)
    quarter = Arc(center=(0, 0), radius=2, start_angle=0, end_angle=math.pi / 2)
    assert arc_length(quarter) == pytest.approx(math.pi)


def test_arc_wraps_through_zero():
    arc = Arc(center=(0, 0), radius=1, start_angle=3 * math.pi / 2, end_angle=0.0)
    assert arc.sweep == pytest.approx(math.pi / 2)
    assert arc_length(Arc(center=(0, 0), radius=1, start_angle=1.0, end_angle=1.0)) == (
        pytest.approx(2 * math.pi)
    )


def test_polyline_approximation_converges_to_arc():
    arc = Arc(center=(0, 0), radius=50, start_angle=0.2, end_angle=2.9)
    vertices = sample_points(arc, 10_000)
    approx = arc_length(Polyline(vertices=[tuple(v) for v in vertices]))
    assert approx == pytest.approx(arc_length(arc), rel=1e-6)


def test_sample_points():
    np.testing.assert_allclose(
        sample_points(segment(0, 0, 10, 0), 3), [[0, 0], [5, 0], [10, 0]]
    )
    np.testing.assert_allclose(
        sample_points(Circle(center=(0, 0), radius=1), 4),
        [[1, 0], [0, 1], [-1, 0], [0, -1]],
        atol=1e-12,
    )
    polyline = Polyline(vertices=[(0, 0), (1, 0), (1, 1)])
    np.testing.assert_allclose(
        sample_points(polyline, 5), [[0, 0], [0.5, 0], [1, 0], [1, 0.5], [1, 1]]
    )


def test_sample_spacing_is_uniform():
    points = sample_points(segment(-3, 2, 17, 9), 33)
    gaps = np.hypot(*np.diff(points, axis=0).T)
    assert np.ptp(gaps) < 1e-9


def test_sample_points_needs_two():
    with pytest.raises(ValueError):
        sample_points(segment(0, 0, 1, 0), 1)


def test_entity_distance():
    assert entity_distance(segment(0, 0, 5, 5), segment(0, 0, -3, 1)) == 0.0
    assert entity_distance(segment(0, 0, 10, 0), segment(15, 0, 25, 0)) == pytest.approx(5.0)
    circle = Circle(center=(0, 0), radius=5)
    assert entity_distance(circle, segment(10, 0, 20, 0)) == pytest.approx(5.0)


def test_entity_distance_is_symmetric():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = segment(*rng.uniform(0, 100, 4))
        b = Arc(
            center=tuple(rng.uniform(0, 100, 2)),
            radius=float(rng.uniform(1, 20)),
            start_angle=float(rng.uniform(0, 6)),
            end_angle=float(rng.uniform(0, 6)),
        )
        assert entity_distance(a, b) == entity_distance(b, a)


def test_parallel_distance():
    assert parallel_distance(segment(0, 0, 10, 0), segment(5, 0, 20, 0), 0.2) == 0.0
    assert parallel_distance(segment(0, 0, 1000, 0), segment(0, 400, 1000, 400), 0.2) == (
        pytest.approx(80.0)
    )
    assert parallel_distance(segment(0, 0, 1, 0), segment(2, 1, 3, 1), 1.0) == (
        pytest.approx(math.sqrt(2))
    )


def test_parallel_distance_rejects_non_parallel():
    with pytest.raises(NotParallel):
        parallel_distance(segment(0, 0, 10, 0), segment(0, 0, 10, 1), 0.2)
    assert not is_parallel(segment(0, 0, 1, 0), Circle(center=(0, 0), radius=1))
    assert is_parallel(segment(0, 0, 1, 0), segment(5, 5, 4, 5))


def test_segment_min_distance():
    assert segment_min_distance(segment(0, 0, 2, 2), segment(0, 2, 2, 0)) == 0.0
    assert segment_min_distance(segment(0, 0, 10, 0), segment(3, 7, 12, 7)) == pytest.approx(7.0)

    a, b = segment(0, 0, 1, 0), segment(2, 1, 3, 1)
    dense_a = sample_points(a, 10_000)
    dense_b = sample_points(b, 10_000)
    # Endpoint (1, 0) is the closest point on a, so a 1-by-n scan is exact enough
    oracle = np.hypot(*(dense_b - dense_a[-1]).T).min()
    assert segment_min_distance(a, b) == pytest.approx(oracle, abs=1e-3)


def test_segment_min_distance_below_endpoint_distance():
    rng = np.random.default_rng(1)
    for _ in range(200):
        a = segment(*rng.uniform(-50, 50, 4))
        b = segment(*rng.uniform(-50, 50, 4))
        assert segment_min_distance(a, b) <= entity_distance(a, b) + 1e-12


def test_entity_bbox():
    assert entity_bbox(segment(0, 0, 10, 5)) == (0, 0, 10, 5)
    np.testing.assert_allclose(
        entity_bbox(Circle(center=(3, 3), radius=2)), (1, 1, 5, 5), atol=1e-2
    )
    assert entity_bbox(Polyline(vertices=[(0, 0), (2, 0), (2, 7)])) == (0, 0, 2, 7)


def test_entity_type_and_midpoint():
    assert entity_type(segment(0, 0, 1, 0)) == "segment"
    assert entity_type(Circle(center=(0, 0), radius=1)) == "circle"
    assert entity_type(Polyline(vertices=[(0, 0), (1, 0)])) == "curve"
    assert entity_type(Arc(center=(0, 0), radius=1, start_angle=0, end_angle=1)) == "curve"
    np.testing.assert_allclose(entity_midpoint(segment(0, 0, 4, 2)), [2, 1])


def test_invalid_entities():
    with pytest.raises(ValidationError):
        Segment(s=(1, 1), t=(1, 1))
    with pytest.raises(ValidationError):
        Circle(center=(0, 0), radius=0)
    with pytest.raises(ValidationError):
        Polyline(vertices=[(0, 0), (0, 0), (1, 1)])
    with pytest.raises(ValidationError):
        Point2(x=float("nan"), y=0)


def test_normalize_angle():
    assert normalize_angle(-math.pi / 2) == pytest.approx(3 * math.pi / 2)
    assert normalize_angle(2 * math.pi) == 0.0
    assert 0.0 <= normalize_angle(-1e-18) < 2 * math.pi
