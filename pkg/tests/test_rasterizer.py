from collections import Counter

import numpy as np
import pytest

from pancad.constants import BACKGROUND
from pancad.drawing import LabelCatalog
from pancad.entities import Arc, Point2
from pancad.exceptions import CanvasTooLarge
from pancad.geometry import point_stroke_distance, sample_points
from pancad.rasterizer import (
    FeaturePyramid,
    LabelMask,
    build_feature_pyramid,
    fetch_aligned_feature,
    render_label_mask,
    render_occupancy,
    vote_entity_labels,
    write_pgm,
)
from tests.conftest import make_drawing, segment


def mask_from(data, scale=1.0, origin=(0.0, 0.0)) -> LabelMask:
    data = np.asarray(data, dtype=np.int16)
    return LabelMask(
        width=data.shape[1],
        height=data.shape[0],
        scale=scale,
        origin=Point2(x=origin[0], y=origin[1]),
        data=data,
    )


def test_empty_drawing_is_background(catalog):
    mask = render_label_mask(make_drawing([], catalog), scale=1.0)
    assert mask.data.shape == (100, 100)
    assert (mask.data == BACKGROUND).all()


def test_segment_renders_five_pixel_band(catalog):
    d = make_drawing([(segment(2, 10.5, 18, 10.5), "wall", 0)], catalog, extent=(0, 0, 20, 20))
    mask = render_label_mask(d, scale=1.0, line_width_px=5)
    wall = catalog.index("wall")
    column = mask.data[:, 10]
    assert np.flatnonzero(column == wall).tolist() == [8, 9, 10, 11, 12]
    assert set(np.unique(mask.data)) == {BACKGROUND, wall}


def test_later_records_overwrite(catalog):
    d = make_drawing(
        [
            (segment(0, 10, 20, 10), "wall", 0),
            (segment(10, 0, 10, 20), "door", 1),
            (Arc(center=(10, 10), radius=6, start_angle=0, end_angle=2), "window", 1),
        ],
        catalog,
        extent=(0, 0, 20, 20),
    )
    mask = render_label_mask(d, scale=1.0, line_width_px=5)

    rows, cols = np.mgrid[0:20, 0:20]
    centers = np.stack([cols.ravel() + 0.5, rows.ravel() + 0.5], axis=1)
    expected = np.full(400, BACKGROUND)
    for record in d.records:
        expected[point_stroke_distance(centers, record.entity) <= 2.5] = record.label
    np.testing.assert_array_equal(mask.data.ravel(), expected)
    assert mask.data[10, 10] == catalog.index("door")


def test_canvas_cap(catalog):
    with pytest.raises(CanvasTooLarge):
        render_label_mask(make_drawing([], catalog), scale=1.0, max_pixels=99)


def test_rendering_is_deterministic(synth_drawing):
    a = render_label_mask(synth_drawing, scale=0.05)
    b = render_label_mask(synth_drawing, scale=0.05)
    assert a.data.tobytes() == b.data.tobytes()


def test_vote_uniform_region():
    d = make_drawing(
        [(segment(1, 1, 8, 3), "window", 1)], LabelCatalog.default(), extent=(0, 0, 10, 5)
    )
    mask = mask_from(np.full((5, 10), 3))
    assert vote_entity_labels(mask, d).tolist() == [3]


def test_vote_majority_and_ties():
    d = make_drawing(
        [(segment(0.5, 0.5, 9.5, 0.5), None, 0)], LabelCatalog.default(), extent=(0, 0, 10, 1)
    )
    assert vote_entity_labels(mask_from([[2] * 6 + [5] * 4]), d, n_samples=10).tolist() == [2]
    assert vote_entity_labels(mask_from([[7] * 5 + [4] * 5]), d, n_samples=10).tolist() == [4]
    assert vote_entity_labels(mask_from([[-1] * 10]), d, n_samples=10).tolist() == [BACKGROUND]


def test_vote_off_canvas():
    d = make_drawing(
        [(segment(1, 1, 8, 3), "window", 1)], LabelCatalog.default(), extent=(0, 0, 10, 5)
    )
    mask = mask_from(np.full((5, 10), 3), origin=(500.0, 500.0))
    assert vote_entity_labels(mask, d).tolist() == [BACKGROUND]


def test_vote_matches_counting_oracle():
    rng = np.random.default_rng(5)
    catalog = LabelCatalog.default()
    for _ in range(200):
        data = rng.integers(-1, 6, size=(12, 16))
        scale = float(rng.uniform(0.5, 2.0))
        mask = mask_from(data, scale=scale)
        entities = [segment(*rng.uniform(0, 12, 4)) for _ in range(5)]
        d = make_drawing([(e, None, 0) for e in entities], catalog, extent=(0, 0, 12, 12))

        expected = []
        for e in entities:
            votes = Counter()
            for x, y in sample_points(e, 32):
                c, r = int(np.floor(x * scale)), int(np.floor(y * scale))
                if 0 <= r < 12 and 0 <= c < 16 and data[r, c] != BACKGROUND:
                    votes[int(data[r, c])] += 1
            if votes:
                top = max(votes.values())
                expected.append(min(label for label, n in votes.items() if n == top))
            else:
                expected.append(BACKGROUND)
        assert vote_entity_labels(mask, d).tolist() == expected


def test_render_vote_round_trip(synth_drawing):
    mask = render_label_mask(synth_drawing, scale=0.1)
    voted = vote_entity_labels(mask, synth_drawing)
    assert (voted == synth_drawing.labels).mean() >= 0.99


def test_vote_reads_strokes_on_the_closing_edge(catalog):
    d = make_drawing(
        [(segment(10, 0, 10, 10), "wall", 0), (segment(0, 10, 10, 10), "wall", 0)],
        catalog,
        extent=(0.0, 0.0, 10.0, 10.0),
    )
    mask = render_label_mask(d, scale=1.0)
    assert (mask.data[:, -1] == catalog.index("wall")).all()
    np.testing.assert_array_equal(vote_entity_labels(mask, d), [3, 3])

    rows, cols, inside = mask.pixel_index(np.array([[10.0, 10.0], [10.5, 5.0], [0.0, 0.0]]))
    np.testing.assert_array_equal(rows[inside], [9, 0])
    np.testing.assert_array_equal(cols[inside], [9, 0])
    np.testing.assert_array_equal(inside, [True, False, True])


def test_line_response_separates_window_from_wall_face(catalog):
    # Three window lines 80 apart against a wall face whose partner is 240 away
    d = make_drawing(
        [
            (segment(0, -80, 2000, -80), "window", 1),
            (segment(0, 0, 2000, 0), "window", 1),
            (segment(0, 80, 2000, 80), "window", 1),
            (segment(0, 1000, 2000, 1000), "wall", 0),
            (segment(0, 1240, 2000, 1240), "wall", 0),
        ],
        catalog,
        extent=(0.0, -500.0, 2000.0, 1500.0),
    )
    pyramid = build_feature_pyramid(d, scale=0.05, line_width_px=2)
    vertical = 5
    window = fetch_aligned_feature(pyramid, (1000.0, 0.0))[vertical]
    wall = fetch_aligned_feature(pyramid, (1000.0, 1000.0))[vertical]
    assert window == pytest.approx(6 / 25)
    assert wall == pytest.approx(3.5 / 25)
    # Along the lines both read a full horizontal response
    horizontal = 3
    assert fetch_aligned_feature(pyramid, (1000.0, 0.0))[horizontal] == pytest.approx(1.0)
    assert fetch_aligned_feature(pyramid, (1000.0, 1000.0))[horizontal] == pytest.approx(1.0)


def test_pyramid_shapes_and_occupancy(catalog):
    empty = build_feature_pyramid(make_drawing([], catalog), scale=0.25)
    assert not empty.levels[0][..., 0].any()
    assert [level.shape for level in empty.levels] == [
        (25, 25, 8),
        (13, 13, 8),
        (7, 7, 8),
        (4, 4, 8),
    ]

    d = make_drawing(
        [(segment(5, 20, 90, 70), "wall", 0), (segment(50, 5, 50, 95), "door", 1)], catalog
    )
    pyramid = build_feature_pyramid(d, scale=0.5, line_width_px=3)
    mask = render_label_mask(d, scale=0.5, line_width_px=3)
    np.testing.assert_array_equal(pyramid.levels[0][..., 0] == 1.0, mask.data != BACKGROUND)
    np.testing.assert_array_equal(
        render_occupancy(d, scale=0.5, line_width_px=3), mask.data != BACKGROUND
    )


def test_fetch_aligned_feature():
    grid = np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(2, 2, 1)
    pyramid = FeaturePyramid(levels=[grid], scale=1.0, origin=Point2(x=0, y=0))
    np.testing.assert_allclose(fetch_aligned_feature(pyramid, Point2(x=1.0, y=1.0)), [1.5])
    np.testing.assert_allclose(fetch_aligned_feature(pyramid, (0.5, 1.5)), [2.0])
    # Outside points are clamped to the border
    np.testing.assert_allclose(fetch_aligned_feature(pyramid, (-10.0, -10.0)), [0.0])

    constant = FeaturePyramid(
        levels=[np.full((4, 4, 3), 0.25), np.full((2, 2, 3), 0.25)],
        scale=2.0,
        origin=Point2(x=0, y=0),
    )
    np.testing.assert_allclose(fetch_aligned_feature(constant, (0.7, 1.3)), [0.25] * 6)


def test_fetch_is_lipschitz(synth_drawing):
    pyramid = build_feature_pyramid(synth_drawing, scale=0.05, line_width_px=2)
    rng = np.random.default_rng(2)
    level0 = pyramid.levels[0]
    bound = max(
        np.abs(np.diff(level0, axis=0)).max(), np.abs(np.diff(level0, axis=1)).max()
    ) * pyramid.scale * 2
    for _ in range(50):
        p = rng.uniform(1000, 19000, 2)
        delta = rng.normal(size=2)
        a = fetch_aligned_feature(pyramid, p)[: pyramid.channels]
        b = fetch_aligned_feature(pyramid, p + delta)[: pyramid.channels]
        assert np.abs(a - b).max() <= bound * np.hypot(*delta) + 1e-9


def test_write_pgm(tmp_path):
    mask = mask_from([[-1, 0], [1, 2]])
    write_pgm(mask, tmp_path / "m.pgm")
    raw = (tmp_path / "m.pgm").read_bytes()
    assert raw.startswith(b"P5\n2 2\n255\n")
    assert raw[-4:] == bytes([0, 1, 2, 3])
