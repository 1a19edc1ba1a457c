import math

import numpy as np
import pytest

from pancad.constants import BACKGROUND
from pancad.drawing import InstanceBox, Symbol
from pancad.exceptions import LengthMismatch
from pancad.metrics import (
    QualityRow,
    box_iou,
    build_report,
    class_entity_counts,
    detection_ap,
    detection_ap_dataset,
    format_report,
    length_histogram,
    match_symbols,
    panoptic_scores,
    semantic_scores,
    symbol_iou,
)
from tests.conftest import make_drawing, segment


def sym(label: int, *members: int, instance: int = 1) -> Symbol:
    return Symbol(label=label, instance=instance, entities=frozenset(members))


def box(label: int, bbox, score: float = 1.0) -> InstanceBox:
    return InstanceBox(label=label, bbox=bbox, score=score)


# ------------------------------------------------------------
# Symbol IoU and matching
# ------------------------------------------------------------
def test_symbol_iou_examples():
    ones = np.ones(4)
    assert symbol_iou(sym(0, 0, 1), sym(0, 0, 1), ones) == 1.0
    assert symbol_iou(sym(0, 0, 1), sym(0, 2, 3), ones) == 0.0
    assert symbol_iou(sym(0, 0, 1), sym(0, 0), ones) == pytest.approx(0.5)
    weights = np.array([1.0, 1.0, 2.0, 0.0])
    assert symbol_iou(sym(0, 0, 1), sym(0, 1, 2), weights) == pytest.approx(0.25)
    assert symbol_iou(sym(0, 1, 2), sym(0, 0, 1), weights) == pytest.approx(0.25)


def test_symbol_iou_uses_log_lengths():
    d = make_drawing([(segment(0, 0, 10, 0), "door", 1), (segment(0, 0, 0, 30), "door", 1)])
    expected = math.log1p(10) / (math.log1p(10) + math.log1p(30))
    assert symbol_iou(sym(0, 0), sym(0, 0, 1), d) == pytest.approx(expected)


def test_identical_symbols_all_match():
    symbols = [sym(0, 0, 1), sym(1, 2), sym(0, 3, 4, 5)]
    result = match_symbols(symbols, symbols, np.ones(6))
    assert [(p, g, iou) for p, g, iou in result.tp] == [(s, s, 1.0) for s in symbols]
    assert result.fp == [] and result.fn == []


def test_half_overlap_is_not_a_match():
    result = match_symbols([sym(0, 0, 1)], [sym(0, 0)], np.ones(2))
    assert result.tp == []
    assert result.fp == [sym(0, 0, 1)]
    assert result.fn == [sym(0, 0)]


def test_label_must_agree():
    result = match_symbols([sym(1, 0, 1)], [sym(0, 0, 1)], np.ones(2))
    assert result.tp == []
    assert len(result.fp) == len(result.fn) == 1


def exhaustive_matchings(preds, gts, weights):
    """Every one-to-one set of admissible pairs, as (pairs, iou sum)."""
    admissible = {
        i: [
            (j, symbol_iou(p, g, weights))
            for j, g in enumerate(gts)
            if p.label == g.label and symbol_iou(p, g, weights) > 0.5
        ]
        for i, p in enumerate(preds)
    }
    found = []

    def extend(i, used, pairs, total):
        if i == len(preds):
            found.append((frozenset(pairs), total))
            return
        extend(i + 1, used, pairs, total)
        for j, iou in admissible[i]:
            if j not in used:
                extend(i + 1, used | {j}, [*pairs, (i, j)], total + iou)

    extend(0, frozenset(), [], 0.0)
    return found


def random_overlapping_symbols(rng, n_entities: int) -> tuple[list[Symbol], list[Symbol]]:
    def subset(around=None):
        if around is None:
            size = int(rng.integers(1, n_entities // 2 + 2))
            return set(rng.choice(n_entities, size=size, replace=False).tolist())
        members = set(around)
        for e in rng.choice(n_entities, size=int(rng.integers(0, 3)), replace=False):
            members ^= {int(e)}
        return members or set(around)

    gts = []
    for k in range(int(rng.integers(1, 9))):
        gts.append(sym(int(rng.integers(2)), *subset(), instance=k + 1))
    preds = []
    for k in range(int(rng.integers(1, 9))):
        if rng.random() < 0.7:
            source = gts[int(rng.integers(len(gts)))]
            label = source.label if rng.random() < 0.9 else 1 - source.label
            preds.append(sym(label, *subset(source.entities), instance=k + 1))
        else:
            preds.append(sym(int(rng.integers(2)), *subset(), instance=k + 1))
    return preds, gts


def test_matching_equals_exhaustive_search():
    rng = np.random.default_rng(0)
    for case in range(500):
        n_entities = int(rng.integers(3, 13))
        weights = rng.uniform(0.1, 5.0, size=n_entities)
        preds, gts = random_overlapping_symbols(rng, n_entities)
        result = match_symbols(preds, gts, weights)

        matched = frozenset((preds.index(p), gts.index(g)) for p, g, _ in result.tp)
        candidates = exhaustive_matchings(preds, gts, weights)
        best_size = max(len(pairs) for pairs, _ in candidates)
        best_total = max(total for pairs, total in candidates if len(pairs) == best_size)
        optimal = {
            pairs
            for pairs, total in candidates
            if len(pairs) == best_size and total >= best_total - 1e-9
        }
        assert matched in optimal, case
        for p, g, iou in result.tp:
            assert iou == symbol_iou(p, g, weights)
        assert len(result.tp) + len(result.fp) == len(preds)
        assert len(result.tp) + len(result.fn) == len(gts)


def test_matching_prefers_more_pairs_over_the_best_single_pair():
    weights = np.ones(10)
    gt_large, gt_small = sym(0, *range(10)), sym(0, *range(3, 9), instance=2)
    wide, narrow = sym(0, *range(9)), sym(0, *range(7), instance=2)
    result = match_symbols([wide, narrow], [gt_large, gt_small], weights)
    # Taking the 0.9 pair first would leave the narrow prediction unmatched
    assert [(p, g) for p, g, _ in result.tp] == [(wide, gt_small), (narrow, gt_large)]
    assert [iou for _, _, iou in result.tp] == pytest.approx([6 / 9, 0.7])
    assert result.fp == [] and result.fn == []



# ------------------------------------------------------------
# Panoptic quality
# ------------------------------------------------------------
def test_identical_labelings_score_one():
    symbols = [sym(0, 0, 1), sym(1, 2), sym(2, 3, 4, instance=0)]
    scores = panoptic_scores(match_symbols(symbols, symbols, np.ones(5)))
    assert (scores.pq, scores.sq, scores.rq) == (1.0, 1.0, 1.0)
    assert scores.pooled.tp == 3


def test_quality_row_example():
    row = QualityRow.from_counts([0.8], fp=1, fn=1)
    assert row.rq == pytest.approx(0.5)
    assert row.sq == pytest.approx(0.8)
    assert row.pq == pytest.approx(0.4)


def test_panoptic_example_through_matching():
    weights = np.array([2.0, 2.0, 1.0, 1.0, 1.0])
    preds = [sym(0, 0, 1), sym(0, 3, instance=2)]
    gts = [sym(0, 0, 1, 2), sym(0, 4, instance=2)]
    scores = panoptic_scores(match_symbols(preds, gts, weights))
    row = scores.per_class[0]
    assert (row.tp, row.fp, row.fn) == (1, 1, 1)
    assert row.pq == pytest.approx(0.4)
    assert scores.pq == pytest.approx(0.4)


def test_macro_average_skips_classes_without_ground_truth():
    preds = [sym(0, 0), sym(1, 1)]
    gts = [sym(0, 0)]
    scores = panoptic_scores(match_symbols(preds, gts, np.ones(2)))
    assert scores.per_class[1].pq == 0.0
    assert scores.pq == 1.0
    assert scores.pooled.rq == pytest.approx(1 / 1.5)


def test_pq_is_rq_times_sq_on_random_matches():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n_entities = int(rng.integers(3, 13))
        weights = rng.uniform(0.1, 5.0, size=n_entities)
        preds, gts = random_overlapping_symbols(rng, n_entities)
        scores = panoptic_scores(match_symbols(preds, gts, weights))
        for row in [*scores.per_class.values(), scores.pooled]:
            assert abs(row.pq - row.rq * row.sq) <= 1e-12
            assert 0.0 <= row.pq <= row.sq <= 1.0


def test_no_symbols_score_zero():
    scores = panoptic_scores(match_symbols([], [], np.ones(0)))
    assert (scores.pq, scores.sq, scores.rq) == (0.0, 0.0, 0.0)
    assert scores.per_class == {}


# ------------------------------------------------------------
# Semantic F1
# ------------------------------------------------------------
def test_semantic_f1_example():
    pred = [0, 0, 1, BACKGROUND]
    gt = [0, 1, 1, 1]
    scores = semantic_scores(pred, gt, np.ones(4))
    assert scores.per_class[0].f1 == pytest.approx(2 / 3)
    assert scores.per_class[1].f1 == pytest.approx(0.5)
    assert scores.per_class[1].recall == pytest.approx(1 / 3)
    assert scores.f1 == pytest.approx(4 / 7)
    assert scores.total.support == 4


def test_weighted_f1_uses_entity_weights():
    scores = semantic_scores([0, 0, 1, BACKGROUND], [0, 1, 1, 1], np.array([3.0, 1.0, 1.0, 1.0]))
    assert scores.weighted_f1 == pytest.approx(8 / 11)
    assert scores.per_class[0].weighted_f1 == pytest.approx(3 / 3.5)


def test_background_ground_truth_counts_as_false_positive():
    scores = semantic_scores([0, BACKGROUND], [BACKGROUND, BACKGROUND], np.ones(2))
    assert scores.per_class[0].f1 == 0.0
    assert scores.per_class[0].support == 0
    assert scores.f1 == 0.0
    assert BACKGROUND not in scores.per_class


def test_perfect_drawing_prediction(door_and_wall, catalog):
    scores = semantic_scores(door_and_wall.labels, door_and_wall.labels, door_and_wall)
    assert scores.f1 == 1.0
    assert scores.weighted_f1 == 1.0
    assert set(scores.per_category) == {"door", "wall"}
    assert set(scores.per_class) == {catalog.index("door"), catalog.index("wall")}


def test_semantic_lengths_must_agree(door_and_wall):
    with pytest.raises(LengthMismatch):
        semantic_scores(door_and_wall.labels[:-1], door_and_wall.labels[:-1], door_and_wall)


# ------------------------------------------------------------
# Detection AP
# ------------------------------------------------------------
def test_box_iou_examples():
    assert box_iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert box_iou((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0
    assert box_iou((0, 0, 10, 10), (0, 0, 10, 6)) == pytest.approx(0.6)
    assert box_iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(1 / 3)


def test_perfect_detection():
    gts = [box(0, (0, 0, 10, 10)), box(1, (20, 20, 30, 30))]
    scores = detection_ap(gts, gts)
    assert scores.ap50 == pytest.approx(1.0)
    assert scores.ap75 == pytest.approx(1.0)
    assert scores.map == pytest.approx(1.0)


def test_partial_overlap_counts_only_at_low_thresholds():
    scores = detection_ap([box(0, (0, 0, 10, 6))], [box(0, (0, 0, 10, 10))])
    np.testing.assert_allclose(scores.per_class[0], [1, 1, 1, 0, 0, 0, 0, 0, 0, 0])
    assert scores.ap50 == pytest.approx(1.0)
    assert scores.ap75 == 0.0
    assert scores.map == pytest.approx(0.3)


def test_duplicate_after_a_hit_keeps_full_ap():
    gt = [box(0, (0, 0, 10, 10))]
    preds = [box(0, (0, 0, 10, 10), 0.9), box(0, (0, 0, 10, 10), 0.8)]
    assert detection_ap(preds, gt).ap50 == pytest.approx(1.0)


def test_miss_ranked_first_halves_ap():
    gt = [box(0, (0, 0, 10, 10))]
    preds = [box(0, (50, 50, 60, 60), 0.9), box(0, (0, 0, 10, 10), 0.8)]
    assert detection_ap(preds, gt).ap50 == pytest.approx(0.5)


def test_hand_computed_precision_recall_curve():
    gts = [box(0, (0, 0, 10, 10)), box(0, (100, 0, 110, 10)), box(0, (200, 0, 210, 10))]
    preds = [
        box(0, (0, 0, 10, 10), 0.9),  # hit
        box(0, (500, 500, 510, 510), 0.8),  # miss
        box(0, (100, 0, 110, 6), 0.7),  # IoU 0.6 with the second box
        box(0, (600, 600, 610, 610), 0.6),  # miss
        box(0, (200, 0, 210, 10), 0.5),  # hit
    ]
    scores = detection_ap(preds, gts)
    # Up to IoU 0.6: recall 1/3, 1/3, 2/3, 2/3, 1 and precision 1, 1/2, 2/3, 1/2, 3/5.
    # The envelope is 1 for 34 recall points, 2/3 for 33 and 3/5 for 34.
    low = (34 * 1.0 + 33 * 2 / 3 + 34 * 0.6) / 101
    # Above IoU 0.6 the third box misses: precision 1 for 34 points, 2/5 for 33.
    high = (34 * 1.0 + 33 * 0.4) / 101
    np.testing.assert_allclose(scores.per_class[0], [low] * 3 + [high] * 7)
    assert scores.ap50 == pytest.approx(low)
    assert scores.ap75 == pytest.approx(high)
    assert scores.map == pytest.approx((3 * low + 7 * high) / 10)
    assert scores.class_map(0) == pytest.approx(scores.map)


def test_no_predictions_and_classes_without_ground_truth():
    scores = detection_ap([box(1, (0, 0, 1, 1))], [box(0, (0, 0, 10, 10))])
    assert set(scores.per_class) == {0}
    assert scores.map == 0.0
    assert detection_ap([], []).map == 0.0


def test_matching_stays_within_each_drawing():
    gt_a = [box(0, (0, 0, 10, 10))]
    gt_b = [box(0, (50, 50, 60, 60))]
    # The prediction for drawing a sits on drawing b's ground truth
    pairs = [([box(0, (50, 50, 60, 60))], gt_a), ([box(0, (50, 50, 60, 60), 0.5)], gt_b)]
    scores = detection_ap_dataset(pairs)
    # Half the recall, at precision 0.5 for recall points up to 0.5
    assert scores.ap50 == pytest.approx(0.5 * 51 / 101)


# ------------------------------------------------------------
# Statistics and reports
# ------------------------------------------------------------
def test_length_histogram_clips_to_range():
    d = make_drawing(
        [
            (segment(0, 0, 0.5, 0), None, 0),
            (segment(0, 0, 20, 0), None, 0),
            (segment(0, 0, 2000, 0), None, 0),
            (segment(0, 0, 1_000_000, 0), None, 0),
        ],
        extent=(0.0, 0.0, 1_000_000.0, 1.0),
    )
    counts, edges = length_histogram(d)
    assert len(edges) == 21
    assert edges[0] == pytest.approx(1.0)
    assert edges[-1] == pytest.approx(100_000.0)
    assert counts.sum() == 4
    assert counts[0] == 1
    assert counts[5] == 1
    assert counts[13] == 1
    assert counts[-1] == 1


def test_class_entity_counts(door_and_wall):
    table = class_entity_counts([door_and_wall, door_and_wall])
    counts = dict(zip(table["class"], table["entities"]))
    assert counts["door"] == 8
    assert counts["wall"] == 4
    assert counts["background"] == 2
    assert counts["parking"] == 0


def test_panoptic_report(catalog):
    symbols = [sym(0, 0, 1), sym(3, 2, instance=0)]
    scores = panoptic_scores(match_symbols(symbols, symbols, np.ones(3)))
    table, payload = build_report("panoptic", catalog, panoptic=scores, timestamp="2024-01-01")
    assert list(table.columns) == ["class", "F1", "wF1", "mAP", "PQ", "SQ", "RQ"]
    assert table["class"].tolist() == ["door", "wall", "total"]
    assert table["PQ"].tolist() == [1.0, 1.0, 1.0]
    assert table["F1"].isna().all()
    assert payload["kind"] == "panoptic"
    assert payload["timestamp"] == "2024-01-01"
    assert payload["length_unit"] == "mm"
    assert payload["total"]["F1"] is None
    assert payload["macro"]["pq"] == 1.0
    assert "AP50" not in payload

    text = format_report(table)
    assert text.splitlines()[-1].split()[0] == "total"
    assert "-" in text


def test_semantic_report_has_categories(door_and_wall, catalog):
    semantic = semantic_scores(door_and_wall.labels, door_and_wall.labels, door_and_wall)
    table, payload = build_report("semantic", catalog, semantic=semantic)
    assert table.iloc[-1]["F1"] == 1.0
    assert set(payload["categories"]) == {"door", "wall"}
    assert "pooled" not in payload
