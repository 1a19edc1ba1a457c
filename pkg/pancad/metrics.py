"""Evaluation: arc-length symbol IoU, PQ/SQ/RQ, semantic F1 and detection AP."""

import datetime as dt
import logging
import math
from collections import Counter, defaultdict
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment

from pancad.constants import (
    AP_IOU_THRESHOLDS,
    AP_RECALL_POINTS,
    BACKGROUND,
    HISTOGRAM_BINS,
    HISTOGRAM_MAX_MM,
    HISTOGRAM_MIN_MM,
    LENGTH_UNIT,
    LOG_BASE,
    MATCH_IOU,
)
from pancad.drawing import Drawing, InstanceBox, LabelCatalog, Symbol
from pancad.exceptions import LengthMismatch
from pancad.geometry import BBox, arc_length

logger = logging.getLogger(__name__)


# ------------------------------------------------------------
# Symbol matching
# ------------------------------------------------------------
def _entity_weights(d: Drawing | Sequence[Drawing] | np.ndarray) -> np.ndarray:
    if isinstance(d, Drawing):
        return d.log_lengths()
    if isinstance(d, np.ndarray):
        return d.astype(float)
    parts = [drawing.log_lengths() for drawing in d]
    return np.concatenate(parts) if parts else np.zeros(0)


def symbol_iou(s_p: Symbol, s_g: Symbol, d: Drawing | np.ndarray) -> float:
    """
    Arc-length IoU: sum of log(1 + L) over shared entities divided by the
    same sum over the union. Symbols are sets of entity indices of d.
    """
    weights = _entity_weights(d)
    union = s_p.entities | s_g.entities
    shared = s_p.entities & s_g.entities
    if not shared:
        return 0.0
    if shared == union:
        return 1.0
    mass = lambda members: float(weights[sorted(members)].sum())  # noqa: E731
    return mass(shared) / mass(union)


@dataclass
class MatchResult:
    tp: list[tuple[Symbol, Symbol, float]] = field(default_factory=list)
    fp: list[Symbol] = field(default_factory=list)
    fn: list[Symbol] = field(default_factory=list)

    def merge(self, other: "MatchResult") -> "MatchResult":
        return MatchResult(
            tp=self.tp + other.tp, fp=self.fp + other.fp, fn=self.fn + other.fn
        )

    @classmethod
    def merge_all(cls, results: Sequence["MatchResult"]) -> "MatchResult":
        merged = cls()
        for result in results:
            merged = merged.merge(result)
        return merged


def match_symbols(
    preds: Sequence[Symbol], gts: Sequence[Symbol], d: Drawing | np.ndarray
) -> MatchResult:
    """
    Pair predicted and GT symbols with equal label and IoU > 0.5.

    Every symbol is in at most one TP pair. Among all such pairings the one
    with the most pairs wins, then the one with the largest IoU sum. When the
    symbols of each side are disjoint a symbol has at most one admissible
    partner, and the result is exactly the set of admissible pairs.
    """
    weights = _entity_weights(d)
    ious = np.zeros((len(preds), len(gts)))
    for i, s_p in enumerate(preds):
        for j, s_g in enumerate(gts):
            if s_p.label != s_g.label or not (s_p.entities & s_g.entities):
                continue
            iou = symbol_iou(s_p, s_g, weights)
            if iou > MATCH_IOU:
                ious[i, j] = iou

    tp = []
    if ious.any():
        # One extra pair outweighs any difference in IoU sums
        gain = np.where(ious > 0, ious + len(preds) + len(gts), 0.0)
        rows, cols = linear_sum_assignment(gain, maximize=True)
        tp = [(int(i), int(j), float(ious[i, j])) for i, j in zip(rows, cols) if ious[i, j] > 0]
    tp.sort()
    used_pred = {i for i, _, _ in tp}
    used_gt = {j for _, j, _ in tp}
    return MatchResult(
        tp=[(preds[i], gts[j], iou) for i, j, iou in tp],
        fp=[s for i, s in enumerate(preds) if i not in used_pred],
        fn=[s for j, s in enumerate(gts) if j not in used_gt],
    )


# ------------------------------------------------------------
# Panoptic quality
# ------------------------------------------------------------
@dataclass(frozen=True)
class QualityRow:
    pq: float
    sq: float
    rq: float
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, ious: Sequence[float], fp: int, fn: int) -> "QualityRow":
        tp = len(ious)
        denominator = tp + 0.5 * fp + 0.5 * fn
        rq = tp / denominator if denominator > 0 else 0.0
        sq = float(sum(ious)) / tp if tp else 0.0
        return cls(pq=rq * sq, sq=sq, rq=rq, tp=tp, fp=fp, fn=fn)


@dataclass(frozen=True)
class PanopticScores:
    per_class: dict[int, QualityRow]
    pooled: QualityRow
    macro: QualityRow

    @property
    def pq(self) -> float:
        return self.macro.pq

    @property
    def sq(self) -> float:
        return self.macro.sq

    @property
    def rq(self) -> float:
        return self.macro.rq


def panoptic_scores(match: MatchResult) -> PanopticScores:
    """
    Per-class and aggregate PQ/SQ/RQ.

    RQ = |TP| / (|TP| + |FP|/2 + |FN|/2), SQ = mean matched IoU (0 without
    TP), PQ = RQ * SQ. Pooled counts all symbols together; macro averages
    the per-class values over classes present in the ground truth and is
    the headline number.
    """
    ious: dict[int, list[float]] = defaultdict(list)
    fp: Counter = Counter(s.label for s in match.fp)
    fn: Counter = Counter(s.label for s in match.fn)
    for s_p, _, iou in match.tp:
        ious[s_p.label].append(iou)

    labels = sorted(set(ious) | set(fp) | set(fn))
    per_class = {
        label: QualityRow.from_counts(ious.get(label, []), fp[label], fn[label])
        for label in labels
    }
    pooled = QualityRow.from_counts(
        [iou for _, _, iou in match.tp], len(match.fp), len(match.fn)
    )

    with_gt = [row for row in per_class.values() if row.tp + row.fn > 0]
    if with_gt:
        macro = QualityRow(
            pq=float(np.mean([row.pq for row in with_gt])),
            sq=float(np.mean([row.sq for row in with_gt])),
            rq=float(np.mean([row.rq for row in with_gt])),
            tp=pooled.tp,
            fp=pooled.fp,
            fn=pooled.fn,
        )
    else:
        macro = QualityRow(0.0, 0.0, 0.0, pooled.tp, pooled.fp, pooled.fn)
    return PanopticScores(per_class=per_class, pooled=pooled, macro=macro)


# ------------------------------------------------------------
# Semantic F1
# ------------------------------------------------------------
@dataclass(frozen=True)
class F1Row:
    precision: float
    recall: float
    f1: float
    weighted_f1: float
    support: int


@dataclass(frozen=True)
class SemanticScores:
    per_class: dict[int, F1Row]
    total: F1Row
    per_category: dict[str, F1Row] = field(default_factory=dict)

    @property
    def f1(self) -> float:
        return self.total.f1

    @property
    def weighted_f1(self) -> float:
        return self.total.weighted_f1


def _f1(tp: float, fp: float, fn: float) -> float:
    denominator = tp + 0.5 * (fp + fn)
    return tp / denominator if denominator > 0 else 0.0


def _f1_row(pred: np.ndarray, gt: np.ndarray, weights: np.ndarray, key) -> F1Row:
    is_pred = pred == key
    is_gt = gt == key
    hit = is_pred & is_gt
    counts = [hit.sum(), (is_pred & ~is_gt).sum(), (is_gt & ~is_pred).sum()]
    masses = [weights[hit].sum(), weights[is_pred & ~is_gt].sum(), weights[is_gt & ~is_pred].sum()]
    tp, fp, fn = (float(c) for c in counts)
    return F1Row(
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        f1=_f1(tp, fp, fn),
        weighted_f1=_f1(*(float(m) for m in masses)),
        support=int(is_gt.sum()),
    )


def semantic_scores(
    pred_labels,
    gt_labels,
    d: Drawing | Sequence[Drawing] | np.ndarray,
    catalog: LabelCatalog | None = None,
) -> SemanticScores:
    """
    Entity-level F1 per class and micro-aggregated.

    The weighted variant accumulates log(1 + L) per entity instead of unit
    counts. Background is never scored as a class: a background GT entity
    predicted as class j is a false positive of j, and a class-j entity
    predicted as background is a false negative of j.

    Args:
        pred_labels: Predicted label per entity.
        gt_labels: Ground-truth label per entity.
        d: The drawing(s) the labels refer to, or the per-entity weights.
        catalog (LabelCatalog, optional): Enables the per-category rows.

    Raises:
        LengthMismatch: the sequences and the entity count differ.
    """
    pred = np.asarray(pred_labels, dtype=np.int64)
    gt = np.asarray(gt_labels, dtype=np.int64)
    weights = _entity_weights(d)
    if not pred.shape == gt.shape == weights.shape:
        raise LengthMismatch(
            f"{pred.size} predictions, {gt.size} labels and {weights.size} entities."
        )
    if catalog is None and isinstance(d, Drawing):
        catalog = d.catalog

    classes = sorted((set(pred.tolist()) | set(gt.tolist())) - {BACKGROUND})
    per_class = {c: _f1_row(pred, gt, weights, c) for c in classes}

    scored = (pred != BACKGROUND) | (gt != BACKGROUND)
    correct = (pred == gt) & scored
    wrong_pred = (pred != gt) & (pred != BACKGROUND)
    wrong_gt = (pred != gt) & (gt != BACKGROUND)
    tp, fp, fn = float(correct.sum()), float(wrong_pred.sum()), float(wrong_gt.sum())
    total = F1Row(
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        f1=_f1(tp, fp, fn),
        weighted_f1=_f1(
            float(weights[correct].sum()),
            float(weights[wrong_pred].sum()),
            float(weights[wrong_gt].sum()),
        ),
        support=int((gt != BACKGROUND).sum()),
    )

    per_category = {}
    if catalog is not None:
        to_category = np.vectorize(
            lambda label: "" if label == BACKGROUND else catalog.category(int(label)),
            otypes=[object],
        )
        pred_cat = to_category(pred) if pred.size else pred.astype(object)
        gt_cat = to_category(gt) if gt.size else gt.astype(object)
        categories = sorted((set(pred_cat.tolist()) | set(gt_cat.tolist())) - {""})
        per_category = {c: _f1_row(pred_cat, gt_cat, weights, c) for c in categories}
    return SemanticScores(per_class=per_class, total=total, per_category=per_category)


# ------------------------------------------------------------
# Detection AP
# ------------------------------------------------------------
@dataclass(frozen=True)
class DetectionScores:
    thresholds: tuple[float, ...]
    per_class: dict[int, np.ndarray]

    def _mean_at(self, threshold: float) -> float:
        k = int(np.argmin(np.abs(np.array(self.thresholds) - threshold)))
        if not self.per_class:
            return 0.0
        return float(np.mean([ap[k] for ap in self.per_class.values()]))

    @property
    def ap50(self) -> float:
        return self._mean_at(0.5)

    @property
    def ap75(self) -> float:
        return self._mean_at(0.75)

    @property
    def map(self) -> float:
        if not self.per_class:
            return 0.0
        return float(np.mean(np.stack(list(self.per_class.values()))))

    def class_map(self, label: int) -> float:
        return float(np.mean(self.per_class[label]))


def box_iou(a: BBox, b: BBox) -> float:
    if tuple(a) == tuple(b):
        return 1.0
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area = lambda box: (box[2] - box[0]) * (box[3] - box[1])  # noqa: E731
    union = area(a) + area(b) - inter
    return inter / union if union > 0 else 0.0


def interpolated_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """101-point interpolated average precision."""
    if recall.size == 0:
        return 0.0
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    points = np.linspace(0.0, 1.0, AP_RECALL_POINTS)
    index = np.searchsorted(recall, points, side="left")
    values = np.where(index < recall.size, envelope[np.minimum(index, recall.size - 1)], 0.0)
    return float(values.mean())


def detection_ap(
    pred_boxes: Sequence[InstanceBox],
    gt_boxes: Sequence[InstanceBox],
    thresholds: Sequence[float] = AP_IOU_THRESHOLDS,
) -> DetectionScores:
    """COCO-style AP for one drawing; see detection_ap_dataset."""
    return detection_ap_dataset([(pred_boxes, gt_boxes)], thresholds)


def detection_ap_dataset(
    pairs: Sequence[tuple[Sequence[InstanceBox], Sequence[InstanceBox]]],
    thresholds: Sequence[float] = AP_IOU_THRESHOLDS,
) -> DetectionScores:
    """
    COCO-style AP over many drawings, matching within each drawing.

    Per class and IoU threshold, predictions are taken in descending score
    and greedily matched to the highest-IoU unmatched GT box of the same
    drawing with IoU >= threshold. Classes without GT boxes are skipped.
    """
    gt_labels = sorted({box.label for _, gts in pairs for box in gts})
    per_class = {}
    for label in gt_labels:
        predictions = [
            (-box.score, img, k, box.bbox)
            for img, (preds, _) in enumerate(pairs)
            for k, box in enumerate(preds)
            if box.label == label
        ]
        predictions.sort(key=lambda item: item[:3])
        gts = {
            img: [box.bbox for box in gt_list if box.label == label]
            for img, (_, gt_list) in enumerate(pairs)
        }
        n_gt = sum(len(boxes) for boxes in gts.values())
        ap = np.zeros(len(thresholds))
        for t, threshold in enumerate(thresholds):
            matched = {img: [False] * len(boxes) for img, boxes in gts.items()}
            hits = np.zeros(len(predictions))
            for p, (_, img, _, bbox) in enumerate(predictions):
                best, best_iou = -1, -1.0
                for g, gt_bbox in enumerate(gts[img]):
                    if matched[img][g]:
                        continue
                    iou = box_iou(bbox, gt_bbox)
                    if iou >= threshold and iou > best_iou:
                        best, best_iou = g, iou
                if best >= 0:
                    matched[img][best] = True
                    hits[p] = 1.0
            cum_tp = np.cumsum(hits)
            recall = cum_tp / n_gt
            precision = cum_tp / np.arange(1, len(predictions) + 1)
            ap[t] = interpolated_ap(recall, precision)
        per_class[label] = ap
    return DetectionScores(thresholds=tuple(thresholds), per_class=per_class)


# ------------------------------------------------------------
# Dataset statistics
# ------------------------------------------------------------
def length_histogram(
    drawings: Drawing | Sequence[Drawing],
    bins: int = HISTOGRAM_BINS,
    min_mm: float = HISTOGRAM_MIN_MM,
    max_mm: float = HISTOGRAM_MAX_MM,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Counts of entity lengths over log-spaced bins from 1 mm to 100 m.

    Lengths outside the range go to the first or last bin.

    Returns:
        tuple: (counts, edges) with len(edges) == bins + 1.
    """
    if isinstance(drawings, Drawing):
        drawings = [drawings]
    lengths = np.array([arc_length(e) for d in drawings for e in d.entities], dtype=float)
    edges = np.logspace(math.log10(min_mm), math.log10(max_mm), bins + 1)
    counts, _ = np.histogram(np.clip(lengths, min_mm, max_mm), bins=edges)
    return counts, edges


def class_entity_counts(drawings: Sequence[Drawing]) -> pd.DataFrame:
    """Entity count per class name over a dataset, in catalog order."""
    counts: Counter = Counter()
    catalog = None
    for d in drawings:
        catalog = catalog or d.catalog
        counts.update(d.labels.tolist())
    if catalog is None:
        return pd.DataFrame(columns=["class", "entities"])
    rows = [
        {"class": catalog.name(label), "entities": counts.get(label, 0)}
        for label in [*range(len(catalog)), BACKGROUND]
    ]
    return pd.DataFrame(rows)


# ------------------------------------------------------------
# Reports
# ------------------------------------------------------------
REPORT_COLUMNS = ["class", "F1", "wF1", "mAP", "PQ", "SQ", "RQ"]


def build_report(
    kind: str,
    catalog: LabelCatalog,
    semantic: SemanticScores | None = None,
    panoptic: PanopticScores | None = None,
    detection: DetectionScores | None = None,
    timestamp: str | None = None,
) -> tuple[pd.DataFrame, dict]:
    """
    Per-class score table (class, F1, wF1, mAP, PQ, SQ, RQ) and its JSON form.

    Columns that the evaluated task does not produce are NaN in the table
    and null in the JSON.
    """
    labels = set()
    if semantic is not None:
        labels |= set(semantic.per_class)
    if panoptic is not None:
        labels |= set(panoptic.per_class)
    if detection is not None:
        labels |= set(detection.per_class)

    nan = float("nan")
    rows = []
    for label in sorted(labels):
        sem = semantic.per_class.get(label) if semantic else None
        pan = panoptic.per_class.get(label) if panoptic else None
        det = detection.per_class.get(label) if detection else None
        rows.append(
            {
                "class": catalog.name(label),
                "F1": sem.f1 if sem else nan,
                "wF1": sem.weighted_f1 if sem else nan,
                "mAP": detection.class_map(label) if det is not None else nan,
                "PQ": pan.pq if pan else nan,
                "SQ": pan.sq if pan else nan,
                "RQ": pan.rq if pan else nan,
            }
        )
    rows.append(
        {
            "class": "total",
            "F1": semantic.f1 if semantic else nan,
            "wF1": semantic.weighted_f1 if semantic else nan,
            "mAP": detection.map if detection else nan,
            "PQ": panoptic.pq if panoptic else nan,
            "SQ": panoptic.sq if panoptic else nan,
            "RQ": panoptic.rq if panoptic else nan,
        }
    )
    table = pd.DataFrame(rows, columns=REPORT_COLUMNS)

    payload = {
        "kind": kind,
        "length_unit": LENGTH_UNIT,
        "log_base": LOG_BASE,
        "timestamp": timestamp or dt.datetime.now(dt.timezone.utc).isoformat(),
        "classes": [_clean(row) for row in rows[:-1]],
        "total": _clean(rows[-1]),
    }
    if panoptic is not None:
        payload["pooled"] = _clean(vars(panoptic.pooled))
        payload["macro"] = _clean(vars(panoptic.macro))
    if detection is not None:
        payload["AP50"] = detection.ap50
        payload["AP75"] = detection.ap75
        payload["mAP"] = detection.map
    if semantic is not None and semantic.per_category:
        payload["categories"] = {
            name: _clean(vars(row)) for name, row in semantic.per_category.items()
        }
    logger.info("Report '%s': %s", kind, _clean(rows[-1]))
    return table, payload


def format_report(table: pd.DataFrame) -> str:
    """Aligned text table, one row per class plus the total row."""
    return table.to_string(index=False, float_format=lambda v: f"{v:.4f}", na_rep="-") + "\n"


def _clean(row: dict) -> dict:
    return {
        key: (None if isinstance(value, float) and math.isnan(value) else value)
        for key, value in row.items()
    }
