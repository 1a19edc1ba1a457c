"""Box-based fusion of per-entity labels into a panoptic labeling."""

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from pancad.constants import BACKGROUND, MEMBERSHIP_FRACTION, MEMBERSHIP_SAMPLES
from pancad.drawing import Drawing, InstanceBox, Symbol, group_symbols
from pancad.exceptions import InvariantViolation, LengthMismatch, UnknownClass
from pancad.geometry import sample_points

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PanopticPrediction:
    labels: np.ndarray
    instances: np.ndarray
    drawing: Drawing

    @property
    def symbols(self) -> list[Symbol]:
        return group_symbols(self.drawing)


def assemble_panoptic(
    d: Drawing,
    entity_labels,
    boxes: list[InstanceBox],
    unboxed: Literal["keep", "background"] = "keep",
) -> PanopticPrediction:
    """
    Assign (label, instance) to every entity.

    Stuff entities get instance 0. Boxes are visited by descending score; a
    box captures the unassigned entities of its own class that have at least
    half of their sampled points inside it, and captured entities share a
    fresh instance id. Ids are dense 1..N in visiting order; a box capturing
    nothing consumes no id. Thing entities no box captures keep their label
    with instance 0, or become background with unboxed="background".

    Raises:
        LengthMismatch: one label per entity is required.
        UnknownClass: a box class is not a thing class.
    """
    labels = np.asarray(entity_labels, dtype=np.int64).copy()
    if labels.shape != (len(d),):
        raise LengthMismatch(f"{labels.size} labels for {len(d)} entities.")
    catalog = d.catalog
    for box in boxes:
        if box.label >= len(catalog) or not catalog.is_thing(box.label):
            raise UnknownClass(str(box.label))

    instances = np.zeros(len(d), dtype=np.int64)
    is_thing = np.array([catalog.is_thing(int(label)) for label in labels], dtype=bool)
    if len(d):
        samples = np.stack([sample_points(e, MEMBERSHIP_SAMPLES) for e in d.entities])
    else:
        samples = np.zeros((0, MEMBERSHIP_SAMPLES, 2))

    # Stable sort keeps file order among equal scores
    order = sorted(range(len(boxes)), key=lambda k: -boxes[k].score)
    next_id = 1
    for k in order:
        box = boxes[k]
        xmin, ymin, xmax, ymax = box.bbox
        inside = (
            (samples[..., 0] >= xmin)
            & (samples[..., 0] <= xmax)
            & (samples[..., 1] >= ymin)
            & (samples[..., 1] <= ymax)
        ).mean(axis=1)
        captured = (
            is_thing
            & (labels == box.label)
            & (instances == 0)
            & (inside >= MEMBERSHIP_FRACTION)
        )
        if not captured.any():
            logger.debug(
                "Box %d (%s) in '%s' captures no entity", k, catalog.name(box.label), d.id
            )
            continue
        instances[captured] = next_id
        next_id += 1

    if unboxed == "background":
        labels[is_thing & (instances == 0)] = BACKGROUND

    if (instances[labels == BACKGROUND] != 0).any():
        raise InvariantViolation("Background entity received an instance id.")
    prediction = d.relabel(labels, instances)
    return PanopticPrediction(labels=labels, instances=instances, drawing=prediction)
