"""Node features, graph convolution and the class-weighted AM-softmax loss."""

import json
import logging
import math
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from pancad.constants import BACKGROUND, CHECKPOINT_FORMAT_VERSION
from pancad.drawing import Drawing, LabelCatalog
from pancad.exceptions import DimensionMismatch, EmptyDataset, ParseError
from pancad.geometry import arc_length, entity_center, entity_midpoint, entity_type
from pancad.graph_builder import EntityGraph, build_graph
from pancad.rasterizer import FeaturePyramid, build_feature_pyramid, fetch_aligned_features
from pancad.schemas import FeatureConfig, GraphConfig, TrainConfig

logger = logging.getLogger(__name__)

TYPE_ORDER = ("segment", "circle", "curve")
DTYPE = torch.float64


# ------------------------------------------------------------
# Node features
# ------------------------------------------------------------
def assemble_node_features(
    d: Drawing,
    graph: EntityGraph,
    pyramid: FeaturePyramid | None,
    cfg: FeatureConfig | None = None,
) -> np.ndarray:
    """
    Per-entity feature rows [f^l, f^p, f^s, f^cnn].

    f^l = log(1 + length), f^p = bbox center normalized by the extent,
    f^s = one-hot over (segment, circle, curve), f^cnn = pyramid features
    fetched at the arc-length midpoint. Groups can be switched off in cfg.
    """
    cfg = cfg or FeatureConfig()
    if graph.n != len(d):
        raise DimensionMismatch(f"Graph has {graph.n} nodes, drawing has {len(d)} entities.")
    n = len(d)
    columns = []

    if cfg.use_spatial:
        lengths = np.log1p([arc_length(e) for e in d.entities]).reshape(n, 1)
        xmin, ymin, xmax, ymax = d.extent
        centers = np.array([entity_center(e) for e in d.entities]).reshape(n, 2)
        span = np.array([xmax - xmin, ymax - ymin])
        safe_span = np.where(span > 0, span, 1.0)
        position = np.where(span > 0, (centers - [xmin, ymin]) / safe_span, 0.5)
        columns += [lengths, np.clip(position, 0.0, 1.0)]

    if cfg.use_type:
        one_hot = np.zeros((n, len(TYPE_ORDER)))
        for i, e in enumerate(d.entities):
            one_hot[i, TYPE_ORDER.index(entity_type(e))] = 1.0
        columns.append(one_hot)

    if cfg.use_cnn:
        if pyramid is None:
            raise ValueError("Textural features need a feature pyramid.")
        if len(pyramid.levels) != cfg.levels or pyramid.channels != cfg.channels:
            raise DimensionMismatch(
                f"Pyramid is {len(pyramid.levels)}x{pyramid.channels}, "
                f"config expects {cfg.levels}x{cfg.channels}."
            )
        midpoints = np.array([entity_midpoint(e) for e in d.entities]).reshape(n, 2)
        columns.append(fetch_aligned_features(pyramid, midpoints))

    return np.concatenate(columns, axis=1) if n else np.zeros((0, cfg.dimension))


@dataclass(frozen=True)
class GraphSample:
    drawing_id: str
    features: np.ndarray
    graph: EntityGraph
    labels: np.ndarray


def prepare_sample(
    d: Drawing, graph_cfg: GraphConfig | None = None, feature_cfg: FeatureConfig | None = None
) -> GraphSample:
    graph_cfg = graph_cfg or GraphConfig()
    feature_cfg = feature_cfg or FeatureConfig()
    graph = build_graph(d, graph_cfg)
    pyramid = None
    if feature_cfg.use_cnn:
        pyramid = build_feature_pyramid(
            d,
            feature_cfg.scale,
            feature_cfg.levels,
            feature_cfg.channels,
            feature_cfg.line_width_px,
            feature_cfg.max_pixels,
        )
    features = assemble_node_features(d, graph, pyramid, feature_cfg)
    return GraphSample(drawing_id=d.id, features=features, graph=graph, labels=d.labels)


# ------------------------------------------------------------
# Parameters
# ------------------------------------------------------------
@dataclass
class GcnParams:
    """Per-layer W0/W1 (d_out x d_in) and unit-norm class rows over the last width."""

    w0: list[torch.Tensor]
    w1: list[torch.Tensor]
    classifier: torch.Tensor

    @classmethod
    def init(
        cls, in_dim: int, hidden: tuple[int, ...], n_classes: int, seed: int = 0
    ) -> "GcnParams":
        """He-style uniform init scaled by fan-in, seeded."""
        generator = torch.Generator().manual_seed(seed)
        widths = (in_dim, *hidden)
        w0, w1 = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = math.sqrt(6.0 / fan_in)
            for bucket in (w0, w1):
                unit = torch.rand(fan_out, fan_in, generator=generator, dtype=DTYPE)
                bucket.append((unit * 2 - 1) * bound)
        classifier = F.normalize(
            torch.randn(n_classes, widths[-1], generator=generator, dtype=DTYPE), dim=1
        )
        return cls(w0=w0, w1=w1, classifier=classifier).requires_grad_()

    def named(self) -> dict[str, torch.Tensor]:
        tensors = {}
        for layer, (a, b) in enumerate(zip(self.w0, self.w1), start=1):
            tensors[f"w0_{layer}"] = a
            tensors[f"w1_{layer}"] = b
        tensors["classifier"] = self.classifier
        return tensors

    def tensors(self) -> list[torch.Tensor]:
        return list(self.named().values())

    @property
    def in_dim(self) -> int:
        return self.w0[0].shape[1]

    @property
    def n_classes(self) -> int:
        return self.classifier.shape[0]

    def requires_grad_(self, flag: bool = True) -> "GcnParams":
        for tensor in self.tensors():
            tensor.requires_grad_(flag)
        return self

    def detached(self) -> "GcnParams":
        """Leaf copies that track gradients, independent of the originals."""
        return GcnParams(
            w0=[t.detach().clone() for t in self.w0],
            w1=[t.detach().clone() for t in self.w1],
            classifier=self.classifier.detach().clone(),
        ).requires_grad_()

    def to_lists(self) -> dict[str, list]:
        return {name: t.detach().tolist() for name, t in self.named().items()}

    @classmethod
    def from_lists(cls, payload: dict[str, list]) -> "GcnParams":
        n_layers = sum(1 for name in payload if name.startswith("w0_"))
        tensor = lambda name: torch.tensor(payload[name], dtype=DTYPE)  # noqa: E731
        return cls(
            w0=[tensor(f"w0_{i}") for i in range(1, n_layers + 1)],
            w1=[tensor(f"w1_{i}") for i in range(1, n_layers + 1)],
            classifier=tensor("classifier"),
        )


# ------------------------------------------------------------
# Forward, loss, gradients
# ------------------------------------------------------------
def adjacency_matrix(graph: EntityGraph) -> torch.Tensor:
    """Sparse symmetric 0/1 adjacency."""
    edges = graph.edge_array()
    index = np.concatenate([edges, edges[:, ::-1]], axis=0).T
    values = torch.ones(index.shape[1], dtype=DTYPE)
    return torch.sparse_coo_tensor(
        torch.as_tensor(np.ascontiguousarray(index), dtype=torch.int64),
        values,
        (graph.n, graph.n),
    ).coalesce()


def gcn_forward(
    X,
    graph: EntityGraph,
    params: GcnParams,
    return_preactivations: bool = False,
):
    """
    Three graph convolutions f' = ReLU(W0 f + sum_j W1 f_j), then cosine logits.

    Returns:
        torch.Tensor: (n, L) cosine similarities between the unit-normalized
        node embeddings and the unit-normalized class rows. With
        return_preactivations, also the list of per-layer inputs to ReLU.
    """
    x = torch.as_tensor(X, dtype=DTYPE)
    if x.ndim != 2 or x.shape[0] != graph.n:
        raise DimensionMismatch(f"Feature rows {tuple(x.shape)} do not match {graph.n} nodes.")
    if x.shape[1] != params.in_dim:
        raise DimensionMismatch(f"Feature width {x.shape[1]} != parameter width {params.in_dim}.")

    adjacency = adjacency_matrix(graph)
    h = x
    preactivations = []
    for w0, w1 in zip(params.w0, params.w1):
        z = h @ w0.T + torch.sparse.mm(adjacency, h @ w1.T)
        preactivations.append(z)
        h = torch.relu(z)
    embedding = F.normalize(h, dim=1, eps=1e-12)
    logits = embedding @ F.normalize(params.classifier, dim=1).T
    if return_preactivations:
        return logits, preactivations
    return logits


def am_softmax_loss(
    cosines: torch.Tensor,
    labels,
    weights,
    margin: float,
    scale: float,
) -> torch.Tensor:
    """
    Class-weighted AM-softmax cross-entropy, averaged over labeled nodes.

    Target logit s * (cos - m), other logits s * cos. Nodes labeled
    background (-1) do not contribute.
    """
    labels = torch.as_tensor(labels, dtype=torch.int64)
    weights = torch.as_tensor(weights, dtype=DTYPE)
    if labels.shape[0] != cosines.shape[0]:
        raise DimensionMismatch(f"{labels.shape[0]} labels for {cosines.shape[0]} nodes.")
    keep = labels != BACKGROUND
    if not bool(keep.any()):
        return cosines.sum() * 0.0
    y = labels[keep]
    margins = margin * F.one_hot(y, num_classes=cosines.shape[1]).to(DTYPE)
    z = scale * (cosines[keep] - margins)
    per_node = F.cross_entropy(z, y, reduction="none")
    return (weights[y] * per_node).mean()


def loss_and_grad(
    X,
    graph: EntityGraph,
    labels,
    params: GcnParams,
    weights,
    m: float,
    s: float,
) -> tuple[float, dict[str, torch.Tensor]]:
    """Loss value and exact gradients (reverse mode) keyed like GcnParams.named()."""
    working = params.detached()
    cosines = gcn_forward(X, graph, working)
    loss = am_softmax_loss(cosines, labels, weights, m, s)
    names = list(working.named())
    grads = torch.autograd.grad(loss, working.tensors(), allow_unused=True)
    return float(loss.detach()), {
        name: (g if g is not None else torch.zeros_like(t)).detach()
        for name, g, t in zip(names, grads, working.tensors())
    }


def compute_class_weights(
    dataset: Iterable, n_classes: int | None = None, mode: str = "frequency"
) -> np.ndarray:
    """
    Weights w_j = |{e : GT(e) = j}| / |{e}| over labeled entities.

    Args:
        dataset: Drawings, or label arrays (then n_classes is required).
        n_classes (int, optional): Number of classes; taken from the catalog otherwise.
        mode (str): "frequency" as above, or "inverse" for normalized 1 / count.

    Raises:
        EmptyDataset: no labeled entity at all.
    """
    label_arrays = []
    for item in dataset:
        if isinstance(item, Drawing):
            n_classes = n_classes or len(item.catalog)
            label_arrays.append(item.labels)
        else:
            label_arrays.append(np.asarray(item, dtype=np.int64))
    if not label_arrays:
        raise EmptyDataset("No drawings to weight.")
    if n_classes is None:
        raise ValueError("n_classes is required for raw label arrays.")

    labels = np.concatenate(label_arrays) if label_arrays else np.zeros(0, dtype=np.int64)
    labels = labels[labels != BACKGROUND]
    if labels.size == 0:
        raise EmptyDataset("No labeled entities to weight.")
    counts = np.bincount(labels, minlength=n_classes).astype(float)
    if mode == "inverse":
        inverse = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)
        return inverse / inverse.sum()
    return counts / counts.sum()


def uniform_class_weights(dataset: Iterable, n_classes: int) -> np.ndarray:
    present = compute_class_weights(dataset, n_classes) > 0
    return present / present.sum()


# ------------------------------------------------------------
# Inference
# ------------------------------------------------------------
def infer_entity_labels(
    d: Drawing,
    params: GcnParams,
    graph_cfg: GraphConfig | None = None,
    feature_cfg: FeatureConfig | None = None,
) -> np.ndarray:
    """Argmax of the cosine logits per entity (no margin at inference)."""
    if len(d) == 0:
        return np.zeros(0, dtype=np.int64)
    sample = prepare_sample(d, graph_cfg, feature_cfg)
    return predict_sample(sample, params)


def predict_sample(sample: GraphSample, params: GcnParams) -> np.ndarray:
    with torch.no_grad():
        logits = gcn_forward(sample.features, sample.graph, params)
    return logits.argmax(dim=1).numpy().astype(np.int64)


def entity_accuracy(predicted, expected) -> float:
    """Fraction of non-background entities predicted correctly."""
    predicted = np.asarray(predicted)
    expected = np.asarray(expected)
    keep = expected != BACKGROUND
    if not keep.any():
        return 1.0
    return float((predicted[keep] == expected[keep]).mean())


# ------------------------------------------------------------
# Checkpoints
# ------------------------------------------------------------
def save_params(
    params: GcnParams,
    path: str | Path,
    catalog: LabelCatalog,
    train_cfg: TrainConfig,
    graph_cfg: GraphConfig,
    feature_cfg: FeatureConfig,
) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "seed": train_cfg.seed,
        "classes": list(catalog.names),
        "stuff": sorted(catalog.stuff),
        "train_config": train_cfg.model_dump(by_alias=True),
        "graph_config": graph_cfg.model_dump(),
        "feature_config": feature_cfg.model_dump(),
        "shapes": {name: list(t.shape) for name, t in params.named().items()},
        "params": params.to_lists(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload), encoding="utf-8")
    logger.info("Saved checkpoint to %s", path)


def load_params(path: str | Path) -> dict:
    """Checkpoint contents: params, catalog and the configs it was trained with."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ParseError(1, f"unsupported checkpoint version {version}")
    params = GcnParams.from_lists(payload["params"])
    for name, tensor in params.named().items():
        if list(tensor.shape) != payload["shapes"][name]:
            raise DimensionMismatch(f"Checkpoint tensor '{name}' has the wrong shape.")
    return {
        "params": params,
        "catalog": LabelCatalog.from_names(payload["classes"], payload["stuff"]),
        "train_config": TrainConfig.model_validate(payload["train_config"]),
        "graph_config": GraphConfig.model_validate(payload["graph_config"]),
        "feature_config": FeatureConfig.model_validate(payload["feature_config"]),
    }
