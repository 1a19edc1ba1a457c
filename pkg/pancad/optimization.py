import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from joblib import Parallel, delayed

from pancad.drawing import Drawing
from pancad.exceptions import DimensionMismatch, EmptyDataset
from pancad.gcn import (
    GcnParams,
    GraphSample,
    compute_class_weights,
    loss_and_grad,
    prepare_sample,
    uniform_class_weights,
)
from pancad.schemas import FeatureConfig, GraphConfig, TrainConfig

logger = logging.getLogger(__name__)


def cosine_lr(t: int, T: int, lr_max: float, lr_min: float = 0.0) -> float:
    """Cosine annealing: lr_min + 0.5 (lr_max - lr_min)(1 + cos(pi t / T))."""
    if not 0 <= t <= T:
        raise ValueError(f"Step {t} outside [0, {T}].")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / T))


@dataclass
class AdamState:
    optimizer: torch.optim.Adam
    step: int = 0

    @classmethod
    def create(
        cls,
        params: GcnParams,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> "AdamState":
        params.requires_grad_()
        optimizer = torch.optim.Adam(
            params.tensors(), lr=0.0, betas=(beta1, beta2), eps=eps, foreach=False
        )
        return cls(optimizer=optimizer)

    @classmethod
    def from_config(cls, params: GcnParams, cfg: TrainConfig) -> "AdamState":
        return cls.create(params, cfg.beta1, cfg.beta2, cfg.adam_eps)


def adam_step(
    params: GcnParams,
    grads: dict[str, torch.Tensor],
    state: AdamState,
    lr: float,
) -> tuple[GcnParams, AdamState]:
    """
    One bias-corrected Adam update in place, then classifier rows back to unit norm.

    Args:
        params (GcnParams): Parameters registered with state.optimizer.
        grads (dict): Gradients keyed like params.named().
        state (AdamState): Optimizer moments and step count.
        lr (float): Learning rate for this step.

    Returns:
        tuple[GcnParams, AdamState]: The updated params and state.
    """
    named = params.named()
    if set(grads) != set(named):
        raise DimensionMismatch(f"Gradient keys {sorted(grads)} != {sorted(named)}.")
    for name, tensor in named.items():
        grad = torch.as_tensor(grads[name], dtype=tensor.dtype)
        if grad.shape != tensor.shape:
            raise DimensionMismatch(
                f"Gradient '{name}' has shape {tuple(grad.shape)}, expected {tuple(tensor.shape)}."
            )
        tensor.grad = grad.detach().clone()

    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    with torch.no_grad():
        params.classifier.copy_(F.normalize(params.classifier, dim=1))
    state.step += 1
    return params, state


def prepare_samples(
    dataset,
    graph_cfg: GraphConfig | None = None,
    feature_cfg: FeatureConfig | None = None,
    n_jobs: int = 1,
) -> list[GraphSample]:
    """Graphs and features for every drawing, in dataset order."""
    return Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(prepare_sample)(d, graph_cfg, feature_cfg) for d in dataset
    )


def train_gcn(
    dataset,
    cfg: TrainConfig | None = None,
    graph_cfg: GraphConfig | None = None,
    feature_cfg: FeatureConfig | None = None,
    detection_losses=None,
    samples: list[GraphSample] | None = None,
    n_jobs: int = 1,
) -> dict:
    """
    Train the graph head, one drawing per step.

    Total loss per step is lambda * Loss_GCN + the detection stream value;
    the stream is zero unless detection_losses supplies one scalar per step.

    Args:
        dataset: Labeled drawings sharing one catalog.
        cfg (TrainConfig): Optimizer, loss and schedule settings.
        graph_cfg (GraphConfig): Entity graph settings.
        feature_cfg (FeatureConfig): Node feature settings.
        detection_losses (sequence, optional): External per-iteration scalars.
        samples (list[GraphSample], optional): Precomputed samples for dataset.
        n_jobs (int): Threads for sample preparation only.

    Returns:
        dict: params, loss_trace (DataFrame), class_weights.
    """
    cfg = cfg or TrainConfig()
    graph_cfg = graph_cfg or GraphConfig()
    feature_cfg = feature_cfg or FeatureConfig()
    drawings: list[Drawing] = list(dataset)
    if not drawings:
        raise EmptyDataset("Training needs at least one drawing.")
    catalog = drawings[0].catalog
    if any(d.catalog != catalog for d in drawings):
        raise ValueError("All training drawings must share one catalog.")

    if samples is None:
        samples = prepare_samples(drawings, graph_cfg, feature_cfg, n_jobs)
    if detection_losses is not None and len(detection_losses) < cfg.iterations:
        raise DimensionMismatch(
            f"{len(detection_losses)} detection losses for {cfg.iterations} iterations."
        )

    n_classes = len(catalog)
    labels = [s.labels for s in samples]
    if cfg.weighted_loss:
        weights = compute_class_weights(labels, n_classes, cfg.weight_mode)
    else:
        weights = uniform_class_weights(labels, n_classes)
    margin = cfg.margin if cfg.am_softmax else 0.0

    params = GcnParams.init(feature_cfg.dimension, cfg.hidden, n_classes, cfg.seed)
    state = AdamState.from_config(params, cfg)
    rng = np.random.default_rng(cfg.seed)

    trace = []
    for t in range(cfg.iterations):
        sample = samples[int(rng.integers(len(samples)))]
        lr = cosine_lr(t, cfg.iterations, cfg.lr_max, cfg.lr_min)
        gcn_loss, grads = loss_and_grad(
            sample.features, sample.graph, sample.labels, params, weights, margin, cfg.scale
        )
        detection = float(detection_losses[t]) if detection_losses is not None else 0.0
        grads = {name: cfg.loss_lambda * g for name, g in grads.items()}
        adam_step(params, grads, state, lr)

        trace.append(
            {
                "iteration": t,
                "lr": lr,
                "loss": cfg.loss_lambda * gcn_loss + detection,
                "gcn_loss": gcn_loss,
                "detection_loss": detection,
            }
        )
        if (t + 1) % cfg.log_every == 0 or t + 1 == cfg.iterations:
            logger.info(
                "Iteration %d/%d lr=%.3g loss=%.5f", t + 1, cfg.iterations, lr, trace[-1]["loss"]
            )

    params.requires_grad_(False)
    return {
        "params": params,
        "loss_trace": pd.DataFrame(trace),
        "class_weights": weights,
    }
