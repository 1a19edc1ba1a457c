"""Command-line surface: pancad <command> [options]."""

import argparse
import datetime as dt
import json
import logging
import sys
import tomllib
from pathlib import Path

import numpy as np
import pandas as pd
import pydantic
import scipy
import torch
from joblib import Parallel, delayed
from pydantic import ValidationError

import pancad
from pancad.constants import MANIFEST_NAME
from pancad.data_utils import (
    BOXES_SUFFIX,
    DRAWING_SUFFIX,
    DrawingDataset,
    load_boxes,
    read_dxf_file,
    save_drawing,
)
from pancad.drawing import Drawing, InstanceBox, group_symbols, gt_instance_boxes
from pancad.exceptions import EmptyDataset, InvariantViolation, LengthMismatch, PanCadError
from pancad.gcn import infer_entity_labels, load_params, save_params
from pancad.graph_builder import build_graph
from pancad.logging_utils import configure_logging
from pancad.metrics import (
    MatchResult,
    build_report,
    class_entity_counts,
    detection_ap_dataset,
    format_report,
    length_histogram,
    match_symbols,
    panoptic_scores,
    semantic_scores,
)
from pancad.optimization import train_gcn
from pancad.panoptic import assemble_panoptic
from pancad.rasterizer import render_label_mask, vote_entity_labels, write_pgm
from pancad.schemas import (
    FeatureConfig,
    GraphConfig,
    RasterConfig,
    RunConfig,
    SynthConfig,
    TrainConfig,
)
from pancad.visualization_utils import plot_class_scores, plot_length_histogram, plot_loss_trace

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INVARIANT = 2

# Config-file key / flag dest -> (config section, field)
SETTING_FIELDS = {
    "epsilon": ("graph", "epsilon"),
    "eta": ("graph", "eta"),
    "kmax": ("graph", "k_max"),
    "scale_ppm": ("raster", "scale"),
    "feature_scale_ppm": ("feature", "scale"),
    "iters": ("train", "iterations"),
    "lr": ("train", "lr_max"),
    "lr_min": ("train", "lr_min"),
    "margin": ("train", "margin"),
    "loss_scale": ("train", "scale"),
    "lambda": ("train", "lambda"),
    "hidden": ("train", "hidden"),
    "weighted_loss": ("train", "weighted_loss"),
    "weight_mode": ("train", "weight_mode"),
    "am_softmax": ("train", "am_softmax"),
    "use_spatial": ("feature", "use_spatial"),
    "use_type": ("feature", "use_type"),
    "use_cnn": ("feature", "use_cnn"),
    "classes": ("synth", "classes"),
    "class_set": ("synth", "class_set"),
    "rows": ("synth", "rows"),
    "cols": ("synth", "cols"),
    "overlap_free": ("synth", "overlap_free"),
    "door_density": ("synth", "door_density"),
    "window_density": ("synth", "window_density"),
    "parking_density": ("synth", "parking_density"),
    "furniture_density": ("synth", "furniture_density"),
}
RUN_KEYS = ("seed", "threads")


class UsageError(PanCadError):
    """Bad command line."""


class CliParser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ------------------------------------------------------------
# Settings
# ------------------------------------------------------------
def read_config_file(path: Path) -> dict:
    try:
        with open(path, "rb") as f:
            values = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise UsageError(f"{path}: {e}") from e
    unknown = sorted(set(values) - set(SETTING_FIELDS) - set(RUN_KEYS))
    if unknown:
        raise UsageError(f"{path}: unknown keys {unknown}")
    return values


def resolve_settings(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    values = read_config_file(args.config) if args.config else {}
    for key in (*SETTING_FIELDS, *RUN_KEYS):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if isinstance(values.get("classes"), str):
        values["classes"] = [name.strip() for name in values["classes"].split(",") if name.strip()]

    sections: dict[str, dict] = {"graph": {}, "raster": {}, "feature": {}, "train": {}, "synth": {}}
    for key, value in values.items():
        if key in SETTING_FIELDS:
            section, field_name = SETTING_FIELDS[key]
            sections[section][field_name] = value

    seed = int(values.get("seed", 0))
    for section in ("graph", "train", "synth"):
        sections[section]["seed"] = seed
    return {
        "seed": seed,
        "threads": int(values.get("threads", 1)),
        "graph": GraphConfig.model_validate(sections["graph"]),
        "raster": RasterConfig.model_validate(sections["raster"]),
        "feature": FeatureConfig.model_validate(sections["feature"]),
        "train": TrainConfig.model_validate(sections["train"]),
        "synth": SynthConfig.model_validate(sections["synth"]),
    }


def write_manifest(
    directory: Path,
    args: argparse.Namespace,
    argv: list[str],
    settings: dict,
    configs: list[str],
) -> Path:
    manifest = {
        "command": args.command if args.command != "eval" else f"eval {args.task}",
        "argv": argv,
        "version": pancad.__version__,
        "libraries": {
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
            "pydantic": pydantic.VERSION,
            "torch": torch.__version__,
        },
        "seed": settings["seed"],
        "threads": settings["threads"],
        "configs": {name: settings[name].model_dump(by_alias=True) for name in configs},
        "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(),
    }
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _parallel(threads: int):
    return Parallel(n_jobs=threads, prefer="threads")


def _load_dataset(path: Path) -> DrawingDataset:
    return DrawingDataset.from_directory(path)


def _paired(gt: DrawingDataset, pred: DrawingDataset) -> list[tuple[Drawing, Drawing]]:
    by_id = pred.by_id()
    missing = [d.id for d in gt if d.id not in by_id]
    if missing:
        raise LengthMismatch(f"Predictions missing for drawings {missing[:5]}.")
    pairs = []
    for d in gt:
        p = by_id[d.id]
        if len(p) != len(d):
            raise LengthMismatch(f"'{d.id}': {len(p)} predicted vs {len(d)} GT entities.")
        pairs.append((d, p))
    return pairs


# ------------------------------------------------------------
# Commands
# ------------------------------------------------------------
def cmd_gen(args, argv, settings) -> int:
    RunConfig(command="gen", output=args.out, seed=settings["seed"], threads=settings["threads"])
    dataset = DrawingDataset.from_config(settings["synth"], args.count, settings["threads"])
    dataset.to_directory(args.out, dxf=args.dxf)
    write_manifest(args.out, args, argv, settings, ["synth"])
    return EXIT_OK


def cmd_parse_dxf(args, argv, settings) -> int:
    RunConfig(command="parse-dxf", inputs=[args.input], output=args.out)
    drawing, skipped = read_dxf_file(args.input)
    for dxf_type, count in sorted(skipped.items()):
        logger.warning("Skipped %d unsupported %s entities", count, dxf_type)
    save_drawing(drawing, args.out)
    write_manifest(args.out.parent, args, argv, settings, [])
    return EXIT_OK


def cmd_graph(args, argv, settings) -> int:
    RunConfig(command="graph", inputs=[args.input], output=args.out)
    dataset = _load_dataset(args.input)
    graphs = _parallel(settings["threads"])(
        delayed(build_graph)(d, settings["graph"]) for d in dataset
    )
    args.out.mkdir(parents=True, exist_ok=True)
    for d, graph in zip(dataset, graphs):
        (args.out / f"{d.id}.graph.json").write_text(graph.to_json() + "\n", encoding="utf-8")
    write_manifest(args.out, args, argv, settings, ["graph"])
    return EXIT_OK


def cmd_rasterize(args, argv, settings) -> int:
    RunConfig(command="rasterize", inputs=[args.input], output=args.out)
    raster = settings["raster"]
    dataset = _load_dataset(args.input)
    masks = _parallel(settings["threads"])(
        delayed(render_label_mask)(d, raster.scale, raster.line_width_px, raster.max_pixels)
        for d in dataset
    )
    for d, mask in zip(dataset, masks):
        write_pgm(mask, args.out / f"{d.id}.pgm")
        if args.vote is not None:
            labels = vote_entity_labels(mask, d, raster.vote_samples)
            save_drawing(d.relabel(labels), args.vote / f"{d.id}{DRAWING_SUFFIX}")
    write_manifest(args.out, args, argv, settings, ["raster"])
    return EXIT_OK


def cmd_train(args, argv, settings) -> int:
    RunConfig(command="train", inputs=[args.data], output=args.out)
    torch.set_num_threads(1)
    dataset = _load_dataset(args.data)
    result = train_gcn(
        dataset,
        settings["train"],
        settings["graph"],
        settings["feature"],
        n_jobs=settings["threads"],
    )
    save_params(
        result["params"],
        args.out,
        dataset[0].catalog,
        settings["train"],
        settings["graph"],
        settings["feature"],
    )
    trace = result["loss_trace"]
    trace[["iteration", "lr", "loss"]].to_csv(args.out.with_suffix(".loss.csv"), index=False)
    if args.html is not None:
        plot_loss_trace(trace).write_html(args.html)
    write_manifest(args.out.parent, args, argv, settings, ["graph", "feature", "train"])
    return EXIT_OK


def cmd_infer(args, argv, settings) -> int:
    RunConfig(command="infer", inputs=[args.model, args.input], output=args.out)
    checkpoint = load_params(args.model)
    graph_cfg = checkpoint["graph_config"].model_copy(
        update={
            field_name: getattr(settings["graph"], field_name)
            for key, (section, field_name) in SETTING_FIELDS.items()
            if section == "graph" and getattr(args, key, None) is not None
        }
    )
    params, feature_cfg = checkpoint["params"], checkpoint["feature_config"]
    dataset = _load_dataset(args.input)
    predictions = _parallel(settings["threads"])(
        delayed(infer_entity_labels)(d, params, graph_cfg, feature_cfg) for d in dataset
    )
    for d, labels in zip(dataset, predictions):
        relabeled = d.model_copy(update={"catalog": checkpoint["catalog"]}).relabel(labels)
        save_drawing(relabeled, args.out / f"{d.id}{DRAWING_SUFFIX}")
    write_manifest(args.out, args, argv, settings, ["graph", "feature"])
    return EXIT_OK


def _boxes_for(d: Drawing, args, gt_by_id: dict[str, Drawing]) -> list[InstanceBox]:
    if args.gt_boxes is not None:
        if d.id not in gt_by_id:
            raise LengthMismatch(f"No ground truth drawing for '{d.id}'.")
        return gt_instance_boxes(gt_by_id[d.id])
    path = args.boxes / f"{d.id}{BOXES_SUFFIX}"
    if not path.exists():
        logger.warning("No box file for '%s'", d.id)
        return []
    return load_boxes(path, d.catalog)


def cmd_assemble(args, argv, settings) -> int:
    box_source = args.gt_boxes if args.gt_boxes is not None else args.boxes
    RunConfig(command="assemble", inputs=[args.pred, box_source], output=args.out)
    predictions = _load_dataset(args.pred)
    gt_by_id = _load_dataset(args.gt_boxes).by_id() if args.gt_boxes is not None else {}
    boxes = [_boxes_for(d, args, gt_by_id) for d in predictions]
    results = _parallel(settings["threads"])(
        delayed(assemble_panoptic)(d, d.labels, b, args.unboxed)
        for d, b in zip(predictions, boxes)
    )
    for result in results:
        save_drawing(result.drawing, args.out / f"{result.drawing.id}{DRAWING_SUFFIX}")
    write_manifest(args.out, args, argv, settings, [])
    return EXIT_OK


def _predicted_boxes(p: Drawing, pred_boxes: Path | None) -> list[InstanceBox]:
    if pred_boxes is None:
        return gt_instance_boxes(p)
    path = pred_boxes / f"{p.id}{BOXES_SUFFIX}"
    return load_boxes(path, p.catalog) if path.exists() else []


def cmd_eval(args, argv, settings) -> int:
    inputs = [args.gt, args.pred] + ([args.pred_boxes] if args.pred_boxes else [])
    RunConfig(command="eval", inputs=inputs, output=args.out)
    gt = _load_dataset(args.gt)
    pred = _load_dataset(args.pred)
    pairs = _paired(gt, pred)
    if not pairs:
        raise EmptyDataset(f"No drawings found in {args.gt}.")
    catalog = pairs[0][0].catalog
    parallel = _parallel(settings["threads"])

    semantic = panoptic = detection = None
    if args.task == "semantic":
        semantic = semantic_scores(
            np.concatenate([p.labels for _, p in pairs]),
            np.concatenate([d.labels for d, _ in pairs]),
            [d for d, _ in pairs],
            catalog,
        )
    elif args.task == "panoptic":
        matches = parallel(
            delayed(match_symbols)(group_symbols(p), group_symbols(d), d) for d, p in pairs
        )
        panoptic = panoptic_scores(MatchResult.merge_all(matches))
    else:
        detection = detection_ap_dataset(
            [(_predicted_boxes(p, args.pred_boxes), gt_instance_boxes(d)) for d, p in pairs]
        )

    table, payload = build_report(args.task, catalog, semantic, panoptic, detection)
    text = format_report(table)
    if args.html is not None:
        title = f"{args.task.capitalize()} scores per class"
        args.html.parent.mkdir(parents=True, exist_ok=True)
        plot_class_scores(table, title).write_html(args.html)
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "report.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        (args.out / "report.txt").write_text(text, encoding="utf-8")
        write_manifest(args.out, args, argv, settings, [])
    return EXIT_OK


def cmd_stats(args, argv, settings) -> int:
    RunConfig(command="stats", inputs=[args.input])
    dataset = _load_dataset(args.input)
    counts, edges = length_histogram(list(dataset))
    histogram = pd.DataFrame(
        {"from_mm": edges[:-1], "to_mm": edges[1:], "entities": counts}
    )
    sys.stdout.write(f"{len(dataset)} drawings, {int(counts.sum())} entities\n\n")
    sys.stdout.write(histogram.to_string(index=False, float_format=lambda v: f"{v:.1f}") + "\n\n")
    sys.stdout.write(class_entity_counts(list(dataset)).to_string(index=False) + "\n")
    if args.html is not None:
        plot_length_histogram(counts, edges).write_html(args.html)
        write_manifest(args.html.parent, args, argv, settings, [])
    return EXIT_OK


# ------------------------------------------------------------
# Parser
# ------------------------------------------------------------
def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML file of key = value settings")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--epsilon", type=float, help="proximity threshold (mm)")
    common.add_argument("--eta", type=float, help="parallel distance factor")
    common.add_argument("--kmax", type=int, help="maximum node degree")
    common.add_argument("--scale-ppm", dest="scale_ppm", type=float, help="raster pixels per mm")
    common.add_argument("--iters", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--margin", type=float)
    common.add_argument("--loss-scale", dest="loss_scale", type=float)
    common.add_argument("--lambda", dest="lambda", type=float)
    common.add_argument("--classes", type=str, help="comma separated class names")
    return common


def build_parser() -> CliParser:
    common = _common_options()
    parser = CliParser(prog="pancad", description="Panoptic symbol spotting on CAD drawings.")
    parser.add_argument("--version", action="version", version=f"pancad {pancad.__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", parents=[common], help="generate synthetic drawings")
    gen.add_argument("--out", type=Path, required=True)
    gen.add_argument("--count", type=int, default=1)
    gen.add_argument("--dxf", action="store_true", help="also write .dxf files")
    gen.add_argument("--rows", type=int)
    gen.add_argument("--cols", type=int)
    gen.add_argument("--class-set", dest="class_set", choices=["synth5", "full"])
    gen.add_argument(
        "--overlap-free",
        dest="overlap_free",
        action="store_const",
        const=True,
        help="keep strokes of different classes apart",
    )
    gen.set_defaults(handler=cmd_gen)

    parse = commands.add_parser("parse-dxf", parents=[common], help="convert a DXF file")
    parse.add_argument("input", type=Path)
    parse.add_argument("--out", type=Path, required=True)
    parse.set_defaults(handler=cmd_parse_dxf)

    graph = commands.add_parser("graph", parents=[common], help="dump entity graphs")
    graph.add_argument("input", type=Path)
    graph.add_argument("--out", type=Path, required=True)
    graph.set_defaults(handler=cmd_graph)

    rasterize = commands.add_parser("rasterize", parents=[common], help="render label masks")
    rasterize.add_argument("input", type=Path)
    rasterize.add_argument("--out", type=Path, required=True)
    rasterize.add_argument("--vote", type=Path, help="write voted drawings here")
    rasterize.set_defaults(handler=cmd_rasterize)

    train = commands.add_parser("train", parents=[common], help="train the graph head")
    train.add_argument("--data", type=Path, required=True)
    train.add_argument("--out", type=Path, required=True, help="checkpoint file")
    train.add_argument("--html", type=Path, help="write the loss trace figure")
    train.set_defaults(handler=cmd_train)

    infer = commands.add_parser("infer", parents=[common], help="predict entity labels")
    infer.add_argument("input", type=Path)
    infer.add_argument("--model", type=Path, required=True)
    infer.add_argument("--out", type=Path, required=True)
    infer.set_defaults(handler=cmd_infer)

    assemble = commands.add_parser("assemble", parents=[common], help="fuse labels and boxes")
    assemble.add_argument("--pred", type=Path, required=True)
    source = assemble.add_mutually_exclusive_group(required=True)
    source.add_argument("--boxes", type=Path, help="directory of box files")
    source.add_argument(
        "--gt-boxes", dest="gt_boxes", type=Path, help="GT drawings to take boxes from"
    )
    assemble.add_argument("--unboxed", choices=["keep", "background"], default="keep")
    assemble.add_argument("--out", type=Path, required=True)
    assemble.set_defaults(handler=cmd_assemble)

    evaluate = commands.add_parser("eval", parents=[common], help="score predictions")
    evaluate.add_argument("task", choices=["semantic", "instance", "panoptic"])
    evaluate.add_argument("--gt", type=Path, required=True)
    evaluate.add_argument("--pred", type=Path, required=True)
    evaluate.add_argument("--pred-boxes", dest="pred_boxes", type=Path)
    evaluate.add_argument("--out", type=Path)
    evaluate.add_argument("--html", type=Path, help="write the per-class score figure")
    evaluate.set_defaults(handler=cmd_eval)

    stats = commands.add_parser("stats", parents=[common], help="dataset statistics")
    stats.add_argument("input", type=Path)
    stats.add_argument("--html", type=Path, help="write the length histogram figure")
    stats.set_defaults(handler=cmd_stats)
    return parser


def run(argv: list[str] | None = None) -> int:
    """Run one command; returns the exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    configure_logging()
    try:
        args = build_parser().parse_args(argv)
        settings = resolve_settings(args)
        return args.handler(args, argv, settings)
    except (InvariantViolation, AssertionError) as e:
        print(f"pancad: internal error: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except (PanCadError, ValidationError, OSError) as e:
        print(f"pancad: {e}", file=sys.stderr)
        return EXIT_INPUT


def main() -> int:
    return run()
