# main.py
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from PIL import Image
from tabulate import tabulate

from refseg.clip_prior import compute_heatmap
from refseg.config import load_config, settings
from refseg.conllu import read_conllu
from refseg.dataset_io import load_dataset, load_image, save_dataset
from refseg.embedding import get_backend
from refseg.embedding.external import export_embeddings
from refseg.errors import ArgumentError, MissingParseError, RefSegError
from refseg.harness.ablation import run_ablation
from refseg.harness.evaluation import evaluate_predictions, format_report, read_predictions, write_report
from refseg.harness.inference import Predictor, predict_dataset, write_predictions
from refseg.harness.plots import plot_training_curves, save_heatmap_overlay
from refseg.harness.trainer import train
from refseg.models import Expression
from refseg.rle import encode_mask
from refseg.synthetic_data import generate_splits
from refseg.text_frontend import extract_main_object, prompt_for_expression, rollback_stats

logger = logging.getLogger("refseg")


def _split_dir(config, split: str) -> Path:
    return Path(config.data_dir) / split


def _backend(config):
    return get_backend(config.backend, data_dir=config.data_dir, dim=config.model.embedding_dim, seed=config.seed)


# --- Subcommands ---
def cmd_gen_data(config, args) -> int:
    splits = generate_splits(config.generation, config.seed, progress=True)
    rows = []
    for name, ds in splits.items():
        save_dataset(ds, _split_dir(config, name))
        n_samples = sum(1 for _ in ds.refs())
        rows.append([name, len(ds), len(ds.object_index()), n_samples])
    if args.export_embeddings:
        backend = get_backend("mock", dim=config.model.embedding_dim, seed=config.seed)
        for ds in splits.values():
            # both prompt forms, so either extractor setting can run on the export
            prompts = [prompt_for_expression(s.expression, use) for s in ds.samples() for use in (True, False)]
            export_embeddings(backend, ds, Path(config.data_dir), prompts)
    print(tabulate(rows, headers=["split", "scenes", "objects", "expressions"], tablefmt="psql"))
    return 0


def cmd_train(config, args) -> int:
    train_set = load_dataset(_split_dir(config, "train"))
    val_set = load_dataset(_split_dir(config, "val"))
    out_dir = config.resolved_output_dir()
    result = train(config, train_set, _backend(config), val_set, out_dir, progress=not args.no_progress)
    plot_training_curves(result.log, out_dir / "train_curves.png")
    if result.final_validation:
        print(tabulate(result.final_validation.items(), headers=["metric", "value"], tablefmt="psql", floatfmt=".4f"))
    logger.info(f"Checkpoint: {result.checkpoint}")
    return 0


def _parse_from_file(path: Path):
    parses = read_conllu(Path(path).read_text(encoding="utf-8").splitlines())
    if not parses:
        raise ArgumentError(f"{path} holds no sentence")
    return parses[0]


def cmd_infer(config, args) -> int:
    predictor = Predictor.from_checkpoint(Path(args.checkpoint), _backend(config))
    if args.split:
        dataset = load_dataset(_split_dir(config, args.split))
        records = predict_dataset(predictor, dataset, progress=True)
        out = Path(args.out or config.resolved_output_dir() / f"preds-{args.split}.jsonl")
        write_predictions(records, out)
        return 0

    if not args.image:
        raise ArgumentError("infer needs --split or --image")
    if args.parse:
        parse = _parse_from_file(Path(args.parse))
        expression = Expression(text=args.expression or parse.text, parse=parse)
    elif args.expression:
        raise MissingParseError(
            f"'{args.expression}' has no dependency parse; pass it as CoNLL-U with --parse "
            "(check it first with `refseg extract-object`)")
    else:
        raise ArgumentError("infer --image needs --parse (and optionally --expression)")
    image = load_image(Path(args.image))
    result = predictor.infer(image, expression, scene_id=args.scene_id)
    if args.mask_out:
        Image.fromarray(result.mask.astype(np.uint8) * 255).save(args.mask_out)
    print(json.dumps({"query_index": result.query_index, "probability": result.probability,
                      "mask": encode_mask(result.mask)}))
    return 0


def cmd_evaluate(config, args) -> int:
    dataset = load_dataset(_split_dir(config, args.split))
    report, objects = evaluate_predictions(dataset, read_predictions(Path(args.preds)))
    out_dir = Path(args.out) if args.out else Path(args.preds).parent / f"eval-{args.split}"
    write_report(report, objects, out_dir)
    print(format_report(report))
    return 0


def cmd_ablate(config, args) -> int:
    train_set = load_dataset(_split_dir(config, "train"))
    val_set = load_dataset(_split_dir(config, "val"))
    try:
        sweep = [int(n) for n in args.num_queries.split(",")] if args.num_queries else None
    except ValueError:
        raise ArgumentError(f"--num-queries expects comma-separated integers, got '{args.num_queries}'")
    out_dir = Path(args.out) if args.out else settings.output_root / "ablation"
    report = run_ablation(config, train_set, val_set, _backend(config), out_dir, num_queries=sweep)
    print(report.format())
    return 0


def cmd_heatmap(config, args) -> int:
    backend = _backend(config)
    if args.image:
        image, scene_id = load_image(Path(args.image)), args.scene_id
        prompt = args.prompt
        if not prompt:
            raise ArgumentError("heatmap --image needs --prompt")
    else:
        dataset = load_dataset(_split_dir(config, args.split))
        if not args.scene_id:
            raise ArgumentError("heatmap needs --scene-id or --image")
        scene = dataset.scene_by_id(args.scene_id)
        image, scene_id = scene.image, scene.scene_id
        expression = scene.instances[args.instance].expressions[args.expression_index]
        prompt = args.prompt or prompt_for_expression(expression, config.ablation.main_object_extractor)
    heatmap = compute_heatmap(backend.embed_image(image, scene_id), backend.embed_text(prompt))
    out = Path(args.out or config.resolved_output_dir() / "heatmap.png")
    save_heatmap_overlay(image, heatmap.grid.numpy(), out)
    print(json.dumps({"prompt": prompt, "grid": heatmap.grid.tolist()}))
    return 0


def cmd_extract_object(config, args) -> int:
    source = open(args.input, encoding="utf-8") if args.input else sys.stdin
    with source:
        parses = read_conllu(source)
    for parse in parses:
        result = extract_main_object(parse)
        print(json.dumps({"phrase": result.phrase, "rolled_back": result.rolled_back}))
    stats = rollback_stats(parses)
    print(json.dumps({"summary": stats.as_dict()}))
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "heatmap": cmd_heatmap,
    "extract-object": cmd_extract_object,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML or JSON run config")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a config value, e.g. --set optim.iterations=100")
    common.add_argument("--seed", type=int, help="Random seed (overrides the config)")
    common.add_argument("--log-level", default=settings.log_level, help="Logging level")

    parser = argparse.ArgumentParser(prog="refseg", description="Referring image segmentation on synthetic scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="Generate the synthetic train/val splits")
    p.add_argument("--export-embeddings", action="store_true",
                   help="Also write mock-backend embeddings in the external layout")

    p = sub.add_parser("train", parents=[common], help="Train a model")
    p.add_argument("--no-progress", action="store_true")

    p = sub.add_parser("infer", parents=[common], help="Predict masks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", help="Predict every expression of a dataset split")
    p.add_argument("--out", help="preds.jsonl destination")
    p.add_argument("--image", help="Single image (PNG)")
    p.add_argument("--parse", help="CoNLL-U file holding the expression's parse")
    p.add_argument("--expression", help="Expression text")
    p.add_argument("--scene-id", help="Scene id for backends that look embeddings up by id")
    p.add_argument("--mask-out", help="Write the predicted mask as a PNG")

    p = sub.add_parser("evaluate", parents=[common], help="Score a preds.jsonl file")
    p.add_argument("--preds", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--out")

    p = sub.add_parser("ablate", parents=[common], help="Train and compare the ablation grid")
    p.add_argument("--num-queries", help="Comma-separated query counts for an extra sweep on the full model")
    p.add_argument("--out")

    p = sub.add_parser("heatmap", parents=[common], help="Write a prior heatmap overlay PNG")
    p.add_argument("--split", default="val")
    p.add_argument("--scene-id")
    p.add_argument("--instance", type=int, default=0)
    p.add_argument("--expression-index", type=int, default=0)
    p.add_argument("--image")
    p.add_argument("--prompt")
    p.add_argument("--out")

    p = sub.add_parser("extract-object", parents=[common], help="Main noun phrase of CoNLL-U sentences")
    p.add_argument("--input", help="CoNLL-U file (default: stdin)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    # --- Logging Configuration ---
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    try:
        config = load_config(args.config, args.overrides, args.seed)
        return COMMANDS[args.command](config, args)
    except RefSegError as e:
        logger.error(f"{args.command} failed: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
