"""Command-line front end.

Subcommands: train, encode, decode, eval-ap, bench. Exit codes: 0 on
success, 1 for usage mistakes, 2 for bad inputs or malformed files,
3 when training diverges. A JSON file of option defaults can be applied
with --config; explicit flags win over the file, the file wins over
built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .codec import (BITSTREAM_EXTENSION, CodecBundle, bpp, decode_image,
                    encode_image)
from .data import (DatasetManifest, arc_threads, load_dataset, load_image,
                   make_synthetic_dataset, parse_annotations, save_image)
from .errors import ArcodecError, ConfigurationError, NumericError
from .evaluation import (evaluate_detections, ingest_detections,
                         latency_bench)
from .loss import LossWeights
from .model import ModelConfig
from .trainer import TrainConfig, fit, init_state

_IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".ppm")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    """Raised for malformed command lines instead of exiting directly."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# Option dests that a --config file may set; "class" aliases "label".
_CONFIG_KEYS = frozenset({
    "n", "m", "epochs", "batch", "lr", "seed", "size",
    "lambda_r", "lambda_bg", "lambda_hbox", "lambda_vbox",
    "checkpoint_interval", "iou", "repeats", "op", "label", "role",
})


def _scan_config(argv: list[str]) -> dict:
    path = None
    for i, arg in enumerate(argv):
        if arg == "--config":
            if i + 1 >= len(argv):
                raise UsageError("--config expects a file path")
            path = argv[i + 1]
        elif arg.startswith("--config="):
            path = arg.split("=", 1)[1]
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            loaded = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path}: invalid JSON: {exc.msg}")
    if not isinstance(loaded, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    out = {}
    for key, value in loaded.items():
        dest = key.replace("-", "_")
        if dest == "class":
            dest = "label"
        if dest not in _CONFIG_KEYS:
            raise ConfigurationError(f"config file {path}: unknown key {key!r}")
        out[dest] = value
    return out


def _build_parser() -> tuple[_Parser, list[_Parser]]:
    parser = _Parser(prog="arcodec",
                     description="Learned codec that anonymizes head "
                                 "regions during compression.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers = []

    def common(p):
        p.add_argument("--config", metavar="FILE",
                       help="JSON file of option defaults")
        subparsers.append(p)

    p = sub.add_parser("train", help="fit a model on a dataset")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", metavar="DIR",
                     help="directory holding annotations.odgt and images/")
    src.add_argument("--synthetic", type=int, metavar="N",
                     help="train on N generated scenes instead of files")
    p.add_argument("--out", required=True, metavar="DIR",
                   help="output directory for model.arcw and train_log.csv")
    p.add_argument("--n", type=int, default=128, help="latent channel count")
    p.add_argument("--m", type=int, default=2, help="hidden layer count")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lambda-r", type=float, default=0.04, dest="lambda_r")
    p.add_argument("--lambda-bg", type=float, default=1.0, dest="lambda_bg")
    p.add_argument("--lambda-hbox", type=float, default=0.6, dest="lambda_hbox")
    p.add_argument("--lambda-vbox", type=float, default=1.0, dest="lambda_vbox")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=512,
                   help="training resolution (images are rescaled to it)")
    p.add_argument("--checkpoint-interval", type=int, default=0,
                   dest="checkpoint_interval")
    common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("encode", help="compress one image")
    p.add_argument("--model", required=True, metavar="FILE")
    p.add_argument("input", metavar="IMAGE")
    p.add_argument("--out", metavar="FILE",
                   help=f"output path (default: input + {BITSTREAM_EXTENSION})")
    common(p)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="reconstruct an image from a bitstream")
    p.add_argument("--model", required=True, metavar="FILE")
    p.add_argument("input", metavar="BITSTREAM")
    p.add_argument("--out", metavar="FILE",
                   help="output path (default: input with .png suffix)")
    common(p)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("eval-ap", help="score detections against ground truth")
    p.add_argument("--gt", required=True, metavar="FILE",
                   help="ODGT annotation file")
    p.add_argument("--dets", required=True, metavar="FILE",
                   help="JSON-lines detection file")
    p.add_argument("--class", default="person", dest="label",
                   help="detection class to score")
    p.add_argument("--role", default="hbox", choices=("hbox", "vbox", "any"),
                   help="which ground-truth boxes count")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out", metavar="CSV", help="also write a CSV row")
    common(p)
    p.set_defaults(func=_cmd_eval_ap)

    p = sub.add_parser("bench", help="time encode or decode over images")
    p.add_argument("--model", required=True, metavar="FILE")
    p.add_argument("--images", required=True, nargs="+", metavar="PATH",
                   help="image files or directories of images")
    p.add_argument("--op", default="encode", choices=("encode", "decode"))
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--out", metavar="CSV", help="also write the stats as CSV")
    common(p)
    p.set_defaults(func=_cmd_bench)

    return parser, subparsers


# ---------------------------------------------------------------------------
# subcommands


def _cmd_train(args) -> int:
    config = ModelConfig(width_n=args.n, hidden_layers_m=args.m,
                         input_size=args.size)
    if args.synthetic is not None:
        dataset = make_synthetic_dataset(args.synthetic, seed=args.seed,
                                         size=args.size)
    else:
        root = Path(args.data)
        manifest = DatasetManifest(annotation_path=root / "annotations.odgt",
                                   image_dir=root / "images",
                                   target_size=args.size)
        dataset = load_dataset(manifest, max_workers=arc_threads())
    weights = LossWeights(lambda_r=args.lambda_r, lambda_bg=args.lambda_bg,
                          lambda_hbox=args.lambda_hbox,
                          lambda_vbox=args.lambda_vbox)
    tconfig = TrainConfig(weights=weights, epochs=args.epochs,
                          batch_size=args.batch, learning_rate=args.lr,
                          seed=args.seed,
                          checkpoint_interval=args.checkpoint_interval)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = init_state(config, seed=args.seed)
    state, history = fit(state, dataset, tconfig,
                         log_path=out_dir / "train_log.csv",
                         checkpoint_path=out_dir / "model.arcw")
    for i, bd in enumerate(history, start=1):
        print(f"epoch {i}: total={bd.total:.6f} rate={bd.rate:.6f} "
              f"bg={bd.bg:.6f} hbox={bd.hbox:.6f} vbox={bd.vbox:.6f}")
    print(f"model written to {out_dir / 'model.arcw'}")
    return EXIT_OK


def _cmd_encode(args) -> int:
    bundle = CodecBundle.load(args.model)
    image = load_image(args.input)
    data = encode_image(image, bundle)
    out = args.out or args.input + BITSTREAM_EXTENSION
    with open(out, "wb") as fh:
        fh.write(data)
    print(f"{out}: {len(data)} bytes, {bpp(data):.4f} bpp")
    return EXIT_OK


def _cmd_decode(args) -> int:
    bundle = CodecBundle.load(args.model)
    with open(args.input, "rb") as fh:
        data = fh.read()
    image = decode_image(data, bundle)
    out = args.out or str(Path(args.input).with_suffix(".png"))
    save_image(out, image)
    print(f"{out}: {image.shape[2]}x{image.shape[1]}")
    return EXIT_OK


def _cmd_eval_ap(args) -> int:
    records = parse_annotations(args.gt)
    pairs = []
    for image_id, boxes in records:
        for b in boxes:
            if args.role == "any" or b.role == args.role:
                pairs.append((image_id, b))
    detections = [d for d in ingest_detections(args.dets)
                  if d.label == args.label]
    result = evaluate_detections(detections, pairs, iou_threshold=args.iou)
    print(f"class={args.label} role={args.role} iou={args.iou:g} "
          f"ap={result.ap:.6f} tp={result.tp} fp={result.fp} "
          f"num_gt={result.num_gt}")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write("class,role,iou,ap,tp,fp,num_gt\n")
            fh.write(f"{args.label},{args.role},{args.iou:g},"
                     f"{result.ap:.6f},{result.tp},{result.fp},"
                     f"{result.num_gt}\n")
    return EXIT_OK


def _collect_images(paths: list[str]) -> list[str]:
    files = []
    for p in paths:
        path = Path(p)
        if path.is_dir():
            found = sorted(str(f) for f in path.iterdir()
                           if f.suffix.lower() in _IMAGE_EXTENSIONS)
            files.extend(found)
        else:
            files.append(str(path))
    return files


def _cmd_bench(args) -> int:
    bundle = CodecBundle.load(args.model)
    files = _collect_images(args.images)
    images = [load_image(f) for f in files]
    if args.op == "encode":
        items = images
        op = lambda img: encode_image(img, bundle)
    else:
        items = [encode_image(img, bundle) for img in images]
        op = lambda stream: decode_image(stream, bundle)
    stats = latency_bench(op, items, repeats=args.repeats)
    print(f"op={args.op} images={len(items)} samples={stats.samples} "
          f"min={stats.min:.6f}s mean={stats.mean:.6f}s std={stats.std:.6f}s")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write("op,min_s,mean_s,std_s,samples\n")
            fh.write(f"{args.op},{stats.min:.9f},{stats.mean:.9f},"
                     f"{stats.std:.9f},{stats.samples}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser, subparsers = _build_parser()
        defaults = _scan_config(argv)
        if defaults:
            # Subparsers reparse into a fresh namespace, so defaults set on
            # the root parser alone would be shadowed by subcommand defaults.
            for p in (parser, *subparsers):
                p.set_defaults(**defaults)
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            raise UsageError("a subcommand is required (see --help)")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ArcodecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
