"""Command-line entry points for the region-selection deblurring pipeline.

Subcommands cover the whole workflow: synthesize a blurred corpus, label its
patches with the built-in estimator, train the patch classifier, rank patches
of a single image, deblur an image from its best patch, and benchmark
selection strategies against baselines.

Option precedence is builtin defaults, then a ``--config`` JSON file, then
explicit flags. Every run that owns an output directory echoes its resolved
options to ``run_config.json`` there.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import statistics
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .classifier import (
    TrainConfig,
    build_small_resnet,
    load_model,
    save_model,
    train,
    write_training_log,
)
from .errors import (
    ModelFormatError,
    ParseError,
    RegionDeblurError,
    ValidationError,
)
from .estimator import BlindEstimator, EstimatorConfig, solve_latent
from .evaluation import (
    EVAL_METHODS,
    evaluate_pipeline,
    success_curve,
    write_eval_csv,
    write_success_curve_svg,
)
from .imagecore import Image, read_image, write_image, write_kernel
from .kernelsim import LabelConfig
from .labeling import (
    LabeledDataset,
    build_dataset,
    class_balance_report,
    load_training_samples,
)
from .selector import annotate_selection, score_patches, select_and_estimate, select_top
from .synthesis import CorpusManifest, NoiseModel, PatchGridSpec, generate_corpus

JOBS_ENV_VAR = "REGIONDEBLUR_JOBS"

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_FORMAT = 3
EXIT_FAILURE = 4


def _default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV_VAR, "1")
    try:
        value = int(raw)
    except ValueError:
        raise ValidationError(f"{JOBS_ENV_VAR} must be an integer, got {raw!r}")
    return value


# Name -> (converter, builtin default or callable producing it).
_COMMAND_OPTIONS = {
    "synthesize": {
        "sharp_dir": (str, None),
        "kernel_dir": (str, None),
        "out_dir": (str, None),
        "sigma": (float, 4.0),
        "seed": (int, 0),
        "jobs": (int, _default_jobs),
    },
    "label": {
        "manifest": (str, None),
        "out_dir": (str, None),
        "patch_size": (int, 228),
        "stride": (int, 20),
        "kernel_size": (int, 27),
        "threshold": (float, 0.75),
        "jobs": (int, _default_jobs),
        "store_patches": (bool, False),
    },
    "train": {
        "dataset": (str, None),
        "out_dir": (str, None),
        "epochs": (int, 20),
        "batch_size": (int, 32),
        "learning_rate": (float, 0.001),
        "momentum": (float, 0.9),
        "seed": (int, 0),
        "input_side": (int, 0),
    },
    "select": {
        "model": (str, None),
        "image": (str, None),
        "patch_size": (int, 0),
        "stride": (int, 20),
        "top": (int, 5),
        "out_json": (str, ""),
        "out_annotated": (str, ""),
    },
    "deblur": {
        "model": (str, None),
        "image": (str, None),
        "kernel_size": (int, None),
        "out_dir": (str, None),
        "patch_size": (int, 0),
        "stride": (int, 20),
        "latent_reg": (float, 2e-3),
    },
    "evaluate": {
        "manifest": (str, None),
        "model": (str, ""),
        "out_dir": (str, None),
        "patch_size": (int, 228),
        "stride": (int, 20),
        "kernel_size": (int, 27),
        "methods": (str, "top,random,whole,center,gt"),
        "seed": (int, 0),
    },
}

_REQUIRED = {
    "synthesize": ("sharp_dir", "kernel_dir", "out_dir"),
    "label": ("manifest", "out_dir"),
    "train": ("dataset", "out_dir"),
    "select": ("model", "image"),
    "deblur": ("model", "image", "kernel_size", "out_dir"),
    "evaluate": ("manifest", "out_dir"),
}


def resolve_options(command: str, args: argparse.Namespace) -> dict:
    """Merge builtin defaults, the optional config file, and explicit flags."""
    spec = _COMMAND_OPTIONS[command]
    merged = {}
    for name, (conv, default) in spec.items():
        merged[name] = default() if callable(default) else default
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            raw = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {config_path} is not valid JSON: {exc}")
        if not isinstance(raw, dict):
            raise ValidationError(f"config file {config_path} must hold a JSON object")
        for key, value in raw.items():
            if key not in spec:
                raise ValidationError(f"config key {key!r} is not an option of {command!r}")
            conv = spec[key][0]
            merged[key] = bool(value) if conv is bool else conv(value)
    for name, (conv, _default) in spec.items():
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    for name in _REQUIRED[command]:
        if merged.get(name) is None:
            raise ValidationError(f"missing required option --{name.replace('_', '-')}")
    return merged


def _echo_config(command: str, options: dict, out_dir: Path) -> None:
    payload = {"command": command, "options": options}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )


def _cmd_synthesize(args: argparse.Namespace) -> int:
    opts = resolve_options("synthesize", args)
    out_dir = Path(opts["out_dir"])
    noise = NoiseModel(sigma=opts["sigma"], seed=opts["seed"])
    manifest = generate_corpus(
        opts["sharp_dir"], opts["kernel_dir"], noise, out_dir, jobs=opts["jobs"]
    )
    _echo_config("synthesize", opts, out_dir)
    print(f"synthesized {len(manifest.entries)} blurred images into {out_dir}")
    return EXIT_OK


def _cmd_label(args: argparse.Namespace) -> int:
    opts = resolve_options("label", args)
    manifest = CorpusManifest.load(opts["manifest"])
    grid = PatchGridSpec(patch_size=opts["patch_size"], stride=opts["stride"])
    est_cfg = EstimatorConfig(kernel_size=opts["kernel_size"])
    label_cfg = LabelConfig(threshold=opts["threshold"])
    out_dir = Path(opts["out_dir"])
    dataset = build_dataset(
        manifest, grid, est_cfg, label_cfg, out_dir,
        store_patches=opts["store_patches"], jobs=opts["jobs"],
    )
    _echo_config("label", opts, out_dir)
    report = class_balance_report(dataset)
    print(
        f"labeled {report['total']} patches: {report['positives']} positive, "
        f"{report['negatives']} negative, {report['degenerate']} degenerate"
    )
    return EXIT_OK


def _cmd_train(args: argparse.Namespace) -> int:
    opts = resolve_options("train", args)
    dataset = LabeledDataset.load(opts["dataset"])
    samples = load_training_samples(dataset)
    if not samples:
        raise ValidationError("dataset has no samples")
    input_side = opts["input_side"] or samples[0].patch.height
    cfg = TrainConfig(
        learning_rate=opts["learning_rate"],
        momentum=opts["momentum"],
        batch_size=opts["batch_size"],
        epochs=opts["epochs"],
        seed=opts["seed"],
        input_side=input_side,
    )
    net = build_small_resnet(seed=cfg.seed, input_side=cfg.input_side)
    result = train(net, samples, cfg)
    out_dir = Path(opts["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    save_model(result.network, out_dir / "model.bin")
    write_training_log(result.epochs, out_dir / "training_log.csv")
    _echo_config("train", opts, out_dir)
    last = result.epochs[-1]
    print(
        f"trained on {len(samples)} samples for {cfg.epochs} epochs; "
        f"final loss {last.mean_loss:.4f}, train accuracy {last.accuracy:.3f}"
    )
    return EXIT_OK


def _cmd_select(args: argparse.Namespace) -> int:
    opts = resolve_options("select", args)
    net = load_model(opts["model"])
    image = read_image(opts["image"])
    patch_size = opts["patch_size"] or net.input_side
    grid = PatchGridSpec(patch_size=patch_size, stride=opts["stride"])
    ranked = select_top(score_patches(net, image, grid), opts["top"])
    for rp in ranked:
        print(f"{rp.ref.row0} {rp.ref.col0} {rp.score:.6f}")
    if opts["out_json"]:
        rows = [
            {"row0": rp.ref.row0, "col0": rp.ref.col0, "size": rp.ref.size,
             "score": rp.score}
            for rp in ranked
        ]
        Path(opts["out_json"]).write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    if opts["out_annotated"]:
        write_image(annotate_selection(image, ranked[0].ref), opts["out_annotated"])
    return EXIT_OK


def _cmd_deblur(args: argparse.Namespace) -> int:
    opts = resolve_options("deblur", args)
    net = load_model(opts["model"])
    image = read_image(opts["image"])
    patch_size = opts["patch_size"] or net.input_side
    grid = PatchGridSpec(patch_size=patch_size, stride=opts["stride"])
    estimator = BlindEstimator(EstimatorConfig(kernel_size=opts["kernel_size"]))
    selected = select_and_estimate(net, image, grid, estimator)
    if selected.estimate.degenerate:
        print(
            "warning: kernel estimation degenerated to the identity; "
            "output equals the input",
            file=sys.stderr,
        )
    latent = solve_latent(image, selected.estimate.kernel, opts["latent_reg"])
    latent = Image(np.clip(latent.pixels, 0.0, 1.0))
    out_dir = Path(opts["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    write_kernel(selected.estimate.kernel, out_dir / "kernel.txt")
    write_image(latent, out_dir / "deblurred.pfm")
    write_image(latent, out_dir / "deblurred.pgm")
    write_image(annotate_selection(image, selected.patch.ref), out_dir / "selection.pgm")
    _echo_config("deblur", opts, out_dir)
    print(
        f"deblurred {opts['image']} from patch "
        f"({selected.patch.ref.row0}, {selected.patch.ref.col0}) "
        f"scored {selected.patch.score:.4f}"
    )
    return EXIT_OK


def _cmd_evaluate(args: argparse.Namespace) -> int:
    opts = resolve_options("evaluate", args)
    manifest = CorpusManifest.load(opts["manifest"])
    methods = tuple(m.strip() for m in opts["methods"].split(",") if m.strip())
    net = load_model(opts["model"]) if opts["model"] else None
    grid = PatchGridSpec(patch_size=opts["patch_size"], stride=opts["stride"])
    est_cfg = EstimatorConfig(kernel_size=opts["kernel_size"])
    records = evaluate_pipeline(
        manifest, grid, est_cfg, net=net, methods=methods, master_seed=opts["seed"]
    )
    out_dir = Path(opts["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    write_eval_csv(records, out_dir / "results.csv")
    curves = {}
    for method in methods:
        ratios = [r.error_ratio for r in records if r.method == method]
        curves[method] = success_curve(ratios)
    write_success_curve_svg(curves, out_dir / "success_curve.svg")
    _echo_config("evaluate", opts, out_dir)
    for method in methods:
        ratios = [
            r.error_ratio for r in records
            if r.method == method and not math.isnan(r.error_ratio)
        ]
        if ratios:
            print(
                f"{method}: mean ER {statistics.fmean(ratios):.3f}, "
                f"median ER {statistics.median(ratios):.3f} ({len(ratios)} images)"
            )
        else:
            print(f"{method}: no successful runs")
    return EXIT_OK


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON file with option defaults for this command")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regiondeblur",
        description="Blind deblurring that picks its estimation region with a learned classifier.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("synthesize", help="blur sharp images with kernels and noise")
    _add_common(p)
    p.add_argument("--sharp-dir", dest="sharp_dir")
    p.add_argument("--kernel-dir", dest="kernel_dir")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--sigma", type=float, help="noise std on the 0-255 scale")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=_cmd_synthesize)

    p = subparsers.add_parser("label", help="label corpus patches with the built-in estimator")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--kernel-size", dest="kernel_size", type=int)
    p.add_argument("--lambda", dest="threshold", type=float,
                   help="similarity threshold separating good from bad patches")
    p.add_argument("--jobs", type=int)
    p.add_argument("--store-patches", dest="store_patches", action="store_const", const=True)
    p.set_defaults(func=_cmd_label)

    p = subparsers.add_parser("train", help="train the patch classifier on a labeled dataset")
    _add_common(p)
    p.add_argument("--dataset")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--input-side", dest="input_side", type=int,
                   help="network input side; 0 uses the dataset patch size")
    p.set_defaults(func=_cmd_train)

    p = subparsers.add_parser("select", help="rank the patches of one image")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--image")
    p.add_argument("--patch-size", dest="patch_size", type=int,
                   help="0 uses the model input side")
    p.add_argument("--stride", type=int)
    p.add_argument("--top", type=int)
    p.add_argument("--out-json", dest="out_json")
    p.add_argument("--out-annotated", dest="out_annotated")
    p.set_defaults(func=_cmd_select)

    p = subparsers.add_parser("deblur", help="deblur one image from its best patch")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--image")
    p.add_argument("--kernel-size", dest="kernel_size", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--latent-reg", dest="latent_reg", type=float)
    p.set_defaults(func=_cmd_deblur)

    p = subparsers.add_parser("evaluate", help="benchmark selection strategies on a corpus")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--model")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--kernel-size", dest="kernel_size", type=int)
    p.add_argument("--methods", help="comma-separated subset of " + ",".join(EVAL_METHODS))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if exc.code is not None else 0
        return EXIT_OK if code == 0 else EXIT_VALIDATION
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ParseError, ModelFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except RegionDeblurError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
