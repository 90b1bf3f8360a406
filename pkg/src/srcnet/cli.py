"""Command-line interface: train / eval / infer / gradcheck / synth / tile.

Every subcommand accepts --config pointing at a flat key=value text file;
explicit flags override config-file values. Unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as data_mod
from .model import ChangeDetector, ModelConfig, desk_scale_config, parameter_breakdown
from .train import (
    TrainConfig, TrainingDiverged, apply_precision, evaluate, load_checkpoint,
    train,
)

MODEL_KEYS = set(ModelConfig.__dataclass_fields__)
TRAIN_KEYS = set(TrainConfig.__dataclass_fields__)


def read_config_file(path: str) -> dict:
    """Flat key=value lines; '#' starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, val = (part.strip() for part in line.split("=", 1))
            values[key] = val
    return values


def _coerce_value(raw: str, target_type):
    if target_type is bool:
        return raw.lower() in ("1", "true", "yes", "on")
    return target_type(raw)


def build_configs(args) -> tuple[ModelConfig, TrainConfig]:
    file_values = read_config_file(args.config) if args.config else {}
    unknown = set(file_values) - MODEL_KEYS - TRAIN_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")

    if getattr(args, "paper_scale", False):
        model_kwargs = {}
        make_model = ModelConfig
    else:
        model_kwargs = {}
        make_model = desk_scale_config
    for key, raw in file_values.items():
        if key in MODEL_KEYS:
            f = ModelConfig.__dataclass_fields__[key]
            model_kwargs[key] = _coerce_value(raw, type(f.default))
    if getattr(args, "variant", None):
        model_kwargs["variant"] = args.variant
    model_cfg = make_model(**model_kwargs)

    train_kwargs = {}
    for key, raw in file_values.items():
        if key in TRAIN_KEYS:
            f = TrainConfig.__dataclass_fields__[key]
            train_kwargs[key] = _coerce_value(raw, type(f.default))
    for flag, key in (("seed", "seed"), ("epochs", "epochs"), ("batch", "batch_size"),
                      ("lr", "lr"), ("precision", "precision"), ("out", "out_dir")):
        value = getattr(args, flag, None)
        if value is not None:
            train_kwargs[key] = value
    train_cfg = TrainConfig(**train_kwargs)
    return model_cfg, train_cfg


def _load_split(data_dir: str, seed: int):
    pairs = data_mod.load_pairs(data_dir)
    train_pairs, val_pairs = data_mod.split_by_hash(pairs, salt=str(seed))
    return train_pairs, val_pairs


def cmd_train(args) -> int:
    model_cfg, train_cfg = build_configs(args)
    apply_precision(train_cfg.precision)
    train_pairs, val_pairs = _load_split(args.data, train_cfg.seed)
    print(f"{len(train_pairs)} train / {len(val_pairs)} val pairs, "
          f"variant={model_cfg.variant}")
    model = ChangeDetector(model_cfg, seed=train_cfg.seed)
    print(f"model parameters: {model.num_parameters():,}")
    try:
        history, best_f1, paths = train(model, train_pairs, val_pairs, train_cfg)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"best validation F1: {best_f1:.4f}; checkpoints in {train_cfg.out_dir}")
    return 0


def cmd_eval(args) -> int:
    model, config, _ = load_checkpoint(args.ckpt)
    pairs = data_mod.load_pairs(args.data)
    overlays = os.path.join(args.out, "overlays") if args.overlays else None
    report, stats = evaluate(model, pairs, batch_size=args.batch or 8,
                             overlays_dir=overlays)
    os.makedirs(args.out, exist_ok=True)
    from .metrics import CSV_HEADER
    row = report.csv_row(config["model"].get("variant", "full"),
                         os.path.basename(os.path.normpath(args.data)),
                         model.num_parameters())
    with open(os.path.join(args.out, "metrics.csv"), "w") as fh:
        fh.write(CSV_HEADER + "\n" + row + "\n")
    print(CSV_HEADER)
    print(row)
    if report.undefined:
        print(f"flagged zero-denominator metrics: {', '.join(report.undefined)}")
    return 0


def cmd_infer(args) -> int:
    from PIL import Image
    model, _, _ = load_checkpoint(args.ckpt)
    img1 = np.asarray(Image.open(args.a).convert("RGB"))
    img2 = np.asarray(Image.open(args.b).convert("RGB"))
    pair = data_mod.SamplePair(img1, img2, np.zeros(img1.shape[:2], np.uint8),
                               "infer")
    x1, x2, _ = data_mod.collate([pair])
    mask = model.predict_mask(x1, x2)[0]
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    Image.fromarray((mask * 255).astype(np.uint8)).save(args.out)
    print(f"wrote {args.out} ({int(mask.sum())} change pixels)")
    return 0


def cmd_gradcheck(args) -> int:
    from .verification import gradient_suite
    rows = gradient_suite(tiny=args.tiny)
    width = max(len(name) for name, _ in rows)
    failures = 0
    for name, result in rows:
        state = "pass" if result.passed else "FAIL"
        print(f"{name:<{width}s}  {state}  max err {result.max_err:.3e} "
              f"(tol {result.tol:.0e})")
        failures += not result.passed
    print(f"{len(rows) - failures}/{len(rows)} gradient checks passed")
    return 1 if failures else 0


def cmd_synth(args) -> int:
    spec = data_mod.SynthSpec(
        image_size=args.size, seed=args.seed,
        min_extent=max(3, args.size // 6),
        max_extent=max(5, args.size * 2 // 5))
    pairs = data_mod.generate_synthetic(spec, args.n)
    data_mod.save_pairs(args.out, pairs)
    changed = sum(p.mask.sum() for p in pairs)
    total = sum(p.mask.size for p in pairs)
    print(f"wrote {len(pairs)} pairs to {args.out} "
          f"({100.0 * changed / total:.1f}% change pixels)")
    return 0


def cmd_tile(args) -> int:
    tiles = data_mod.tile_dataset(args.src, tile=args.tile, out_dir=args.out)
    return 0 if tiles else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srcnet",
        description="bi-temporal change detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--variant", choices=("full", "alpha", "beta", "gamma"))
        p.add_argument("--seed", type=int)
        p.add_argument("--precision", choices=("f32", "f64"))
        p.add_argument("--paper-scale", action="store_true",
                       help="use the full-size architecture defaults")

    p = sub.add_parser("train", help="train a model on a tiled dataset")
    common(p)
    p.add_argument("--data", required=True, help="dataset root (A/B/label)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", default="eval_out")
    p.add_argument("--batch", type=int)
    p.add_argument("--overlays", action="store_true",
                   help="write confusion overlays")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict a change mask for one pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--a", required=True, help="first-epoch image")
    p.add_argument("--b", required=True, help="second-epoch image")
    p.add_argument("--out", default="prediction.png")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--tiny", action="store_true",
                   help="smallest shapes (fastest)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("tile", help="cut aligned pairs into tiles")
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tile", type=int, default=256)
    p.set_defaults(func=cmd_tile)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
