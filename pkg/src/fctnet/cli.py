"""Command-line front door.

Subcommands: synth, train, infer, eval, profile, gradcheck. Exit codes:
0 success, 1 usage error, 2 validation or data error, 3 numerical failure.
With --json, errors and results go out as machine-readable JSON with
"schema": 1; errors always go to standard error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .augment import resize_bilinear, resize_nearest
from .data import _read_image, load_dataset
from .errors import NumericsError, ShapeError, UsageError, ValidationError
from .gradcheck import oracle_suite
from .model import (
    build_model,
    config_from_dict,
    load_checkpoint,
    model_config_from_dict,
    model_forward,
    profile,
)
from .synth import synth_dataset
from .tensor import Tensor
from .tensorfile import write_fctt
from .train import TrainConfig, evaluate, train

# fixed color palette for overlay PNGs, class index -> RGB
OVERLAY_COLORS = (
    (0, 0, 0),
    (230, 60, 60),
    (60, 180, 75),
    (65, 105, 225),
    (255, 200, 40),
    (170, 60, 200),
    (0, 190, 190),
    (250, 120, 30),
)


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; the contract wants 1."""

    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="fctnet", description=__doc__.splitlines()[0])
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic segmentation dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="segment one image with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--format", choices=("png", "fctt"), default="png")
    p.add_argument("--overlay", default=None, help="also write a color overlay PNG")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="evaluate a trained model on a dataset split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--seed", type=int, default=0, help="split seed used at load time")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("profile", help="parameter count, FLOPs and stage table")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_profile)

    p = sub.add_parser("gradcheck", help="run the finite-difference oracle suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", choices=("tiny", "small"), default="tiny")
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def _read_config_file(path):
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(d, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return d


def _split_config(d, path):
    """A config file holds {"model": ..., "train": ...}; a bare model
    section is accepted for profile-style commands."""
    if "model" in d or "train" in d:
        unknown = sorted(set(d) - {"model", "train"})
        if unknown:
            raise UsageError(f"unknown config key {unknown[0]!r} in {path}")
        return d.get("model", {}), d.get("train", {})
    return d, {}


def _emit(args, payload, text_lines):
    if args.json:
        payload = dict(payload)
        payload["schema"] = 1
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        for line in text_lines:
            print(line)


def _cmd_synth(args):
    if args.n <= 0:
        raise UsageError(f"--n must be positive, got {args.n}")
    synth_dataset(args.n, args.size, args.classes, args.seed, out_dir=args.out)
    _emit(args, {"out": args.out, "n": args.n, "size": args.size,
                 "classes": args.classes, "seed": args.seed},
          [f"wrote {args.n} samples ({args.size}x{args.size}, "
           f"{args.classes} classes, seed {args.seed}) to {args.out}"])
    return 0


def _cmd_train(args):
    raw = _read_config_file(args.config)
    model_d, train_d = _split_config(raw, args.config)
    model_cfg = model_config_from_dict(model_d)
    train_d = dict(train_d)
    if args.seed is not None:
        train_d["seed"] = args.seed
    train_cfg = config_from_dict(TrainConfig, train_d, "train config")

    model = build_model(model_cfg, seed=train_cfg.seed)
    manifest, dataset = load_dataset(args.data, input_size=model_cfg.input_size,
                                     seed=train_cfg.seed)
    report = train(model, dataset, train_cfg, args.out)
    last = report.rows[-1] if report.rows else {}
    _emit(args, {"out": args.out, "epochs_run": len(report.rows),
                 "best_epoch": report.best_epoch,
                 "best_val_loss": report.best_val_loss,
                 "final_mean_dice": last.get("mean_dice")},
          [f"trained {len(report.rows)} epochs; best val loss "
           f"{report.best_val_loss:.6f} at epoch {report.best_epoch}",
           f"final val mean dice {last.get('mean_dice', float('nan')):.4f}",
           f"report and best checkpoint under {args.out}"])
    return 0


def _match_channels(image, want):
    have = image.shape[-1]
    if have == want:
        return image
    if want == 1:
        return image.mean(axis=-1, keepdims=True).astype(np.float32)
    if have == 1:
        return np.repeat(image, want, axis=-1)
    raise ValidationError(f"input has {have} channels, model expects {want}")


def _write_mask_png(path, mask):
    from PIL import Image

    Image.fromarray(mask.astype(np.uint8), mode="L").save(path)


def _write_overlay_png(path, image, mask):
    from PIL import Image

    gray = (np.clip(image.mean(axis=-1), 0.0, 1.0) * 255.0).astype(np.float32)
    rgb = np.stack([gray, gray, gray], axis=-1)
    for cls in range(1, int(mask.max()) + 1):
        color = np.array(OVERLAY_COLORS[cls % len(OVERLAY_COLORS)], dtype=np.float32)
        sel = mask == cls
        rgb[sel] = 0.5 * rgb[sel] + 0.5 * color
    Image.fromarray(np.clip(np.rint(rgb), 0, 255).astype(np.uint8), mode="RGB").save(path)


def _cmd_infer(args):
    model = load_checkpoint(args.model)
    cfg = model.cfg
    image = _read_image(args.input)
    orig_hw = image.shape[:2]
    image = _match_channels(image, cfg.in_channels)
    net_in = image
    if tuple(orig_hw) != tuple(cfg.input_size):
        net_in = resize_bilinear(image, cfg.input_size)
    outputs = model_forward(model, Tensor(net_in[None]))
    full = next(logits for scale, logits in outputs if scale == 1)
    mask = np.argmax(full.data[0], axis=-1).astype(np.int32)
    if mask.shape != tuple(orig_hw):
        mask = resize_nearest(mask, orig_hw)

    if args.format == "fctt":
        write_fctt(args.output, mask.astype(np.float32))
    else:
        _write_mask_png(args.output, mask)
    if args.overlay is not None:
        _write_overlay_png(args.overlay, image, mask)

    counts = {int(c): int(n) for c, n in zip(*np.unique(mask, return_counts=True))}
    _emit(args, {"output": args.output, "format": args.format,
                 "shape": list(mask.shape), "class_pixels": counts},
          [f"wrote {args.format} mask {mask.shape[0]}x{mask.shape[1]} to {args.output}",
           "class pixel counts: " + ", ".join(f"{c}: {n}" for c, n in sorted(counts.items()))])
    return 0


def _cmd_eval(args):
    model = load_checkpoint(args.model)
    manifest, dataset = load_dataset(args.data, input_size=model.cfg.input_size,
                                     seed=args.seed)
    if dataset.num_classes != model.cfg.num_classes:
        raise ValidationError(f"dataset has {dataset.num_classes} classes, model "
                              f"expects {model.cfg.num_classes}")
    samples = dataset.split(args.split)
    if not samples:
        raise ValidationError(f"split {args.split!r} is empty")
    stats = evaluate(model, samples, dataset.num_classes)
    payload = {"schema": 1, "split": args.split, "n_images": len(samples)}
    payload.update(stats)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _cmd_profile(args):
    raw = _read_config_file(args.config)
    model_d, _ = _split_config(raw, args.config)
    cfg = model_config_from_dict(model_d)
    model = build_model(cfg, seed=0)
    report = profile(model)
    if args.json:
        payload = dict(report)
        payload["schema"] = 1
        print(json.dumps(payload, indent=2, sort_keys=True))
        return 0

    print(f"input {report['input_size'][0]}x{report['input_size'][1]}, "
          f"{cfg.in_channels} channel(s), {cfg.num_classes} classes, "
          f"deep supervision {cfg.deep_supervision}")
    header = f"{'stage':<12}{'res':>6}{'ch':>6}{'heads':>7}{'params':>12}{'flops':>16}{'attn_flops':>16}"
    print(header)
    print("-" * len(header))
    for row in report["stages"]:
        print(f"{row['stage']:<12}{row['resolution']:>6}{row['filters']:>6}"
              f"{row['heads']:>7}{row['params']:>12,}{row['flops']:>16,}"
              f"{row['attention_flops']:>16,}")
    print("-" * len(header))
    ref = report["reference"]
    print(f"total params {report['param_count']:,}  total flops {report['flops']:,} "
          f"({report['attention_flops']:,} in attention)")
    agree_p = abs(report["param_count"] - ref["param_count"]) / ref["param_count"] <= 0.10
    agree_f = abs(report["flops"] - ref["flops"]) / ref["flops"] <= 0.10
    print(f"reference ({ref['label']}): {ref['param_count']:,} params, "
          f"{ref['flops']:,} flops")
    print(f"params {'agree' if agree_p else 'differ'} with reference; "
          f"flops {'agree' if agree_f else 'differ'} with reference (10% band)")
    return 0


def _cmd_gradcheck(args):
    results = oracle_suite(seed=args.seed, scale=args.scale)
    ok = all(r["ok"] for r in results)
    if args.json:
        print(json.dumps({"schema": 1, "ok": ok, "checks": results},
                         indent=2, sort_keys=True))
    else:
        for r in results:
            print(f"{'PASS' if r['ok'] else 'FAIL'}  {r['name']:<36} "
                  f"rel_err {r['rel_err']:.3e}")
        print(f"{sum(r['ok'] for r in results)}/{len(results)} checks passed")
    if not ok:
        raise NumericsError("gradient oracle suite failed")
    return 0


def _fail(exc, code, json_mode):
    if json_mode:
        payload = {"schema": 1, "error": {"type": type(exc).__name__,
                                          "exit_code": code, "message": str(exc)}}
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    else:
        print(f"error: {exc}", file=sys.stderr)
    return code


def cli(argv=None):
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    json_mode = "--json" in argv
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "func", None) is None:
            raise UsageError("a subcommand is required: "
                             "synth | train | infer | eval | profile | gradcheck")
        return args.func(args)
    except UsageError as e:
        return _fail(e, 1, json_mode)
    except (ValidationError, ShapeError) as e:
        return _fail(e, 2, json_mode)
    except NumericsError as e:
        return _fail(e, 3, json_mode)
    except OSError as e:
        return _fail(e, 2, json_mode)


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
