"""Print the stage table for the default 224 model and the 64px
desk-scale variant used by the training experiments."""

import argparse
import sys

from fctnet.cli import cli
from fctnet.model import ModelConfig, build_model, profile

DESK = dict(input_size=(64, 64), in_channels=1, num_classes=4,
            stage_filters=(8, 16, 32, 64, 96, 64, 32, 16, 8),
            stage_heads=(2, 2, 4, 4, 8, 4, 4, 2, 2))


def show(cfg):
    rep = profile(build_model(cfg, seed=0))
    print(f"\n== {cfg.input_size[0]}x{cfg.input_size[1]}, "
          f"filters {cfg.stage_filters} ==")
    for row in rep["stages"]:
        print(f"{row['stage']:<12}{row['resolution']:>5}px{row['filters']:>6}ch"
              f"{row['params']:>12,} params{row['flops']:>18,} flops")
    print(f"total: {rep['param_count']:,} params, {rep['flops']:,} flops "
          f"({rep['attention_flops']:,} in attention)")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--desk-only", action="store_true",
                    help="skip the full-size table")
    args = ap.parse_args()
    if not args.desk_only:
        show(ModelConfig())
    show(ModelConfig(**DESK))


if __name__ == "__main__":
    sys.exit(main())
