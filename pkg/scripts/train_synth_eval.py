"""Generate a synthetic dataset, train the desk-scale model on it, and
report held-out metrics. The pyramid ablation from the experiments:

    python3 scripts/train_synth_eval.py --n 250 --no-pyramid
"""

import argparse
import json
import sys
import tempfile

from fctnet.augment import AugmentConfig
from fctnet.data import Dataset, split_indices
from fctnet.model import ModelConfig, build_model
from fctnet.synth import synth_samples
from fctnet.train import TrainConfig, evaluate, train

DESK = dict(input_size=(64, 64), in_channels=1, num_classes=4,
            stage_filters=(8, 16, 32, 64, 96, 64, 32, 16, 8),
            stage_heads=(2, 2, 4, 4, 8, 4, 4, 2, 2),
            kv_strides=(1, 1, 1, 1, 1, 1, 1, 1, 2))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=250)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    ap.add_argument("--no-pyramid", action="store_true")
    ap.add_argument("--augment", action="store_true",
                    help="train with the full augmentation policy")
    ap.add_argument("--stop-dice", type=float, default=None,
                    help="stop once val mean dice reaches this")
    args = ap.parse_args()
    out = args.out or tempfile.mkdtemp(prefix="fct-synth-")

    samples = synth_samples(args.n, 64, 4, seed=args.seed)
    tr, va, te = split_indices(args.n, (0.8, 0.1, 0.1), seed=args.seed)
    ds = Dataset(train=[samples[i] for i in tr], val=[samples[i] for i in va],
                 test=[samples[i] for i in te], num_classes=4)

    model = build_model(ModelConfig(pyramid_inputs=not args.no_pyramid, **DESK),
                        seed=args.seed)
    aug = AugmentConfig() if args.augment else AugmentConfig(
        rotation_deg_max=0, zoom_max=0, shear_max=0, shift_max=0,
        hflip=False, vflip=False)
    cfg = TrainConfig(warmup_epochs=0, epochs=args.epochs, batch_size=4,
                      seed=args.seed, augment=aug,
                      early_stop_dice=args.stop_dice)
    report = train(model, ds, cfg, out)

    stats = evaluate(model, ds.test, 4)
    stats.update(epochs_run=len(report.rows), out=out,
                 pyramid=not args.no_pyramid)
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
