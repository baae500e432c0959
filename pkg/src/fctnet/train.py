"""Training and evaluation loops.

Seeded, shuffled mini-batches; forward -> combined loss -> backward ->
Adam; per-epoch validation without augmentation; the best-validation
checkpoint is kept. The report is written as report.json and report.csv;
every field except wall-clock seconds is deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentConfig, augment
from .errors import NumericsError, ValidationError
from .losses import combined_loss, dice_coefficient, one_hot, sensitivity_specificity
from .model import Model, model_forward, save_checkpoint
from .optim import AdamState, adam_step, lr_schedule
from .tensor import Tape, Tensor, backward


@dataclass
class TrainConfig:
    lr: float = 1e-3
    warmup_epochs: int = 50
    epochs: int = 250
    batch_size: int = 4
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    min_lr: float = 1e-6
    seed: int = 0
    ds_mode: str = None  # validated against the model config when set
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    early_stop_dice: float = None  # stop once val mean dice reaches this

    def __post_init__(self):
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValidationError(f"plateau_factor must be in (0, 1), got {self.plateau_factor}")
        if self.warmup_epochs > self.epochs:
            raise ValidationError(f"warmup_epochs {self.warmup_epochs} exceeds epochs {self.epochs}")
        if isinstance(self.augment, dict):
            from .model import config_from_dict

            self.augment = config_from_dict(AugmentConfig, self.augment, "augment config")


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)  # one dict per completed epoch
    best_epoch: int = -1
    best_val_loss: float = float("inf")

    CSV_FIELDS = ("epoch", "train_loss", "val_loss", "lr")

    def add(self, row):
        self.rows.append(row)

    def foreground_classes(self):
        return [k for k in self.rows[0] if k.startswith("dice_c")] if self.rows else []

    def to_json(self):
        payload = {"schema": 1, "best_epoch": self.best_epoch,
                   "best_val_loss": self.best_val_loss, "epochs": self.rows}
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def to_csv(self):
        cols = list(self.CSV_FIELDS) + self.foreground_classes() + ["mean_dice", "seconds"]
        lines = [",".join(cols)]
        for row in self.rows:
            lines.append(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                                  for c in cols))
        return "\n".join(lines) + "\n"

    def save(self, out_dir):
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            fh.write(self.to_json())
        with open(os.path.join(out_dir, "report.csv"), "w") as fh:
            fh.write(self.to_csv())


def _batch_arrays(samples, indices, aug_cfg, seed, epoch):
    images = []
    masks = []
    for idx in indices:
        s = samples[idx]
        if aug_cfg is not None and not aug_cfg.is_identity:
            rng = np.random.default_rng([seed, epoch, int(idx)])
            s = augment(s, aug_cfg, rng)
        images.append(s.image)
        masks.append(s.mask)
    return np.stack(images), np.stack(masks)


def evaluate(model: Model, samples, num_classes, batch_size=8):
    """Loss-free evaluation: per-image hard dice of the full-scale head,
    averaged over the split; also returns the mean combined loss. Binary
    tasks additionally get pooled sensitivity and specificity."""
    per_image = []
    losses = []
    binary_pairs = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        x = Tensor(np.stack([s.image for s in chunk]))
        y = np.stack([s.mask for s in chunk])
        outputs = model_forward(model, x)
        loss = combined_loss(outputs, y, num_classes)
        losses.append(loss.item() * len(chunk))
        full = next(logits for scale, logits in outputs if scale == 1)
        pred = np.argmax(full.data, axis=-1)
        for b in range(len(chunk)):
            per_class, mean = dice_coefficient(one_hot(pred[b], num_classes),
                                               one_hot(y[b], num_classes))
            per_image.append(per_class)
        if num_classes == 2:
            binary_pairs.append((pred == 1, y == 1))
    per_class = np.stack(per_image).mean(axis=0)
    out = {
        "loss": float(sum(losses) / len(samples)),
        "per_class_dice": [float(v) for v in per_class],
        "mean_dice": float(per_class[1:].mean()),
    }
    if num_classes == 2:
        pred_all = np.concatenate([p.reshape(-1) for p, _ in binary_pairs])
        targ_all = np.concatenate([t.reshape(-1) for _, t in binary_pairs])
        sens, spec = sensitivity_specificity(pred_all, targ_all)
        out["sensitivity"] = sens
        out["specificity"] = spec
    return out


def train(model: Model, dataset, cfg: TrainConfig, out_dir):
    """Run the training loop; writes report.json/report.csv and keeps the
    best-validation checkpoint under out_dir/checkpoint-best."""
    if cfg.ds_mode is not None and cfg.ds_mode != model.cfg.deep_supervision:
        raise ValidationError(f"train ds_mode {cfg.ds_mode!r} != model "
                              f"deep_supervision {model.cfg.deep_supervision!r}")
    os.makedirs(out_dir, exist_ok=True)
    num_classes = dataset.num_classes
    if num_classes != model.cfg.num_classes:
        raise ValidationError(f"dataset has {num_classes} classes, model expects "
                              f"{model.cfg.num_classes}")

    state = AdamState(model.registry)
    report = TrainReport()
    rng = np.random.default_rng(cfg.seed)
    val_losses = []
    step = 0
    t0 = time.monotonic()

    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, val_losses, cfg)
        order = rng.permutation(len(dataset.train))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, y = _batch_arrays(dataset.train, idx, cfg.augment, cfg.seed, epoch)
            with Tape() as tape:
                outputs = model_forward(model, Tensor(x))
                loss = combined_loss(outputs, y, num_classes)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise NumericsError(f"loss is not finite at optimizer step {step}")
            backward(tape, loss)
            adam_step(model.registry, state, lr)
            epoch_loss += loss_val
            n_batches += 1
            step += 1

        stats = evaluate(model, dataset.val, num_classes, batch_size=cfg.batch_size)
        val_losses.append(stats["loss"])
        row = {"epoch": epoch, "train_loss": epoch_loss / max(1, n_batches),
               "val_loss": stats["loss"], "lr": lr}
        for c, v in enumerate(stats["per_class_dice"]):
            if c >= 1:
                row[f"dice_c{c}"] = v
        row["mean_dice"] = stats["mean_dice"]
        row["seconds"] = time.monotonic() - t0
        report.add(row)

        if stats["loss"] < report.best_val_loss:
            report.best_val_loss = stats["loss"]
            report.best_epoch = epoch
            save_checkpoint(model, os.path.join(out_dir, "checkpoint-best"))
        if cfg.early_stop_dice is not None and stats["mean_dice"] >= cfg.early_stop_dice:
            break

    report.save(out_dir)
    return report
