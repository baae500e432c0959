"""Segmentation losses and metrics.

The training loss per head is 0.5 * cross-entropy + 0.5 * (1 - soft dice),
heads averaged with equal weight, targets downsampled to each head's scale
by top-left nearest sampling. Soft dice runs on softmax probabilities and
averages over all classes; the reported (hard) dice metric runs on argmax
predictions and averages over foreground classes only.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, ValidationError
from .layers import log_softmax, softmax
from .tensor import Tensor, add, mul, reduce_mean, reduce_sum

DICE_EPS = 1e-6


def one_hot(labels, num_classes):
    """Integer (..., H, W) labels -> float32 (..., H, W, K)."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= num_classes:
        bad = labels.max() if labels.max() >= num_classes else labels.min()
        raise ValidationError(f"label {int(bad)} outside [0, {num_classes})")
    out = np.zeros(labels.shape + (num_classes,), dtype=np.float32)
    np.put_along_axis(out, labels[..., None].astype(np.int64), 1.0, axis=-1)
    return out


def cross_entropy(logits, target_onehot):
    """Mean pixelwise cross-entropy of softmaxed logits vs a one-hot target."""
    if logits.shape != target_onehot.shape:
        raise ShapeError(f"cross_entropy: logits {tuple(logits.shape)} vs "
                         f"target {tuple(target_onehot.shape)}")
    logp = log_softmax(logits, axis=-1)
    picked = reduce_sum(mul(logp, Tensor(target_onehot)), axes=(-1,))
    return mul(reduce_mean(picked), -1.0)


def soft_dice(probs, target_onehot):
    """Differentiable dice on probabilities, averaged over all classes."""
    if probs.shape != target_onehot.shape:
        raise ShapeError(f"soft_dice: probs {tuple(probs.shape)} vs "
                         f"target {tuple(target_onehot.shape)}")
    axes = tuple(range(probs.ndim - 1))
    t = Tensor(target_onehot)
    inter = reduce_sum(mul(probs, t), axes=axes)
    denom = add(reduce_sum(probs, axes=axes), reduce_sum(t, axes=axes))
    dice = (mul(inter, 2.0) + DICE_EPS) / (denom + DICE_EPS)
    return reduce_mean(dice)


def _nearest_downsample_labels(target, scale):
    if scale == 1:
        return target
    return target[:, ::scale, ::scale]


def combined_loss(outputs, target, num_classes):
    """0.5*CE + 0.5*(1 - soft dice) per head, averaged over heads.

    `outputs` is the model's [(scale, logits)] list; `target` is the
    integer class map (N, H, W) at full scale.
    """
    target = np.asarray(target)
    if target.min() < 0 or target.max() >= num_classes:
        raise ValidationError(f"target contains class {int(target.max())}, "
                              f"but num_classes is {num_classes}")
    total = None
    for scale, logits in outputs:
        t = one_hot(_nearest_downsample_labels(target, scale), num_classes)
        if logits.shape != t.shape:
            raise ShapeError(f"head at scale {scale}: logits {tuple(logits.shape)} vs "
                             f"target {t.shape}")
        probs = softmax(logits, axis=-1)
        term = add(mul(cross_entropy(logits, t), 0.5),
                   mul(add(mul(soft_dice(probs, t), -1.0), 1.0), 0.5))
        total = term if total is None else add(total, term)
    return mul(total, 1.0 / len(outputs))


def dice_coefficient(pred_onehot, target_onehot):
    """Hard dice per class plus the mean over foreground classes.

    Inputs are one-hot numpy arrays (..., K); class 0 is background.
    """
    pred_onehot = np.asarray(pred_onehot)
    target_onehot = np.asarray(target_onehot)
    if pred_onehot.shape != target_onehot.shape:
        raise ShapeError(f"dice: pred {pred_onehot.shape} vs target {target_onehot.shape}")
    axes = tuple(range(pred_onehot.ndim - 1))
    inter = (pred_onehot * target_onehot).sum(axis=axes)
    sizes = pred_onehot.sum(axis=axes) + target_onehot.sum(axis=axes)
    per_class = (2.0 * inter + DICE_EPS) / (sizes + DICE_EPS)
    return per_class, float(per_class[1:].mean())


def sensitivity_specificity(pred_binary, target_binary):
    """(TPR, TNR) of binary masks; empty denominators count as 1.0."""
    pred = np.asarray(pred_binary).astype(bool)
    target = np.asarray(target_binary).astype(bool)
    if pred.shape != target.shape:
        raise ShapeError(f"sensitivity: pred {pred.shape} vs target {target.shape}")
    tp = int(np.sum(pred & target))
    fn = int(np.sum(~pred & target))
    tn = int(np.sum(~pred & ~target))
    fp = int(np.sum(pred & ~target))
    tpr = tp / (tp + fn) if tp + fn else 1.0
    tnr = tn / (tn + fp) if tn + fp else 1.0
    return tpr, tnr
