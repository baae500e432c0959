"""Synthetic segmentation data: grayscale images of non-overlapping
geometric shapes (disk, ring, rectangle) on a dark background, with class
identity coded by intensity plus Gaussian noise.

Sample i draws from its own rng stream seeded by (seed, i), so the same
seed reproduces every file byte-for-byte regardless of n. Each foreground
class is forced into samples round-robin, guaranteeing every class
appears in at least a third of the images.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .data import SegmentationSample
from .errors import ValidationError
from .tensorfile import write_fctt

BACKGROUND_INTENSITY = 0.1
NOISE_SIGMA = 0.05


def class_intensity(cls, num_classes):
    """Evenly spaced foreground intensities in [0.35, 0.85]."""
    span = max(1, num_classes - 2)
    return 0.35 + 0.5 * (cls - 1) / span


def _shape_mask(kind, size, rng):
    """Boolean mask of one random shape, drawn within the image bounds."""
    unit = size / 64.0
    rr, cc = np.mgrid[0:size, 0:size]
    if kind == "disk":
        rad = rng.uniform(6, 13) * unit
        r = rng.uniform(rad, size - 1 - rad)
        c = rng.uniform(rad, size - 1 - rad)
        return (rr - r) ** 2 + (cc - c) ** 2 <= rad ** 2
    if kind == "ring":
        outer = rng.uniform(8, 14) * unit
        inner = outer - rng.uniform(3, 5) * unit
        r = rng.uniform(outer, size - 1 - outer)
        c = rng.uniform(outer, size - 1 - outer)
        d2 = (rr - r) ** 2 + (cc - c) ** 2
        return (d2 <= outer ** 2) & (d2 >= inner ** 2)
    half_h = rng.uniform(4, 11) * unit
    half_w = rng.uniform(4, 11) * unit
    r = rng.uniform(half_h, size - 1 - half_h)
    c = rng.uniform(half_w, size - 1 - half_w)
    return (np.abs(rr - r) <= half_h) & (np.abs(cc - c) <= half_w)


SHAPE_KINDS = ("disk", "ring", "rect")


def _make_sample(index, size, num_classes, seed):
    rng = np.random.default_rng([seed, index])
    k_fg = num_classes - 1
    forced = 1 + index % k_fg
    extras = [c for c in range(1, num_classes) if c != forced]
    rng.shuffle(extras)
    classes = [forced] + extras[: int(rng.integers(0, k_fg))]

    mask = np.zeros((size, size), dtype=np.int32)
    for cls in classes:
        kind = SHAPE_KINDS[(cls - 1) % len(SHAPE_KINDS)]
        for _ in range(30):
            m = _shape_mask(kind, size, rng)
            if not (m & (mask > 0)).any():
                mask[m] = cls
                break

    image = np.full((size, size), BACKGROUND_INTENSITY, dtype=np.float64)
    for cls in np.unique(mask[mask > 0]):
        image[mask == cls] = class_intensity(int(cls), num_classes)
    image += rng.normal(0.0, NOISE_SIGMA, (size, size))
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return SegmentationSample(image=image[:, :, None], mask=mask)


def synth_samples(n, size, num_classes, seed):
    """Generate n deterministic SegmentationSamples."""
    if size % 16:
        raise ValidationError(f"synth: size {size} must be divisible by 16")
    if num_classes < 2:
        raise ValidationError(f"synth: need >= 2 classes, got {num_classes}")
    return [_make_sample(i, size, num_classes, seed) for i in range(n)]


def save_synth_dataset(out_dir, samples, num_classes, size, seed):
    """Write samples as .fctt pairs plus dataset.json (byte-deterministic)."""
    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    width = max(4, len(str(len(samples) - 1)))
    for i, s in enumerate(samples):
        stem = str(i).zfill(width)
        write_fctt(os.path.join(img_dir, stem + ".fctt"), s.image)
        write_fctt(os.path.join(mask_dir, stem + ".fctt"), s.mask.astype(np.float32))
    meta = {"num_classes": num_classes, "n": len(samples), "size": size, "seed": seed}
    with open(os.path.join(out_dir, "dataset.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def synth_dataset(n, size, num_classes, seed, out_dir=None):
    """Generate the dataset; optionally also write it to out_dir."""
    samples = synth_samples(n, size, num_classes, seed)
    if out_dir is not None:
        save_synth_dataset(out_dir, samples, num_classes, size, seed)
    return samples
