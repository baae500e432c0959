"""Dataset ingestion: images/ + masks/ directories with matching stems,
PNG or .fctt files, a dataset.json giving num_classes, and seeded
train/val/test splitting."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .augment import resize_bilinear, resize_nearest
from .errors import ValidationError
from .tensorfile import read_fctt

DEFAULT_SPLIT_RATIOS = (0.7, 0.1, 0.2)


@dataclass
class SegmentationSample:
    image: np.ndarray  # (H, W, C) float32 in [0, 1]
    mask: np.ndarray  # (H, W) integer class indices

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape[:2]:
            raise ValidationError(f"image {self.image.shape} and mask {self.mask.shape} "
                                  "spatial shapes differ")


@dataclass
class DatasetManifest:
    root: str
    pairs: list  # (image path, mask path), sorted by stem
    num_classes: int
    ratios: tuple = DEFAULT_SPLIT_RATIOS
    splits: dict = field(default_factory=dict)  # name -> list of pair indices


@dataclass
class Dataset:
    train: list
    val: list
    test: list
    num_classes: int

    def split(self, name):
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def _read_image(path):
    if path.endswith(".fctt"):
        arr = read_fctt(path)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValidationError(f"{path}: image tensor must be (H,W) or (H,W,C), "
                                  f"got {arr.shape}")
        return arr
    from PIL import Image

    with Image.open(path) as img:
        if img.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(img, dtype=np.float64) / 65535.0
        elif img.mode in ("L", "RGB"):
            arr = np.asarray(img, dtype=np.float64) / 255.0
        else:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float32)


def _read_mask(path):
    if path.endswith(".fctt"):
        arr = read_fctt(path)
        if arr.ndim == 3 and arr.shape[-1] == 1:
            arr = arr[:, :, 0]
        if arr.ndim != 2:
            raise ValidationError(f"{path}: mask tensor must be (H,W), got {arr.shape}")
        return np.rint(arr).astype(np.int32)
    from PIL import Image

    with Image.open(path) as img:
        if img.mode not in ("L", "I", "I;16", "P"):
            raise ValidationError(f"{path}: mask PNG must be single-channel, got mode {img.mode}")
        return np.asarray(img, dtype=np.int32)


def _collect_pairs(root):
    img_dir = os.path.join(root, "images")
    mask_dir = os.path.join(root, "masks")
    if not os.path.isdir(img_dir) or not os.path.isdir(mask_dir):
        raise ValidationError(f"{root} must contain images/ and masks/ directories")
    by_stem = {}
    for d, slot in ((img_dir, 0), (mask_dir, 1)):
        for fname in sorted(os.listdir(d)):
            stem = os.path.splitext(fname)[0]
            by_stem.setdefault(stem, [None, None])[slot] = os.path.join(d, fname)
    pairs = []
    for stem in sorted(by_stem):
        img, mask = by_stem[stem]
        if img is None:
            raise ValidationError(f"mask {mask} has no matching image")
        if mask is None:
            raise ValidationError(f"image {img} has no matching mask")
        pairs.append((img, mask))
    return pairs


def split_indices(n, ratios, seed):
    """Disjoint, exhaustive train/val/test index lists (seeded shuffle)."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"split ratios must be 3 values summing to 1, got {ratios}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(n * ratios[0])
    n_val = int(n * ratios[1])
    return (perm[:n_train].tolist(),
            perm[n_train:n_train + n_val].tolist(),
            perm[n_train + n_val:].tolist())


def load_dataset(root, input_size=None, ratios=DEFAULT_SPLIT_RATIOS, seed=0):
    """Read a dataset directory; returns (DatasetManifest, Dataset).

    Images are scaled to [0, 1] and resized bilinearly to `input_size`
    when given; masks resize by nearest neighbor.
    """
    meta_path = os.path.join(root, "dataset.json")
    if not os.path.isfile(meta_path):
        raise ValidationError(f"{root} has no dataset.json")
    with open(meta_path) as fh:
        meta = json.load(fh)
    num_classes = int(meta.get("num_classes", 0))
    if num_classes < 2:
        raise ValidationError(f"{meta_path}: num_classes must be >= 2, got {num_classes}")

    pairs = _collect_pairs(root)
    samples = []
    for img_path, mask_path in pairs:
        image = _read_image(img_path)
        mask = _read_mask(mask_path)
        if image.shape[:2] != mask.shape[:2]:
            raise ValidationError(f"{img_path}: image {image.shape[:2]} and mask "
                                  f"{mask.shape[:2]} sizes differ")
        if mask.min() < 0 or mask.max() >= num_classes:
            bad = int(mask.max() if mask.max() >= num_classes else mask.min())
            raise ValidationError(f"{mask_path}: label {bad} outside [0, {num_classes})")
        if input_size is not None and tuple(input_size) != image.shape[:2]:
            image = resize_bilinear(image, tuple(input_size))
            mask = resize_nearest(mask, tuple(input_size))
        samples.append(SegmentationSample(image=image, mask=mask))

    tr, va, te = split_indices(len(pairs), tuple(ratios), seed)
    manifest = DatasetManifest(root=root, pairs=pairs, num_classes=num_classes,
                               ratios=tuple(ratios),
                               splits={"train": tr, "val": va, "test": te})
    dataset = Dataset(train=[samples[i] for i in tr],
                      val=[samples[i] for i in va],
                      test=[samples[i] for i in te],
                      num_classes=num_classes)
    return manifest, dataset
