"""Data augmentation: one affine transform (rotation, zoom, shear, shift)
plus independent flips, applied identically to image and mask.

Images are sampled bilinearly, masks by nearest neighbor, both against an
inverse-mapped grid about the image center; pixels mapped from outside
the source are filled with 0 (background). All randomness comes from the
rng handed in, so per-sample streams stay reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class AugmentConfig:
    rotation_deg_max: float = 360.0
    zoom_max: float = 0.2
    shear_max: float = 0.1
    shift_max: float = 0.3
    hflip: bool = True
    vflip: bool = True

    def __post_init__(self):
        for name in ("rotation_deg_max", "zoom_max", "shear_max", "shift_max"):
            if getattr(self, name) < 0:
                raise ValueError(f"augment: {name} must be nonnegative")

    @property
    def is_identity(self):
        return (self.rotation_deg_max == 0 and self.zoom_max == 0
                and self.shear_max == 0 and self.shift_max == 0
                and not self.hflip and not self.vflip)


def _affine_matrix(theta_deg, scale, shear, shift_rc, flip_r, flip_c, h, w):
    """Forward source->target matrix about the pixel-center of the image."""
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    th = math.radians(theta_deg)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    shr = np.array([[1.0, shear], [0.0, 1.0]])
    scl = np.array([[scale, 0.0], [0.0, scale]])
    flp = np.array([[-1.0 if flip_r else 1.0, 0.0], [0.0, -1.0 if flip_c else 1.0]])
    a = flp @ rot @ shr @ scl
    offset = np.array([cr + shift_rc[0], cc + shift_rc[1]]) - a @ np.array([cr, cc])
    return a, offset


def _inverse_grid(a, offset, h, w):
    """Source coordinates (rows, cols) for every target pixel."""
    inv = np.linalg.inv(a)
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    pts = np.stack([rr.ravel() - offset[0], cc.ravel() - offset[1]])
    src = inv @ pts
    return src[0].reshape(h, w), src[1].reshape(h, w)


def warp_bilinear(image, a, offset):
    """Affine-warp an (H, W, C) float image; outside pixels become 0."""
    h, w = image.shape[:2]
    sr, sc = _inverse_grid(a, offset, h, w)
    r0 = np.floor(sr).astype(np.int64)
    c0 = np.floor(sc).astype(np.int64)
    fr = (sr - r0).astype(image.dtype)
    fc = (sc - c0).astype(image.dtype)

    out = np.zeros_like(image)
    for dr in (0, 1):
        for dc in (0, 1):
            rr = r0 + dr
            cc = c0 + dc
            weight = (fr if dr else 1.0 - fr) * (fc if dc else 1.0 - fc)
            valid = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
            rr_c = np.clip(rr, 0, h - 1)
            cc_c = np.clip(cc, 0, w - 1)
            contrib = image[rr_c, cc_c] * (weight * valid)[..., None]
            out += contrib
    return out


def warp_nearest(mask, a, offset, fill=0):
    """Affine-warp an (H, W) integer mask; outside pixels become `fill`."""
    h, w = mask.shape[:2]
    sr, sc = _inverse_grid(a, offset, h, w)
    rr = np.rint(sr).astype(np.int64)
    cc = np.rint(sc).astype(np.int64)
    valid = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
    out = np.full(mask.shape, fill, dtype=mask.dtype)
    out[valid] = mask[np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)][valid]
    return out


def augment(sample, cfg: AugmentConfig, rng):
    """Return a transformed copy of a SegmentationSample (identity configs
    return the sample unchanged, bit-exactly)."""
    if cfg.is_identity:
        return sample
    from .data import SegmentationSample

    h, w = sample.image.shape[:2]
    theta = rng.uniform(0.0, cfg.rotation_deg_max) if cfg.rotation_deg_max else 0.0
    scale = 1.0 + (rng.uniform(-cfg.zoom_max, cfg.zoom_max) if cfg.zoom_max else 0.0)
    shear = rng.uniform(-cfg.shear_max, cfg.shear_max) if cfg.shear_max else 0.0
    shift = (rng.uniform(-cfg.shift_max, cfg.shift_max) * h if cfg.shift_max else 0.0,
             rng.uniform(-cfg.shift_max, cfg.shift_max) * w if cfg.shift_max else 0.0)
    flip_r = bool(cfg.vflip and rng.random() < 0.5)
    flip_c = bool(cfg.hflip and rng.random() < 0.5)

    a, offset = _affine_matrix(theta, scale, shear, shift, flip_r, flip_c, h, w)
    return SegmentationSample(image=warp_bilinear(sample.image, a, offset),
                              mask=warp_nearest(sample.mask, a, offset))


# ---------------------------------------------------------------------------
# resizing (shared by the dataset loader)


def resize_bilinear(image, out_hw):
    """Resize (H, W, C) floats with half-pixel-center sampling."""
    h, w = image.shape[:2]
    oh, ow = out_hw
    if (oh, ow) == (h, w):
        return image.copy()
    sr = np.clip((np.arange(oh, dtype=np.float64) + 0.5) * h / oh - 0.5, 0, h - 1)
    sc = np.clip((np.arange(ow, dtype=np.float64) + 0.5) * w / ow - 0.5, 0, w - 1)
    r0 = np.floor(sr).astype(np.int64)
    c0 = np.floor(sc).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (sr - r0)[:, None, None]
    fc = (sc - c0)[None, :, None]
    top = image[r0][:, c0] * (1 - fc) + image[r0][:, c1] * fc
    bot = image[r1][:, c0] * (1 - fc) + image[r1][:, c1] * fc
    return (top * (1 - fr) + bot * fr).astype(image.dtype)


def resize_nearest(mask, out_hw):
    """Resize an (H, W) integer map by nearest neighbor."""
    h, w = mask.shape[:2]
    oh, ow = out_hw
    if (oh, ow) == (h, w):
        return mask.copy()
    sr = np.minimum(((np.arange(oh) + 0.5) * h / oh).astype(np.int64), h - 1)
    sc = np.minimum(((np.arange(ow) + 0.5) * w / ow).astype(np.int64), w - 1)
    return mask[sr][:, sc].copy()
