"""Affine augmentation geometry, alignment, and resizing."""

import numpy as np
import pytest

from fctnet.augment import (AugmentConfig, _affine_matrix, augment,
                            resize_bilinear, resize_nearest, warp_bilinear,
                            warp_nearest)
from fctnet.data import SegmentationSample
from fctnet.losses import dice_coefficient, one_hot


def disk_sample(size=32, rad=9):
    rr, cc = np.mgrid[0:size, 0:size]
    mask = (((rr - size / 2 + 3) ** 2 + (cc - size / 2 - 2) ** 2) <= rad ** 2).astype(np.int32)
    image = (mask * 0.7 + 0.1).astype(np.float32)[:, :, None]
    return SegmentationSample(image=image, mask=mask)


def identity_cfg(**kw):
    base = dict(rotation_deg_max=0.0, zoom_max=0.0, shear_max=0.0, shift_max=0.0,
                hflip=False, vflip=False)
    base.update(kw)
    return AugmentConfig(**base)


def test_identity_config_short_circuits():
    sample = disk_sample()
    out = augment(sample, identity_cfg(), np.random.default_rng(0))
    assert out is sample


def test_negative_range_rejected():
    with pytest.raises(ValueError):
        identity_cfg(zoom_max=-0.1)


def test_half_turn_flips_both_axes():
    sample = disk_sample()
    h, w = sample.mask.shape
    a, offset = _affine_matrix(180.0, 1.0, 0.0, (0.0, 0.0), False, False, h, w)
    np.testing.assert_array_equal(warp_nearest(sample.mask, a, offset),
                                  sample.mask[::-1, ::-1])
    np.testing.assert_allclose(warp_bilinear(sample.image, a, offset),
                               sample.image[::-1, ::-1], atol=1e-5)


def test_flip_matrices_match_numpy_flip():
    mask = np.arange(35).reshape(5, 7)
    a, offset = _affine_matrix(0.0, 1.0, 0.0, (0.0, 0.0), True, False, 5, 7)
    np.testing.assert_array_equal(warp_nearest(mask, a, offset), mask[::-1])
    a, offset = _affine_matrix(0.0, 1.0, 0.0, (0.0, 0.0), False, True, 5, 7)
    np.testing.assert_array_equal(warp_nearest(mask, a, offset), mask[:, ::-1])


def test_integer_shift_matches_roll_with_zero_fill():
    mask = np.arange(36).reshape(6, 6) + 1
    a, offset = _affine_matrix(0.0, 1.0, 0.0, (2.0, 3.0), False, False, 6, 6)
    out = warp_nearest(mask, a, offset)
    expected = np.zeros_like(mask)
    expected[2:, 3:] = mask[:-2, :-3]
    np.testing.assert_array_equal(out, expected)


def test_out_of_bounds_filled_with_background():
    sample = disk_sample()
    h, w = sample.mask.shape
    a, offset = _affine_matrix(0.0, 1.0, 0.0, (h / 2, 0.0), False, False, h, w)
    out_img = warp_bilinear(sample.image, a, offset)
    out_mask = warp_nearest(sample.mask, a, offset)
    assert np.all(out_img[: h // 2 - 1] == 0.0)
    assert np.all(out_mask[: h // 2 - 1] == 0)


def test_augment_deterministic_per_rng_seed():
    sample = disk_sample()
    cfg = AugmentConfig()
    a = augment(sample, cfg, np.random.default_rng(42))
    b = augment(sample, cfg, np.random.default_rng(42))
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.mask, b.mask)
    c = augment(sample, cfg, np.random.default_rng(43))
    assert not np.array_equal(a.mask, c.mask)


def test_augment_preserves_shapes_and_classes():
    sample = disk_sample()
    cfg = AugmentConfig()
    for seed in range(5):
        out = augment(sample, cfg, np.random.default_rng(seed))
        assert out.image.shape == sample.image.shape
        assert out.mask.shape == sample.mask.shape
        assert out.image.dtype == sample.image.dtype
        # nearest interpolation cannot invent classes
        assert set(np.unique(out.mask)) <= set(np.unique(sample.mask)) | {0}


def test_flip_only_augment_keeps_exact_alignment():
    sample = disk_sample()
    cfg = identity_cfg(hflip=True, vflip=True)
    out = augment(sample, cfg, np.random.default_rng(7))  # both flips fire
    np.testing.assert_array_equal(np.rint((out.image[:, :, 0] - 0.1) / 0.7).astype(np.int32),
                                  out.mask)


def test_general_augment_keeps_image_mask_aligned():
    # image carries the mask as intensity; after warping, thresholding the
    # image recovers the warped mask away from the 1-pixel boundary band
    sample = disk_sample()
    cfg = AugmentConfig(rotation_deg_max=360, zoom_max=0.2, shear_max=0.1,
                        shift_max=0.1, hflip=True, vflip=True)
    for seed in range(4):
        out = augment(sample, cfg, np.random.default_rng(seed))
        img_cls = (out.image[:, :, 0] > 0.45).astype(np.int32)
        _, mean = dice_coefficient(one_hot(img_cls, 2), one_hot(out.mask, 2))
        assert mean > 0.85, f"seed {seed}: alignment dice {mean}"


# ---------------------------------------------------------------------------
# resizing


def test_resize_identity_returns_copy():
    img = np.random.default_rng(0).random((8, 8, 1)).astype(np.float32)
    out = resize_bilinear(img, (8, 8))
    assert out is not img
    np.testing.assert_array_equal(out, img)
    mask = np.arange(64).reshape(8, 8)
    m = resize_nearest(mask, (8, 8))
    assert m is not mask
    np.testing.assert_array_equal(m, mask)


def test_resize_bilinear_constant_stays_constant():
    img = np.full((8, 8, 2), 0.37, dtype=np.float32)
    for target in ((4, 4), (16, 16), (5, 11)):
        out = resize_bilinear(img, target)
        assert out.shape == target + (2,)
        np.testing.assert_allclose(out, 0.37, atol=1e-6)


def test_resize_bilinear_exact_downscale_averages():
    img = np.zeros((4, 4, 1), dtype=np.float64)
    img[0, 0, 0] = 1.0
    img[0, 1, 0] = 1.0
    img[1, 0, 0] = 1.0
    img[1, 1, 0] = 1.0
    out = resize_bilinear(img, (2, 2))
    # half-pixel centers land exactly between the four source pixels
    assert out[0, 0, 0] == pytest.approx(1.0)
    assert out[1, 1, 0] == pytest.approx(0.0)


def test_resize_nearest_preserves_label_values():
    mask = np.random.default_rng(1).integers(0, 4, (9, 9))
    out = resize_nearest(mask, (5, 13))
    assert out.shape == (5, 13)
    assert set(np.unique(out)) <= set(np.unique(mask))


def test_resize_nearest_upscale_blocks():
    mask = np.array([[1, 2], [3, 4]])
    out = resize_nearest(mask, (4, 4))
    np.testing.assert_array_equal(out, [[1, 1, 2, 2], [1, 1, 2, 2],
                                        [3, 3, 4, 4], [3, 3, 4, 4]])
