"""Dataset loading, splitting, file formats, and the .fctt tensor container."""

import os

import numpy as np
import pytest
from PIL import Image

from fctnet.data import (SegmentationSample, load_dataset, split_indices)
from fctnet.errors import ValidationError
from fctnet.synth import synth_dataset
from fctnet.tensorfile import read_fctt, write_fctt


def write_json(root, num_classes=3):
    os.makedirs(root, exist_ok=True)
    with open(os.path.join(root, "dataset.json"), "w") as fh:
        fh.write('{"num_classes": %d}\n' % num_classes)


def make_pair(root, stem, image, mask):
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "masks"), exist_ok=True)
    write_fctt(os.path.join(root, "images", stem + ".fctt"), image)
    write_fctt(os.path.join(root, "masks", stem + ".fctt"), mask.astype(np.float32))


# ---------------------------------------------------------------------------
# splits


def test_split_sizes_70_10_20():
    tr, va, te = split_indices(100, (0.7, 0.1, 0.2), seed=0)
    assert (len(tr), len(va), len(te)) == (70, 10, 20)


def test_split_disjoint_and_exhaustive():
    tr, va, te = split_indices(53, (0.7, 0.1, 0.2), seed=3)
    combined = tr + va + te
    assert sorted(combined) == list(range(53))
    assert len(set(combined)) == 53


def test_split_seeded():
    assert split_indices(40, (0.7, 0.1, 0.2), seed=5) == split_indices(40, (0.7, 0.1, 0.2), seed=5)
    assert split_indices(40, (0.7, 0.1, 0.2), seed=5) != split_indices(40, (0.7, 0.1, 0.2), seed=6)


def test_split_bad_ratios():
    with pytest.raises(ValidationError):
        split_indices(10, (0.5, 0.5, 0.5), seed=0)
    with pytest.raises(ValidationError):
        split_indices(10, (0.5, 0.5), seed=0)


# ---------------------------------------------------------------------------
# loading

def test_sample_shape_validation():
    with pytest.raises(ValidationError):
        SegmentationSample(image=np.zeros((4, 4, 1), dtype=np.float32),
                           mask=np.zeros((5, 5), dtype=np.int32))


def test_load_requires_dataset_json(tmp_path):
    with pytest.raises(ValidationError, match="dataset.json"):
        load_dataset(str(tmp_path))


def test_load_requires_two_classes(tmp_path):
    root = str(tmp_path)
    write_json(root, num_classes=1)
    with pytest.raises(ValidationError, match="num_classes"):
        load_dataset(root)


def test_orphan_image_named(tmp_path):
    root = str(tmp_path)
    write_json(root)
    make_pair(root, "0000", np.zeros((8, 8), dtype=np.float32), np.zeros((8, 8)))
    os.remove(os.path.join(root, "masks", "0000.fctt"))
    os.makedirs(os.path.join(root, "masks"), exist_ok=True)
    with pytest.raises(ValidationError, match="0000"):
        load_dataset(root)


def test_orphan_mask_named(tmp_path):
    root = str(tmp_path)
    write_json(root)
    make_pair(root, "0001", np.zeros((8, 8), dtype=np.float32), np.zeros((8, 8)))
    os.remove(os.path.join(root, "images", "0001.fctt"))
    with pytest.raises(ValidationError, match="0001"):
        load_dataset(root)


def test_out_of_range_label_names_file(tmp_path):
    root = str(tmp_path)
    write_json(root, num_classes=3)
    mask = np.zeros((8, 8))
    mask[0, 0] = 7
    make_pair(root, "bad", np.zeros((8, 8), dtype=np.float32), mask)
    with pytest.raises(ValidationError) as exc:
        load_dataset(root)
    assert "bad" in str(exc.value) and "7" in str(exc.value)


def test_image_mask_size_mismatch_rejected(tmp_path):
    root = str(tmp_path)
    write_json(root)
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "masks"), exist_ok=True)
    write_fctt(os.path.join(root, "images", "x.fctt"), np.zeros((8, 8), dtype=np.float32))
    write_fctt(os.path.join(root, "masks", "x.fctt"), np.zeros((6, 6), dtype=np.float32))
    with pytest.raises(ValidationError, match="sizes differ"):
        load_dataset(root)


def test_load_8bit_png_pair(tmp_path):
    root = str(tmp_path)
    write_json(root, num_classes=4)
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "masks"), exist_ok=True)
    img8 = np.arange(64, dtype=np.uint8).reshape(8, 8) * 4
    mask = np.random.default_rng(0).integers(0, 4, (8, 8)).astype(np.uint8)
    Image.fromarray(img8, mode="L").save(os.path.join(root, "images", "a.png"))
    Image.fromarray(mask, mode="L").save(os.path.join(root, "masks", "a.png"))
    _, ds = load_dataset(root, ratios=(0.0, 0.0, 1.0))
    sample = ds.test[0]
    assert sample.image.shape == (8, 8, 1)
    np.testing.assert_allclose(sample.image[:, :, 0], img8 / 255.0, atol=1e-6)
    np.testing.assert_array_equal(sample.mask, mask)


def test_load_16bit_png_image(tmp_path):
    root = str(tmp_path)
    write_json(root, num_classes=2)
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "masks"), exist_ok=True)
    img16 = (np.arange(16, dtype=np.uint16).reshape(4, 4)) * 4096
    Image.fromarray(img16).save(os.path.join(root, "images", "b.png"))
    Image.fromarray(np.zeros((4, 4), dtype=np.uint8), mode="L").save(
        os.path.join(root, "masks", "b.png"))
    _, ds = load_dataset(root, ratios=(0.0, 0.0, 1.0))
    sample = ds.test[0]
    np.testing.assert_allclose(sample.image[:, :, 0], img16 / 65535.0, atol=1e-6)


def test_load_rgb_png_keeps_three_channels(tmp_path):
    root = str(tmp_path)
    write_json(root, num_classes=2)
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "masks"), exist_ok=True)
    rgb = np.random.default_rng(1).integers(0, 255, (8, 8, 3)).astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(os.path.join(root, "images", "c.png"))
    Image.fromarray(np.zeros((8, 8), dtype=np.uint8), mode="L").save(
        os.path.join(root, "masks", "c.png"))
    _, ds = load_dataset(root, ratios=(0.0, 0.0, 1.0))
    assert ds.test[0].image.shape == (8, 8, 3)


def test_load_resizes_to_input_size(tmp_path):
    root = os.path.join(tmp_path, "ds")
    synth_dataset(4, 32, 3, seed=1, out_dir=root)
    _, ds = load_dataset(root, input_size=(16, 16), ratios=(1.0, 0.0, 0.0))
    for s in ds.train:
        assert s.image.shape == (16, 16, 1)
        assert s.mask.shape == (16, 16)
        assert s.mask.max() <= 2


def test_rejects_multichannel_mask_png(tmp_path):
    root = str(tmp_path)
    write_json(root)
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "masks"), exist_ok=True)
    arr = np.zeros((4, 4, 3), dtype=np.uint8)
    Image.fromarray(arr, mode="RGB").save(os.path.join(root, "images", "d.png"))
    Image.fromarray(arr, mode="RGB").save(os.path.join(root, "masks", "d.png"))
    with pytest.raises(ValidationError, match="single-channel"):
        load_dataset(root)


# ---------------------------------------------------------------------------
# .fctt container


def test_fctt_roundtrip_shapes(tmp_path):
    rng = np.random.default_rng(2)
    for shape in ((3,), (4, 5), (2, 3, 4), (1, 2, 3, 4)):
        path = os.path.join(tmp_path, "t.fctt")
        arr = rng.standard_normal(shape).astype(np.float32)
        write_fctt(path, arr)
        back = read_fctt(path)
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, arr)


def test_fctt_rejects_bad_magic(tmp_path):
    path = os.path.join(tmp_path, "x.fctt")
    with open(path, "wb") as fh:
        fh.write(b"NOPE" + bytes(10))
    with pytest.raises(ValidationError, match="magic"):
        read_fctt(path)


def test_fctt_rejects_truncation(tmp_path):
    path = os.path.join(tmp_path, "t.fctt")
    write_fctt(path, np.ones((4, 4), dtype=np.float32))
    with open(path, "rb") as fh:
        blob = fh.read()
    with open(path, "wb") as fh:
        fh.write(blob[:-8])
    with pytest.raises(ValidationError, match="truncated"):
        read_fctt(path)


def test_fctt_rejects_trailing_bytes(tmp_path):
    path = os.path.join(tmp_path, "t.fctt")
    write_fctt(path, np.ones(3, dtype=np.float32))
    with open(path, "ab") as fh:
        fh.write(b"\x00")
    with pytest.raises(ValidationError, match="trailing"):
        read_fctt(path)


def test_fctt_rejects_unknown_version(tmp_path):
    path = os.path.join(tmp_path, "t.fctt")
    write_fctt(path, np.ones(3, dtype=np.float32))
    with open(path, "r+b") as fh:
        fh.seek(4)
        fh.write(b"\x07")
    with pytest.raises(ValidationError, match="version"):
        read_fctt(path)
