"""End-to-end checks of the command line: exit codes, JSON output,
and the synth -> train -> infer -> eval pipeline on a tiny model."""

import json
import os

import numpy as np
import pytest
from PIL import Image

from fctnet.cli import cli
from fctnet.model import build_model, model_config_from_dict, profile
from fctnet.tensorfile import read_fctt

TINY_MODEL = {
    "input_size": [16, 16],
    "in_channels": 1,
    "num_classes": 2,
    "stage_filters": [4, 4, 8, 8, 16, 8, 8, 4, 4],
    "stage_heads": [1, 1, 2, 2, 2, 2, 2, 1, 1],
}

TINY_TRAIN = {
    "epochs": 2,
    "warmup_epochs": 0,
    "batch_size": 4,
    "seed": 3,
    "augment": {"rotation_deg_max": 0, "zoom_max": 0, "shear_max": 0,
                "shift_max": 0, "hflip": False, "vflip": False},
}


def run(capsys, *argv):
    rc = cli(list(argv))
    out, err = capsys.readouterr()
    return rc, out, err


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh)
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One synth dataset and one trained run shared by the read-only tests."""
    root = tmp_path_factory.mktemp("cli")
    data = str(root / "data")
    out = str(root / "run")
    config = write_json(root / "config.json",
                        {"model": TINY_MODEL, "train": TINY_TRAIN})
    assert cli(["synth", "--out", data, "--n", "10", "--size", "16",
                "--classes", "2", "--seed", "1"]) == 0
    assert cli(["train", "--config", config, "--data", data, "--out", out]) == 0
    return {"root": root, "data": data, "out": out, "config": config,
            "model": os.path.join(out, "checkpoint-best")}


def test_no_subcommand_is_usage_error(capsys):
    rc, out, err = run(capsys)
    assert rc == 1
    assert "subcommand" in err


def test_unknown_flag_is_usage_error(capsys):
    rc, out, err = run(capsys, "gradcheck", "--bogus")
    assert rc == 1
    assert "bogus" in err


def test_missing_config_file(capsys, tmp_path):
    rc, out, err = run(capsys, "profile", "--config", str(tmp_path / "nope.json"))
    assert rc == 1
    assert "not found" in err


def test_config_must_be_valid_json(capsys, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    rc, out, err = run(capsys, "profile", "--config", str(p))
    assert rc == 1
    assert "JSON" in err


def test_misspelled_config_key_is_named(capsys, tmp_path):
    config = write_json(tmp_path / "c.json", {"wdith": 224})
    rc, out, err = run(capsys, "profile", "--config", config)
    assert rc == 1
    assert "wdith" in err


def test_misspelled_section_key_is_named(capsys, tmp_path):
    config = write_json(tmp_path / "c.json", {"model": {}, "trian": {}})
    rc, out, err = run(capsys, "profile", "--config", config)
    assert rc == 1
    assert "trian" in err


def test_error_json_goes_to_stderr(capsys, tmp_path):
    config = write_json(tmp_path / "c.json", {"wdith": 224})
    rc, out, err = run(capsys, "--json", "profile", "--config", config)
    assert rc == 1
    assert out == ""
    payload = json.loads(err)
    assert payload["schema"] == 1
    assert payload["error"]["exit_code"] == 1
    assert payload["error"]["type"] == "UsageError"
    assert "wdith" in payload["error"]["message"]


def test_gradcheck_exits_zero(capsys):
    rc, out, err = run(capsys, "gradcheck", "--seed", "7")
    assert rc == 0
    lines = [l for l in out.splitlines() if l]
    assert all(l.startswith("PASS") for l in lines[:-1])
    assert "checks passed" in lines[-1]


def test_gradcheck_json(capsys):
    rc, out, err = run(capsys, "--json", "gradcheck", "--seed", "7")
    assert rc == 0
    payload = json.loads(out)
    assert payload["schema"] == 1
    assert payload["ok"] is True
    assert len(payload["checks"]) > 20
    for c in payload["checks"]:
        assert set(c) == {"name", "rel_err", "ok"}


def test_profile_default_table(capsys, tmp_path):
    config = write_json(tmp_path / "c.json", {})
    rc, out, err = run(capsys, "profile", "--config", config)
    assert rc == 0
    rows = [l.split() for l in out.splitlines()
            if l and not l.startswith(("-", "input", "stage", "total",
                                       "reference", "params"))]
    assert [r[0] for r in rows] == ["enc1", "enc2", "enc3", "enc4", "bottleneck",
                                    "dec1", "dec2", "dec3", "dec4", "heads"]
    assert [int(r[1]) for r in rows] == [112, 56, 28, 14, 14, 28, 56, 112, 224, 224]
    assert "reference" in out
    # measured numbers are flagged against the reference either way; the
    # hard [10M, 40M] parameter gate lives in the profiler tests
    assert "with reference" in out


def test_profile_json_matches_library(capsys, tmp_path):
    config = write_json(tmp_path / "c.json", TINY_MODEL)
    rc, out, err = run(capsys, "--json", "profile", "--config", config)
    assert rc == 0
    payload = json.loads(out)
    assert payload.pop("schema") == 1
    expected = profile(build_model(model_config_from_dict(TINY_MODEL), seed=0))
    assert payload == json.loads(json.dumps(expected))


def test_synth_writes_dataset(capsys, tmp_path):
    data = str(tmp_path / "d")
    rc, out, err = run(capsys, "synth", "--out", data, "--n", "3",
                       "--size", "16", "--classes", "2")
    assert rc == 0
    assert os.path.isfile(os.path.join(data, "dataset.json"))
    assert "wrote 3 samples" in out


def test_synth_rejects_nonpositive_n(capsys, tmp_path):
    rc, out, err = run(capsys, "synth", "--out", str(tmp_path / "d"),
                       "--n", "0", "--size", "16", "--classes", "2")
    assert rc == 1


def test_train_writes_report_and_checkpoint(pipeline, capsys):
    out_dir = pipeline["out"]
    assert os.path.isfile(os.path.join(out_dir, "report.csv"))
    assert os.path.isfile(os.path.join(out_dir, "report.json"))
    assert os.path.isfile(os.path.join(pipeline["model"], "manifest.json"))
    with open(os.path.join(out_dir, "report.csv")) as fh:
        assert len(fh.read().splitlines()) == 1 + TINY_TRAIN["epochs"]


def test_infer_png_mask_matches_input_shape(pipeline, capsys):
    image = os.path.join(pipeline["data"], "images", "0000.fctt")
    out_png = str(pipeline["root"] / "mask.png")
    rc, out, err = run(capsys, "infer", "--model", pipeline["model"],
                       "--input", image, "--output", out_png)
    assert rc == 0
    mask = np.asarray(Image.open(out_png))
    assert mask.shape == (16, 16)
    assert mask.min() >= 0 and mask.max() < 2


def test_infer_fctt_output(pipeline, capsys):
    image = os.path.join(pipeline["data"], "images", "0001.fctt")
    out_path = str(pipeline["root"] / "mask.fctt")
    rc, out, err = run(capsys, "--json", "infer", "--model", pipeline["model"],
                       "--input", image, "--output", out_path, "--format", "fctt")
    assert rc == 0
    payload = json.loads(out)
    assert payload["schema"] == 1
    assert payload["shape"] == [16, 16]
    mask = read_fctt(out_path)
    assert mask.shape == (16, 16)
    assert set(np.unique(mask)) <= {0.0, 1.0}


def test_infer_resizes_foreign_input(pipeline, capsys):
    # a 24x24 8-bit input: the model runs at 16x16 but the mask must come
    # back at the input's own resolution
    png = str(pipeline["root"] / "in24.png")
    rng = np.random.default_rng(0)
    Image.fromarray(rng.integers(0, 255, (24, 24), dtype=np.uint8), mode="L").save(png)
    out_png = str(pipeline["root"] / "mask24.png")
    rc, out, err = run(capsys, "infer", "--model", pipeline["model"],
                       "--input", png, "--output", out_png)
    assert rc == 0
    mask = np.asarray(Image.open(out_png))
    assert mask.shape == (24, 24)
    assert mask.max() < 2


def test_infer_overlay(pipeline, capsys):
    image = os.path.join(pipeline["data"], "images", "0002.fctt")
    out_png = str(pipeline["root"] / "m.png")
    overlay = str(pipeline["root"] / "overlay.png")
    rc, out, err = run(capsys, "infer", "--model", pipeline["model"],
                       "--input", image, "--output", out_png, "--overlay", overlay)
    assert rc == 0
    img = Image.open(overlay)
    assert img.mode == "RGB"
    assert img.size == (16, 16)


def test_eval_json_reports_binary_metrics(pipeline, capsys):
    rc, out, err = run(capsys, "eval", "--model", pipeline["model"],
                       "--data", pipeline["data"], "--split", "test")
    assert rc == 0
    payload = json.loads(out)
    assert payload["schema"] == 1
    assert payload["split"] == "test"
    assert payload["n_images"] == 2
    assert len(payload["per_class_dice"]) == 2
    assert 0.0 <= payload["mean_dice"] <= 1.0
    assert 0.0 <= payload["sensitivity"] <= 1.0
    assert 0.0 <= payload["specificity"] <= 1.0


def test_eval_class_mismatch_is_validation_error(pipeline, capsys, tmp_path):
    data3 = str(tmp_path / "d3")
    assert cli(["synth", "--out", data3, "--n", "3", "--size", "16",
                "--classes", "3", "--seed", "0"]) == 0
    capsys.readouterr()
    rc, out, err = run(capsys, "eval", "--model", pipeline["model"],
                       "--data", data3)
    assert rc == 2
    assert "classes" in err


def test_checkpoint_config_rebuilds_identical_profile(pipeline, capsys, tmp_path):
    with open(os.path.join(pipeline["model"], "manifest.json")) as fh:
        manifest = json.load(fh)
    rebuilt = write_json(tmp_path / "from_ckpt.json", manifest["model_config"])
    rc1, out1, err1 = run(capsys, "--json", "profile", "--config", rebuilt)
    rc2, out2, err2 = run(capsys, "--json", "profile", "--config",
                          pipeline["config"])
    assert rc1 == rc2 == 0
    assert out1 == out2
