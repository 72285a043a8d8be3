import json

import numpy as np
import pytest

from icereg import cli
from icereg.groundtruth import read_thickness_csv


def write_json(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f)


SCENE = {"height": 16, "width": 16, "num_layers": 2,
         "mean_layer_thickness_px": 3.0, "thickness_jitter": 0.3,
         "undulation_amplitude_px": 1.0, "undulation_wavelength_px": 8.0,
         "noise_sigma": 0.05}

TRAIN_CFG = {
    "architecture": {"input_height": 16, "input_width": 16,
                     "stem_channels": 4, "stage_widths": [4, 4, 8],
                     "blocks_per_stage": 1, "head_hidden": 8},
    "training": {"epochs": 2, "learning_rate": 0.001, "batch_size": 2},
}


@pytest.fixture()
def dataset_dir(tmp_path):
    spec_path = tmp_path / "scene.json"
    write_json(spec_path, SCENE)
    out = tmp_path / "data"
    rc = cli.main(["synth", "--spec", str(spec_path), "--n-train", "4",
                   "--n-test", "2", "--seed", "0", "--out", str(out)])
    assert rc == cli.EXIT_OK
    return out


def test_synth_outputs(dataset_dir):
    for rel in ["manifest.json", "thickness.csv", "scene_spec.json",
                "run_config.json", "images/train_00000.pgm",
                "masks/test_00005.pgm"]:
        assert (dataset_dir / rel).exists(), rel


def test_extract_matches_synth_csv(dataset_dir, tmp_path):
    out_csv = tmp_path / "extracted.csv"
    rc = cli.main(["extract", str(dataset_dir / "masks"), str(out_csv)])
    assert rc == cli.EXIT_OK
    got = read_thickness_csv(out_csv)
    want = read_thickness_csv(dataset_dir / "thickness.csv")
    assert set(got) == set(want)
    for sample_id in want:
        assert np.array_equal(got[sample_id].values, want[sample_id].values)


def test_extract_missing_dir(tmp_path):
    rc = cli.main(["extract", str(tmp_path / "nope"), str(tmp_path / "o.csv")])
    assert rc == cli.EXIT_USAGE


def test_extract_corrupt_pgm(dataset_dir, tmp_path, capsys):
    bad = dataset_dir / "masks" / "train_00000.pgm"
    bad.write_bytes(b"P5\n9 9\n255\nshort")
    rc = cli.main(["extract", str(dataset_dir / "masks"), str(tmp_path / "o.csv")])
    assert rc == cli.EXIT_USAGE
    assert "train_00000.pgm" in capsys.readouterr().err


def test_synth_invalid_spec(tmp_path):
    spec_path = tmp_path / "bad.json"
    write_json(spec_path, dict(SCENE, num_layers=99))
    rc = cli.main(["synth", "--spec", str(spec_path), "--out", str(tmp_path / "d")])
    assert rc == cli.EXIT_USAGE


def test_train_unknown_backbone(dataset_dir, tmp_path, capsys):
    rc = cli.main(["train", str(dataset_dir / "manifest.json"),
                   "--backbone", "resnet50", "--out", str(tmp_path / "run")])
    assert rc == cli.EXIT_USAGE
    err = capsys.readouterr().err
    for kind in ("mini_resnet", "mini_densenet", "mini_inception",
                 "mini_xception", "mini_mobilenet"):
        assert kind in err


def test_train_eval_report_pipeline(dataset_dir, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    write_json(cfg_path, TRAIN_CFG)
    run_dir = tmp_path / "runs" / "mini_resnet"
    rc = cli.main(["train", str(dataset_dir / "manifest.json"),
                   "--backbone", "mini_resnet", "--config", str(cfg_path),
                   "--out", str(run_dir)])
    assert rc == cli.EXIT_OK
    for rel in ["model.ictk", "model.json", "loss.csv", "result.json",
                "run_config.json"]:
        assert (run_dir / rel).exists(), rel

    with open(run_dir / "result.json") as f:
        result = json.load(f)
    assert result["backbone"] == "mini_resnet"
    assert np.isfinite(result["train_mae_px"]) and np.isfinite(result["test_mae_px"])

    loss_lines = (run_dir / "loss.csv").read_text().splitlines()
    assert loss_lines[0] == "epoch,train_mae_px,test_mae_px"
    assert len(loss_lines) == 3  # header + 2 epochs

    rc = cli.main(["eval", str(run_dir / "model.ictk"),
                   str(dataset_dir / "manifest.json"), "--split", "test",
                   "--out", str(run_dir)])
    assert rc == cli.EXIT_OK
    with open(run_dir / "eval_test.json") as f:
        doc = json.load(f)
    assert doc["mae_px"] == pytest.approx(result["test_mae_px"], abs=1e-6)
    assert doc["mae_cm"] == pytest.approx(doc["mae_px"] * 4.0)

    rc = cli.main(["report", str(tmp_path / "runs")])
    assert rc == cli.EXIT_OK
    report = (tmp_path / "runs" / "report.csv").read_text().splitlines()
    assert report[0] == "backbone,train_mae_px,test_mae_px,train_mae_cm,test_mae_cm"
    assert report[1].startswith("mini_resnet,")


def test_train_flag_overrides_config(dataset_dir, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    write_json(cfg_path, TRAIN_CFG)
    run_dir = tmp_path / "run"
    rc = cli.main(["train", str(dataset_dir / "manifest.json"),
                   "--backbone", "mini_resnet", "--config", str(cfg_path),
                   "--out", str(run_dir), "--epochs", "1", "--lr", "0.01"])
    assert rc == cli.EXIT_OK
    with open(run_dir / "run_config.json") as f:
        doc = json.load(f)
    assert doc["training"]["epochs"] == 1
    assert doc["training"]["learning_rate"] == 0.01
    assert doc["training"]["batch_size"] == 2  # from the config file


def test_train_idempotent(dataset_dir, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    write_json(cfg_path, TRAIN_CFG)
    outputs = []
    for sub in ("one", "two"):
        run_dir = tmp_path / sub
        rc = cli.main(["train", str(dataset_dir / "manifest.json"),
                       "--backbone", "mini_resnet", "--config", str(cfg_path),
                       "--out", str(run_dir)])
        assert rc == cli.EXIT_OK
        outputs.append(((run_dir / "model.ictk").read_bytes(),
                        (run_dir / "loss.csv").read_bytes()))
    assert outputs[0] == outputs[1]


def test_eval_missing_split(dataset_dir, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    write_json(cfg_path, TRAIN_CFG)
    run_dir = tmp_path / "run"
    assert cli.main(["train", str(dataset_dir / "manifest.json"),
                     "--backbone", "mini_resnet", "--config", str(cfg_path),
                     "--out", str(run_dir), "--epochs", "1"]) == cli.EXIT_OK
    rc = cli.main(["eval", str(run_dir / "model.ictk"),
                   str(dataset_dir / "manifest.json"), "--split", "valid"])
    assert rc == cli.EXIT_USAGE


def test_report_empty_dir(tmp_path):
    assert cli.main(["report", str(tmp_path)]) == cli.EXIT_USAGE


def test_gradcheck_exit_codes():
    passing = [("fake_op", lambda: 1e-9, 1e-6)]
    failing = [("fake_op", lambda: 1e-9, 1e-6),
               ("broken_op", lambda: 0.5, 1e-6)]

    class Args:
        pass

    assert cli.cmd_gradcheck(Args(), checks=passing) == cli.EXIT_OK
    assert cli.cmd_gradcheck(Args(), checks=failing) == cli.EXIT_CHECK_FAILED


def test_gradcheck_reports_failures(capsys):
    failing = [("broken_op", lambda: 0.5, 1e-6)]

    class Args:
        pass

    cli.cmd_gradcheck(Args(), checks=failing)
    captured = capsys.readouterr()
    assert "FAIL" in captured.out
    assert "broken_op" in captured.err
