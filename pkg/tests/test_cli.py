"""Command-line interface: argument handling, outputs, and error paths."""
import json
import os

import numpy as np
import pytest

from formcast.cli import load_config, main
from formcast.io_formats import read_fqt, save_checkpoint
from formcast.network import NetConfig, ResSEUNet


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def dataset_dir(workspace):
    out = workspace / "dataset"
    assert main(["generate", "--n", "6", "--seed", "5", "--res", "32",
                 "--out", str(out)]) == 0
    return out


def test_doe_writes_requested_sample_count(workspace):
    out = workspace / "doe.json"
    assert main(["doe", "--n", "5", "--seed", "3", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["samples"]) == 5
    assert doc["seed"] == 3


def test_doe_is_seed_deterministic(workspace):
    a, b = workspace / "doe_a.json", workspace / "doe_b.json"
    main(["doe", "--n", "4", "--seed", "9", "--out", str(a)])
    main(["doe", "--n", "4", "--seed", "9", "--out", str(b)])
    assert a.read_text() == b.read_text()


def test_generate_manifest_lists_all_ids(dataset_dir):
    manifest = json.loads((dataset_dir / "manifest.json").read_text())
    ids = [s["id"] for s in manifest["samples"]]
    assert len(ids) == 6
    assert len(set(ids)) == 6
    for sample_id in ids:
        assert (dataset_dir / f"{sample_id}.fqt").exists()


def test_train_is_seed_deterministic(workspace, dataset_dir):
    losses = []
    for tag in ("a", "b"):
        out = workspace / f"run_{tag}"
        assert main(["train", "--dataset", str(dataset_dir), "--res", "32",
                     "--seed", "2", "--epochs", "2", "--out", str(out)]) == 0
        run = json.loads((out / "thinning_run.json").read_text())
        losses.append((run["train_losses"], run["test_losses"]))
    assert losses[0] == losses[1]


def test_evaluate_reports_scores(workspace, dataset_dir, capsys):
    ckpt = workspace / "run_a" / "thinning.fqt"
    out = workspace / "scores.json"
    assert main(["evaluate", "--dataset", str(dataset_dir),
                 "--checkpoint", str(ckpt), "--out", str(out)]) == 0
    scores = json.loads(out.read_text())
    assert set(scores) == {"mse", "mre"}
    assert scores["mse"] > 0


def test_predict_midpoint_writes_field_tensors(workspace):
    out = workspace / "pred.fqt"
    assert main(["predict", "--res", "64", "--out", str(out)]) == 0
    tensors, meta = read_fqt(out)
    assert tensors["thinning"].shape == (1, 64, 64)
    assert tensors["displacement"].shape == (3, 64, 64)
    assert tensors["mask"].shape == (64, 64)
    assert set(meta["params"]) == {
        "r_die", "r_punch", "r_plan", "h_design", "a_scale", "b_scale",
        "t_spacer", "t_init", "speed"}


def test_reconstruct_from_predict_output(workspace):
    fields = workspace / "pred32.fqt"
    assert main(["predict", "--res", "32", "--out", str(fields)]) == 0
    mesh = workspace / "mesh.fqm"
    summary = workspace / "summary.json"
    assert main(["reconstruct", "--res", "32", "--fields", str(fields),
                 "--out", str(mesh), "--summary", str(summary)]) == 0
    doc = json.loads(summary.read_text())
    assert set(doc) == {"max_thinning", "max_wrinkle_height_mm",
                        "wrinkle_count_corner_arc"}
    assert mesh.read_text().startswith("n 0 ")


def test_sweep_requires_matching_checkpoint(workspace):
    disp = workspace / "disp.fqt"
    save_checkpoint(disp, ResSEUNet(NetConfig(resolution=32, out_channels=3),
                                    seed=0))
    code = main(["sweep", "--checkpoint", str(disp), "--res", "32",
                 "--n-speeds", "2", "--out", str(workspace / "sweep.fqt")])
    assert code == 2


def test_sweep_writes_speed_temperature_grid(workspace):
    ckpt = workspace / "run_a" / "thinning.fqt"
    out = workspace / "sweep.fqt"
    assert main(["sweep", "--checkpoint", str(ckpt), "--res", "32",
                 "--n-speeds", "3", "--temps", "350,500",
                 "--out", str(out)]) == 0
    tensors, meta = read_fqt(out)
    assert tensors["images"].shape[0] == 6
    assert len(meta["metadata"]) == 6


def test_missing_config_file_errors(workspace):
    code = main(["doe", "--n", "2", "--config", "/nonexistent.json",
                 "--out", str(workspace / "x.json")])
    assert code == 2


def test_unknown_config_key_errors(workspace):
    cfg = workspace / "bad.json"
    cfg.write_text(json.dumps({"gird": {"n_pixels": 32}}))
    code = main(["doe", "--n", "2", "--config", str(cfg),
                 "--out", str(workspace / "x.json")])
    assert code == 2


def test_config_overrides_and_flag_precedence(workspace):
    cfg = workspace / "cfg.json"
    cfg.write_text(json.dumps({"grid": {"n_pixels": 32}, "seed": 11}))
    loaded = load_config(str(cfg))
    assert loaded["grid"]["n_pixels"] == 32
    assert loaded["grid"]["frame_mm"] == 740.0
    assert loaded["seed"] == 11
    # command-line flags beat the file
    loaded = load_config(str(cfg), seed=4, res=64)
    assert loaded["seed"] == 4
    assert loaded["grid"]["n_pixels"] == 64


def test_nonexistent_dataset_path_errors(workspace):
    code = main(["train", "--dataset", str(workspace / "missing"),
                 "--out", str(workspace / "run_x")])
    assert code == 2


def test_dataset_resolution_mismatch_errors(workspace, dataset_dir):
    # dataset is 32 px but the default config says 64
    code = main(["train", "--dataset", str(dataset_dir),
                 "--out", str(workspace / "run_y")])
    assert code == 2


def test_evaluate_checkpoint_resolution_mismatch_errors(workspace,
                                                        dataset_dir):
    ckpt = workspace / "thin64.fqt"
    save_checkpoint(ckpt, ResSEUNet(NetConfig(resolution=64, out_channels=1),
                                    seed=0))
    code = main(["evaluate", "--dataset", str(dataset_dir),
                 "--checkpoint", str(ckpt)])
    assert code == 2
