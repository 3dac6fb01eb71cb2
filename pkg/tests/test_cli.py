import csv
import json

import numpy as np
import pytest

from softprop.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, main

TINY = ["--conv-channels", "4,8", "--latent-dim", "8", "--f-widths", "16,16,3", "--l-widths", "8",
        "--grid-side", "4", "--image-res", "16", "--batch-size", "4"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["gen", "--out", str(out), "--n", "12", "--seed", "7", "--image-size", "16",
                 "--points-per-view", "64"]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def run_dir(data_dir):
    out = data_dir.parent / "run"
    assert main(["train", "--data", str(data_dir), "--out", str(out), "--epochs", "2", *TINY]) == EXIT_OK
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_gen_is_deterministic(data_dir, tmp_path, capsys):
    out = tmp_path / "again"
    capsys.readouterr()
    main(["gen", "--out", str(out), "--n", "12", "--seed", "7", "--image-size", "16", "--points-per-view", "64"])
    printed = capsys.readouterr().out.splitlines()
    assert printed[0].endswith("manifest.csv")
    from softprop.synthdata import dataset_checksum
    assert printed[1] == f"checksum {dataset_checksum(data_dir)}"
    assert len(read_csv(out / "manifest.csv")) == 12


def test_gen_rejects_empty(tmp_path):
    assert main(["gen", "--out", str(tmp_path / "x"), "--n", "0"]) == EXIT_USAGE


def test_train_outputs(run_dir):
    rows = read_csv(run_dir / "loss.csv")
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert (run_dir / "final.npz").exists() and (run_dir / "best.npz").exists()


def test_single_epoch_single_row(data_dir, tmp_path):
    assert main(["train", "--data", str(data_dir), "--out", str(tmp_path / "r"), "--epochs", "1", *TINY]) == 0
    assert len(read_csv(tmp_path / "r" / "loss.csv")) == 1


def test_resume_matches_uninterrupted(data_dir, run_dir, tmp_path):
    part = tmp_path / "part"
    assert main(["train", "--data", str(data_dir), "--out", str(part), "--epochs", "1", *TINY]) == 0
    assert main(["train", "--data", str(data_dir), "--out", str(part), "--epochs", "2",
                 "--resume", str(part / "final.npz"), *TINY]) == 0
    assert (part / "loss.csv").read_bytes() == (run_dir / "loss.csv").read_bytes()


def test_config_file(data_dir, run_dir, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"data": str(data_dir), "epochs": 2, "conv_channels": "4,8", "latent_dim": 8,
                               "f_widths": "16,16,3", "l_widths": "8", "grid_side": 4, "image_res": 16,
                               "batch_size": 4}))
    out = tmp_path / "cfg"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "loss.csv").read_bytes() == (run_dir / "loss.csv").read_bytes()
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"no_such_flag": 1}))
    assert main(["train", "--config", str(bad), "--data", str(data_dir), "--out", str(out)]) == EXIT_USAGE


def test_eval_with_baseline(data_dir, run_dir, tmp_path):
    out = tmp_path / "eval"
    assert main(["eval", "--checkpoint", str(run_dir / "final.npz"), "--data", str(data_dir), "--out", str(out),
                 "--baseline", "--pca-k", "4", "--grid-side", "6"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    rows = read_csv(out / "report.csv")
    assert len(rows) == 2
    assert summary["neural"]["mean"] == pytest.approx(np.mean([float(r["hausdorff_mm"]) for r in rows]))
    assert (out / "report_knn.csv").exists()
    assert len(list((out / "ply").glob("*.ply"))) == 2


def test_bench_and_predict(data_dir, run_dir, tmp_path):
    csv_path = tmp_path / "bench.csv"
    assert main(["bench", "--checkpoint", str(run_dir / "final.npz"), "--resolutions", "16,36",
                 "--repeats", "2", "--warmup", "0", "--out", str(csv_path)]) == 0
    assert [r["points"] for r in read_csv(csv_path)] == ["16", "36"]
    img = sorted((data_dir / "images").glob("*.png"))[0]
    assert main(["predict", "--checkpoint", str(run_dir / "final.npz"), "--image", str(img),
                 "--out", str(tmp_path / "pred"), "--grid-side", "5"]) == 0
    from softprop.ply import read_ply
    pts, _ = read_ply(tmp_path / "pred" / "view2.ply")
    assert pts.shape == (25, 3)


def test_sweep(data_dir, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", "--data", str(data_dir), "--out", str(out), "--axis", "latent-dim",
                 "--values", "4,8", "--epochs", "1", *TINY[:2], *TINY[4:]]) == 0
    assert [r["value"] for r in read_csv(out / "sweep.csv")] == ["4", "8"]


def test_error_exit_codes(data_dir, tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.npz"), "--data", str(data_dir)]) == EXIT_IO
    assert main(["train", "--data", str(tmp_path / "nodata"), "--out", str(tmp_path / "o")]) in (EXIT_IO, EXIT_USAGE)
    assert main(["train", "--data", str(data_dir)]) == EXIT_USAGE
    assert main(["nonsense"]) == EXIT_USAGE
