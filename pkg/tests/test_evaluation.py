import numpy as np
import pytest

from softprop.baseline import build_baseline
from softprop.evaluation import (
    benchmark,
    evaluate_baseline,
    evaluate_model,
    evaluate_predictions,
    grid_for_resolution,
    predict_normalized,
)
from softprop.model import DecoderConfig, EncoderConfig, ModelConfig, ProprioModel
from softprop.prototype import square_grid
from softprop.training import training_data


def tiny_model():
    enc = EncoderConfig(image_size=16, conv_channels=(4, 8), latent_dim=8)
    return ProprioModel(ModelConfig(encoder=enc, decoder=DecoderConfig(f_widths=(16, 16, 3), l_widths=(8,))))


def test_perfect_prediction_scores_zero(rng):
    clouds = [rng.standard_normal((30, 3)) for _ in range(3)]
    rep = evaluate_predictions([4, 5, 6], clouds, clouds)
    assert rep.summary() == {"mean": 0.0, "median": 0.0, "max": 0.0, "units": "mm", "count": 3}
    assert all(np.all(e == 0) for e in rep.point_errors)


def test_millimetre_units_and_aggregates(tmp_path):
    g = np.zeros((1, 3))
    preds = [np.array([[0.001, 0, 0]]), np.array([[0, 0.004, 0]]), np.array([[0, 0, -0.002]])]
    rep = evaluate_predictions([0, 1, 2], preds, [g, g, g])
    np.testing.assert_allclose(rep.hausdorff_mm, [1.0, 4.0, 2.0])
    assert (rep.mean, rep.median, rep.max) == pytest.approx((7 / 3, 2.0, 4.0))
    lines = rep.write_csv(tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "sample_id,hausdorff_mm" and lines[2] == "1,4.0"
    paths = rep.write_plys(tmp_path / "ply", [p * 1000 for p in preds])
    assert len(paths) == 3 and paths[0].name == "000000.ply"


def test_model_and_baseline_evaluation(small_dataset):
    model = tiny_model()
    grid = square_grid(5, 3)
    rep, preds = evaluate_model(model, small_dataset, small_dataset.test_idx, grid, return_predictions=True)
    assert rep.hausdorff_mm.shape == (8,) and preds[0].shape == (25, 3)
    data = training_data(small_dataset, small_dataset.test_idx, 16)
    pn = predict_normalized(model, data.images, data.views, grid, batch_size=3)
    np.testing.assert_allclose(small_dataset.transform.normalize(preds[0]), pn[0], atol=1e-6)
    kb = build_baseline(small_dataset, k=8)
    train_rep = evaluate_baseline(kb, small_dataset, small_dataset.train_idx)
    assert train_rep.max == 0.0


def test_grid_for_resolution():
    assert len(grid_for_resolution(10000, 2)) == 10000
    assert len(grid_for_resolution(10001, 3)) == 101 * 101
    with pytest.raises(ValueError):
        grid_for_resolution(3, 2)


def test_benchmark_rows(rng):
    model = tiny_model()
    img = rng.random((16, 16, 6)).astype(np.float32)
    rows = benchmark(model, img, resolutions=(16, 100), repeats=2, warmup=1)
    assert [r["points"] for r in rows] == [16, 100]
    assert all(r["hz"] > 0 and r["hz"] == pytest.approx(1 / r["median_s"]) for r in rows)
