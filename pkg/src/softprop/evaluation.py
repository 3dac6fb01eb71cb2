"""Hausdorff evaluation in world units, throughput benchmark and sweeps."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from softprop import geometry, ply
from softprop.numcore import no_grad, ops
from softprop.prototype import PrototypeGrid, square_grid

MM_PER_M = 1000.0
BENCH_RESOLUTIONS = (10000, 14400, 19600, 25600, 32400, 40000)


@dataclass
class EvalReport:
    """Per-sample Hausdorff distances (mm) and their aggregates.

    ``point_errors[k]`` holds, for sample ``k``, each predicted point's
    distance (mm) to the closest ground-truth point.
    """

    sample_ids: np.ndarray
    hausdorff_mm: np.ndarray
    point_errors: list = field(default_factory=list, repr=False)
    units: str = "mm"

    @property
    def mean(self) -> float:
        return float(np.mean(self.hausdorff_mm))

    @property
    def median(self) -> float:
        return float(np.median(self.hausdorff_mm))

    @property
    def max(self) -> float:
        return float(np.max(self.hausdorff_mm))

    def summary(self) -> dict:
        return {"mean": self.mean, "median": self.median, "max": self.max, "units": self.units,
                "count": int(len(self.hausdorff_mm))}

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", "hausdorff_mm"])
            for i, d in zip(self.sample_ids, self.hausdorff_mm):
                w.writerow([int(i), repr(float(d))])
        return path

    def write_plys(self, out_dir, predictions_mm: Sequence[np.ndarray]) -> list:
        """Prediction clouds (mm) with the per-point ``error`` attribute."""
        out = Path(out_dir)
        return [ply.write_ply(out / f"{int(i):06d}.ply", p, e)
                for i, p, e in zip(self.sample_ids, predictions_mm, self.point_errors)]


def evaluate_predictions(sample_ids, predictions_m: Sequence[np.ndarray], truths_m: Sequence[np.ndarray],
                         backend: str = "indexed") -> EvalReport:
    """Hausdorff of each (prediction, truth) pair, both given in metres."""
    dh, errors = [], []
    for p, g in zip(predictions_m, truths_m):
        p_mm = np.asarray(p, dtype=np.float64) * MM_PER_M
        g_mm = np.asarray(g, dtype=np.float64) * MM_PER_M
        d_pg = geometry.directed_distances(p_mm, g_mm, backend)
        d_gp = geometry.directed_distances(g_mm, p_mm, backend)
        dh.append(max(d_pg.max(), d_gp.max()))
        errors.append(d_pg)
    return EvalReport(np.asarray(sample_ids), np.asarray(dh), errors)


def predict_normalized(model, images: np.ndarray, views: np.ndarray, grid, batch_size: int = 32) -> np.ndarray:
    """Decode each image on ``grid`` with its own view's decoder, (n, M, 3) normalized."""
    out = np.empty((len(views), len(grid), 3), dtype=np.float32)
    with no_grad():
        for s in range(0, len(views), batch_size):
            rows = np.arange(s, min(s + batch_size, len(views)))
            codes = model.encode(images[rows])
            for v in np.unique(views[rows]):
                sel = np.nonzero(views[rows] == v)[0]
                out[rows[sel]] = model.decode(grid, ops.take_rows(codes, sel), int(v)).data
    return out


def evaluate_model(model, dataset, indices, grid, data=None, backend: str = "indexed",
                   return_predictions: bool = False):
    """Test-split Hausdorff of a trained model, in millimetres."""
    from softprop.training import training_data

    data = data if data is not None else training_data(dataset, indices, model.config.encoder.image_size)
    pred_n = predict_normalized(model, data.images, data.views, grid)
    preds = [dataset.transform.denormalize(p.astype(np.float64)) for p in pred_n]
    rep = evaluate_predictions(data.index, preds, [dataset.clouds[i] for i in data.index], backend)
    return (rep, preds) if return_predictions else rep


def evaluate_baseline(baseline, dataset, indices, backend: str = "indexed", return_predictions: bool = False):
    preds = [baseline.predict(dataset.images[i], int(dataset.views[i])) for i in indices]
    rep = evaluate_predictions(np.asarray(indices), preds, [dataset.clouds[i] for i in indices], backend)
    return (rep, preds) if return_predictions else rep


# throughput -------------------------------------------------------------------


def grid_for_resolution(m: int, dim: int) -> PrototypeGrid:
    """Square grid with exactly ``m`` points when ``m`` is a perfect square, else the next larger one."""
    if m < 4:
        raise ValueError(f"resolution must be >= 4 points, got {m}")
    side = int(np.ceil(np.sqrt(m)))
    return square_grid(side, dim)


def benchmark(model, image: np.ndarray, resolutions=BENCH_RESOLUTIONS, repeats: int = 20, warmup: int = 2,
              views: Optional[Sequence[int]] = None) -> list:
    """End-to-end ``predict`` rate (Hz) per resolution: median over ``repeats`` warm runs."""
    rows = []
    for m in resolutions:
        grid = grid_for_resolution(int(m), model.config.decoder.grid_dim)
        for _ in range(warmup):
            model.predict(image, grid, views)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            model.predict(image, grid, views)
            times.append(time.perf_counter() - t0)
        med = float(np.median(times))
        rows.append({"points": len(grid), "median_s": med, "hz": 1.0 / med})
    return rows
