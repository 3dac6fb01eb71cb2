"""Multi-view Chamfer loss, training step and the fitting loop.

The loss over a batch is ``sum_i (1 / C_i) sum_j chamfer(gt_ij, pred_ij)``
over the views ``i`` present in the batch, ``C_i`` being the number of
samples of view ``i``. Decoders of absent views never enter the graph, get no
gradient, and are skipped by the optimizer.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from softprop import geometry
from softprop.errors import DatasetError, NonFiniteError
from softprop.imaging import resize_area
from softprop.model import ProprioModel
from softprop.numcore import Adam, Tensor, load_into, ops, read_checkpoint, save_checkpoint
from softprop.prototype import PrototypeGrid

log = logging.getLogger(__name__)

CSV_COLUMNS = ("epoch", "train_loss", "test_mean_dH", "test_median_dH", "test_max_dH")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 500
    seed: int = 0
    split_ratio: tuple = (5, 1)
    eval_every: int = 0
    patience: Optional[int] = None
    reduction: str = "view_then_sample"
    target_points: Optional[int] = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.target_points is not None and self.target_points < 1:
            raise ValueError("target_points must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_ratio"] = list(self.split_ratio)
        return d


@dataclass
class ViewBatch:
    """Images ``(B, H, W, C)`` in [0, 1], 1-based view ids, normalized target clouds ``(B, N, 3)``."""

    images: np.ndarray
    views: np.ndarray
    targets: np.ndarray

    def counts(self, n_views: int) -> np.ndarray:
        """``C_i`` for views ``1..n_views``."""
        return np.bincount(self.views, minlength=n_views + 1)[1:]

    def __len__(self) -> int:
        return len(self.views)


def chamfer_batch(pred: Tensor, targets: np.ndarray) -> Tensor:
    """Per-sample Chamfer distance between ``pred`` (B, M, 3) and fixed ``targets`` (B, N, 3).

    Nearest-neighbour pairings are treated as constant in the backward pass.
    """
    p = pred.data.astype(np.float64)
    g = np.asarray(targets, dtype=np.float64)
    if p.ndim != 3 or g.ndim != 3 or len(p) != len(g):
        raise ValueError(f"chamfer_batch needs (B, M, 3) and (B, N, 3), got {p.shape} and {g.shape}")
    j_pg, j_gp = geometry.batch_pairs(p, g)
    diff_pg = p - np.take_along_axis(g, j_pg[:, :, None], axis=1)
    diff_gp = np.take_along_axis(p, j_gp[:, :, None], axis=1) - g
    n_pg = np.sqrt(np.einsum("bmi,bmi->bm", diff_pg, diff_pg))
    n_gp = np.sqrt(np.einsum("bni,bni->bn", diff_gp, diff_gp))
    values = 0.5 * n_pg.mean(axis=1) + 0.5 * n_gp.mean(axis=1)

    def backward(grad):
        w = np.asarray(grad, dtype=np.float64)[:, None, None]
        u_pg = np.divide(diff_pg, n_pg[:, :, None], out=np.zeros_like(diff_pg), where=n_pg[:, :, None] > 0)
        u_gp = np.divide(diff_gp, n_gp[:, :, None], out=np.zeros_like(diff_gp), where=n_gp[:, :, None] > 0)
        out = u_pg / (2.0 * p.shape[1])
        rows = np.repeat(np.arange(len(p)), g.shape[1])
        np.add.at(out, (rows, j_gp.reshape(-1)), u_gp.reshape(-1, 3) / (2.0 * g.shape[1]))
        return ((w * out).astype(pred.dtype),)

    return Tensor.from_op(values.astype(pred.dtype), (pred,), backward)


def multiview_loss(model: ProprioModel, batch: ViewBatch, grid, return_terms: bool = False):
    """Multi-view loss of one batch; optionally also the per-sample Chamfer values."""
    views = np.asarray(batch.views)
    bad = set(np.unique(views)) - set(range(1, model.views + 1))
    if bad:
        raise ValueError(f"batch references unknown view(s) {sorted(bad)}; model has {model.views}")
    codes = model.encode(batch.images)
    total = None
    per_sample = np.zeros(len(views))
    for v in range(1, model.views + 1):
        idx = np.nonzero(views == v)[0]
        if idx.size == 0:
            continue
        pred = model.decode(grid, ops.take_rows(codes, idx), v)
        d = chamfer_batch(pred, batch.targets[idx])
        per_sample[idx] = d.data
        term = ops.scale(ops.sum(d), 1.0 / idx.size)
        total = term if total is None else ops.add(total, term)
    return (total, per_sample) if return_terms else total


def train_step(model: ProprioModel, batch: ViewBatch, optimizer: Adam, grid) -> float:
    """One Adam step on ``multiview_loss``; returns the loss before the update."""
    optimizer.zero_grad()
    loss = multiview_loss(model, batch, grid)
    value = loss.item()
    if not np.isfinite(value):
        raise NonFiniteError(
            f"non-finite loss {value} at optimizer step {optimizer.state.step_count + 1}; "
            f"batch views {np.bincount(batch.views).tolist()}"
        )
    loss.backward()
    optimizer.step()
    return value


# data plumbing ----------------------------------------------------------------


def prepare_images(images_u8: np.ndarray, size: int) -> np.ndarray:
    """uint8 (n, H, W, C) -> float32 in [0, 1] at the encoder resolution."""
    imgs = images_u8.astype(np.float32) / np.float32(255.0)
    if imgs.shape[1] != size or imgs.shape[2] != size:
        imgs = resize_area(imgs, size).astype(np.float32)
    return imgs


@dataclass
class TrainingData:
    """Model-ready arrays for one dataset split."""

    images: np.ndarray
    views: np.ndarray
    targets: np.ndarray
    index: np.ndarray

    def batch(self, rows) -> ViewBatch:
        return ViewBatch(self.images[rows], self.views[rows], self.targets[rows])

    def __len__(self) -> int:
        return len(self.views)


def training_data(dataset, indices, image_size: int) -> TrainingData:
    indices = np.asarray(indices)
    if indices.size == 0:
        raise DatasetError("empty split")
    return TrainingData(images=prepare_images(dataset.images[indices], image_size),
                        views=np.asarray(dataset.views[indices]),
                        targets=dataset.normalized_clouds(indices), index=indices)


def subsample_targets(batch: ViewBatch, count: int, seed) -> ViewBatch:
    """Keep a seeded random subset of ``count`` ground-truth points (shared by the whole batch)."""
    keep = np.sort(np.random.default_rng(seed).choice(batch.targets.shape[1], size=count, replace=False))
    return ViewBatch(batch.images, batch.views, batch.targets[:, keep])


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Seeded shuffle for ``epoch`` (independent of earlier epochs, so resumes line up)."""
    return np.random.default_rng([seed, 31337, epoch]).permutation(n)


# fitting ------------------------------------------------------------------------


@dataclass
class FitResult:
    history: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def fit(model: ProprioModel, dataset, config: TrainConfig, grid: PrototypeGrid, out_dir=None,
        eval_grid: Optional[PrototypeGrid] = None, resume: Optional[str] = None,
        optimizer: Optional[Adam] = None, stop_after: Optional[int] = None,
        run_info: Optional[dict] = None) -> FitResult:
    """Train on ``dataset.train_idx`` for ``config.epochs`` epochs.

    ``history`` rows hold ``epoch, train_loss`` and, every ``eval_every``
    epochs, test-split Hausdorff statistics in millimetres. When ``out_dir``
    is given, ``final.npz``, ``best.npz`` (lowest training loss) and
    ``loss.csv`` are written there. ``stop_after`` ends the run early after
    that many epochs (the checkpoint can be resumed). ``run_info`` is stored
    verbatim in the checkpoint metadata.
    """
    from softprop.evaluation import evaluate_model

    train = training_data(dataset, dataset.train_idx, model.config.encoder.image_size)
    missing = set(range(1, model.views + 1)) - set(np.unique(train.views))
    if missing:
        raise DatasetError(f"training split has no samples for view(s) {sorted(missing)}")
    test = None
    if config.eval_every:
        test = training_data(dataset, dataset.test_idx, model.config.encoder.image_size)
    opt = optimizer or Adam(model.parameters(), lr=config.lr)
    result = FitResult()
    start = 1
    best = np.inf
    if resume is not None:
        meta, state = load_into(resume, model.named_parameters(), model.config.to_dict())
        opt.state = state
        result.history = [dict(r) for r in meta["extra"]["history"]]
        start = meta["extra"]["epoch"] + 1
        best = meta["extra"].get("best_loss", np.inf)
        result.best_epoch = meta["extra"].get("best_epoch", 0)
    out = Path(out_dir) if out_dir is not None else None
    bad_epochs = 0
    last = start - 1
    for epoch in range(start, config.epochs + 1):
        order = epoch_order(len(train), config.seed, epoch)
        losses = []
        for step, s in enumerate(range(0, len(order), config.batch_size)):
            batch = train.batch(order[s : s + config.batch_size])
            if config.target_points is not None and config.target_points < batch.targets.shape[1]:
                batch = subsample_targets(batch, config.target_points, [config.seed, epoch, step])
            losses.append(train_step(model, batch, opt, grid))
        row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if test is not None and epoch % config.eval_every == 0:
            rep = evaluate_model(model, dataset, dataset.test_idx, eval_grid or grid, data=test)
            row.update(test_mean_dH=rep.mean, test_median_dH=rep.median, test_max_dH=rep.max)
        result.history.append(row)
        log.info("epoch %d loss %.6f", epoch, row["train_loss"])
        last = epoch
        if row["train_loss"] < best:
            best, result.best_epoch, bad_epochs = row["train_loss"], epoch, 0
            if out is not None:
                _save(out / "best.npz", model, opt, config, result, epoch, best, run_info)
        else:
            bad_epochs += 1
        if config.patience is not None and bad_epochs >= config.patience:
            result.stopped_early = True
            break
        if stop_after is not None and epoch - start + 1 >= stop_after:
            break
    if out is not None:
        _save(out / "final.npz", model, opt, config, result, last, best, run_info)
        write_history_csv(out / "loss.csv", result.history)
    return result


def _save(path, model, opt, config, result, epoch, best, run_info=None):
    extra = {"epoch": epoch, "history": result.history, "train_config": config.to_dict(),
             "best_loss": float(best), "best_epoch": result.best_epoch, "run": run_info or {}}
    save_checkpoint(path, model.named_parameters(), model.config.to_dict(), opt.state, extra)


def write_history_csv(path, history: list) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in history:
            w.writerow([row["epoch"], repr(float(row["train_loss"]))]
                       + [repr(float(row[k])) if k in row else "" for k in CSV_COLUMNS[2:]])
    return path


def load_model(path):
    """Rebuild a :class:`ProprioModel` from a checkpoint; returns ``(model, meta)``."""
    from softprop.model import ModelConfig

    meta, _, _ = read_checkpoint(path)
    model = ProprioModel(ModelConfig.from_dict(meta["config"]))
    load_into(path, model.named_parameters(), model.config.to_dict())
    return model, meta
