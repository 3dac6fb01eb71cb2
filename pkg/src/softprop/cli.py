"""``softprop {gen|train|eval|bench|sweep|predict}`` command-line interface.

Every flag can also come from a JSON file given with ``--config``; keys are
the flag names with dashes replaced by underscores, and flags given on the
command line win. The only environment variable read is ``SOFTPROP_THREADS``
(BLAS thread count, applied when threadpoolctl is installed).

Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from softprop import synthdata
from softprop.errors import ConfigMismatchError, DatasetError, ShapeError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

THREADS_ENV = "SOFTPROP_THREADS"
SWEEP_DEFAULTS = {"image-res": (16, 32, 64, 128, 224), "latent-dim": (32, 64, 128, 256, 512)}

log = logging.getLogger("softprop")


class UsageError(Exception):
    pass


def _ints(text: str) -> tuple:
    try:
        vals = tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}") from None
    return vals


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


# argument groups ------------------------------------------------------------------


def _add_model_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--decoder", choices=("improved", "original"), default="improved",
                   help="decoder variant")
    g.add_argument("--prototype", choices=("square", "sphere", "mesh"), default="square",
                   help="decoder parameter grid")
    g.add_argument("--grid-side", type=_positive, default=16,
                   help="square grid side used for training, M = side^2")
    g.add_argument("--prototype-points", type=_positive, default=256,
                   help="point count for sphere/mesh prototypes")
    g.add_argument("--mesh", default=None, help="OFF mesh for --prototype mesh")
    g.add_argument("--image-res", type=_positive, default=32,
                   help="encoder input resolution; images are area-resampled")
    g.add_argument("--latent-dim", type=_positive, default=512, help="latent size K")
    g.add_argument("--conv-channels", type=_ints, default=(16, 32, 64),
                   help="encoder conv stage widths")
    g.add_argument("--f-widths", type=_ints, default=None,
                   help="f layer widths after the input, ending in 3; unset means 512,512,3 "
                        "(improved) or 624,624,624,3 (original)")
    g.add_argument("--l-widths", type=_ints, default=(256,),
                   help="hidden widths of the lifting map l, improved decoder only")


def _add_train_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=_positive, default=500, help="training epochs")
    g.add_argument("--seed", type=int, default=0, help="initialization and shuffling seed")
    g.add_argument("--lr", type=float, default=1e-4, help="Adam learning rate")
    g.add_argument("--batch-size", type=_positive, default=16, help="samples per optimizer step")
    g.add_argument("--target-points", type=_positive, default=None,
                   help="random ground-truth subset per training batch; unset means every point")
    g.add_argument("--eval-every", type=int, default=0,
                   help="evaluate test Hausdorff every N epochs, 0 = never")
    g.add_argument("--eval-grid-side", type=_positive, default=None,
                   help="square grid side for evaluation; unset means the training grid")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softprop",
        description="Shape proprioception from internal camera images: data, training, evaluation.",
        epilog=f"Exit codes: {EXIT_OK} ok, {EXIT_USAGE} usage, {EXIT_IO} I/O, {EXIT_NUMERIC} numerical failure. "
               f"Set {THREADS_ENV} to limit BLAS threads.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="{gen,train,eval,bench,sweep,predict}")
    sub.required = True

    def command(name, help_):
        p = sub.add_parser(name, help=help_, description=help_,
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.add_argument("--config", default=None, help="JSON file supplying flag defaults")
        return p

    p = command("gen", "generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=2400, help="number of samples")
    p.add_argument("--views", type=int, default=2, choices=(1, 2), help="ground-truth views")
    p.add_argument("--seed", type=int, default=0, help="dataset seed")
    p.add_argument("--body", choices=("sphere", "sheet"), default="sphere", help="body shape")
    p.add_argument("--image-size", type=_positive, default=32, help="rendered image side in pixels")
    p.add_argument("--points-per-view", type=_positive, default=2048, help="ground-truth points per cloud")
    p.add_argument("--diameter-mm", type=float, default=250.0, help="nominal body diameter")

    p = command("train", "train a model on a dataset")
    p.add_argument("--data", required=True, help="dataset directory (from gen)")
    p.add_argument("--out", required=True, help="run directory for checkpoints and loss.csv")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    _add_model_args(p)
    _add_train_args(p)

    p = command("eval", "Hausdorff evaluation of a checkpoint (and optionally the KNN baseline)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--out", default=None, help="directory for report.csv, summary.json and PLYs")
    p.add_argument("--grid-side", type=_positive, default=None,
                   help="evaluation grid side; unset means the checkpoint's eval grid")
    p.add_argument("--baseline", action="store_true", help="also evaluate the PCA + KNN baseline")
    p.add_argument("--pca-k", type=_positive, default=512, help="baseline PCA dimension")
    p.add_argument("--no-ply", action="store_true", help="skip PLY export")

    p = command("bench", "end-to-end prediction throughput per output resolution")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--resolutions", type=_ints, default=(10000, 14400, 19600, 25600, 32400, 40000),
                   help="predicted point counts")
    p.add_argument("--repeats", type=_positive, default=20, help="timed runs per resolution")
    p.add_argument("--warmup", type=int, default=2, help="untimed runs per resolution")
    p.add_argument("--out", default=None, help="optional CSV output")

    p = command("sweep", "train and evaluate one model per value of a hyperparameter")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--axis", choices=tuple(SWEEP_DEFAULTS), required=True)
    p.add_argument("--values", type=_ints, default=None,
                   help="values to sweep; unset means 16,32,64,128,224 (image-res) or 32,64,128,256,512 (latent-dim)")
    _add_model_args(p)
    _add_train_args(p)

    p = command("predict", "decode one image into per-view point clouds (PLY, mm)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="PNG with the camera images tiled left to right")
    p.add_argument("--out", required=True)
    p.add_argument("--grid-side", type=_positive, default=None, help="output grid side; unset means the checkpoint's eval grid")
    return parser


def _config_path(argv: list):
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config_file(parser: argparse.ArgumentParser, argv: list) -> argparse.Namespace:
    # the file is read before parsing so that it can satisfy required flags
    path = _config_path(argv)
    subparsers = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in subparsers), None)
    if path is None or command is None:
        return parser.parse_args(argv)
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    sub = subparsers[command]
    known = {a.dest for a in sub._actions} - {"help", "config"}
    defaults = {}
    for k, v in cfg.items():
        k = k.replace("-", "_")
        if k not in known:
            raise UsageError(f"unknown config key: {k}")
        action = next(a for a in sub._actions if a.dest == k)
        # strings go through the flag's own type, so "4,8" and 16 both work
        if isinstance(v, str) and action.type is not None:
            v = action.type(v)
        defaults[k] = tuple(v) if isinstance(v, list) else v
    sub.set_defaults(**defaults)
    for action in sub._actions:
        if action.dest in defaults:
            action.required = False
    return parser.parse_args(argv)


def _set_threads() -> None:
    value = os.environ.get(THREADS_ENV)
    if not value:
        return
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {value!r}") from None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        log.warning("%s set but threadpoolctl is not installed; ignoring", THREADS_ENV)
        return
    threadpool_limits(n)


# helpers -------------------------------------------------------------------------


def _grid_spec(args, dim: int) -> dict:
    if args.prototype == "square":
        return {"kind": "square", "size": args.grid_side, "dim": dim}
    if args.prototype == "sphere":
        return {"kind": "sphere", "size": args.prototype_points, "seed": args.seed}
    if not args.mesh:
        raise UsageError("--prototype mesh needs --mesh FILE.off")
    return {"kind": "mesh_samples", "size": args.prototype_points, "seed": args.seed,
            "mesh": str(Path(args.mesh).resolve())}


def _model_config(args, views: int, channels: int):
    from softprop.model import DecoderConfig, EncoderConfig, ModelConfig

    # square grids feed the original decoder as 2-D points and the improved one as z = 0 planes
    grid_dim = 2 if args.prototype == "square" and args.decoder == "original" else 3
    enc = EncoderConfig(image_size=args.image_res, channels=channels, conv_channels=args.conv_channels,
                        latent_dim=args.latent_dim)
    if args.decoder == "improved":
        dec = DecoderConfig(grid_dim=grid_dim, f_widths=args.f_widths or (512, 512, 3), l_widths=args.l_widths)
    else:
        dec = DecoderConfig.original(grid_dim=grid_dim, f_widths=args.f_widths or (624, 624, 624, 3))
    return ModelConfig(encoder=enc, decoder=dec, views=views, seed=args.seed)


def _load_dataset(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    return synthdata.load_dataset(path)


def _train_one(args, ds, out_dir: Path, resume=None):
    from softprop.model import ProprioModel
    from softprop.prototype import grid_from_spec
    from softprop.training import TrainConfig, fit

    cfg = _model_config(args, ds.scene.views, ds.images.shape[-1])
    spec = _grid_spec(args, cfg.decoder.grid_dim)
    grid = grid_from_spec(spec)
    eval_spec = dict(spec)
    if args.eval_grid_side:
        eval_spec = {"kind": "square", "size": args.eval_grid_side, "dim": cfg.decoder.grid_dim}
    tcfg = TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
                       eval_every=args.eval_every, target_points=args.target_points)
    run = {"grid": spec, "eval_grid": eval_spec, "transform": ds.transform.to_dict(),
           "diameter_mm": ds.scene.diameter_mm, "dataset_seed": ds.seed}
    print(json.dumps({"model": cfg.to_dict(), "train": tcfg.to_dict(), "run": run}, sort_keys=True))
    model = ProprioModel(cfg)
    eval_grid = grid_from_spec(eval_spec) if eval_spec != spec else grid
    result = fit(model, ds, tcfg, grid, out_dir=out_dir, eval_grid=eval_grid, resume=resume, run_info=run)
    return model, result, run


def _load_checkpoint(path):
    from softprop.training import load_model

    if not Path(path).exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    model, meta = load_model(path)
    run = meta["extra"].get("run") or {}
    if "grid" not in run:
        raise ConfigMismatchError(f"{path} carries no run description (grid, transform)")
    return model, run


def _eval_grid(model, run: dict, side=None):
    from softprop.prototype import grid_from_spec, square_grid

    if side:
        return square_grid(side, model.config.decoder.grid_dim)
    return grid_from_spec(run.get("eval_grid") or run["grid"])


def _split(ds, name: str) -> np.ndarray:
    idx = {"test": ds.test_idx, "train": ds.train_idx, "all": np.arange(len(ds))}[name]
    if len(idx) == 0:
        raise DatasetError(f"the {name} split is empty")
    return idx


def _print_rows(rows: list, columns: list) -> None:
    print("  ".join(f"{c:>14}" for c in columns))
    for r in rows:
        print("  ".join(f"{r[c]:>14.4f}" if isinstance(r[c], float) else f"{r[c]:>14}" for c in columns))


def _write_csv(path, rows: list, columns: list) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


# commands ------------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    scene = synthdata.SceneConfig(body=args.body, views=args.views, image_size=args.image_size,
                                  points_per_view=args.points_per_view, diameter_mm=args.diameter_mm)
    ds = synthdata.sample_dataset(args.n, scene, seed=args.seed)
    manifest = synthdata.save_dataset(ds, args.out)
    print(manifest)
    print(f"checksum {synthdata.dataset_checksum(args.out)}")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = _load_dataset(args.data)
    if args.resume and not Path(args.resume).exists():
        raise FileNotFoundError(f"checkpoint not found: {args.resume}")
    _, result, _ = _train_one(args, ds, Path(args.out), resume=args.resume)
    last = result.history[-1]
    print(f"epoch {last['epoch']} train_loss {last['train_loss']:.6g}")
    print(Path(args.out) / "loss.csv")
    return EXIT_OK


def cmd_eval(args) -> int:
    from softprop.baseline import build_baseline
    from softprop.evaluation import MM_PER_M, evaluate_baseline, evaluate_model

    model, run = _load_checkpoint(args.checkpoint)
    ds = _load_dataset(args.data)
    if ds.images.shape[-1] != model.config.encoder.channels or ds.scene.views != model.views:
        raise ConfigMismatchError(
            f"checkpoint expects {model.views} view(s) / {model.config.encoder.channels} channels, "
            f"dataset has {ds.scene.views} / {ds.images.shape[-1]}"
        )
    idx = _split(ds, args.split)
    grid = _eval_grid(model, run, args.grid_side)
    rep, preds = evaluate_model(model, ds, idx, grid, return_predictions=True)
    summary = {"neural": rep.summary()}
    if args.baseline:
        kb = build_baseline(ds, k=min(args.pca_k, len(ds.train_idx)))
        brep = evaluate_baseline(kb, ds, idx)
        summary["knn_pca"] = brep.summary()
    for name, s in summary.items():
        print(f"{name:8s} mean {s['mean']:.3f} median {s['median']:.3f} max {s['max']:.3f} {s['units']}")
    if args.out:
        out = Path(args.out)
        rep.write_csv(out / "report.csv")
        if args.baseline:
            brep.write_csv(out / "report_knn.csv")
        (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
        if not args.no_ply:
            rep.write_plys(out / "ply", [p * MM_PER_M for p in preds])
        print(out / "summary.json")
    return EXIT_OK


def _bench_image(model) -> np.ndarray:
    from softprop.training import prepare_images

    scene = synthdata.SceneConfig(views=model.views)
    img = synthdata.render_internal(synthdata.DeformationParams.identity(), scene)
    return prepare_images(img[None], model.config.encoder.image_size)


def cmd_bench(args) -> int:
    from softprop.evaluation import benchmark

    if any(m < 4 for m in args.resolutions):
        raise UsageError("resolutions must be >= 4 points")
    if not args.resolutions:
        raise UsageError("empty resolution list")
    model, _ = _load_checkpoint(args.checkpoint)
    rows = benchmark(model, _bench_image(model), args.resolutions, repeats=args.repeats, warmup=args.warmup)
    _print_rows(rows, ["points", "median_s", "hz"])
    if args.out:
        _write_csv(args.out, rows, ["points", "median_s", "hz"])
    return EXIT_OK


def cmd_sweep(args) -> int:
    from softprop.evaluation import evaluate_model

    values = args.values if args.values is not None else SWEEP_DEFAULTS[args.axis]
    if not values:
        raise UsageError("empty value list")
    ds = _load_dataset(args.data)
    rows = []
    for v in values:
        vargs = argparse.Namespace(**vars(args))
        if args.axis == "image-res":
            vargs.image_res = v
        else:
            vargs.latent_dim = v
        model, _, run = _train_one(vargs, ds, Path(args.out) / f"{args.axis}-{v}")
        rep = evaluate_model(model, ds, _split(ds, "test"), _eval_grid(model, run))
        rows.append({"value": v, "mean_mm": rep.mean, "median_mm": rep.median, "max_mm": rep.max})
    cols = ["value", "mean_mm", "median_mm", "max_mm"]
    _print_rows(rows, cols)
    _write_csv(Path(args.out) / "sweep.csv", rows, cols)
    return EXIT_OK


def _read_tiled_png(path, views: int) -> np.ndarray:
    from PIL import Image

    if not Path(path).exists():
        raise FileNotFoundError(f"image not found: {path}")
    tiled = np.asarray(Image.open(path).convert("RGB"))
    if tiled.shape[1] % views:
        raise ShapeError(f"image width {tiled.shape[1]} does not split into {views} tiles")
    return np.concatenate(np.split(tiled, views, axis=1), axis=2)


def cmd_predict(args) -> int:
    from softprop import ply
    from softprop.evaluation import MM_PER_M
    from softprop.geometry import NormalizationTransform
    from softprop.training import prepare_images

    model, run = _load_checkpoint(args.checkpoint)
    img = _read_tiled_png(args.image, model.views)
    if img.shape[-1] != model.config.encoder.channels:
        raise ShapeError(f"image has {img.shape[-1]} channels, model expects {model.config.encoder.channels}")
    x = prepare_images(img[None], model.config.encoder.image_size)
    transform = NormalizationTransform.from_dict(run["transform"])
    clouds = model.predict(x, _eval_grid(model, run, args.grid_side))
    out = Path(args.out)
    for v, c in enumerate(clouds, start=1):
        path = ply.write_ply(out / f"view{v}.ply", transform.denormalize(c.astype(np.float64)) * MM_PER_M)
        print(path)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "sweep": cmd_sweep,
            "predict": cmd_predict}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config_file(parser, argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except UsageError as exc:
        print(f"softprop: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"softprop: error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        _set_threads()
        return COMMANDS[args.command](args)
    except FloatingPointError as exc:  # includes NonFiniteError
        print(f"softprop: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"softprop: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DatasetError as exc:
        code = EXIT_IO if isinstance(exc.__cause__, (OSError, ValueError)) else EXIT_USAGE
        print(f"softprop: dataset error: {exc}", file=sys.stderr)
        return code
    except (UsageError, ConfigMismatchError, ShapeError, ValueError) as exc:
        print(f"softprop: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
