"""Command-line interface: synth, train, eval, predict, matrix.

Training follows one recipe for both network presets: per-sample
augmentation, per-band standardization with the training-split
statistics from the dataset manifest, Adamax with a cosine learning-rate
schedule, gradient averaging over mini-batches, and best-checkpoint
selection by validation loss. The forest baseline trains on pooled raw
pixels and only pairs with the MAE loss.

Output verbosity comes from the ``SOCFNO_VERBOSITY`` environment
variable: 0 silent, 1 progress summaries (default), 2 per-epoch lines.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .data import (
    AugmentConfig,
    DatasetFormatError,
    SampleNotFoundError,
    augment,
    load_dataset,
    save_dataset,
    standardize,
    synth_generate,
    write_pgm,
)
from .forest import (
    FOREST_FORMAT,
    ForestConfig,
    fit_forest,
    load_forest,
    predict_forest,
    rasters_to_pixels,
    save_forest,
    subsample_pixels,
)
from .losses import LossConfig, SsimConfig, composite_loss, evaluate
from .models import (
    CHECKPOINT_FORMAT,
    ModelConfig,
    build_model,
    count_params,
    load_checkpoint,
    save_checkpoint,
)
from .optim import Adamax, CosineSchedule, cosine_lr
from .tensor import NumericalError, Tensor

MODEL_NAMES = ("fno-densenet", "fno", "forest")
LOSS_NAMES = ("mae", "dssim", "mae+dssim")

DEFAULTS = {
    "model": "fno-densenet",
    "loss": "mae+dssim",
    "epochs": 400,
    "batch_size": 32,
    "repeats": 1,
    "seed": 0,
    "lr_max": 1e-2,
    "lr_min": 1e-4,
    "modes": 8,
    "hidden": None,
    "layers": 4,
    "norm": "instance",
    "activation": "relu",
    "augment": True,
    "mae_weight": 0.01,
    "trees": 10,
    "depth": 10,
    "min_leaf": 5,
    "forest_criterion": "variance",
}


def _verbosity():
    try:
        return int(os.environ.get("SOCFNO_VERBOSITY", "1"))
    except ValueError:
        return 1


def _log(level, message):
    if _verbosity() >= level:
        print(message)


def resolve_config(args):
    """Merge defaults, an optional JSON config file, and CLI overrides."""
    cfg = dict(DEFAULTS)
    path = getattr(args, "config", None)
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg["model"] not in MODEL_NAMES:
        raise ValueError(f"unknown model '{cfg['model']}'")
    if cfg["loss"] not in LOSS_NAMES:
        raise ValueError(f"unknown loss '{cfg['loss']}'")
    if cfg["model"] == "forest" and cfg["loss"] != "mae":
        raise ValueError("the forest baseline only supports the mae loss")
    if cfg["epochs"] < 1 or cfg["batch_size"] < 1 or cfg["repeats"] < 1:
        raise ValueError("epochs, batch_size, and repeats must be positive")
    return cfg


def loss_config_for(name, mae_weight=0.01):
    """Map a loss name to term flags; plain MAE is unweighted."""
    if name == "mae":
        return LossConfig(weight=1.0, use_mae=True, use_dssim=False)
    if name == "dssim":
        return LossConfig(weight=1.0, use_mae=False, use_dssim=True)
    return LossConfig(weight=mae_weight, use_mae=True, use_dssim=True)


def model_config_for(cfg):
    hidden = cfg["hidden"]
    if hidden is None:
        hidden = 32 if cfg["model"] == "fno" else 24
    kwargs = dict(
        hidden_channels=hidden,
        n_layers=cfg["layers"],
        n_modes=cfg["modes"],
        norm=cfg["norm"],
        activation=cfg["activation"],
    )
    if cfg["model"] == "fno":
        return ModelConfig.fno(**kwargs)
    return ModelConfig.fno_densenet(**kwargs)


def _split_indices(manifest, name):
    return [i for i, label in enumerate(manifest.split) if label == name]


def _sample_tensors(sample, manifest):
    x = Tensor(standardize(sample.bands, manifest.band_mean, manifest.band_std))
    y = Tensor(sample.target.astype(np.float64))
    return x, y


def _validation_loss(model, samples, indices, manifest, loss_cfg, ssim_cfg):
    total = 0.0
    for i in indices:
        x, y = _sample_tensors(samples[i], manifest)
        total += composite_loss(model(x), y, loss_cfg, ssim_cfg).item()
    return total / len(indices)


def train_network(samples, manifest, cfg, seed):
    """Train one network; returns ``(model, report, checkpoint_extra)``."""
    train_idx = _split_indices(manifest, "train")
    val_idx = _split_indices(manifest, "val")
    if not train_idx or not val_idx:
        raise ValueError("dataset split has an empty train or val subset")
    model = build_model(model_config_for(cfg), seed=seed)
    optimizer = Adamax(model.params())
    schedule = CosineSchedule(cfg["lr_max"], cfg["lr_min"], cfg["epochs"])
    loss_cfg = loss_config_for(cfg["loss"], cfg["mae_weight"])
    ssim_cfg = SsimConfig(dynamic_range=manifest.target_max)
    aug_cfg = AugmentConfig() if cfg["augment"] else None
    started = time.perf_counter()
    best_val = np.inf
    best_epoch = -1
    best_state = None
    epoch_log = []
    for epoch in range(cfg["epochs"]):
        lr = cosine_lr(epoch, schedule)
        order = np.random.default_rng((seed, 7919, epoch)).permutation(
            len(train_idx)
        )
        losses, maes = [], []
        for start in range(0, len(order), cfg["batch_size"]):
            chunk = order[start : start + cfg["batch_size"]]
            optimizer.zero_grad()
            scale = 1.0 / len(chunk)
            for pos in chunk:
                sample = samples[train_idx[pos]]
                if aug_cfg is not None:
                    rng = np.random.default_rng((seed, 104729, epoch, int(pos)))
                    sample = augment(sample, aug_cfg, rng)
                x, y = _sample_tensors(sample, manifest)
                pred = model(x)
                loss = composite_loss(pred, y, loss_cfg, ssim_cfg)
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericalError(
                        f"training diverged: non-finite loss at epoch {epoch}"
                    )
                (loss * scale).backward()
                losses.append(value)
                maes.append(float(np.mean(np.abs(pred.data - y.data))))
            optimizer.step(lr)
        val_loss = _validation_loss(
            model, samples, val_idx, manifest, loss_cfg, ssim_cfg
        )
        epoch_log.append(
            {
                "epoch": epoch,
                "lr": float(lr),
                "train_loss": float(np.mean(losses)),
                "train_mae": float(np.mean(maes)),
                "val_loss": float(val_loss),
            }
        )
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = {
                name: p.data.copy() for name, p in model.params().items()
            }
        stride = max(1, cfg["epochs"] // 10)
        if epoch % stride == 0 or epoch == cfg["epochs"] - 1:
            _log(
                2 if stride == 1 else 1,
                f"[seed {seed}] epoch {epoch:4d} lr {lr:.5f} "
                f"train {epoch_log[-1]['train_loss']:.5f} val {val_loss:.5f}",
            )
    for name, p in model.params().items():
        locked = best_state[name]
        locked.flags.writeable = False
        p.data = locked
    report = {
        "kind": "network",
        "model": cfg["model"],
        "loss": cfg["loss"],
        "seed": seed,
        "epochs": cfg["epochs"],
        "batch_size": cfg["batch_size"],
        "param_count": count_params(model),
        "best_epoch": best_epoch,
        "best_val_loss": float(best_val),
        "wall_time_s": time.perf_counter() - started,
        "epoch_log": epoch_log,
    }
    extra = {
        "kind": "network",
        "loss": cfg["loss"],
        "seed": seed,
        "best_epoch": best_epoch,
        "dynamic_range": manifest.target_max,
        "band_mean": list(manifest.band_mean),
        "band_std": list(manifest.band_std),
    }
    return model, report, extra


def train_forest(samples, manifest, cfg, seed):
    """Fit the pixel forest on the training split."""
    train_idx = _split_indices(manifest, "train")
    if not train_idx:
        raise ValueError("dataset split has an empty train subset")
    started = time.perf_counter()
    X, y = rasters_to_pixels([samples[i] for i in train_idx])
    X, y = subsample_pixels(X, y, seed=seed)
    fcfg = ForestConfig(
        n_trees=cfg["trees"],
        max_depth=cfg["depth"],
        min_samples_leaf=cfg["min_leaf"],
        criterion=cfg["forest_criterion"],
        seed=seed,
    )
    forest = fit_forest(X, y, fcfg)
    report = {
        "kind": "forest",
        "model": "forest",
        "loss": cfg["loss"],
        "seed": seed,
        "n_pixels": int(len(y)),
        "wall_time_s": time.perf_counter() - started,
    }
    extra = {
        "kind": "forest",
        "seed": seed,
        "dynamic_range": manifest.target_max,
        "band_mean": list(manifest.band_mean),
        "band_std": list(manifest.band_std),
    }
    return forest, report, extra


def load_any_checkpoint(path):
    """Dispatch on the manifest line; returns ``(kind, predictor, extra)``."""
    with open(path, "rb") as fh:
        first = fh.readline()
    header = json.loads(first.decode("utf-8"))
    kind = header.get("format")
    if kind == CHECKPOINT_FORMAT:
        model, extra = load_checkpoint(path)
        return "network", model, extra
    if kind == FOREST_FORMAT:
        forest, extra = load_forest(path)
        return "forest", forest, extra
    raise ValueError(f"{path}: unrecognized checkpoint format '{kind}'")


def predict_raster(kind, predictor, sample, extra):
    """Predicted ``[1, H, W]`` float array for one sample."""
    if kind == "forest":
        return predict_forest(predictor, sample.bands)
    x = Tensor(standardize(sample.bands, extra["band_mean"], extra["band_std"]))
    return predictor(x).data


def split_predictions(kind, predictor, extra, samples, manifest, split):
    indices = (
        range(len(samples)) if split == "all" else _split_indices(manifest, split)
    )
    preds, targets = [], []
    for i in indices:
        preds.append(predict_raster(kind, predictor, samples[i], extra))
        targets.append(samples[i].target.astype(np.float64))
    if not preds:
        raise ValueError(f"split '{split}' is empty")
    return preds, targets


def _naive_rmse_mape(preds, targets, floor=1e-6):
    """Loop-based RMSE/MAPE recomputation used by eval's self-oracle mode."""
    rmses, mapes = [], []
    for p, t in zip(preds, targets):
        pf = np.asarray(p, dtype=np.float64).ravel()
        tf = np.asarray(t, dtype=np.float64).ravel()
        se = 0.0
        ape = 0.0
        for a, b in zip(pf.tolist(), tf.tolist()):
            se += (a - b) * (a - b)
            ape += abs(a - b) / max(abs(b), floor)
        rmses.append((se / len(pf)) ** 0.5)
        mapes.append(100.0 * ape / len(pf))
    return rmses, mapes


# -- subcommands -----------------------------------------------------------


def cmd_synth(args):
    if args.n < 10:
        raise ValueError("need --n of at least 10 so the dataset can be split")
    samples = synth_generate(
        args.seed, args.n, args.size, args.size,
        target_noise=args.target_noise,
    )
    manifest = save_dataset(
        args.out,
        samples,
        split_seed=args.seed,
        generator={
            "kind": "synthetic",
            "seed": args.seed,
            "target_noise": args.target_noise,
        },
    )
    counts = {name: manifest.split.count(name) for name in ("train", "val", "test")}
    _log(1, f"wrote {args.out}: {args.n} samples {args.size}x{args.size}, "
            f"split {counts['train']}/{counts['val']}/{counts['test']}")
    return 0


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)


def cmd_train(args):
    cfg = resolve_config(args)
    manifest, samples = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "config_used.json"), cfg)
    _log(1, f"effective config: {json.dumps(cfg, sort_keys=True)}")
    summary = []
    for k in range(cfg["repeats"]):
        seed = cfg["seed"] + k
        if cfg["model"] == "forest":
            forest, report, extra = train_forest(samples, manifest, cfg, seed)
            ckpt = os.path.join(args.out, f"forest_seed{seed}.json")
            save_forest(forest, ckpt, extra=extra)
        else:
            model, report, extra = train_network(samples, manifest, cfg, seed)
            ckpt = os.path.join(args.out, f"model_seed{seed}.ckpt")
            save_checkpoint(model, ckpt, extra=extra)
        report["checkpoint"] = ckpt
        _write_json(
            os.path.join(args.out, f"train_report_seed{seed}.json"), report
        )
        summary.append(
            {
                "seed": seed,
                "checkpoint": ckpt,
                "best_val_loss": report.get("best_val_loss"),
                "wall_time_s": report["wall_time_s"],
            }
        )
        _log(1, f"[seed {seed}] done in {report['wall_time_s']:.1f}s "
                f"-> {ckpt}")
    _write_json(os.path.join(args.out, "train_summary.json"), summary)
    return 0


def cmd_eval(args):
    manifest, samples = load_dataset(args.data)
    per_checkpoint = []
    for path in args.checkpoint:
        kind, predictor, extra = load_any_checkpoint(path)
        preds, targets = split_predictions(
            kind, predictor, extra, samples, manifest, args.split
        )
        ssim_cfg = SsimConfig(
            dynamic_range=float(extra.get("dynamic_range", manifest.target_max))
        )
        report = evaluate(preds, targets, ssim_cfg)
        entry = {"checkpoint": path, "kind": kind, "report": report.to_dict()}
        if args.self_oracle:
            rmses, mapes = _naive_rmse_mape(preds, targets)
            diff = max(
                max(abs(a - b) for a, b in zip(rmses, report.rmse.per_image)),
                max(abs(a - b) for a, b in zip(mapes, report.mape.per_image)),
            )
            entry["self_oracle"] = {"max_abs_diff": diff, "tolerance": 1e-8}
            if diff > 1e-8:
                raise NumericalError(
                    f"self-oracle mismatch: {diff} exceeds 1e-8"
                )
        per_checkpoint.append(entry)
        _log(1, f"{path} [{args.split}] rmse {report.rmse.mean:.4f} "
                f"mape {report.mape.mean:.2f}% ssim {report.ssim.mean:.4f}")
    aggregate = {}
    for metric in ("rmse", "mape", "ssim"):
        means = [e["report"][metric]["mean"] for e in per_checkpoint]
        stds = [e["report"][metric]["std"] for e in per_checkpoint]
        aggregate[metric] = {
            "mean": float(np.mean(means)),
            "std": float(np.mean(stds)),
        }
    payload = {
        "data": args.data,
        "split": args.split,
        "n_checkpoints": len(per_checkpoint),
        "per_checkpoint": per_checkpoint,
        "aggregate": aggregate,
    }
    if args.out:
        _write_json(args.out, payload)
    return 0


def cmd_predict(args):
    manifest, samples = load_dataset(args.data)
    by_id = {s.sample_id: s for s in samples}
    if args.id not in by_id:
        raise SampleNotFoundError(
            f"sample id '{args.id}' not in {args.data}"
        )
    sample = by_id[args.id]
    kind, predictor, extra = load_any_checkpoint(args.checkpoint)
    # Quantize first so the sidecar scale is exact for the exported files.
    pred = predict_raster(kind, predictor, sample, extra)[0].astype("<f4")
    true = sample.target[0].astype("<f4")
    vmin = float(min(pred.min(), true.min()))
    vmax = float(max(pred.max(), true.max()))
    if vmax <= vmin:
        vmax = vmin + 1.0
    os.makedirs(args.out, exist_ok=True)
    paths = {
        "pred_pgm": os.path.join(args.out, f"{args.id}_pred.pgm"),
        "target_pgm": os.path.join(args.out, f"{args.id}_target.pgm"),
        "pred_f32": os.path.join(args.out, f"{args.id}_pred.f32"),
        "target_f32": os.path.join(args.out, f"{args.id}_target.f32"),
    }
    write_pgm(paths["pred_pgm"], pred, vmin, vmax)
    write_pgm(paths["target_pgm"], true, vmin, vmax)
    pred.astype("<f4").tofile(paths["pred_f32"])
    true.astype("<f4").tofile(paths["target_f32"])
    sidecar = {
        "sample_id": args.id,
        "unit": "g/kg",
        "min": vmin,
        "max": vmax,
        "maxval": 255,
        "height": int(true.shape[0]),
        "width": int(true.shape[1]),
        "files": {k: os.path.basename(v) for k, v in paths.items()},
    }
    _write_json(os.path.join(args.out, f"{args.id}_maps.json"), sidecar)
    _log(1, f"wrote prediction maps for '{args.id}' to {args.out}")
    return 0


def cmd_matrix(args):
    cfg = resolve_config(args)
    manifest, samples = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    cells = {}
    for model_name in MODEL_NAMES:
        cells[model_name] = {}
        for loss_name in LOSS_NAMES:
            if model_name == "forest" and loss_name != "mae":
                cells[model_name][loss_name] = None
                continue
            run_cfg = dict(cfg, model=model_name, loss=loss_name)
            reports = []
            for k in range(cfg["repeats"]):
                seed = cfg["seed"] + k
                if model_name == "forest":
                    predictor, _, extra = train_forest(
                        samples, manifest, run_cfg, seed
                    )
                    kind = "forest"
                else:
                    predictor, _, extra = train_network(
                        samples, manifest, run_cfg, seed
                    )
                    kind = "network"
                preds, targets = split_predictions(
                    kind, predictor, extra, samples, manifest, "test"
                )
                ssim_cfg = SsimConfig(dynamic_range=manifest.target_max)
                reports.append(evaluate(preds, targets, ssim_cfg))
            cell = {"repeats": cfg["repeats"]}
            for metric in ("rmse", "mape", "ssim"):
                means = [getattr(r, metric).mean for r in reports]
                stds = [getattr(r, metric).std for r in reports]
                cell[metric] = {
                    "mean": float(np.mean(means)),
                    "std": float(np.mean(stds)),
                }
            cells[model_name][loss_name] = cell
            _log(1, f"matrix cell {model_name}/{loss_name}: "
                    f"mape {cell['mape']['mean']:.2f}% "
                    f"ssim {cell['ssim']['mean']:.4f}")
    payload = {
        "data": args.data,
        "epochs": cfg["epochs"],
        "repeats": cfg["repeats"],
        "seed": cfg["seed"],
        "n_test": len(_split_indices(manifest, "test")),
        "models": list(MODEL_NAMES),
        "losses": list(LOSS_NAMES),
        "cells": cells,
    }
    _write_json(os.path.join(args.out, "matrix_report.json"), payload)
    return 0


# -- argument parsing ------------------------------------------------------


def _add_train_flags(p):
    p.add_argument("--data", required=True, help="dataset .nras file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--model", choices=MODEL_NAMES)
    p.add_argument("--loss", choices=LOSS_NAMES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr-max", dest="lr_max", type=float)
    p.add_argument("--lr-min", dest="lr_min", type=float)
    p.add_argument("--modes", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--norm", choices=("instance", "none"))
    p.add_argument("--activation", choices=("relu", "gelu", "identity"))
    p.add_argument("--mae-weight", dest="mae_weight", type=float)
    p.add_argument(
        "--no-augment", dest="augment", action="store_false", default=None
    )
    p.add_argument("--trees", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--min-leaf", dest="min_leaf", type=int)
    p.add_argument("--forest-criterion", dest="forest_criterion",
                   choices=("variance", "mae"))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="socfno",
        description="Spectral-operator toolkit for soil organic carbon maps",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--target-noise", dest="target_noise", type=float,
                   default=0.0,
                   help="measurement-noise std added to targets (g/kg)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score checkpoints on a dataset split")
    p.add_argument("--checkpoint", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"),
                   default="test")
    p.add_argument("--out")
    p.add_argument("--self-oracle", dest="self_oracle", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="export prediction maps for one sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("matrix", help="run the model-by-loss comparison grid")
    _add_train_flags(p)
    p.set_defaults(func=cmd_matrix)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        ValueError,
        KeyError,
        NumericalError,
        DatasetFormatError,
        OSError,
    ) as exc:
        # OSError.args[0] is a bare errno; its str() carries the path.
        if isinstance(exc, OSError):
            message = str(exc)
        else:
            message = exc.args[0] if exc.args else str(exc)
        print(f"error: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
