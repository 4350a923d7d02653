"""Command-line entry point: ``s4sits {gen-data,pretrain,finetune,eval}``.

stdout carries JSON only; logs go to stderr.  Exit codes: 0 ok, 1 other
failure, 2 config error, 3 I/O error, 4 non-finite loss, 5 incompatible
checkpoint, 6 missing cloud masks.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import errors
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .data_io import load_manifest
from .evaluation import DEFAULT_BIN_EDGES, cloud_report, evaluate
from .models import build_model
from .synthetic import generate_dataset
from .training import Predictor, finetune, fit_stats, pretrain

log = logging.getLogger("s4sits")

EXIT_CODES = [
    (errors.InvalidConfig, 2),
    (errors.IoFailure, 3),
    (errors.MissingFile, 3),
    (errors.CorruptArchive, 3),
    (OSError, 3),
    (errors.NonFiniteLoss, 4),
    (errors.IncompatibleCheckpoint, 5),
    (errors.UnsupportedSchema, 5),
    (errors.MissingCloudMask, 6),
]


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def _ckpt_log(path: Path) -> Path:
    return path.with_name(path.name + ".log.jsonl")


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed})
    out = Path(args.out or cfg.paths.get("data") or "data")
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "resolved_config.yaml")
    manifest = generate_dataset(cfg.world, args.n, out, workers=args.workers)
    counts = {s: sum(e["split"] == s for e in manifest) for s in ("train", "val", "test")}
    _emit({"out": str(out), "n_samples": len(manifest), "splits": counts})
    return 0


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config, {
        "seed": args.seed,
        "train.ablation": args.ablation,
        "train.pretrain_epochs": args.epochs,
        "train.inference_modality": args.modality,
    })
    out = Path(args.out or cfg.paths.get("ckpt") or "pretrain.ckpt")
    data_dir = args.data or cfg.paths.get("data")
    if data_dir is None:
        raise errors.InvalidConfig("no data directory given (--data or paths.data)")
    cfg.dump(out.with_name(out.name + ".config.yaml"))
    train_set = load_manifest(data_dir).load("train")
    log_path = _ckpt_log(out)
    log_path.unlink(missing_ok=True)

    if args.resume:
        start = load_checkpoint(args.resume, expected_model_config=cfg.model)
        ckpt = pretrain(train_set, start, cfg.train, cfg.loss, log_path=log_path)
    else:
        model = build_model(cfg.model, cfg.train.seed)
        ckpt = pretrain(train_set, model, cfg.train, cfg.loss, stats=fit_stats(train_set), log_path=log_path)
    save_checkpoint(ckpt, out)
    if args.plot and ckpt.history:
        from .plotting import plot_loss_curves
        plot_loss_curves(ckpt.history, args.plot)
    _emit({"checkpoint": str(out), "epochs": ckpt.epoch, "log": str(log_path),
           "final": ckpt.history[-1] if ckpt.history else None})
    return 0


def cmd_finetune(args) -> int:
    overrides = {
        "seed": args.seed,
        "train.label_fraction": args.label_fraction,
        "train.inference_modality": args.modality,
        "train.finetune_epochs": args.epochs,
    }
    cfg = load_config(args.config, overrides)
    ckpt_path = Path(args.ckpt)
    ckpt = load_checkpoint(ckpt_path, expected_model_config=cfg.model if args.config else None)
    out = Path(args.out) if args.out else ckpt_path.with_name(ckpt_path.stem + ".finetuned.ckpt")
    cfg.dump(out.with_name(out.name + ".config.yaml"))
    labeled = load_manifest(args.data).load("train")
    for pair in labeled:
        if pair.label is not None and np.any(pair.label >= ckpt.model_config.num_classes):
            raise errors.IncompatibleCheckpoint(
                f"labels exceed the checkpoint's {ckpt.model_config.num_classes} classes")
    log_path = _ckpt_log(out)
    log_path.unlink(missing_ok=True)
    tuned = finetune(ckpt, labeled, cfg.train, log_path=log_path)
    save_checkpoint(tuned, out)
    if args.plot and tuned.history:
        from .plotting import plot_loss_curves
        plot_loss_curves(tuned.history, args.plot)
    _emit({"checkpoint": str(out), "labeled_ids": tuned.train_config["labeled_ids"],
           "final": tuned.history[-1] if tuned.history else None})
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    predictor = Predictor(ckpt)
    dataset = load_manifest(args.data).load(args.split)
    K = ckpt.model_config.num_classes
    if args.cloud_report:
        baseline = Predictor(load_checkpoint(args.baseline)).predict_pair if args.baseline else None
        edges = tuple(args.bin_edges) if args.bin_edges else DEFAULT_BIN_EDGES
        report = cloud_report(predictor.predict_pair, dataset, K, edges, baseline_fn=baseline)
    else:
        report = evaluate(predictor.predict_pair, dataset, K)
    result = report.to_json()
    result.update(split=args.split, n_samples=len(dataset), modality=predictor.modality.value)
    if args.plot:
        from .plotting import plot_cloud_bins, plot_per_class
        if report.cloud_bins:
            plot_cloud_bins(report.cloud_bins, args.plot)
        else:
            plot_per_class(report.per_class_iou, args.plot)
    _emit(result)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s4sits", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset and manifest")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="self-supervised pre-training")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--ablation", choices=["joint", "contrastive-only", "recon-only", "single-modal"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--modality", choices=["radar", "optical"])
    p.add_argument("--seed", type=int)
    p.add_argument("--resume")
    p.add_argument("--plot", help="write a loss-curve PNG")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised fine-tuning on a label fraction")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--label-fraction", type=float)
    p.add_argument("--modality", choices=["radar", "optical"])
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--plot", help="write a loss-curve PNG")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="mIoU report as JSON on stdout")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--cloud-report", action="store_true")
    p.add_argument("--baseline", help="second checkpoint for per-bin mIoU deltas")
    p.add_argument("--bin-edges", type=float, nargs="+")
    p.add_argument("--plot", help="write a PNG (cloud bins or per-class IoU)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as e:  # map known failures onto the exit-code table
        for exc_type, code in EXIT_CODES:
            if isinstance(e, exc_type):
                print(f"error: {e}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
