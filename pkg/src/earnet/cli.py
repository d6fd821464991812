"""Command line entry point: training, evaluation, measurement, serving.

Every subcommand accepts --seed, --config (a JSON file with optional
"model" and "train" sections, the same shape a training run snapshots),
and --json for machine-readable output.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import __version__, service
from .bench import format_report, fps_bench, report_to_json, write_report_csv
from .data import (
    dataset_tensors,
    default_catalog,
    load_rgb,
    preprocess,
    scan_dataset,
    synth_generate,
)
from .errors import ConfigError, EarnetError
from .gradcam import colormap, grad_cam, overlay, save_png
from .metrics import aggregate_folds
from .model import ModelConfig, build_best_earnet
from .ops import softmax
from .ranking import format_ranking, ors, read_ranking_csv, write_ranking_csv
from .service import ServeConfig
from .tensor import Tensor
from .train import TrainConfig, cross_validate, kfold_split, run_fold
from .weights import load_weights, save_weights


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", help="JSON file with model/train sections")
    parser.add_argument("--json", action="store_true", help="machine-readable output")


def _load_config(path) -> dict:
    if not path:
        return {}
    with open(path) as f:
        payload = json.load(f)
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return payload


def _model_config(args, payload: dict) -> ModelConfig:
    fields = dict(payload.get("model", {}))
    for flag, key in (("width", "width_multiplier"), ("input_size", "input_size"),
                      ("classes", "num_classes")):
        value = getattr(args, flag, None)
        if value is not None:
            fields[key] = value
    return ModelConfig(**fields)


def _train_config(args, payload: dict) -> TrainConfig:
    fields = dict(payload.get("train", {}))
    for flag in ("epochs", "batch_size", "lr"):
        value = getattr(args, flag, None)
        if value is not None:
            fields[flag] = value
    fields["seed"] = args.seed
    if "aux_loss_weights" in fields:
        fields["aux_loss_weights"] = tuple(fields["aux_loss_weights"])
    return TrainConfig(**fields)


def _load_model(args, payload: dict):
    cfg = _model_config(args, payload)
    model = build_best_earnet(cfg, seed=args.seed)
    if getattr(args, "weights", None):
        load_weights(model, args.weights)
    model.eval()
    return model, cfg


def _emit(args, payload: dict, human: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(human, end="" if human.endswith("\n") else "\n")


def cmd_gen_data(args) -> int:
    count = synth_generate(
        args.out, n_per_class=args.per_class, num_classes=args.classes,
        seed=args.seed, size=args.size,
    )
    _emit(args, {"written": count, "out": args.out},
          f"wrote {count} images under {args.out}")
    return 0


def cmd_train(args) -> int:
    payload = _load_config(args.config)
    model_cfg = _model_config(args, payload)
    train_cfg = _train_config(args, payload)
    entries, catalog = scan_dataset(args.data)
    images, labels = dataset_tensors(entries, size=model_cfg.input_size)
    names = list(catalog.names)
    if args.fold is not None:
        plan = kfold_split(labels, args.folds, train_cfg.seed)
        run = run_fold(model_cfg, images, labels, plan, args.fold, train_cfg,
                       run_dir=args.out, class_names=names)
        summary = {"fold": args.fold, "val_acc": run.best_val_acc,
                   "best_epoch": run.best_epoch, "run_dir": args.out}
        _emit(args, summary,
              f"fold {args.fold}: val accuracy {run.best_val_acc:.4f} "
              f"(best epoch {run.best_epoch})")
        return 0
    report = cross_validate(model_cfg, images, labels, train_cfg, k=args.folds,
                            run_root=args.out, class_names=names)
    agg = aggregate_folds(report.accuracies) if len(report.accuracies) >= 2 else None
    summary = {
        "folds": args.folds,
        "accuracies": report.accuracies,
        "mean_val_acc": report.mean_val_acc,
        "ci95": [agg.ci_low, agg.ci_high] if agg else None,
        "run_root": args.out,
    }
    lines = [f"fold {i}: {a:.4f}" for i, a in enumerate(report.accuracies)]
    lines.append(f"mean val accuracy {report.mean_val_acc:.4f}")
    _emit(args, summary, "\n".join(lines))
    return 0


def cmd_eval(args) -> int:
    payload = _load_config(args.config)
    model, model_cfg = _load_model(args, payload)
    entries, catalog = scan_dataset(args.data)
    images, labels = dataset_tensors(entries, size=model_cfg.input_size)
    preds = np.empty(len(labels), dtype=np.int64)
    for s in range(0, len(labels), 64):
        out = model(Tensor(images[s : s + 64]))
        preds[s : s + 64] = np.argmax(out.logits3.data, axis=1)
    from .metrics import confusion, metrics_from_confusion

    cm = confusion(preds, labels, model_cfg.num_classes)
    ms = metrics_from_confusion(cm)
    summary = {
        "accuracy": ms.accuracy,
        "per_class_f1": [float(v) for v in ms.f1],
        "classes": list(catalog.names),
        "n": int(labels.size),
    }
    _emit(args, summary, f"accuracy {ms.accuracy:.4f} on {labels.size} images")
    return 0


def cmd_bench(args) -> int:
    payload = _load_config(args.config)
    model, model_cfg = _load_model(args, payload)
    report = fps_bench(
        model,
        (1, 3, model_cfg.input_size, model_cfg.input_size),
        n_warmup=args.warmup,
        n_iter=args.iters,
        threads=args.threads,
        seed=args.seed,
    )
    if args.out_csv:
        write_report_csv(report, args.out_csv)
    if args.json:
        print(report_to_json(report), end="")
    else:
        print(format_report(report), end="")
    return 0


def cmd_rank(args) -> int:
    table = read_ranking_csv(args.input)
    alpha = tuple(args.alpha) if args.alpha else None
    result = ors(table, alpha=alpha)
    if args.out:
        write_ranking_csv(result, args.out)
    if args.json:
        rows = [dataclasses.asdict(r) for r in result.rows]
        print(json.dumps({"ranking": rows}, indent=2, sort_keys=True))
    else:
        print(format_ranking(result), end="")
    return 0


def cmd_infer(args) -> int:
    payload = _load_config(args.config)
    model, model_cfg = _load_model(args, payload)
    pixels = load_rgb(args.image)
    x = preprocess(pixels, size=model_cfg.input_size)
    out = model(Tensor(x[None]))
    probabilities = softmax(out.logits3.data)[0]
    catalog = default_catalog() if model_cfg.num_classes == 9 else None
    names = (
        list(catalog.names)
        if catalog
        else [f"class{i}" for i in range(model_cfg.num_classes)]
    )
    top = int(np.argmax(probabilities))
    table = "\n".join(
        f"{name:<6} {float(p):.6f}" for name, p in zip(names, probabilities)
    )
    _emit(
        args,
        {
            "probabilities": [float(p) for p in probabilities],
            "classes": names,
            "top1_class": names[top],
            "top1_probability": float(probabilities[top]),
        },
        table + f"\ntop1: {names[top]} ({float(probabilities[top]):.4f})",
    )
    return 0


def cmd_gradcam(args) -> int:
    payload = _load_config(args.config)
    model, model_cfg = _load_model(args, payload)
    pixels = load_rgb(args.image)
    x = preprocess(pixels, size=model_cfg.input_size)
    hm = grad_cam(model, x, target_class=args.target_class, layer=args.layer)
    save_png(colormap(hm.values), args.out)
    outputs = {"heatmap": args.out, "target_class": hm.target_class,
               "all_zero": hm.all_zero}
    if args.overlay_out:
        from PIL import Image

        resized = np.asarray(
            Image.fromarray(pixels).resize(
                (model_cfg.input_size, model_cfg.input_size), Image.BILINEAR
            )
        )
        save_png(overlay(hm, resized, alpha=args.alpha), args.overlay_out)
        outputs["overlay"] = args.overlay_out
    _emit(args, outputs,
          f"wrote {args.out} (class {hm.target_class})"
          + (f" and {args.overlay_out}" if args.overlay_out else ""))
    return 0


def cmd_serve(args) -> int:
    # flags beat EARNET_* env vars; omitted flags leave env values in force
    candidates = {
        "host": args.host,
        "port": args.port,
        "weights": args.weights,
        "model_config_json": args.config,
        "log_dir": args.log_dir,
        "heatmap_default": args.heatmap_default or None,
        "sharpness_gate": args.gate,
        "seed": args.seed or None,
    }
    cfg = ServeConfig.from_env(
        **{k: v for k, v in candidates.items() if v is not None}
    )
    service.serve(cfg)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="earnet", description="ear-disease recognition toolkit"
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=20, dest="per_class")
    p.add_argument("--classes", type=int, default=9)
    p.add_argument("--size", type=int, default=224)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="five-fold or single-fold training")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--fold", type=int, default=None,
                   help="train one fold instead of all")
    p.add_argument("--width", type=float, default=None)
    p.add_argument("--input-size", type=int, default=None, dest="input_size")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--lr", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--width", type=float, default=None)
    p.add_argument("--input-size", type=int, default=None, dest="input_size")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="single-stream FPS measurement")
    _add_common(p)
    p.add_argument("--weights")
    p.add_argument("--width", type=float, default=None)
    p.add_argument("--input-size", type=int, default=None, dest="input_size")
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-csv", dest="out_csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("rank", help="overall ranking score over a metrics CSV")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.add_argument("--alpha", type=float, nargs=6, default=None,
                   help="six non-negative column weights")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("infer", help="classify one image")
    _add_common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--weights")
    p.add_argument("--width", type=float, default=None)
    p.add_argument("--input-size", type=int, default=None, dest="input_size")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcam", help="write a class-evidence heatmap PNG")
    _add_common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overlay-out", dest="overlay_out")
    p.add_argument("--weights")
    p.add_argument("--width", type=float, default=None)
    p.add_argument("--input-size", type=int, default=None, dest="input_size")
    p.add_argument("--target-class", type=int, default=None, dest="target_class")
    p.add_argument("--layer", default="lgsff")
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(func=cmd_gradcam)

    p = sub.add_parser("serve", help="run the local inference service")
    _add_common(p)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--weights")
    p.add_argument("--log-dir", default=None, dest="log_dir")
    p.add_argument("--heatmap-default", action="store_true", dest="heatmap_default")
    p.add_argument("--gate", type=float, default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except EarnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
