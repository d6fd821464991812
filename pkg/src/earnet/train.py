"""Training harness: accumulated three-head loss, Adam, five-fold protocol.

A run writes a directory per fold: a JSON config snapshot, a per-epoch
curve CSV (epoch, train_loss, val_loss, val_acc), the best checkpoint in
the binary weight format, and a per-class metrics CSV using the ranking
input schema.  Everything is seeded; identical seed, config and data give
bit-identical final parameters in single-threaded mode.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import queue
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DataError, DivergenceError
from .layers import Module
from .metrics import MetricSet, confusion, metrics_from_confusion
from .model import (
    BestEarNet,
    ForwardOutput,
    ModelConfig,
    build_best_earnet,
    with_num_classes,
)
from .ops import softmax_cross_entropy
from .ranking import RANKING_INPUT_HEADER, fold_metric_rows
from .tensor import Tape, Tensor, add, mul
from .weights import save_weights


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop hyperparameters; defaults are the full-scale recipe."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    batch_size: int = 128
    seed: int = 0
    aux_loss_weights: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        # batch normalization needs at least two rows per training batch
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if len(self.aux_loss_weights) != 2:
            raise ConfigError("aux_loss_weights must hold exactly two scalars")


def desk_train_config(**overrides) -> TrainConfig:
    """Small-compute preset used by the quick validation runs.

    The full-scale learning rate is tuned for 100-epoch runs; a 15-epoch
    budget needs a faster one.
    """
    base = dict(epochs=15, batch_size=32, lr=0.01)
    base.update(overrides)
    return TrainConfig(**base)


def total_loss(out: ForwardOutput, targets, weights=(1.0, 1.0)) -> Tensor:
    """Accumulated loss: CE(logits3) + w1*CE(logits1) + w2*CE(logits2)."""
    if out.logits1 is None or out.logits2 is None:
        raise ContractError("auxiliary logits are required for the accumulated loss")
    loss = softmax_cross_entropy(out.logits3, targets)
    for w, logits in zip(weights, (out.logits1, out.logits2)):
        if w != 0.0:
            scale = Tensor(np.asarray(w, dtype=logits.data.dtype))
            loss = add(loss, mul(scale, softmax_cross_entropy(logits, targets)))
    return loss


class Adam:
    """Bias-corrected Adam over a model's named parameters."""

    def __init__(self, named_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for _, p in self.params]
        self._v = [np.zeros_like(p.data) for _, p in self.params]

    @classmethod
    def for_model(cls, model: Module, cfg: TrainConfig) -> "Adam":
        return cls(
            model.named_parameters(),
            lr=cfg.lr,
            beta1=cfg.beta1,
            beta2=cfg.beta2,
            eps=cfg.eps,
        )

    def step(self, grads: dict) -> None:
        """Apply one update from a tape's gradient map; missing entries act as zero."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for i, (name, p) in enumerate(self.params):
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise DivergenceError(f"non-finite gradient for parameter '{name}'")
            m = self._m[i]
            v = self._v[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


@dataclass(frozen=True)
class FoldPlan:
    """Stratified k-fold partition over sample indices."""

    k: int
    val_indices: tuple
    train_indices: tuple
    stratified: bool = True


def kfold_split(labels, k: int, seed: int = 0) -> FoldPlan:
    """Deterministic stratified split; every class lands in every fold."""
    labels = np.asarray(labels)
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    per_fold: list[list[np.ndarray]] = [[] for _ in range(k)]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < k:
            raise DataError(
                f"class {cls} has {idx.size} samples, needs at least {k} for {k}-fold"
            )
        idx = rng.permutation(idx)
        for j in range(k):
            per_fold[j].append(idx[j::k])
    all_idx = np.arange(labels.size)
    vals, trains = [], []
    for j in range(k):
        val = np.sort(np.concatenate(per_fold[j]))
        vals.append(val)
        trains.append(np.setdiff1d(all_idx, val))
    return FoldPlan(k=k, val_indices=tuple(vals), train_indices=tuple(trains))


def batch_iterator(images, labels, indices, batch_size, prefetch: int = 0):
    """Yield (x, y) batches in index order; prefetch > 0 loads ahead on a thread.

    The prefetch queue is bounded and FIFO; the producer blocks when full.
    """
    starts = range(0, len(indices), batch_size)

    def cut(s):
        sel = indices[s : s + batch_size]
        return images[sel], labels[sel]

    if prefetch <= 0:
        for s in starts:
            yield cut(s)
        return

    q: queue.Queue = queue.Queue(maxsize=prefetch)
    done = object()

    def produce():
        for s in starts:
            q.put(cut(s))
        q.put(done)

    worker = threading.Thread(target=produce, daemon=True)
    worker.start()
    while True:
        item = q.get()
        if item is done:
            break
        yield item
    worker.join()


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float


@dataclass
class FoldRun:
    fold: int
    epochs: list[EpochRecord]
    best_epoch: int
    best_val_acc: float
    metrics: MetricSet
    confusion: np.ndarray
    model: BestEarNet = field(repr=False, default=None)
    run_dir: str | None = None


def _evaluate(model, images, labels, indices, batch_size, num_classes):
    """Eval-mode pass over a split: mean CE on the main head, preds, accuracy."""
    model.eval()
    preds = np.empty(len(indices), dtype=np.int64)
    loss_sum = 0.0
    for s in range(0, len(indices), batch_size):
        sel = indices[s : s + batch_size]
        out = model(Tensor(images[sel]))
        loss = softmax_cross_entropy(out.logits3, labels[sel])
        loss_sum += float(loss.data) * len(sel)
        preds[s : s + len(sel)] = np.argmax(out.logits3.data, axis=1)
    targets = labels[indices]
    cm = confusion(preds, targets, num_classes)
    acc = float(np.mean(preds == targets))
    return loss_sum / len(indices), acc, cm


def _write_config(run_dir, model_cfg, train_cfg, fold, model_name):
    snapshot = {
        "model_name": model_name,
        "fold": fold,
        "model": dataclasses.asdict(model_cfg),
        "train": dataclasses.asdict(train_cfg),
    }
    with open(os.path.join(run_dir, "config.json"), "w") as f:
        json.dump(snapshot, f, indent=2, sort_keys=True)
        f.write("\n")


def run_fold(
    model_cfg: ModelConfig,
    images,
    labels,
    plan: FoldPlan,
    fold: int,
    train_cfg: TrainConfig,
    run_dir: str | None = None,
    class_names=None,
    model_name: str = "best-earnet",
) -> FoldRun:
    """Train on one fold's train split, track the best val-accuracy epoch.

    On divergence (non-finite loss or gradient) the run aborts; the curve
    rows and the best checkpoint written so far stay on disk.
    """
    if not 0 <= fold < plan.k:
        raise ConfigError(f"fold index {fold} outside 0..{plan.k - 1}")
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels)
    train_idx = plan.train_indices[fold]
    val_idx = plan.val_indices[fold]
    if class_names is None:
        class_names = [f"class{i}" for i in range(model_cfg.num_classes)]

    model = build_best_earnet(model_cfg, seed=train_cfg.seed + 7919 * fold)
    opt = Adam.for_model(model, train_cfg)
    rng = np.random.default_rng(train_cfg.seed + 7919 * fold)

    curve_path = None
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        _write_config(run_dir, model_cfg, train_cfg, fold, model_name)
        curve_path = os.path.join(run_dir, "curve.csv")
        with open(curve_path, "w", newline="") as f:
            csv.writer(f).writerow(["epoch", "train_loss", "val_loss", "val_acc"])

    records: list[EpochRecord] = []
    best_acc = -1.0
    best_epoch = -1
    best_state = None
    for epoch in range(train_cfg.epochs):
        model.train()
        perm = rng.permutation(train_idx)
        loss_sum = 0.0
        seen = 0
        for x, y in batch_iterator(images, labels, perm, train_cfg.batch_size):
            if len(y) < 2:
                continue  # batch norm cannot normalize a single row
            with Tape() as tape:
                out = model(Tensor(x))
                loss = total_loss(out, y, train_cfg.aux_loss_weights)
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergenceError(
                    f"training loss became non-finite at epoch {epoch}"
                )
            grads = tape.backward(loss, populate_grad=False)
            opt.step(grads)
            loss_sum += value * len(y)
            seen += len(y)
        train_loss = loss_sum / max(seen, 1)
        val_loss, val_acc, _ = _evaluate(
            model, images, labels, val_idx, train_cfg.batch_size, model_cfg.num_classes
        )
        records.append(EpochRecord(epoch, train_loss, val_loss, val_acc))
        if curve_path is not None:
            with open(curve_path, "a", newline="") as f:
                csv.writer(f).writerow(
                    [epoch, f"{train_loss:.6f}", f"{val_loss:.6f}", f"{val_acc:.6f}"]
                )
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best_state = [(n, t.data.copy()) for n, t in model.named_state()]
            if run_dir is not None:
                save_weights(model, os.path.join(run_dir, "best.benw"))

    # restore the best epoch before computing the reported metrics
    for (_, live), (_, saved) in zip(model.named_state(), best_state):
        live.data[...] = saved
    _, final_acc, cm = _evaluate(
        model, images, labels, val_idx, train_cfg.batch_size, model_cfg.num_classes
    )
    metric_set = metrics_from_confusion(cm)
    if run_dir is not None:
        with open(os.path.join(run_dir, "metrics.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(RANKING_INPUT_HEADER)
            w.writerows(fold_metric_rows(model_name, fold, class_names, metric_set))
    return FoldRun(
        fold=fold,
        epochs=records,
        best_epoch=best_epoch,
        best_val_acc=final_acc,
        metrics=metric_set,
        confusion=cm,
        model=model,
        run_dir=run_dir,
    )


@dataclass
class CrossValReport:
    folds: list[FoldRun]
    accuracies: list[float]
    mean_val_acc: float


def cross_validate(
    model_cfg: ModelConfig,
    images,
    labels,
    train_cfg: TrainConfig,
    k: int = 5,
    run_root: str | None = None,
    class_names=None,
    model_name: str = "best-earnet",
) -> CrossValReport:
    """Run every fold of a stratified k-fold plan and average val accuracy."""
    plan = kfold_split(labels, k, train_cfg.seed)
    folds = []
    for j in range(k):
        run_dir = None if run_root is None else os.path.join(run_root, f"fold{j}")
        folds.append(
            run_fold(
                model_cfg,
                images,
                labels,
                plan,
                j,
                train_cfg,
                run_dir=run_dir,
                class_names=class_names,
                model_name=model_name,
            )
        )
    accs = [f.best_val_acc for f in folds]
    if run_root is not None:
        # one combined CSV in the ranking input schema, all folds' class rows
        with open(os.path.join(run_root, "metrics.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(RANKING_INPUT_HEADER)
            names = class_names or [f"class{i}" for i in range(model_cfg.num_classes)]
            for run in folds:
                w.writerows(fold_metric_rows(model_name, run.fold, names, run.metrics))
    return CrossValReport(folds=folds, accuracies=accs, mean_val_acc=float(np.mean(accs)))


def class_extension_run(
    images,
    labels,
    n: int,
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    repeats: int = 6,
    holdout_k: int = 5,
) -> list[float]:
    """Retrain on `repeats` random n-class subsets; report held-out accuracies.

    Each repeat samples n distinct classes, relabels them 0..n-1, rebuilds
    the heads at width n, and trains against one stratified holdout fold.
    """
    labels = np.asarray(labels)
    available = np.unique(labels)
    if n > available.size:
        raise DataError(f"requested {n} classes but only {available.size} present")
    if n < 2:
        raise ConfigError(f"need at least 2 classes, got {n}")
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    rng = np.random.default_rng(train_cfg.seed)
    accuracies = []
    for r in range(repeats):
        chosen = np.sort(rng.choice(available, size=n, replace=False))
        mask = np.isin(labels, chosen)
        sub_images = images[mask]
        remap = {int(c): i for i, c in enumerate(chosen)}
        sub_labels = np.array([remap[int(c)] for c in labels[mask]])
        sub_cfg = with_num_classes(model_cfg, n)
        sub_train = dataclasses.replace(train_cfg, seed=train_cfg.seed + 31 * r + 1)
        plan = kfold_split(sub_labels, holdout_k, sub_train.seed)
        run = run_fold(sub_cfg, sub_images, sub_labels, plan, 0, sub_train)
        accuracies.append(run.best_val_acc)
    return accuracies
