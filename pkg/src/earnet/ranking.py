"""Overall ranking score: CI-weighted min-max normalization of per-class
metrics, accuracy, and throughput shares, combined into one score per model.

Pipeline per class-wise metric f in {recall, f1, precision, specificity}:

1. Fold values per (class i, model j) collapse to a mean M_ij and a 95% CI
   length L_ij.
2. RS: min-max normalize M over models within each class, then divide by
   max(L, 1e-6). A class where every model ties collapses to an all-zero
   row.
3. RSN: per class, each model's share of the row sum (an all-zero row
   contributes uniform 1/n); average shares over classes. Each RSN column
   sums to 1 over models.

Accuracy follows the same RS/RSN recipe on one overall value per fold; FPS
is a plain share of the total. ORS is the alpha-weighted sum of the six RSN
columns (alpha defaults to all ones).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .metrics import aggregate_folds

__all__ = [
    "CLASS_METRICS",
    "ModelEntry",
    "RankingTable",
    "ORSRow",
    "ORSResult",
    "rs_classwise",
    "rsn_classwise",
    "rsn_accuracy",
    "rsn_fps",
    "ors",
    "read_ranking_csv",
    "write_ranking_csv",
    "format_ranking",
    "demo_comparison_table",
    "demo_comparison_csv",
]

CLASS_METRICS = ("recall", "f1", "precision", "specificity")
_CI_FLOOR = 1e-6
RANKING_INPUT_HEADER = ["model", "fold", "class", "recall", "precision", "specificity", "f1"]
_OUTPUT_HEADER = ["model", "R_rsn", "F1_rsn", "P_rsn", "S_rsn", "A_rsn", "FPS_rsn", "ORS", "rank"]


@dataclass
class ModelEntry:
    """One model's raw ranking inputs: fold values per class metric, fold
    accuracies, and throughput."""

    name: str
    class_metrics: dict[str, dict[str, list[float]]] = field(
        default_factory=lambda: {m: {} for m in CLASS_METRICS}
    )
    accuracies: list[float] = field(default_factory=list)
    fps: float | None = None


class RankingTable:
    """Validated collection of :class:`ModelEntry` rows.

    Every model must cover the same class set, carry >= 2 fold accuracies,
    and a positive FPS.
    """

    def __init__(self, models: list[ModelEntry]):
        if len(models) < 2:
            raise ConfigError(f"ranking needs >= 2 models, got {len(models)}")
        names = [m.name for m in models]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate model names in ranking input: {names}")
        covered = frozenset(models[0].class_metrics[CLASS_METRICS[0]])
        for m in models:
            if m.fps is None or m.fps <= 0:
                raise DataError(f"model {m.name!r} needs a positive FPS entry")
            if len(m.accuracies) < 2:
                raise DataError(f"model {m.name!r} needs >= 2 fold accuracy rows")
            for metric in CLASS_METRICS:
                if frozenset(m.class_metrics[metric]) != covered:
                    raise DataError(
                        f"model {m.name!r} covers a different class set for "
                        f"{metric!r}; ranking needs identical coverage"
                    )
                for cls, folds in m.class_metrics[metric].items():
                    if len(folds) < 2:
                        raise DataError(
                            f"model {m.name!r} class {cls!r} metric {metric!r} "
                            f"has {len(folds)} fold values, needs >= 2"
                        )
        self.models = models
        self.classes = sorted(covered)

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.models]


def rs_classwise(table: RankingTable, metric: str) -> np.ndarray:
    """Ranking scores, shape (num_classes, num_models).

    Per class: min-max normalize fold means over models, weight by the
    reciprocal CI length (floored at 1e-6). A class with a zero min-max span
    yields an all-zero row (resolved to uniform shares downstream).
    """
    if metric not in CLASS_METRICS:
        raise ConfigError(f"unknown class metric {metric!r}")
    n = len(table.models)
    if n < 2:
        raise ConfigError("ranking scores need >= 2 models")
    m = len(table.classes)
    rs = np.zeros((m, n), dtype=np.float64)
    for i, cls in enumerate(table.classes):
        aggs = [aggregate_folds(mod.class_metrics[metric][cls]) for mod in table.models]
        means = np.array([a.mean for a in aggs])
        lengths = np.maximum([a.ci_length for a in aggs], _CI_FLOOR)
        span = means.max() - means.min()
        if span > 0:
            rs[i] = (means - means.min()) / span / lengths
    return rs


def rsn_classwise(rs: np.ndarray) -> np.ndarray:
    """Average per-class share of the row sum; all-zero rows count as uniform."""
    rs = np.asarray(rs, dtype=np.float64)
    if rs.ndim != 2 or rs.shape[1] < 2:
        raise ConfigError(f"RS matrix must be (classes, models >= 2), got {rs.shape}")
    if (rs < 0).any():
        raise DataError("ranking scores must be non-negative")
    m, n = rs.shape
    shares = np.empty_like(rs)
    for i in range(m):
        row_sum = rs[i].sum()
        shares[i] = rs[i] / row_sum if row_sum > 0 else 1.0 / n
    return shares.mean(axis=0)


def rsn_accuracy(table: RankingTable) -> np.ndarray:
    """Accuracy shares via the same min-max and CI weighting, over models."""
    aggs = [aggregate_folds(m.accuracies) for m in table.models]
    means = np.array([a.mean for a in aggs])
    lengths = np.maximum([a.ci_length for a in aggs], _CI_FLOOR)
    span = means.max() - means.min()
    n = len(table.models)
    if span == 0:
        return np.full(n, 1.0 / n)
    rs = (means - means.min()) / span / lengths
    total = rs.sum()
    return rs / total if total > 0 else np.full(n, 1.0 / n)


def rsn_fps(fps) -> np.ndarray:
    """Throughput shares: each model's fraction of the summed FPS."""
    v = np.asarray(fps, dtype=np.float64)
    if (v <= 0).any():
        raise DataError(f"FPS values must be positive, got {v.tolist()}")
    return v / v.sum()


@dataclass(frozen=True)
class ORSRow:
    model: str
    r_rsn: float
    f1_rsn: float
    p_rsn: float
    s_rsn: float
    a_rsn: float
    fps_rsn: float
    ors: float
    rank: int


@dataclass
class ORSResult:
    rows: list[ORSRow]           # sorted by descending ORS
    alpha: tuple[float, ...]

    def by_model(self) -> dict[str, ORSRow]:
        return {r.model: r for r in self.rows}


def ors(table: RankingTable, alpha=None) -> ORSResult:
    """Weighted sum of the six RSN columns (order: R, F1, P, S, A, FPS)."""
    if alpha is None:
        alpha = (1.0,) * 6
    alpha = tuple(float(a) for a in alpha)
    if len(alpha) != 6:
        raise ConfigError(f"alpha needs 6 coefficients, got {len(alpha)}")
    if any(a < 0 for a in alpha):
        raise ConfigError(f"alpha coefficients must be non-negative, got {alpha}")

    n = len(table.models)
    if table.classes:
        columns = {m: rsn_classwise(rs_classwise(table, m)) for m in CLASS_METRICS}
    else:
        # no per-class rows at all: no information, uniform shares
        columns = {m: np.full(n, 1.0 / n) for m in CLASS_METRICS}
    a_col = rsn_accuracy(table)
    fps_col = rsn_fps([m.fps for m in table.models])

    scores = (
        alpha[0] * columns["recall"]
        + alpha[1] * columns["f1"]
        + alpha[2] * columns["precision"]
        + alpha[3] * columns["specificity"]
        + alpha[4] * a_col
        + alpha[5] * fps_col
    )
    order = np.argsort(-scores, kind="stable")
    rows = []
    for rank, j in enumerate(order, start=1):
        rows.append(
            ORSRow(
                model=table.models[j].name,
                r_rsn=float(columns["recall"][j]),
                f1_rsn=float(columns["f1"][j]),
                p_rsn=float(columns["precision"][j]),
                s_rsn=float(columns["specificity"][j]),
                a_rsn=float(a_col[j]),
                fps_rsn=float(fps_col[j]),
                ors=float(scores[j]),
                rank=rank,
            )
        )
    return ORSResult(rows=rows, alpha=alpha)


# CSV schema: class rows `model,fold,class,r,p,s,f1`; accuracy rows
# `model,fold,_overall_,acc`; throughput rows `model,_fps_,fps`.

def read_ranking_csv(path) -> RankingTable:
    with open(path, newline="", encoding="utf-8") as f:
        return _parse_ranking_rows(csv.reader(f), str(path))


def parse_ranking_text(text: str) -> RankingTable:
    return _parse_ranking_rows(csv.reader(io.StringIO(text)), "<text>")


def _parse_ranking_rows(reader, source: str) -> RankingTable:
    entries: dict[str, ModelEntry] = {}

    def entry(name: str) -> ModelEntry:
        if name not in entries:
            entries[name] = ModelEntry(name=name)
        return entries[name]

    header = next(reader, None)
    if header is None or [h.strip() for h in header[:7]] != list(RANKING_INPUT_HEADER):
        raise DataError(
            f"{source}: expected header {','.join(RANKING_INPUT_HEADER)!r}, got {header!r}"
        )
    for lineno, row in enumerate(reader, start=2):
        row = [c.strip() for c in row]
        if not row or not any(row):
            continue
        try:
            if len(row) >= 2 and row[1] == "_fps_":
                e = entry(row[0])
                if e.fps is not None:
                    raise DataError(f"duplicate _fps_ row for model {row[0]!r}")
                e.fps = float(row[2])
            elif len(row) >= 4 and row[2] == "_overall_":
                entry(row[0]).accuracies.append(float(row[3]))
            elif len(row) >= 7:
                e = entry(row[0])
                cls = row[2]
                for metric, value in zip(
                    ("recall", "precision", "specificity", "f1"), row[3:7]
                ):
                    e.class_metrics[metric].setdefault(cls, []).append(float(value))
            else:
                raise DataError(f"unrecognized row shape: {row}")
        except (ValueError, IndexError) as err:
            raise DataError(f"{source}:{lineno}: {err}") from None
        except DataError as err:
            raise DataError(f"{source}:{lineno}: {err}") from None
    if not entries:
        raise DataError(f"{source}: no data rows")
    return RankingTable(list(entries.values()))


def fold_metric_rows(model: str, fold: int, class_names, metric_set) -> list[list]:
    """CSV rows (ranking input schema) for one evaluated fold."""
    rows = []
    for idx, cls in enumerate(class_names):
        rows.append(
            [
                model,
                fold,
                cls,
                f"{metric_set.recall[idx]:.6f}",
                f"{metric_set.precision[idx]:.6f}",
                f"{metric_set.specificity[idx]:.6f}",
                f"{metric_set.f1[idx]:.6f}",
            ]
        )
    rows.append([model, fold, "_overall_", f"{metric_set.accuracy:.6f}"])
    return rows


def write_ranking_csv(result: ORSResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(_OUTPUT_HEADER)
        for r in result.rows:
            w.writerow(
                [r.model]
                + [f"{v:.9f}" for v in (r.r_rsn, r.f1_rsn, r.p_rsn, r.s_rsn, r.a_rsn, r.fps_rsn, r.ors)]
                + [r.rank]
            )


def format_ranking(result: ORSResult) -> str:
    """Human-readable fixed-width table of an ORS result."""
    widths = [max(len(r.model) for r in result.rows) + 2, 8, 8, 8, 8, 8, 8, 9, 5]
    header = ["model", "R", "F1", "P", "S", "A", "FPS", "ORS", "rank"]
    lines = ["".join(h.ljust(w) for h, w in zip(header, widths))]
    for r in result.rows:
        cells = [
            r.model,
            *(f"{v:.4f}" for v in (r.r_rsn, r.f1_rsn, r.p_rsn, r.s_rsn, r.a_rsn, r.fps_rsn)),
            f"{r.ors:.4f}",
            str(r.rank),
        ]
        lines.append("".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines)


# Bundled example: 17 published image classifiers with CPU throughput and
# five-fold accuracy (mean, sample std, in percent). Used by demos and the
# ranking self-checks.
DEMO_COMPARISON = [
    ("Best-EarNet", 80, 95.23, 0.25),
    ("ShuffleNetV2", 78, 93.39, 1.14),
    ("MobileNetV3", 60, 95.21, 0.46),
    ("FasterNet", 55, 95.41, 0.27),
    ("MobileFormer", 32, 94.57, 0.53),
    ("MobileVit_xxs", 25, 95.33, 0.36),
    ("Xception", 23, 95.68, 0.34),
    ("MobileNetV2", 22, 95.13, 0.34),
    ("InceptionV3", 16, 95.13, 0.54),
    ("MobileOne", 14, 95.02, 0.17),
    ("ResNet50", 10, 95.20, 0.28),
    ("DenseNet169", 9, 95.50, 0.34),
    ("ResNet101", 8, 95.23, 0.36),
    ("VGG16", 7, 89.70, 0.63),
    ("ViT-Base", 6, 85.40, 0.76),
    ("DenseNet161", 5, 95.50, 0.33),
    ("VGG19", 5, 88.92, 1.24),
]

# five synthetic fold offsets with zero mean and unit sample std
_FOLD_PATTERN = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) / np.sqrt(2.5)


def demo_comparison_table() -> RankingTable:
    """The bundled comparison as a ready table (accuracy + FPS only).

    Five fold accuracies per model are reconstructed to match the published
    mean and sample standard deviation exactly.
    """
    models = []
    for name, fps, acc_mean, acc_std in DEMO_COMPARISON:
        folds = (acc_mean + acc_std * _FOLD_PATTERN) / 100.0
        models.append(ModelEntry(name=name, accuracies=folds.tolist(), fps=float(fps)))
    return RankingTable(models)


def demo_comparison_csv() -> str:
    """The bundled comparison rendered in the ranking input CSV schema."""
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(RANKING_INPUT_HEADER)
    for name, fps, acc_mean, acc_std in DEMO_COMPARISON:
        for fold, offset in enumerate(_FOLD_PATTERN):
            w.writerow([name, fold, "_overall_", f"{(acc_mean + acc_std * offset) / 100.0:.9f}"])
        w.writerow([name, "_fps_", fps])
    return out.getvalue()
