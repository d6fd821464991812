"""Gradient-weighted class activation maps over the fused feature map.

The target score is the raw logit of the chosen class; channel weights are
the spatial means of the score's gradient at the target activation, the raw
map is the ReLU of the weighted channel sum, and the result is bilinearly
upsampled to the input size and min-max normalized to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import denormalize
from .errors import ConfigError, ContractError, DataError, ShapeError
from .tensor import Tape, Tensor, mul, tsum

DEFAULT_LAYER = "lgsff"


@dataclass(frozen=True)
class Heatmap:
    """Normalized class-evidence map; max is 1 unless the map is all zero."""

    values: np.ndarray
    target_class: int
    layer: str
    source_size: tuple[int, int]
    all_zero: bool = False


def bilinear_upsample(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resize of a 2-D map."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(f"expected a 2-D map, got shape {values.shape}")
    in_h, in_w = values.shape
    if (in_h, in_w) == (out_h, out_w):
        return values.copy()

    def axis_coords(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    ylo, yhi, wy = axis_coords(in_h, out_h)
    xlo, xhi, wx = axis_coords(in_w, out_w)
    top = values[ylo][:, xlo] * (1 - wx) + values[ylo][:, xhi] * wx
    bot = values[yhi][:, xlo] * (1 - wx) + values[yhi][:, xhi] * wx
    return top * (1 - wy[:, None]) + bot * wy[:, None]


def _resolve_activation(out, layer: str) -> Tensor:
    if layer == DEFAULT_LAYER:
        act = out.lgsff_out
    else:
        act = out.stages.get(layer) if out.stages else None
    if act is None:
        retained = [DEFAULT_LAYER] + sorted(out.stages or ())
        raise ConfigError(f"layer {layer!r} has no retained activations; have {retained}")
    return act


def grad_cam(model, image: np.ndarray, target_class: int | None = None,
             layer: str = DEFAULT_LAYER) -> Heatmap:
    """Compute a class-evidence heatmap at the input's spatial size.

    The model must be in eval mode; parameters are read, never written.
    """
    if getattr(model, "training", False):
        raise ContractError("grad_cam requires the model in eval mode")
    image = np.asarray(image)
    if image.ndim == 3:
        image = image[None]
    if image.ndim != 4 or image.shape[0] != 1:
        raise ShapeError(f"expected one (C, H, W) image, got shape {image.shape}")
    src_h, src_w = image.shape[2], image.shape[3]

    with Tape() as tape:
        out = model(Tensor(image.astype(np.float32)))
        activation = _resolve_activation(out, layer)
        logits = out.logits3
        num_classes = logits.data.shape[1]
        if target_class is None:
            target_class = int(np.argmax(logits.data[0]))
        if not 0 <= target_class < num_classes:
            raise DataError(
                f"target class {target_class} outside 0..{num_classes - 1}"
            )
        onehot = np.zeros_like(logits.data)
        onehot[0, target_class] = 1.0
        score = tsum(mul(logits, Tensor(onehot)))
    grads = tape.backward(score, populate_grad=False)
    d_act = grads.get(activation)
    if d_act is None:
        raise ConfigError(f"layer {layer!r} does not feed the class score")

    weights = d_act.mean(axis=(2, 3), keepdims=True)  # (1, C, 1, 1)
    raw = np.maximum((weights * activation.data).sum(axis=1)[0], 0.0)
    upsampled = bilinear_upsample(raw, src_h, src_w)

    lo = float(upsampled.min())
    hi = float(upsampled.max())
    if hi == lo:
        if hi == 0.0:
            return Heatmap(
                np.zeros((src_h, src_w), dtype=np.float32),
                target_class,
                layer,
                (src_h, src_w),
                all_zero=True,
            )
        values = np.ones((src_h, src_w), dtype=np.float32)
    else:
        values = ((upsampled - lo) / (hi - lo)).astype(np.float32)
    return Heatmap(values, target_class, layer, (src_h, src_w))


# piecewise-linear blue -> cyan -> yellow -> red colormap
_CMAP_STOPS = np.array(
    [
        [0.0, 0.0, 1.0],
        [0.0, 1.0, 1.0],
        [1.0, 1.0, 0.0],
        [1.0, 0.0, 0.0],
    ],
    dtype=np.float64,
)


def colormap(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] intensities to uint8 RGB, blue for low through red for high."""
    t = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    pos = t * (len(_CMAP_STOPS) - 1)
    idx = np.minimum(pos.astype(np.int64), len(_CMAP_STOPS) - 2)
    frac = (pos - idx)[..., None]
    rgb = _CMAP_STOPS[idx] * (1 - frac) + _CMAP_STOPS[idx + 1] * frac
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


def overlay(heatmap: Heatmap, image: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Alpha-blend the colormapped heatmap over the image; returns uint8 RGB.

    ``image`` is either uint8 RGB (H, W, 3) or a normalized (3, H, W) input
    tensor, which is de-normalized first.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[0] == 3 and image.dtype != np.uint8:
        image = denormalize(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ShapeError(f"expected uint8 (H, W, 3) image, got {image.shape} {image.dtype}")
    if heatmap.values.shape != image.shape[:2]:
        raise ShapeError(
            f"heatmap {heatmap.values.shape} does not match image {image.shape[:2]}"
        )
    if alpha == 0.0:
        return image.copy()
    colored = colormap(heatmap.values)
    if alpha == 1.0:
        return colored
    blended = (1.0 - alpha) * image.astype(np.float64) + alpha * colored.astype(np.float64)
    return np.clip(np.rint(blended), 0, 255).astype(np.uint8)


def save_png(pixels: np.ndarray, path) -> None:
    """Write a uint8 RGB array as PNG."""
    from PIL import Image

    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(path)
