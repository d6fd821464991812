"""Neural-network primitives on top of the autodiff core.

All ops take and return :class:`~earnet.tensor.Tensor` in NCHW layout and
register their backward pass on the active tape. Convolution and pooling are
implemented with ``sliding_window_view`` patches plus batched matmul; the
col2im scatter in the backward pass loops only over kernel offsets, never
over pixels.

Composite attention ops (``eca``, ``spatial_attention``) are built from the
primitive ops, so their gradients need no dedicated backward code.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ContractError, DataError, ShapeError
from .tensor import Tensor, concat, mean, mul, record_op, reduce_max, reshape

__all__ = [
    "conv2d",
    "batchnorm2d",
    "relu",
    "sigmoid",
    "pool2d",
    "channel_shuffle",
    "dropblock",
    "dropblock_gamma",
    "eca",
    "spatial_attention",
    "linear",
    "softmax",
    "softmax_cross_entropy",
]


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def _out_extent(size: int, pad: int, k: int, stride: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _check_window(h: int, w: int, pad: tuple[int, int], k: tuple[int, int], stride: tuple[int, int], what: str):
    if stride[0] < 1 or stride[1] < 1:
        raise ConfigError(f"{what}: stride must be positive, got {stride}")
    if pad[0] < 0 or pad[1] < 0:
        raise ConfigError(f"{what}: padding must be non-negative, got {pad}")
    if h + 2 * pad[0] < k[0] or w + 2 * pad[1] < k[1]:
        raise ShapeError(
            f"{what}: kernel {k} does not fit padded input {h + 2 * pad[0]}x{w + 2 * pad[1]}"
        )


def _patches(xp: np.ndarray, k: tuple[int, int], stride: tuple[int, int]) -> np.ndarray:
    """(N,C,Hp,Wp) -> (N,C,Ho,Wo,Kh,Kw) strided windows (a view)."""
    win = sliding_window_view(xp, k, axis=(2, 3))
    return win[:, :, :: stride[0], :: stride[1]]


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride=1,
    padding=0,
    groups: int = 1,
) -> Tensor:
    """Grouped 2-D cross-correlation.

    Args:
        x: input, N x Cin x H x W.
        weight: kernels, Cout x Cin/groups x Kh x Kw.
        bias: optional per-output-channel offset, length Cout.
        stride: int or (sh, sw).
        padding: int or (ph, pw), zeros on both sides.
        groups: channel groups; 1 = dense, Cin = depthwise.

    Returns:
        N x Cout x H' x W' with H' = floor((H + 2*ph - Kh)/sh) + 1.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d tensors, got {x.shape} and {weight.shape}")
    stride = _pair(stride)
    padding = _pair(padding)
    n, cin, h, w = x.shape
    cout, cg, kh, kw = weight.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ConfigError(
            f"groups={groups} must divide in-channels {cin} and out-channels {cout}"
        )
    if cg != cin // groups:
        raise ShapeError(
            f"weight expects {cg * groups} in-channels, input has {cin}"
        )
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} != ({cout},)")
    _check_window(h, w, padding, (kh, kw), stride, "conv2d")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding[0],) * 2, (padding[1],) * 2))
    ho = _out_extent(h, padding[0], kh, stride[0])
    wo = _out_extent(w, padding[1], kw, stride[1])
    # (N,C,Ho,Wo,Kh,Kw) -> (N,G,Cg*Kh*Kw,Ho*Wo)
    cols = (
        _patches(xp, (kh, kw), stride)
        .transpose(0, 1, 4, 5, 2, 3)
        .reshape(n, groups, cg * kh * kw, ho * wo)
    )
    wmat = weight.data.reshape(groups, cout // groups, cg * kh * kw)
    out = np.matmul(wmat[None], cols).reshape(n, cout, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)

    def build():
        hp, wp = xp.shape[2], xp.shape[3]

        def bwd(g):
            gr = g.reshape(n, groups, cout // groups, ho * wo)
            dw = dx = db = None
            if weight.requires_grad:
                dw = (
                    np.matmul(gr, cols.transpose(0, 1, 3, 2))
                    .sum(axis=0)
                    .reshape(weight.shape)
                )
            if x.requires_grad:
                dcols = np.matmul(wmat.transpose(0, 2, 1)[None], gr)
                dcols = dcols.reshape(n, cin, kh, kw, ho, wo)
                dxp = np.zeros((n, cin, hp, wp), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        dxp[
                            :,
                            :,
                            i : i + stride[0] * ho : stride[0],
                            j : j + stride[1] * wo : stride[1],
                        ] += dcols[:, :, i, j]
                dx = dxp[
                    :, :, padding[0] : padding[0] + h, padding[1] : padding[1] + w
                ]
            if bias is not None and bias.requires_grad:
                db = g.sum(axis=(0, 2, 3))
            return (dx, dw) if bias is None else (dx, dw, db)

        return bwd

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record_op(out, inputs, build)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    momentum: float = 0.1,
    eps: float = 1e-5,
    training: bool = False,
) -> Tensor:
    """Per-channel batch normalization, y = gamma*(x-mu)/sqrt(var+eps)+beta.

    Training mode normalizes with batch statistics (biased variance) and
    folds them into the running buffers in place:
    ``running <- (1-momentum)*running + momentum*batch`` (unbiased variance
    for the running update). Eval mode normalizes with the running buffers.
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d expects N x C x H x W, got {x.shape}")
    c = x.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)):
        if t.shape != (c,):
            raise ShapeError(f"{name} shape {t.shape} != ({c},)")
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    m = x.shape[0] * x.shape[2] * x.shape[3]
    if training and m == 1:
        raise ContractError(
            "batchnorm2d in training mode saw a single value per channel; "
            "batch statistics are undefined, use a larger batch"
        )

    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))  # biased, used for normalization
        unbiased = var * (m / (m - 1))
        running_mean.data[...] = (1 - momentum) * running_mean.data + momentum * mu
        running_var.data[...] = (1 - momentum) * running_var.data + momentum * unbiased
    else:
        mu = running_mean.data
        var = running_var.data

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

    def build():
        def bwd(g):
            dgamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
            dbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
            dx = None
            if x.requires_grad:
                k = (gamma.data * inv_std).reshape(1, c, 1, 1)
                if training:
                    g_mean = g.mean(axis=(0, 2, 3), keepdims=True)
                    gx_mean = (g * xhat).mean(axis=(0, 2, 3), keepdims=True)
                    dx = k * (g - g_mean - xhat * gx_mean)
                else:
                    dx = k * g
            return dx, dgamma, dbeta

        return bwd

    return record_op(out.astype(x.dtype, copy=False), (x, gamma, beta), build)


def relu(x: Tensor) -> Tensor:
    """max(0, x); subgradient 0 at the kink."""
    out = np.maximum(x.data, 0)

    def build():
        mask = x.data > 0

        def bwd(g):
            return (g * mask,)

        return bwd

    return record_op(out, (x,), build)


def sigmoid(x: Tensor) -> Tensor:
    """1/(1+exp(-x)), computed branch-wise for stability at large |x|."""
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def build():
        s = out

        def bwd(g):
            return (g * s * (1.0 - s),)

        return bwd

    return record_op(out, (x,), build)


def pool2d(x: Tensor, kind: str, kernel, stride=None, padding=0) -> Tensor:
    """Sliding-window reduction, kind in {max, avg}.

    Average pooling divides by the full kernel area even where the window
    overlaps padding (count-include-pad semantics). Max pooling pads with
    -inf so padding never wins; gradient flows to the first maximal element
    of each window.
    """
    if kind not in ("max", "avg"):
        raise ConfigError(f"pool2d kind must be 'max' or 'avg', got {kind!r}")
    if x.ndim != 4:
        raise ShapeError(f"pool2d expects N x C x H x W, got {x.shape}")
    kernel = _pair(kernel)
    stride = kernel if stride is None else _pair(stride)
    padding = _pair(padding)
    n, c, h, w = x.shape
    _check_window(h, w, padding, kernel, stride, "pool2d")

    fill = -np.inf if kind == "max" else 0.0
    xp = np.pad(
        x.data,
        ((0, 0), (0, 0), (padding[0],) * 2, (padding[1],) * 2),
        constant_values=fill,
    )
    win = _patches(xp, kernel, stride)
    n_, c_, ho, wo = win.shape[:4]
    kh, kw = kernel

    if kind == "avg":
        out = win.sum(axis=(4, 5)) / (kh * kw)

        def build():
            hp, wp = xp.shape[2:]

            def bwd(g):
                gshare = g / (kh * kw)
                dxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        dxp[
                            :,
                            :,
                            i : i + stride[0] * ho : stride[0],
                            j : j + stride[1] * wo : stride[1],
                        ] += gshare
                return (dxp[:, :, padding[0] : padding[0] + h, padding[1] : padding[1] + w],)

            return bwd

    else:
        flat = win.reshape(n_, c_, ho, wo, kh * kw)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

        def build():
            hp, wp = xp.shape[2:]

            def bwd(g):
                dxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        hit = arg == (i * kw + j)
                        dxp[
                            :,
                            :,
                            i : i + stride[0] * ho : stride[0],
                            j : j + stride[1] * wo : stride[1],
                        ] += g * hit
                return (dxp[:, :, padding[0] : padding[0] + h, padding[1] : padding[1] + w],)

            return bwd

    return record_op(np.ascontiguousarray(out), (x,), build)


def channel_shuffle(x: Tensor, groups: int) -> Tensor:
    """Interleave channel groups: reshape (g, C/g), transpose, flatten.

    A pure permutation of channel planes, so the backward pass is the
    inverse permutation.
    """
    if x.ndim != 4:
        raise ShapeError(f"channel_shuffle expects N x C x H x W, got {x.shape}")
    n, c, h, w = x.shape
    if groups < 1 or c % groups:
        raise ConfigError(f"groups={groups} must divide channels {c}")
    if groups == 1:
        return x
    out = (
        x.data.reshape(n, groups, c // groups, h, w)
        .swapaxes(1, 2)
        .reshape(n, c, h, w)
    )

    def build():
        def bwd(g):
            dx = (
                g.reshape(n, c // groups, groups, h, w)
                .swapaxes(1, 2)
                .reshape(n, c, h, w)
            )
            return (dx,)

        return bwd

    return record_op(np.ascontiguousarray(out), (x,), build)


def dropblock_gamma(h: int, w: int, block_size: int, drop_rate: float) -> float:
    """Seed probability that targets an expected dropped fraction of drop_rate."""
    valid = (h - block_size + 1) * (w - block_size + 1)
    return drop_rate * (h * w) / (block_size**2 * valid)


def dropblock(
    x: Tensor,
    block_size: int,
    drop_rate: float,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> Tensor:
    """Zero contiguous block_size x block_size squares during training.

    Seeds are Bernoulli-sampled per feature plane over the region where a
    block fits entirely, then dilated to full blocks. Kept units in each
    plane are rescaled by total/kept so the expected activation magnitude is
    preserved. Eval mode and drop_rate 0 return the input unchanged (the
    same tensor, not a copy).
    """
    if not 0 <= drop_rate < 1:
        raise ConfigError(f"drop_rate must be in [0, 1), got {drop_rate}")
    if block_size < 1 or block_size % 2 == 0:
        raise ConfigError(f"block_size must be odd and positive, got {block_size}")
    if not training or drop_rate == 0.0:
        return x
    if x.ndim != 4:
        raise ShapeError(f"dropblock expects N x C x H x W, got {x.shape}")
    n, c, h, w = x.shape
    if block_size > h or block_size > w:
        raise ConfigError(
            f"block_size {block_size} exceeds feature map {h}x{w}"
        )
    if rng is None:
        raise ContractError("dropblock in training mode needs an rng")

    gamma = dropblock_gamma(h, w, block_size, drop_rate)
    vh, vw = h - block_size + 1, w - block_size + 1
    seeds = rng.random((n, c, vh, vw)) < gamma
    dropped = np.zeros((n, c, h, w), dtype=bool)
    for i in range(block_size):
        for j in range(block_size):
            dropped[:, :, i : i + vh, j : j + vw] |= seeds
    keep = (~dropped).astype(x.dtype)
    kept = keep.sum(axis=(2, 3), keepdims=True)
    total = float(h * w)
    # a fully-dropped plane stays all-zero instead of dividing by zero
    scale = np.divide(total, kept, out=np.zeros_like(kept), where=kept > 0)
    m = keep * scale
    out = x.data * m

    def build():
        def bwd(g):
            return (g * m,)

        return bwd

    return record_op(out, (x,), build)


def eca(x: Tensor, weight: Tensor) -> Tensor:
    """Efficient channel attention: rescale channels by a gate in (0, 1).

    The gate is a global average pool over space followed by a 1-D
    convolution along the channel axis (one shared weight vector, no bias)
    and a sigmoid. ``weight`` has shape 1 x 1 x 1 x k with k odd.
    """
    if weight.shape[:3] != (1, 1, 1):
        raise ShapeError(f"eca weight must be 1 x 1 x 1 x k, got {weight.shape}")
    k = weight.shape[3]
    if k % 2 == 0:
        raise ConfigError(f"eca kernel size must be odd, got {k}")
    n, c = x.shape[0], x.shape[1]
    pooled = mean(x, dims=[2, 3])                     # N x C x 1 x 1
    row = reshape(pooled, (n, 1, 1, c))               # channel axis as width
    gate = conv2d(row, weight, padding=(0, (k - 1) // 2))
    scale = reshape(sigmoid(gate), (n, c, 1, 1))
    return mul(x, scale)


def spatial_attention(fmerge: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-pixel attention logits from channel-wise max and mean maps.

    The two 1-channel maps are stacked and passed through a 3x3 conv
    (2 channels in, 1 out, padding 1, bias). Returns N x 1 x H x W logits;
    the caller applies the sigmoid.
    """
    if fmerge.ndim != 4:
        raise ShapeError(f"spatial_attention expects N x C x H x W, got {fmerge.shape}")
    mx = reduce_max(fmerge, dims=[1])
    mn = mean(fmerge, dims=[1])
    stacked = concat([mx, mn], axis=1)
    return conv2d(stacked, weight, bias, stride=1, padding=1)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine projection y = x @ weight.T + bias for x: N x D, weight: K x D."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"linear expects N x D and K x D, got {x.shape} and {weight.shape}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def build():
        def bwd(g):
            dx = g @ weight.data if x.requires_grad else None
            dw = g.T @ x.data if weight.requires_grad else None
            if bias is None:
                return dx, dw
            db = g.sum(axis=0) if bias.requires_grad else None
            return dx, dw, db

        return bwd

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record_op(out, inputs, build)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a plain array (inference-side probabilities)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits).

    Stabilized by max-subtraction; the fused backward pass is
    (softmax - onehot) / N.
    """
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects N x K logits, got {logits.shape}")
    t = np.asarray(targets)
    n, k = logits.shape
    if t.shape != (n,):
        raise ShapeError(f"targets shape {t.shape} != ({n},)")
    if not np.issubdtype(t.dtype, np.integer):
        raise DataError(f"targets must be integers, got dtype {t.dtype}")
    if t.size and (t.min() < 0 or t.max() >= k):
        raise DataError(f"target classes must lie in [0, {k}), got range [{t.min()}, {t.max()}]")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = np.asarray(-logp[np.arange(n), t].mean(), dtype=logits.dtype)

    def build():
        def bwd(g):
            p = np.exp(logp)
            p[np.arange(n), t] -= 1.0
            return (g * p / n,)

        return bwd

    return record_op(loss, (logits,), build)
