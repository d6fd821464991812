"""Network definitions: the fused two-path classifier and its plain backbone
baseline.

The main model keeps a ShuffleNetV2-x0.5 backbone (stem + three stages of
split/shuffle units) and adds:

* a high-level path: 3x3 conv + BN + ReLU lifting stage-4 features to the
  fusion width,
* a low-level branch off stage 2: 4x4 average pool, pointwise conv,
  DropBlock, channel attention, BN, ReLU,
* a fusion block gating the two paths per pixel through spatial attention,
* three classifier heads (two auxiliary, one final); prediction reads only
  the final head.

All widths scale linearly with ``width_multiplier`` so a quarter-width,
64-pixel variant runs the full test suite in seconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .layers import (
    ECA,
    BatchNorm2d,
    Conv2d,
    DropBlock,
    Linear,
    Module,
    Sequential,
    SpatialAttention,
)
from .tensor import Tensor, concat, mean, mul, reshape, slice_axis, sub

__all__ = [
    "ModelConfig",
    "ForwardOutput",
    "BestEarNet",
    "ShuffleNetBaseline",
    "build_best_earnet",
    "build_shufflenet_baseline",
    "PAPER_STAGE_CHANNELS",
]

# stem, stage2, stage3, stage4 output widths at multiplier 1.0
PAPER_STAGE_CHANNELS = (24, 48, 96, 192)
_BASELINE_FINAL_CHANNELS = 1024
_STAGE_REPEATS = (3, 7, 3)  # basic units after each downsample unit


@dataclass(frozen=True)
class ModelConfig:
    """Model hyperparameters.

    ``width_multiplier`` scales every channel width, including
    ``fhigh_channels``; scaled widths must come out as positive even
    integers. The DropBlock size is clamped at build time to the largest odd
    extent that fits the fused feature map, so small inputs (e.g. 64 px,
    where the fused map is 2x2) stay valid.
    """

    num_classes: int = 9
    width_multiplier: float = 1.0
    input_size: int = 224
    dropblock_size: int = 3
    dropblock_rate: float = 0.1
    lgsff_groups: int = 8
    fhigh_channels: int = 384
    eca_kernel: int = 5

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_size % 32:
            raise ConfigError(
                f"input_size must be divisible by 32, got {self.input_size}"
            )
        if not 0 <= self.dropblock_rate < 1:
            raise ConfigError(f"dropblock_rate must be in [0, 1), got {self.dropblock_rate}")
        if self.dropblock_size < 1 or self.dropblock_size % 2 == 0:
            raise ConfigError(f"dropblock_size must be odd and positive, got {self.dropblock_size}")
        if self.eca_kernel % 2 == 0:
            raise ConfigError(f"eca_kernel must be odd, got {self.eca_kernel}")
        for base in PAPER_STAGE_CHANNELS + (self.fhigh_channels,):
            self.scale(base)
        if self.scale(self.fhigh_channels) % self.lgsff_groups:
            raise ConfigError(
                f"fusion width {self.scale(self.fhigh_channels)} not divisible by "
                f"lgsff_groups={self.lgsff_groups}"
            )

    def scale(self, channels: int) -> int:
        scaled = channels * self.width_multiplier
        rounded = int(round(scaled))
        if abs(scaled - rounded) > 1e-9 or rounded < 2 or rounded % 2:
            raise ConfigError(
                f"width_multiplier={self.width_multiplier} scales {channels} to "
                f"{scaled}; widths must be positive even integers"
            )
        return rounded

    @property
    def stage_channels(self) -> tuple[int, int, int, int]:
        return tuple(self.scale(c) for c in PAPER_STAGE_CHANNELS)

    @property
    def fused_channels(self) -> int:
        return self.scale(self.fhigh_channels)

    @property
    def fused_spatial(self) -> int:
        return self.input_size // 32

    @property
    def effective_dropblock_size(self) -> int:
        """Configured size clamped to the largest odd extent fitting the fused map."""
        fit = self.fused_spatial if self.fused_spatial % 2 else self.fused_spatial - 1
        return max(1, min(self.dropblock_size, fit))


@dataclass
class ForwardOutput:
    """Per-head logits plus retained activations (fused map feeds Grad-CAM)."""

    logits1: Tensor
    logits2: Tensor
    logits3: Tensor
    lgsff_out: Tensor
    stages: dict[str, Tensor] = field(default_factory=dict)


class ShuffleBasicUnit(Module):
    """Stride-1 unit: split channels in half, transform one half, re-mix.

    Transform path is PW conv + BN + ReLU, 3x3 depthwise + BN, PW conv +
    BN + ReLU; the halves are concatenated and shuffled across 2 groups.
    """

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        if channels % 2:
            raise ConfigError(f"unit channels must be even, got {channels}")
        half = channels // 2
        self.pw1 = Conv2d(half, half, 1, rng, bias=False)
        self.bn1 = BatchNorm2d(half)
        self.dw = Conv2d(half, half, 3, rng, padding=1, groups=half, bias=False)
        self.bn2 = BatchNorm2d(half)
        self.pw2 = Conv2d(half, half, 1, rng, bias=False)
        self.bn3 = BatchNorm2d(half)
        self.half = half

    def forward(self, x: Tensor) -> Tensor:
        keep = slice_axis(x, 1, 0, self.half)
        t = slice_axis(x, 1, self.half, 2 * self.half)
        t = ops.relu(self.bn1(self.pw1(t)))
        t = self.bn2(self.dw(t))
        t = ops.relu(self.bn3(self.pw2(t)))
        return ops.channel_shuffle(concat([keep, t], axis=1), 2)


class ShuffleDownsampleUnit(Module):
    """Stride-2 unit: both branches downsample, concat doubles the width."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        super().__init__()
        half = out_channels // 2
        # shortcut branch: depthwise stride 2, then pointwise
        self.s_dw = Conv2d(
            in_channels, in_channels, 3, rng, stride=2, padding=1,
            groups=in_channels, bias=False,
        )
        self.s_bn1 = BatchNorm2d(in_channels)
        self.s_pw = Conv2d(in_channels, half, 1, rng, bias=False)
        self.s_bn2 = BatchNorm2d(half)
        # main branch: pointwise, depthwise stride 2, pointwise
        self.m_pw1 = Conv2d(in_channels, half, 1, rng, bias=False)
        self.m_bn1 = BatchNorm2d(half)
        self.m_dw = Conv2d(half, half, 3, rng, stride=2, padding=1, groups=half, bias=False)
        self.m_bn2 = BatchNorm2d(half)
        self.m_pw2 = Conv2d(half, half, 1, rng, bias=False)
        self.m_bn3 = BatchNorm2d(half)

    def forward(self, x: Tensor) -> Tensor:
        s = ops.relu(self.s_bn2(self.s_pw(self.s_bn1(self.s_dw(x)))))
        m = ops.relu(self.m_bn1(self.m_pw1(x)))
        m = self.m_bn2(self.m_dw(m))
        m = ops.relu(self.m_bn3(self.m_pw2(m)))
        return ops.channel_shuffle(concat([s, m], axis=1), 2)


class Stem(Module):
    """3x3 stride-2 conv + BN + ReLU, then 3x3 stride-2 max pool."""

    def __init__(self, out_channels: int, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(3, out_channels, 3, rng, stride=2, padding=1, bias=False)
        self.bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return ops.pool2d(ops.relu(self.bn(self.conv(x))), "max", 3, 2, padding=1)


class ClassHead(Module):
    """Global average pool, then a linear projection to raw logits."""

    def __init__(self, in_channels: int, num_classes: int, rng: np.random.Generator):
        super().__init__()
        self.fc = Linear(in_channels, num_classes, rng)
        self.in_channels = in_channels

    def forward(self, features: Tensor) -> Tensor:
        if features.ndim != 4 or features.shape[1] != self.in_channels:
            raise ShapeError(
                f"head expects N x {self.in_channels} x H x W, got {features.shape}"
            )
        pooled = mean(features, dims=[2, 3])
        return self.fc(reshape(pooled, (features.shape[0], self.in_channels)))


def _make_stage(in_ch: int, out_ch: int, repeats: int, rng: np.random.Generator) -> Sequential:
    units: list[Module] = [ShuffleDownsampleUnit(in_ch, out_ch, rng)]
    units += [ShuffleBasicUnit(out_ch, rng) for _ in range(repeats)]
    return Sequential(*units)


class _Backbone(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        stem_ch, s2, s3, s4 = cfg.stage_channels
        self.stem = Stem(stem_ch, rng)
        self.stage2 = _make_stage(stem_ch, s2, _STAGE_REPEATS[0], rng)
        self.stage3 = _make_stage(s2, s3, _STAGE_REPEATS[1], rng)
        self.stage4 = _make_stage(s3, s4, _STAGE_REPEATS[2], rng)


def _expect(t: Tensor, shape: tuple[int, ...], what: str) -> None:
    if t.shape != shape:
        raise ShapeError(f"{what} produced {t.shape}, expected {shape}")


class BestEarNet(Module):
    """Backbone + two-path fusion + three heads. Build via :func:`build_best_earnet`."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dropblock_seeds=(1, 2)):
        super().__init__()
        self.cfg = cfg
        stem_ch, s2, s3, s4 = cfg.stage_channels
        fused = cfg.fused_channels
        block = cfg.effective_dropblock_size

        self.backbone = _Backbone(cfg, rng)

        # high-level path off stage 4
        self.fhigh_conv = Conv2d(s4, fused, 3, rng, padding=1, bias=False)
        self.fhigh_bn = BatchNorm2d(fused)

        # low-level branch off stage 2
        self.branch_pw = Conv2d(s2, fused, 1, rng, bias=False)
        self.branch_drop = DropBlock(block, cfg.dropblock_rate, seed=dropblock_seeds[0])
        self.branch_eca = ECA(rng, cfg.eca_kernel)
        self.branch_bn = BatchNorm2d(fused)

        # fusion: grouped pointwise merge, spatial-attention gate
        self.lgsff_gpw = Conv2d(fused, fused, 1, rng, groups=cfg.lgsff_groups, bias=False)
        self.lgsff_bn = BatchNorm2d(fused)
        self.lgsff_sa = SpatialAttention(rng)
        self.lgsff_drop = DropBlock(block, cfg.dropblock_rate, seed=dropblock_seeds[1])

        self.head1 = ClassHead(s2, cfg.num_classes, rng)
        self.head2 = ClassHead(s3, cfg.num_classes, rng)
        self.head3 = ClassHead(fused, cfg.num_classes, rng)

    def branch_path(self, stage2_out: Tensor) -> Tensor:
        """Low-level feature path: 4x4 avg pool, PW conv, DropBlock, channel
        attention, BN, ReLU."""
        h = stage2_out.shape[2]
        if h % 4 or stage2_out.shape[3] % 4:
            raise ConfigError(
                f"branch path needs spatial size divisible by 4, got {stage2_out.shape}"
            )
        t = ops.pool2d(stage2_out, "avg", 4, 4)
        t = self.branch_pw(t)
        t = self.branch_drop(t)
        t = self.branch_eca(t)
        return ops.relu(self.branch_bn(t))

    def lgsff(self, flow: Tensor, fhigh: Tensor) -> Tensor:
        """Fuse the two paths through a per-pixel convex gate.

        The merged map (elementwise sum, grouped PW conv, BN, ReLU) drives
        spatial attention; its sigmoid gates flow against DropBlock(fhigh).
        Computed as fhigh' + w*(flow - fhigh') so equal inputs pass through
        bit-exactly.
        """
        if flow.shape != fhigh.shape:
            raise ShapeError(f"fusion inputs differ: {flow.shape} vs {fhigh.shape}")
        fmerge = ops.relu(self.lgsff_bn(self.lgsff_gpw(flow + fhigh)))
        gate = ops.sigmoid(self.lgsff_sa(fmerge))  # N x 1 x H x W
        fhigh_d = self.lgsff_drop(fhigh)
        return fhigh_d + mul(gate, sub(flow, fhigh_d))

    def forward(self, x: Tensor) -> ForwardOutput:
        cfg = self.cfg
        n = x.shape[0]
        if x.shape != (n, 3, cfg.input_size, cfg.input_size):
            raise ShapeError(
                f"expected N x 3 x {cfg.input_size} x {cfg.input_size} input, got {x.shape}"
            )
        stem_ch, s2, s3, s4 = cfg.stage_channels
        side = cfg.input_size
        fused = cfg.fused_channels
        fs = cfg.fused_spatial

        stem = self.backbone.stem(x)
        _expect(stem, (n, stem_ch, side // 4, side // 4), "stem")
        f2 = self.backbone.stage2(stem)
        _expect(f2, (n, s2, side // 8, side // 8), "stage2")
        f3 = self.backbone.stage3(f2)
        _expect(f3, (n, s3, side // 16, side // 16), "stage3")
        f4 = self.backbone.stage4(f3)
        _expect(f4, (n, s4, fs, fs), "stage4")

        flow = self.branch_path(f2)
        _expect(flow, (n, fused, fs, fs), "branch path")
        fhigh = ops.relu(self.fhigh_bn(self.fhigh_conv(f4)))
        _expect(fhigh, (n, fused, fs, fs), "high-level path")
        fused_out = self.lgsff(flow, fhigh)
        _expect(fused_out, (n, fused, fs, fs), "fusion")

        return ForwardOutput(
            logits1=self.head1(f2),
            logits2=self.head2(f3),
            logits3=self.head3(fused_out),
            lgsff_out=fused_out,
            stages={
                "stem": stem,
                "stage2": f2,
                "stage3": f3,
                "stage4": f4,
                "flow": flow,
                "fhigh": fhigh,
            },
        )

    def predict(self, x: Tensor) -> np.ndarray:
        """Class indices from the final head only."""
        return np.argmax(self.forward(x).logits3.numpy(), axis=1)


class ShuffleNetBaseline(Module):
    """Plain classifier: backbone, 1x1 conv to the final width, pool, linear."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        _, _, _, s4 = cfg.stage_channels
        final = cfg.scale(_BASELINE_FINAL_CHANNELS)
        self.backbone = _Backbone(cfg, rng)
        self.conv5 = Conv2d(s4, final, 1, rng, bias=False)
        self.bn5 = BatchNorm2d(final)
        self.head = ClassHead(final, cfg.num_classes, rng)

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1:] != (3, cfg.input_size, cfg.input_size):
            raise ShapeError(
                f"expected N x 3 x {cfg.input_size} x {cfg.input_size} input, got {x.shape}"
            )
        t = self.backbone.stem(x)
        t = self.backbone.stage2(t)
        t = self.backbone.stage3(t)
        t = self.backbone.stage4(t)
        t = ops.relu(self.bn5(self.conv5(t)))
        return self.head(t)

    def predict(self, x: Tensor) -> np.ndarray:
        return np.argmax(self.forward(x).numpy(), axis=1)


def build_best_earnet(cfg: ModelConfig | None = None, seed: int = 0) -> BestEarNet:
    """Construct the fused model with seed-reproducible initialization."""
    cfg = cfg or ModelConfig()
    rng = np.random.default_rng(seed)
    model = BestEarNet(cfg, rng, dropblock_seeds=(seed * 2 + 1, seed * 2 + 2))
    return model


def build_shufflenet_baseline(cfg: ModelConfig | None = None, seed: int = 0) -> ShuffleNetBaseline:
    cfg = cfg or ModelConfig()
    return ShuffleNetBaseline(cfg, np.random.default_rng(seed))


def with_num_classes(cfg: ModelConfig, num_classes: int) -> ModelConfig:
    """Config copy with a different head width (class-extension runs)."""
    return replace(cfg, num_classes=num_classes)
