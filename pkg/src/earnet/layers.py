"""Stateful layers: parameter containers around the functional ops.

:class:`Module` tracks parameters, buffers, and submodules in attribute
assignment order. That order is the canonical graph order used for
parameter counting and for the checkpoint format, so layer attributes must
be assigned in forward-pass order.

Weight init is uniform Kaiming fan-in: U(-1/sqrt(fan_in), +1/sqrt(fan_in))
for weights and biases alike. Every layer takes the rng used to draw its
weights, so a builder that threads one seeded generator through
construction gets reproducible models.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .errors import ConfigError
from .tensor import Buffer, Parameter, Tensor

__all__ = [
    "Module",
    "Conv2d",
    "BatchNorm2d",
    "Linear",
    "ECA",
    "DropBlock",
    "SpatialAttention",
    "Sequential",
]


class Module:
    """Base class for layers and models.

    Subclasses assign :class:`Parameter`, :class:`Buffer`, and ``Module``
    attributes in ``__init__``; this class records them in order and exposes
    recursive, dotted-name iteration.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Buffer):
            self._buffers[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, Buffer]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def named_state(self) -> Iterator[tuple[str, Tensor]]:
        """Parameters and buffers interleaved in graph order (checkpoint order)."""
        for name, p in self._params.items():
            yield name, p
        for name, b in self._buffers.items():
            yield name, b
        for name, m in self._modules.items():
            for sub, t in m.named_state():
                yield f"{name}.{sub}", t

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        """Total trainable scalars (buffers excluded)."""
        return sum(p.size for p in self.parameters())

    def modules(self) -> Iterator["Module"]:
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def train(self) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", True)
        return self

    def eval(self) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", False)
        return self

    def astype(self, dtype) -> "Module":
        """Cast all state in place (float64 for the gradient-check path)."""
        for _, t in self.named_state():
            t.data = t.data.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(Module):
    """Grouped 2-D convolution layer; bias off when a BatchNorm follows."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size,
        rng: np.random.Generator,
        stride=1,
        padding=0,
        groups: int = 1,
        bias: bool = True,
    ):
        super().__init__()
        kh, kw = ops._pair(kernel_size)
        if groups < 1 or in_channels % groups or out_channels % groups:
            raise ConfigError(
                f"groups={groups} must divide channels {in_channels}->{out_channels}"
            )
        fan_in = (in_channels // groups) * kh * kw
        self.weight = Parameter(
            _kaiming_uniform(rng, (out_channels, in_channels // groups, kh, kw), fan_in)
        )
        self.bias = Parameter(_kaiming_uniform(rng, (out_channels,), fan_in)) if bias else None
        self.stride = ops._pair(stride)
        self.padding = ops._pair(padding)
        self.groups = groups

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(
            x, self.weight, self.bias, self.stride, self.padding, self.groups
        )


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(channels, dtype=np.float32))
        self.beta = Parameter(np.zeros(channels, dtype=np.float32))
        self.running_mean = Buffer(np.zeros(channels, dtype=np.float32))
        self.running_var = Buffer(np.ones(channels, dtype=np.float32))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.batchnorm2d(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            self.momentum,
            self.eps,
            training=self.training,
        )


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(
            _kaiming_uniform(rng, (out_features, in_features), in_features)
        )
        self.bias = Parameter(_kaiming_uniform(rng, (out_features,), in_features))

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class ECA(Module):
    """Channel attention gate with a k-tap shared 1-D conv (no bias)."""

    def __init__(self, rng: np.random.Generator, kernel_size: int = 5):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ConfigError(f"ECA kernel size must be odd, got {kernel_size}")
        self.weight = Parameter(
            _kaiming_uniform(rng, (1, 1, 1, kernel_size), kernel_size)
        )

    def forward(self, x: Tensor) -> Tensor:
        return ops.eca(x, self.weight)


class DropBlock(Module):
    """Structured dropout; owns its rng stream so eval never consumes it."""

    def __init__(self, block_size: int = 3, drop_rate: float = 0.1, seed: int = 0):
        super().__init__()
        if not 0 <= drop_rate < 1:
            raise ConfigError(f"drop_rate must be in [0, 1), got {drop_rate}")
        self.block_size = block_size
        self.drop_rate = drop_rate
        self.rng = np.random.default_rng(seed)

    def forward(self, x: Tensor) -> Tensor:
        return ops.dropblock(
            x, self.block_size, self.drop_rate, self.rng, training=self.training
        )


class SpatialAttention(Module):
    """3x3 conv over stacked channel-max and channel-mean maps -> logits."""

    def __init__(self, rng: np.random.Generator):
        super().__init__()
        fan_in = 2 * 3 * 3
        self.weight = Parameter(_kaiming_uniform(rng, (1, 2, 3, 3), fan_in))
        self.bias = Parameter(_kaiming_uniform(rng, (1,), fan_in))

    def forward(self, fmerge: Tensor) -> Tensor:
        return ops.spatial_attention(fmerge, self.weight, self.bias)


class Sequential(Module):
    def __init__(self, *blocks: Module):
        super().__init__()
        for i, block in enumerate(blocks):
            setattr(self, f"b{i}", block)
        self._order = [f"b{i}" for i in range(len(blocks))]

    def forward(self, x: Tensor) -> Tensor:
        for name in self._order:
            x = getattr(self, name)(x)
        return x

    def __iter__(self):
        return (getattr(self, name) for name in self._order)

    def __len__(self):
        return len(self._order)
