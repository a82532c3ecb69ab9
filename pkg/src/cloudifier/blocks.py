"""Layers and the two residual building blocks.

Layer counting convention (used by :func:`count_layers_and_params` and the variant
tables): every convolution counts as one layer, with the depthwise and
pointwise halves of a separable convolution counted separately; transposed
convolutions and the readout map count as one layer each. Batch-norm,
activations, adds and concats are not counted.
"""

from __future__ import annotations

from typing import Iterator, Optional, Sequence

import numpy as np

from . import ops
from .errors import ShapeError
from .ops import BatchNormParams
from .tensor import Tensor, make_result


class Module:
    """Minimal container: parameters are discovered in attribute order."""

    counted_layers = 0

    def __call__(self, x):
        return self.forward(x)

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self.children():
            yield from child.modules()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, BatchNormParams):
                yield f"{prefix}{name}.gamma", value.gamma
                yield f"{prefix}{name}.beta", value.beta
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in vars(self).items():
            if isinstance(value, BatchNormParams):
                yield f"{prefix}{name}.running_mean", value.running_mean
                yield f"{prefix}{name}.running_var", value.running_var
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            for value in vars(m).values():
                if isinstance(value, BatchNormParams):
                    value.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def layer_count(self) -> int:
        return sum(m.counted_layers for m in self.modules())

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())


def _normal(rng: np.random.Generator, shape, fan_in: float) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / max(fan_in, 1.0))


class Conv2d(Module):
    counted_layers = 1

    def __init__(self, c_in, c_out, k=1, stride=1, bias=True, rng=None, name="conv"):
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.kernel = Tensor(_normal(rng, (k, k, c_in, c_out), k * k * c_in), requires_grad=True, name=f"{name}.kernel")
        self.bias = Tensor(np.zeros(c_out), requires_grad=True, name=f"{name}.bias") if bias else None

    def forward(self, x):
        return ops.conv2d(x, self.kernel, self.bias, stride=self.stride)


class DepthwiseSeparableConv2d(Module):
    counted_layers = 2

    def __init__(self, c_in, c_out, k=3, stride=1, rng=None, name="sep"):
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.depthwise = Tensor(_normal(rng, (k, k, c_in), k * k), requires_grad=True, name=f"{name}.depthwise")
        self.pointwise = Tensor(_normal(rng, (1, 1, c_in, c_out), c_in), requires_grad=True, name=f"{name}.pointwise")
        self.bias = Tensor(np.zeros(c_out), requires_grad=True, name=f"{name}.bias")

    def forward(self, x):
        return ops.depthwise_separable_conv2d(x, self.depthwise, self.pointwise, self.bias, stride=self.stride)


class ConvBN(Module):
    """Bias-free convolution, batch-norm, then an optional ReLU."""

    def __init__(self, c_in, c_out, k=1, stride=1, activation=True, rng=None):
        self.conv = Conv2d(c_in, c_out, k, stride, bias=False, rng=rng)
        self.bn = BatchNormParams.create(c_out)
        self.activation = activation

    def forward(self, x):
        y = ops.batch_norm(self.conv(x), self.bn)
        return ops.relu(y) if self.activation else y


def column_widths(out_maps: int) -> tuple[int, int]:
    """(column output maps, 1x1 reduction maps) for an INC RES block."""
    return max(out_maps // 2, 1), max(out_maps // 4, 1)


class IncResBlock(Module):
    """Three-column inception block with a residual connection.

    A linear 1x1 stem prepares the input; columns are [1x1], [1x1 -> 3x3] and
    [1x1 -> 5x5]; their concatenation is squeezed by a 1x1 bottleneck (BN, no
    activation) and added to the block input. When the channel count changes
    the stem output serves as the projected residual, so the skip path never
    carries a nonlinearity.
    """

    def __init__(self, in_channels: int, out_maps: int, rng=None):
        if in_channels <= 0 or out_maps <= 0:
            raise ValueError("channel counts must be positive")
        rng = rng or np.random.default_rng(0)
        col, red = column_widths(out_maps)
        self.in_channels, self.out_maps = in_channels, out_maps
        self.stem = Conv2d(in_channels, out_maps, 1, bias=True, rng=rng)
        self.col_a = ConvBN(out_maps, col, 1, rng=rng)
        self.col_b = [ConvBN(out_maps, red, 1, rng=rng), ConvBN(red, col, 3, rng=rng)]
        self.col_c = [ConvBN(out_maps, red, 1, rng=rng), ConvBN(red, col, 5, rng=rng)]
        self.bottleneck = ConvBN(3 * col, out_maps, 1, activation=False, rng=rng)

    def forward(self, x):
        prepared = self.stem(x)
        a = self.col_a(prepared)
        b = self.col_b[1](self.col_b[0](prepared))
        c = self.col_c[1](self.col_c[0](prepared))
        merged = self.bottleneck(ops.concat_channels([a, b, c]))
        skip = x if self.in_channels == self.out_maps else prepared
        return ops.add(skip, merged)


class DsResBlock(Module):
    """Depthwise-separable 3x3 convolution, BN and ReLU, plus a residual add.

    A linear 1x1 projection (no bias) is used on the skip path when the
    channel count changes.
    """

    def __init__(self, in_channels: int, out_maps: int, rng=None):
        if in_channels <= 0 or out_maps <= 0:
            raise ValueError("channel counts must be positive")
        rng = rng or np.random.default_rng(0)
        self.in_channels, self.out_maps = in_channels, out_maps
        self.sep = DepthwiseSeparableConv2d(in_channels, out_maps, 3, rng=rng)
        self.bn = BatchNormParams.create(out_maps)
        self.projection = None if in_channels == out_maps else Conv2d(in_channels, out_maps, 1, bias=False, rng=rng)

    def forward(self, x):
        y = ops.relu(ops.batch_norm(self.sep(x), self.bn))
        skip = x if self.projection is None else self.projection(x)
        return ops.add(skip, y)


class UpsampleBranch(Module):
    """Transposed convolution restoring a stride-``s`` tap to full resolution.

    The kernel is 2s x 2s (1x1 at s = 1).
    """

    counted_layers = 1

    def __init__(self, in_channels: int, out_maps: int, stride: int, rng=None):
        if stride < 1 or stride & (stride - 1):
            raise ValueError(f"upsample stride must be a power of two, got {stride}")
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        k = 1 if stride == 1 else 2 * stride
        fan_in = in_channels * (k / stride) ** 2
        self.kernel = Tensor(_normal(rng, (k, k, out_maps, in_channels), fan_in), requires_grad=True, name="up.kernel")

    def forward(self, x):
        return ops.conv2d_transpose(x, self.kernel, self.stride)


class Readout(Module):
    """Concatenate branch volumes to depth D, then map every fiber D -> C."""

    counted_layers = 1

    def __init__(self, depth: int, num_classes: int, rng=None):
        rng = rng or np.random.default_rng(0)
        self.weight = Tensor(rng.standard_normal((depth, num_classes)) / np.sqrt(depth), requires_grad=True, name="readout.weight")
        self.bias = Tensor(np.zeros(num_classes), requires_grad=True, name="readout.bias")

    def forward(self, branches: Sequence[Tensor]):
        branches = list(branches)
        merged = branches[0] if len(branches) == 1 else ops.concat_channels(branches)
        if merged.shape[3] != self.weight.shape[0]:
            raise ShapeError("readout depth does not match merged branches", merged.shape, self.weight.shape)
        return ops.conv2d(merged, _as_kernel(self.weight), self.bias)


def _as_kernel(weight: Tensor) -> Tensor:
    # 1x1 kernel view of a (D, C) matrix that routes gradients back to it
    return make_result("reshape", weight.data.reshape(1, 1, *weight.shape), [weight], lambda g: (g.reshape(weight.shape),))


def build_inc_res_block(in_channels: int, out_maps: int, rng=None) -> IncResBlock:
    return IncResBlock(in_channels, out_maps, rng)


def build_ds_res_block(in_channels: int, out_maps: int, rng=None) -> DsResBlock:
    return DsResBlock(in_channels, out_maps, rng)


def build_upsample_branch(tap_channels: int, out_maps: int, stride: int, rng=None) -> UpsampleBranch:
    return UpsampleBranch(tap_channels, out_maps, stride, rng)


def build_readout(depths: Sequence[int], num_classes: int, rng=None) -> Readout:
    return Readout(int(sum(depths)), num_classes, rng)
