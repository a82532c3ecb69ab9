"""Network configuration, the named variants, and the full dense-prediction graph.

Topology: a stride-1 stem conv, then stages that each open with a stride-2
3x3 downsampling conv followed by alternating INC RES / DS RES units. Every
tapped DS RES output is upsampled back to input resolution by a transposed
conv; the readout concatenates all branches and maps each fiber to class
logits. There is no pooling anywhere.

Variant table (stem maps; per-stage maps / units / tap maps):

=============  ====  ==================  ============  ==========
variant        stem  stage maps          units         tap maps
=============  ====  ==================  ============  ==========
cloudifier109  32    32, 64, 96, 128     2, 3, 3, 2    8, 4, 2, 1
cloudifier50   16    32, 64, 96, 128     1, 1, 1, 1    8, 4, 2, 1
micro          8     8, 16               1, 1          4, 4
=============  ====  ==================  ============  ==========

Within a stage the first DS RES block widens from the incoming width to the
stage width (with a 1x1 skip projection when they differ).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import ops
from .blocks import (
    ConvBN,
    DsResBlock,
    IncResBlock,
    Module,
    Readout,
    UpsampleBranch,
)
from .errors import BuildError, ShapeError
from .tensor import Tensor

BLOCK_KINDS = ("Stem", "DownsampleConv", "IncRes", "DsRes")
DESCRIPTOR_FORMAT = "cloudifier-arch-1"
PARAM_BUDGET_109 = (1_000_000, 1_400_000)


@dataclass(frozen=True)
class BlockSpec:
    kind: str
    out_maps: int
    stride: int = 1
    tap_maps: int = 0

    def validate(self) -> None:
        if self.kind not in BLOCK_KINDS:
            raise BuildError(f"unknown block kind {self.kind!r}")
        if self.out_maps <= 0:
            raise BuildError(f"{self.kind} needs out_maps > 0, got {self.out_maps}")
        if self.kind in ("IncRes", "DsRes") and self.stride != 1:
            raise BuildError(f"{self.kind} blocks have stride 1; downsampling is a separate conv")
        if self.kind == "DownsampleConv" and self.stride != 2:
            raise BuildError("DownsampleConv must have stride 2")
        if self.tap_maps and self.kind != "DsRes":
            raise BuildError("only DS RES outputs can be tapped")
        if self.tap_maps < 0:
            raise BuildError("tap_maps must be >= 0")


@dataclass(frozen=True)
class NetworkConfig:
    stages: tuple
    num_classes: int
    variant_name: str
    declared_layers: int
    input_channels: int = 3

    def validate(self) -> None:
        if self.num_classes < 2:
            raise BuildError("need at least two classes")
        if not self.stages or self.stages[0].kind != "Stem":
            raise BuildError("the first block must be the Stem")
        for spec in self.stages:
            spec.validate()
        if not any(s.tap_maps for s in self.stages):
            raise BuildError("at least one DS RES output must be tapped")

    @property
    def max_downsample(self) -> int:
        factor = 1
        for spec in self.stages:
            factor *= spec.stride
        return factor

    def to_descriptor(self) -> str:
        lines = [
            f"format={DESCRIPTOR_FORMAT}",
            f"variant={self.variant_name}",
            f"num_classes={self.num_classes}",
            f"input_channels={self.input_channels}",
            f"declared_layers={self.declared_layers}",
        ]
        for i, s in enumerate(self.stages):
            value = f"{s.kind} out={s.out_maps} stride={s.stride}"
            if s.tap_maps:
                value += f" tap={s.tap_maps}"
            lines.append(f"block.{i:03d}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_descriptor(cls, text: str) -> "NetworkConfig":
        fields, blocks = {}, []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if "=" not in line:
                raise BuildError(f"malformed descriptor line {raw!r}")
            key, value = line.split("=", 1)
            if key.startswith("block."):
                kind, *attrs = value.split()
                kv = dict(a.split("=", 1) for a in attrs)
                blocks.append(BlockSpec(kind, int(kv["out"]), int(kv.get("stride", 1)), int(kv.get("tap", 0))))
            else:
                fields[key] = value
        if fields.get("format") != DESCRIPTOR_FORMAT:
            raise BuildError(f"unsupported architecture descriptor format {fields.get('format')!r}")
        return cls(
            stages=tuple(blocks),
            num_classes=int(fields["num_classes"]),
            variant_name=fields["variant"],
            declared_layers=int(fields["declared_layers"]),
            input_channels=int(fields.get("input_channels", 3)),
        )


_VARIANTS = {
    # name: (stem maps, stage maps, units per stage, tap maps per stage, declared layers)
    "cloudifier109": (32, (32, 64, 96, 128), (2, 3, 3, 2), (8, 4, 2, 1), 109),
    "cloudifier50": (16, (32, 64, 96, 128), (1, 1, 1, 1), (8, 4, 2, 1), 50),
    "micro": (8, (8, 16), (1, 1), (4, 4), 25),
}
VARIANTS = tuple(_VARIANTS)


def variant_config(name: str, num_classes: int = 11) -> NetworkConfig:
    try:
        stem, widths, units, taps, declared = _VARIANTS[name]
    except KeyError:
        raise BuildError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}") from None
    blocks = [BlockSpec("Stem", stem)]
    current = stem
    for width, n_units, tap in zip(widths, units, taps):
        blocks.append(BlockSpec("DownsampleConv", current, stride=2))
        for _ in range(n_units):
            blocks.append(BlockSpec("IncRes", current))
            blocks.append(BlockSpec("DsRes", width, tap_maps=tap))
            current = width
    return NetworkConfig(tuple(blocks), num_classes, name, declared)


class Network(Module):
    """Executable CloudifierNet graph built from a :class:`NetworkConfig`."""

    def __init__(self, config: NetworkConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        body, branches, depths = [], [], []
        channels, stride = config.input_channels, 1
        for spec in config.stages:
            if spec.kind == "Stem":
                body.append(ConvBN(channels, spec.out_maps, 3, rng=rng))
            elif spec.kind == "DownsampleConv":
                body.append(ConvBN(channels, spec.out_maps, 3, stride=2, rng=rng))
                stride *= 2
            elif spec.kind == "IncRes":
                body.append(IncResBlock(channels, spec.out_maps, rng=rng))
            else:
                body.append(DsResBlock(channels, spec.out_maps, rng=rng))
            channels = spec.out_maps
            if spec.tap_maps:
                branches.append(UpsampleBranch(channels, spec.tap_maps, stride, rng=rng))
                depths.append(spec.tap_maps)
            else:
                branches.append(None)
        self.body = body
        self.branches = [b for b in branches if b is not None]
        self._tap_index = [i for i, b in enumerate(branches) if b is not None]
        self.readout = Readout(sum(depths), config.num_classes, rng=rng)

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    @property
    def max_downsample(self) -> int:
        return self.config.max_downsample

    def check_input(self, x: Tensor) -> None:
        if x.ndim != 4 or x.shape[3] != self.config.input_channels:
            raise ShapeError(f"expected (n, h, w, {self.config.input_channels}) input", x.shape)
        m = self.max_downsample
        if x.shape[1] % m or x.shape[2] % m:
            raise ShapeError(f"input height and width must be multiples of {m}", x.shape)

    def forward(self, x: Tensor) -> Tensor:
        """Dense logits of shape (n, h, w, num_classes)."""
        self.check_input(x)
        taps = []
        branch = iter(self.branches)
        tap_points = set(self._tap_index)
        for i, block in enumerate(self.body):
            x = block(x)
            if i in tap_points:
                taps.append(next(branch)(x))
        return self.readout(taps)


def forward(net: Network, x: Tensor) -> Tensor:
    return net.forward(x)


def count_layers_and_params(net: Module) -> tuple[int, int]:
    return net.layer_count(), net.param_count()


def has_pooling(net: Module) -> bool:
    return any("pool" in type(m).__name__.lower() for m in net.modules())


def build_network(config: NetworkConfig, seed: int = 0) -> Network:
    """Build and check the layer-count (and, for cloudifier109, weight) budget."""
    net = Network(config, seed=seed)
    layers, params = count_layers_and_params(net)
    if layers != config.declared_layers:
        raise BuildError(f"{config.variant_name}: counted {layers} layers but the variant declares {config.declared_layers}")
    if has_pooling(net):
        raise BuildError("pooling layers are not allowed")
    if config.variant_name == "cloudifier109":
        lo, hi = PARAM_BUDGET_109
        if not lo <= params <= hi:
            raise BuildError(f"cloudifier109 has {params} weights, outside [{lo}, {hi}]")
    return net
