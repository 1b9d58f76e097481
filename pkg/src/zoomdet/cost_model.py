"""Theoretical FLOPs accounting for conv networks and detection strategies.

One multiply-accumulate counts as one FLOP. Pooling and activations are
free; only conv layers cost anything. Strategy totals compare three ways of
covering the face size span of an image:

- scale-aware: run the scale proposal network once on a small input, then
  the single-anchor detector once per planned zoom
- multi-scale-testing: run the single-anchor detector over a fixed
  six-level image pyramid (long sides 1414 * 2^k for k = 0..-5)
- single-shot: run a multi-anchor variant of the detector once at full
  resolution (long side 1414)
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

from .errors import ConfigError, DimensionError
from .images import round_half_up
from .nn import Conv2d, MaxPool2, Network
from .proposal import ZoomAction

PYRAMID_BASE_SIDE = 1414
PYRAMID_LEVELS = 6
SINGLE_SHOT_ANCHORS = 6
SPN_DEFAULT_LONG_SIDE = 448

STRATEGY_NAMES = ("scale-aware", "multi-scale-testing", "single-shot")


@dataclass(frozen=True)
class ConvLayerSpec:
    in_channels: int
    out_channels: int
    kh: int
    kw: int
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kh, self.kw, self.stride) < 1:
            raise ValueError(f"conv spec fields must be positive: {self}")
        if self.pad < 0:
            raise ValueError(f"pad must be >= 0, got {self.pad}")


@dataclass(frozen=True)
class PoolSpec:
    factor: int = 2

    def __post_init__(self):
        if self.factor < 2:
            raise ValueError(f"pool factor must be >= 2, got {self.factor}")


LayerSpec = Union[ConvLayerSpec, PoolSpec]


@dataclass(frozen=True)
class LayerCost:
    context: str
    name: str
    flops: int

    @property
    def mflops(self) -> int:
        return round_half_up(self.flops / 1e6)


@dataclass(frozen=True)
class CostReport:
    layers: Tuple[LayerCost, ...]
    strategy: Optional[str] = None

    @property
    def total_flops(self) -> int:
        return sum(c.flops for c in self.layers)

    @property
    def total_mflops(self) -> int:
        return round_half_up(self.total_flops / 1e6)


def layer_flops(spec: ConvLayerSpec, in_h: int, in_w: int) -> int:
    """FLOPs of one conv layer, counting a multiply-accumulate as one."""
    out_h, out_w = conv_out_dims(spec, in_h, in_w)
    return out_h * out_w * spec.out_channels * spec.in_channels * spec.kh * spec.kw


def conv_out_dims(spec: ConvLayerSpec, in_h: int, in_w: int) -> Tuple[int, int]:
    if in_h < 1 or in_w < 1:
        raise DimensionError(f"input dims must be positive, got {in_h}x{in_w}")
    out_h = (in_h + 2 * spec.pad - spec.kh) // spec.stride + 1
    out_w = (in_w + 2 * spec.pad - spec.kw) // spec.stride + 1
    if out_h < 1 or out_w < 1:
        raise DimensionError(
            f"kernel {spec.kh}x{spec.kw} does not fit padded input "
            f"{in_h}x{in_w} (pad {spec.pad})"
        )
    return out_h, out_w


def network_flops(
    specs: Sequence[LayerSpec], in_h: int, in_w: int, context: str = "network"
) -> CostReport:
    """Accumulate layer costs through a chain, propagating spatial dims."""
    layers: List[LayerCost] = []
    h, w = in_h, in_w
    conv_i = pool_i = 0
    for spec in specs:
        if isinstance(spec, ConvLayerSpec):
            conv_i += 1
            layers.append(LayerCost(context, f"conv{conv_i}", layer_flops(spec, h, w)))
            h, w = conv_out_dims(spec, h, w)
        elif isinstance(spec, PoolSpec):
            pool_i += 1
            h, w = h // spec.factor, w // spec.factor
            if h < 1 or w < 1:
                raise DimensionError(f"pooling collapsed dims to {h}x{w}")
            layers.append(LayerCost(context, f"pool{pool_i}", 0))
        else:
            raise TypeError(f"unsupported layer spec {spec!r}")
    return CostReport(layers=tuple(layers))


def network_to_specs(net: Network) -> List[LayerSpec]:
    """Layer chain of a built network, for pricing it without running it."""
    specs: List[LayerSpec] = []
    for layer in net.layers:
        if isinstance(layer, Conv2d):
            o, i, kh, kw = layer.weight.shape
            specs.append(ConvLayerSpec(i, o, kh, kw, layer.stride, layer.pad))
        elif isinstance(layer, MaxPool2):
            specs.append(PoolSpec(2))
    return specs


def multi_anchor_variant(specs: Sequence[LayerSpec], anchors: int = SINGLE_SHOT_ANCHORS) -> List[LayerSpec]:
    """Same trunk, head widened to anchors * 4 output channels."""
    out = list(specs)
    for i in range(len(out) - 1, -1, -1):
        if isinstance(out[i], ConvLayerSpec):
            head = out[i]
            out[i] = ConvLayerSpec(
                head.in_channels, 4 * anchors, head.kh, head.kw, head.stride, head.pad
            )
            return out
    raise ValueError("chain has no conv layer to widen")


def scaled_dims(h: int, w: int, factor: float) -> Tuple[int, int]:
    return max(1, round_half_up(h * factor)), max(1, round_half_up(w * factor))


def long_side_dims(h: int, w: int, long_side: float) -> Tuple[int, int]:
    return scaled_dims(h, w, long_side / max(h, w))


def pyramid_long_sides(base: int = PYRAMID_BASE_SIDE, levels: int = PYRAMID_LEVELS) -> List[int]:
    return [round_half_up(base * 2.0 ** -k) for k in range(levels)]


def strategy_cost(
    strategy: str,
    image_h: int,
    image_w: int,
    plan: Optional[Sequence[ZoomAction]],
    spn_specs: Sequence[LayerSpec],
    det_specs: Sequence[LayerSpec],
    spn_long_side: int = SPN_DEFAULT_LONG_SIDE,
) -> CostReport:
    """Per-image cost of one detection strategy on an image of the given size."""
    if strategy not in STRATEGY_NAMES:
        raise ConfigError(f"unknown strategy {strategy!r}, expected one of {STRATEGY_NAMES}")
    layers: List[LayerCost] = []
    if strategy == "scale-aware":
        if plan is None:
            raise ConfigError("scale-aware strategy needs a zoom plan")
        h, w = long_side_dims(image_h, image_w, spn_long_side)
        layers.extend(network_flops(spn_specs, h, w, context=f"spn@{h}x{w}").layers)
        for action in plan:
            h, w = scaled_dims(image_h, image_w, action.scale_factor)
            ctx = f"det@x{action.scale_factor:.4g}"
            layers.extend(network_flops(det_specs, h, w, context=ctx).layers)
    elif strategy == "multi-scale-testing":
        for side in pyramid_long_sides():
            h, w = long_side_dims(image_h, image_w, side)
            layers.extend(network_flops(det_specs, h, w, context=f"det@{h}x{w}").layers)
    else:
        wide = multi_anchor_variant(det_specs)
        h, w = long_side_dims(image_h, image_w, PYRAMID_BASE_SIDE)
        layers.extend(network_flops(wide, h, w, context=f"det6a@{h}x{w}").layers)
    return CostReport(layers=tuple(layers), strategy=strategy)


def parse_layer_specs(text: str) -> List[LayerSpec]:
    """Parse the line-oriented chain format.

    conv lines: `conv <in> <out> <kh> <kw> <stride> <pad>`
    pool lines: `pool <factor>`
    Blank lines and lines starting with # are skipped.
    """
    specs: List[LayerSpec] = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "conv":
                if len(parts) != 7:
                    raise ValueError("conv takes 6 integer fields")
                specs.append(ConvLayerSpec(*[int(p) for p in parts[1:]]))
            elif parts[0] == "pool":
                if len(parts) != 2:
                    raise ValueError("pool takes 1 integer field")
                specs.append(PoolSpec(int(parts[1])))
            else:
                raise ValueError(f"unknown layer kind {parts[0]!r}")
        except ValueError as e:
            raise ConfigError(f"layer spec line {ln}: {e}") from e
    return specs


def format_layer_specs(specs: Sequence[LayerSpec]) -> str:
    lines = []
    for s in specs:
        if isinstance(s, ConvLayerSpec):
            lines.append(
                f"conv {s.in_channels} {s.out_channels} {s.kh} {s.kw} {s.stride} {s.pad}"
            )
        else:
            lines.append(f"pool {s.factor}")
    return "\n".join(lines) + "\n"


def write_cost_csv(path, reports: Sequence[CostReport]) -> None:
    """Per-layer rows for each report, then one total row per report."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["record", "context", "layer", "flops", "mflops"])
        for rep in reports:
            for c in rep.layers:
                w.writerow(["layer", c.context, c.name, c.flops, c.mflops])
        for rep in reports:
            label = rep.strategy if rep.strategy is not None else "network"
            w.writerow(["total", label, "", rep.total_flops, rep.total_mflops])
