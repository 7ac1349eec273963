"""Exact multiply-accumulate (MAC) and parameter counting.

Conventions, stated once and used everywhere:

* 1 FLOP = 1 multiply-add (the mobile-network comparison convention).
* Convolution weights only; no biases, no normalization parameters, no
  activation cost. Average pooling costs 0 MACs.
* 'Same' padding with pad = kernel // 2; output side (r - 1) // stride + 1
  for odd kernels, so resolution depends on stride alone.
* An inverted-residual block is expand (1x1) -> depthwise (k x k, strided)
  -> project (1x1); the expand stage is skipped when it would not change
  the width (expansion ratio 1).
* Costs are mode-aware: in supernet mode spring blocks emit the cluster
  maximum width, in released mode the chosen width.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from .space import (
    Architecture,
    FixedLayer,
    SearchSpaceSpec,
    conv_output_size,
    layer_io_channels,
    require_valid,
)


@dataclass(frozen=True)
class LayerCost:
    label: str
    macs: int
    params: int


@dataclass(frozen=True)
class CostBreakdown:
    per_layer: tuple[LayerCost, ...]

    @property
    def total_macs(self) -> int:
        return sum(item.macs for item in self.per_layer)

    @property
    def total_params(self) -> int:
        return sum(item.params for item in self.per_layer)


def conv_macs(out_resolution: int, c_in: int, c_out: int, kernel: int) -> int:
    return out_resolution * out_resolution * c_out * c_in * kernel * kernel


def conv_params(c_in: int, c_out: int, kernel: int) -> int:
    return c_out * c_in * kernel * kernel


def depthwise_macs(out_resolution: int, channels: int, kernel: int) -> int:
    return out_resolution * out_resolution * channels * kernel * kernel


def depthwise_params(channels: int, kernel: int) -> int:
    return channels * kernel * kernel


def block_cost(
    resolution: int, c_in: int, c_out: int, kernel: int, expansion: int, stride: int
) -> tuple[int, int]:
    """(macs, params) of one inverted-residual block."""
    hidden = expansion * c_in
    out_res = conv_output_size(resolution, kernel, stride)
    macs = 0
    params = 0
    if hidden != c_in:
        macs += conv_macs(resolution, c_in, hidden, 1)
        params += conv_params(c_in, hidden, 1)
    macs += depthwise_macs(out_res, hidden, kernel)
    params += depthwise_params(hidden, kernel)
    macs += conv_macs(out_res, hidden, c_out, 1)
    params += conv_params(hidden, c_out, 1)
    return macs, params


def _fixed_layer_cost(layer: FixedLayer, resolution: int) -> tuple[int, int, int]:
    """(macs, params, output resolution) of a stem/tail layer."""
    if layer.operator == "avgpool":
        return 0, 0, 1
    out_res = conv_output_size(resolution, layer.kernel, layer.stride)
    if layer.operator == "conv2d":
        return (
            conv_macs(out_res, layer.in_channels, layer.out_channels, layer.kernel),
            conv_params(layer.in_channels, layer.out_channels, layer.kernel),
            out_res,
        )
    # separable: depthwise k x k then pointwise 1x1
    macs = depthwise_macs(out_res, layer.in_channels, layer.kernel)
    macs += conv_macs(out_res, layer.in_channels, layer.out_channels, 1)
    params = depthwise_params(layer.in_channels, layer.kernel)
    params += conv_params(layer.in_channels, layer.out_channels, 1)
    return macs, params, out_res


def flops(space: SearchSpaceSpec, arch: Architecture) -> CostBreakdown:
    """Per-layer and total MAC/parameter counts for a valid architecture."""
    require_valid(space, arch)
    entries: list[LayerCost] = []
    res = space.input_size
    for i, layer in enumerate(space.stem):
        macs, params, res = _fixed_layer_cost(layer, res)
        entries.append(LayerCost(f"stem[{i}]:{layer.operator}", macs, params))
    for li in range(space.n_layers):
        k, t = arch.layer_genes[li]
        c_in, c_out = layer_io_channels(space, arch, li)
        stride = space.layer_stride(li)
        resolution = space.layer_input_resolution(li)
        macs, params = block_cost(resolution, c_in, c_out, k, t, stride)
        entries.append(
            LayerCost(f"block[{li + 1}]:k{k}t{t}:{c_in}->{c_out}", macs, params)
        )
    res = space.layer_input_resolution(space.n_layers - 1)
    res = conv_output_size(res, 1, space.layer_stride(space.n_layers - 1))
    channels = (
        arch.cluster_genes[-1]
        if arch.mode == "released"
        else space.clusters[-1].spring_output
    )
    for i, layer in enumerate(space.tail):
        effective = layer
        if i == 0 and layer.operator != "avgpool":
            # tail entry conv consumes whatever the last spring block emits
            effective = replace(layer, in_channels=channels)
        macs, params, res = _fixed_layer_cost(effective, res)
        entries.append(LayerCost(f"tail[{i}]:{layer.operator}", macs, params))
    return CostBreakdown(tuple(entries))


def params(space: SearchSpaceSpec, arch: Architecture) -> int:
    return flops(space, arch).total_params


def min_architecture(space: SearchSpaceSpec, mode: str = "released") -> Architecture:
    genes = tuple(
        (space.layer_choices(l).kernel_sizes[0], space.layer_choices(l).expansion_ratios[0])
        for l in range(space.n_layers)
    )
    channels = tuple(min(c.channel_choices) for c in space.clusters)
    return Architecture(genes, channels, mode=mode)


def max_architecture(space: SearchSpaceSpec, mode: str = "released") -> Architecture:
    genes = tuple(
        (space.layer_choices(l).kernel_sizes[-1], space.layer_choices(l).expansion_ratios[-1])
        for l in range(space.n_layers)
    )
    channels = tuple(max(c.channel_choices) for c in space.clusters)
    return Architecture(genes, channels, mode=mode)


def flops_bounds(space: SearchSpaceSpec) -> tuple[int, int]:
    """Exact (min, max) MACs over the space's released (stand-alone) models.

    The count is monotone in every gene independently, so the extremes are
    the all-minimum and all-maximum architectures.
    """
    lo = flops(space, min_architecture(space)).total_macs
    hi = flops(space, max_architecture(space)).total_macs
    return lo, hi
