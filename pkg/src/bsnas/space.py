"""Channel-searchable supernet search space.

A space is a stack of fixed stem layers, a sequence of *clusters* of
inverted-residual blocks, and fixed tail layers. Every block in a cluster
shares one searchable output width (the cluster's channel gene); the last
block of each cluster is the *spring block*, whose output is pinned to the
cluster's maximum width while the supernet is searched and relaxed to the
chosen width in the stand-alone ("released") model. This pinning is what
keeps every block's input width a known constant regardless of which
architecture is sampled, so widths can be searched at all.

An :class:`Architecture` is one concrete choice: a (kernel, expansion) pair
per block plus one channel width per cluster.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import cached_property
from typing import TYPE_CHECKING, Any

from .errors import ConfigError, InfeasibleError

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, typing only
    import numpy as np

    from .graph import OperationGraph

DEFAULT_CHANNEL_QUANTUM = 8


def _check_choice_list(name: str, values: tuple[int, ...]) -> None:
    if not values:
        raise ConfigError(f"{name} must be non-empty")
    if any(v <= 0 for v in values):
        raise ConfigError(f"{name} must be positive, got {values}")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(f"{name} must be strictly increasing, got {values}")


@dataclass(frozen=True)
class ChoiceSets:
    """Per-cluster choice lists for kernel size, expansion ratio and width."""

    kernel_sizes: tuple[int, ...]
    expansion_ratios: tuple[int, ...]
    channel_choices: tuple[int, ...]
    channel_quantum: int = DEFAULT_CHANNEL_QUANTUM

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(self.kernel_sizes))
        object.__setattr__(self, "expansion_ratios", tuple(self.expansion_ratios))
        object.__setattr__(self, "channel_choices", tuple(self.channel_choices))
        _check_choice_list("kernel_sizes", self.kernel_sizes)
        _check_choice_list("expansion_ratios", self.expansion_ratios)
        _check_choice_list("channel_choices", self.channel_choices)
        if any(k % 2 == 0 for k in self.kernel_sizes):
            raise ConfigError(f"kernel sizes must be odd, got {self.kernel_sizes}")
        if self.channel_quantum < 1:
            raise ConfigError("channel_quantum must be >= 1")
        bad = [c for c in self.channel_choices if c % self.channel_quantum]
        if bad:
            raise ConfigError(
                f"channel choices {bad} not divisible by quantum {self.channel_quantum}"
            )

    @property
    def n_pairs(self) -> int:
        return len(self.kernel_sizes) * len(self.expansion_ratios)

    def pairs(self) -> tuple[tuple[int, int], ...]:
        """All (kernel, expansion) pairs in canonical order: kernel, then expansion."""
        return tuple(
            (k, t) for k in self.kernel_sizes for t in self.expansion_ratios
        )


@dataclass(frozen=True)
class ClusterSpec:
    """A run of blocks sharing one searchable output width.

    ``stride`` applies to the first block only; the remaining blocks use
    stride 1. ``input_resolution`` is the square feature-map side at cluster
    entry. The spring (last) block's supernet output width is always
    ``max(channel_choices)`` - derived, never stored.
    """

    block_count: int
    stride: int
    choices: ChoiceSets
    input_resolution: int

    def __post_init__(self):
        if self.block_count < 1:
            raise ConfigError("block_count must be >= 1")
        if self.stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {self.stride}")
        if self.input_resolution < 1:
            raise ConfigError("input_resolution must be positive")

    @property
    def channel_choices(self) -> tuple[int, ...]:
        return self.choices.channel_choices

    @property
    def spring_output(self) -> int:
        return max(self.choices.channel_choices)


@dataclass(frozen=True)
class FixedLayer:
    """A non-searchable stem/tail layer: conv2d, separable conv, or avgpool."""

    operator: str
    kernel: int
    in_channels: int
    out_channels: int
    stride: int = 1

    def __post_init__(self):
        if self.operator not in ("conv2d", "separable", "avgpool"):
            raise ConfigError(f"unknown fixed-layer operator {self.operator!r}")
        if self.kernel < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("fixed layer dimensions must be positive")
        if self.operator == "avgpool" and self.in_channels != self.out_channels:
            raise ConfigError("avgpool cannot change channel count")


def conv_output_size(resolution: int, kernel: int, stride: int) -> int:
    """Output side of a 'same'-padded convolution (pad = kernel // 2)."""
    return (resolution + 2 * (kernel // 2) - kernel) // stride + 1


@dataclass(frozen=True)
class SearchSpaceSpec:
    """Full supernet layout: stem, clusters of searchable blocks, tail."""

    stem: tuple[FixedLayer, ...]
    clusters: tuple[ClusterSpec, ...]
    tail: tuple[FixedLayer, ...]
    input_size: int = 224
    n_class: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "stem", tuple(self.stem))
        object.__setattr__(self, "clusters", tuple(self.clusters))
        object.__setattr__(self, "tail", tuple(self.tail))
        if not self.clusters:
            raise ConfigError("space needs at least one cluster")
        if self.input_size < 1 or self.n_class < 1:
            raise ConfigError("input_size and n_class must be positive")
        self._check_channel_chain()
        self._check_resolution_chain()

    def _check_channel_chain(self) -> None:
        prev = None
        for i, layer in enumerate(self.stem):
            if prev is not None and layer.in_channels != prev:
                raise ConfigError(
                    f"stem layer {i} expects {layer.in_channels} input channels, "
                    f"previous layer produces {prev}"
                )
            prev = layer.out_channels
        for ci, cluster in enumerate(self.clusters):
            if prev is not None and self.cluster_input_channels(ci) != prev:
                raise ConfigError(
                    f"cluster {ci} head input {self.cluster_input_channels(ci)} "
                    f"!= previous output {prev}"
                )
            prev = cluster.spring_output
        for i, layer in enumerate(self.tail):
            if layer.operator != "avgpool" and layer.in_channels != prev:
                raise ConfigError(
                    f"tail layer {i} expects {layer.in_channels} input channels, "
                    f"previous layer produces {prev}"
                )
            prev = layer.out_channels

    def _check_resolution_chain(self) -> None:
        res = self.input_size
        for layer in self.stem:
            if layer.operator != "avgpool":
                res = conv_output_size(res, layer.kernel, layer.stride)
        for ci, cluster in enumerate(self.clusters):
            if cluster.input_resolution != res:
                raise ConfigError(
                    f"cluster {ci} declares input resolution "
                    f"{cluster.input_resolution}, expected {res}"
                )
            res = conv_output_size(res, 1, cluster.stride)

    # -- layer <-> cluster geometry ------------------------------------

    @property
    def n_layers(self) -> int:
        return sum(c.block_count for c in self.clusters)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @cached_property
    def _layer_cluster(self) -> tuple[int, ...]:
        out = []
        for ci, cluster in enumerate(self.clusters):
            out.extend([ci] * cluster.block_count)
        return tuple(out)

    def cluster_of_layer(self, layer: int) -> int:
        return self._layer_cluster[layer]

    def layers_of_cluster(self, cluster: int) -> range:
        start = sum(c.block_count for c in self.clusters[:cluster])
        return range(start, start + self.clusters[cluster].block_count)

    def is_cluster_head(self, layer: int) -> bool:
        return layer == self.layers_of_cluster(self.cluster_of_layer(layer)).start

    def is_spring(self, layer: int) -> bool:
        return layer == self.layers_of_cluster(self.cluster_of_layer(layer))[-1]

    def layer_choices(self, layer: int) -> ChoiceSets:
        return self.clusters[self.cluster_of_layer(layer)].choices

    def layer_stride(self, layer: int) -> int:
        if self.is_cluster_head(layer):
            return self.clusters[self.cluster_of_layer(layer)].stride
        return 1

    def layer_input_resolution(self, layer: int) -> int:
        cluster = self.clusters[self.cluster_of_layer(layer)]
        if self.is_cluster_head(layer):
            return cluster.input_resolution
        return conv_output_size(cluster.input_resolution, 1, cluster.stride)

    @property
    def stem_output_channels(self) -> int:
        if self.stem:
            return self.stem[-1].out_channels
        raise ConfigError("space has no stem; cluster 0 input is undefined")

    def cluster_input_channels(self, cluster: int) -> int:
        """Fixed head-input width of a cluster in supernet mode."""
        if cluster == 0:
            return self.stem_output_channels
        return self.clusters[cluster - 1].spring_output

    # -- operation (triple) indexing ------------------------------------

    def op_count(self, layer: int) -> int:
        cs = self.layer_choices(layer)
        return cs.n_pairs * len(cs.channel_choices)

    @cached_property
    def max_op_count(self) -> int:
        return max(self.op_count(l) for l in range(self.n_layers))

    @cached_property
    def max_channel_count(self) -> int:
        return max(len(c.channel_choices) for c in self.clusters)

    @cached_property
    def _op_index_maps(self) -> tuple[dict[tuple[int, int, int], int], ...]:
        maps = []
        for layer in range(self.n_layers):
            cs = self.layer_choices(layer)
            table = {}
            idx = 0
            for k in cs.kernel_sizes:
                for t in cs.expansion_ratios:
                    for c in cs.channel_choices:
                        table[(k, t, c)] = idx
                        idx += 1
            maps.append(table)
        return tuple(maps)

    def op_index(self, layer: int, kernel: int, expansion: int, channel: int) -> int:
        """Canonical index of a (kernel, expansion, channel) triple at a layer.

        Ordering is kernel-major, then expansion, then channel, so ascending
        index equals ascending (k, t, c) - the tie-break order used
        throughout retention and sampling.
        """
        try:
            return self._op_index_maps[layer][(kernel, expansion, channel)]
        except KeyError:
            raise ConfigError(
                f"layer {layer} has no operation k{kernel}t{expansion}c{channel}"
            ) from None

    def op_from_index(self, layer: int, index: int) -> tuple[int, int, int]:
        cs = self.layer_choices(layer)
        nc = len(cs.channel_choices)
        nt = len(cs.expansion_ratios)
        ci = index % nc
        ti = (index // nc) % nt
        ki = index // (nc * nt)
        return (cs.kernel_sizes[ki], cs.expansion_ratios[ti], cs.channel_choices[ci])


def op_label(kernel: int, expansion: int, channel: int) -> str:
    return f"k{kernel}t{expansion}c{channel}"


def parse_op_label(label: str) -> tuple[int, int, int]:
    try:
        k, rest = label[1:].split("t")
        t, c = rest.split("c")
        return (int(k), int(t), int(c))
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"bad operation label {label!r}") from exc


# ---------------------------------------------------------------------------
# Architectures


@dataclass(frozen=True)
class Architecture:
    """One concrete model: per-layer (kernel, expansion) and per-cluster width.

    ``mode`` distinguishes the supernet sub-path (spring outputs pinned to
    cluster maxima) from the released stand-alone model (spring outputs equal
    the chosen widths). Genes are identical in both modes.
    """

    layer_genes: tuple[tuple[int, int], ...]
    cluster_genes: tuple[int, ...]
    mode: str = "supernet"

    def __post_init__(self):
        object.__setattr__(
            self, "layer_genes", tuple((int(k), int(t)) for k, t in self.layer_genes)
        )
        object.__setattr__(self, "cluster_genes", tuple(int(c) for c in self.cluster_genes))
        if self.mode not in ("supernet", "released"):
            raise ConfigError(f"unknown architecture mode {self.mode!r}")

    @cached_property
    def canonical(self) -> str:
        """Identity key: ``k3t6|k5t3|...#c24|c40|...`` (mode excluded)."""
        layers = "|".join(f"k{k}t{t}" for k, t in self.layer_genes)
        channels = "|".join(f"c{c}" for c in self.cluster_genes)
        return f"{layers}#{channels}"

    def to_json_dict(self) -> dict:
        return {
            "layers": [[k, t] for k, t in self.layer_genes],
            "channels": list(self.cluster_genes),
            "mode": self.mode,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "Architecture":
        try:
            return cls(
                layer_genes=tuple((k, t) for k, t in data["layers"]),
                cluster_genes=tuple(data["channels"]),
                mode=data.get("mode", "supernet"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad architecture JSON: {exc}") from exc


def arch_from_string(text: str, mode: str = "supernet") -> Architecture:
    """Parse the canonical ``k3t6|...#c24|...`` form."""
    try:
        layer_part, channel_part = text.strip().split("#")
        genes = []
        for item in layer_part.split("|"):
            k, t = item[1:].split("t")
            genes.append((int(k), int(t)))
        channels = tuple(int(c[1:]) for c in channel_part.split("|"))
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"bad architecture string {text!r}") from exc
    return Architecture(tuple(genes), channels, mode=mode)


def validate(space: SearchSpaceSpec, arch: Architecture) -> list[str]:
    """All invariant violations of ``arch`` against ``space``; empty iff valid."""
    violations: list[str] = []
    if len(arch.layer_genes) != space.n_layers:
        violations.append(
            f"length mismatch: {len(arch.layer_genes)} layer genes, "
            f"space has {space.n_layers} layers"
        )
    if len(arch.cluster_genes) != space.n_clusters:
        violations.append(
            f"length mismatch: {len(arch.cluster_genes)} cluster genes, "
            f"space has {space.n_clusters} clusters"
        )
    for ci, gene in enumerate(arch.cluster_genes[: space.n_clusters]):
        choices = space.clusters[ci].channel_choices
        if gene not in choices:
            violations.append(f"cluster {ci}: channel {gene} not in {choices}")
    for li, (k, t) in enumerate(arch.layer_genes[: space.n_layers]):
        cs = space.layer_choices(li)
        if k not in cs.kernel_sizes:
            violations.append(f"layer {li}: kernel {k} not in {cs.kernel_sizes}")
        if t not in cs.expansion_ratios:
            violations.append(f"layer {li}: expansion {t} not in {cs.expansion_ratios}")
    return violations


def require_valid(space: SearchSpaceSpec, arch: Architecture) -> None:
    violations = validate(space, arch)
    if violations:
        from .errors import ValidationError

        raise ValidationError(violations)


def spring_output_channel(space: SearchSpaceSpec, arch: Architecture, cluster: int) -> int:
    if arch.mode == "released":
        return arch.cluster_genes[cluster]
    return space.clusters[cluster].spring_output


def layer_io_channels(
    space: SearchSpaceSpec, arch: Architecture, layer: int
) -> tuple[int, int]:
    """(input, output) width of a block under the architecture's mode."""
    ci = space.cluster_of_layer(layer)
    gene = arch.cluster_genes[ci]
    if space.is_cluster_head(layer):
        if ci == 0:
            c_in = space.stem_output_channels
        else:
            c_in = spring_output_channel(space, arch, ci - 1)
    else:
        c_in = gene
    c_out = spring_output_channel(space, arch, ci) if space.is_spring(layer) else gene
    return c_in, c_out


def release_spring_blocks(space: SearchSpaceSpec, arch: Architecture) -> Architecture:
    """Relax every spring block to the cluster's chosen width. Idempotent."""
    require_valid(space, arch)
    if arch.mode == "released":
        return arch
    return replace(arch, mode="released")


def cardinality(space: SearchSpaceSpec) -> int:
    """Exact number of architectures in the space."""
    total = 1
    for layer in range(space.n_layers):
        total *= space.layer_choices(layer).n_pairs
    for cluster in space.clusters:
        total *= len(cluster.channel_choices)
    return total


def random_architecture(
    space: SearchSpaceSpec,
    rng: "np.random.Generator",
    alive: "OperationGraph | None" = None,
) -> Architecture:
    """Sample an architecture, optionally restricted to a liveness graph.

    Sampling is factorized: each cluster's width is uniform over its feasible
    widths, then each layer's (kernel, expansion) is uniform over the pairs
    alive under that width. Draw order is all clusters in index order, then
    all layers in index order.
    """
    if alive is not None:
        problems = alive.check_invariants()
        if problems:
            raise InfeasibleError("graph infeasible: " + "; ".join(problems))
    channels = []
    for ci in range(space.n_clusters):
        if alive is None:
            options = space.clusters[ci].channel_choices
        else:
            options = alive.feasible_channels(ci)
        channels.append(options[int(rng.integers(len(options)))])
    genes = []
    for li in range(space.n_layers):
        channel = channels[space.cluster_of_layer(li)]
        if alive is None:
            pairs = space.layer_choices(li).pairs()
        else:
            pairs = alive.alive_pairs(li, channel)
        genes.append(pairs[int(rng.integers(len(pairs)))])
    return Architecture(tuple(genes), tuple(channels))


# ---------------------------------------------------------------------------
# Default space (19 searchable blocks in 6 clusters over a 224x224 input)


def build_default_space(n_class: int = 1000) -> SearchSpaceSpec:
    """The standard mobile supernet layout used throughout the tests and CLI."""
    kernels = (3, 5, 7)
    expansions = (3, 6)
    layout = [  # (block_count, stride, channel choices, input resolution)
        (2, 2, (24, 32, 40), 112),
        (4, 2, (40, 48, 56), 56),
        (4, 2, (64, 72, 80), 28),
        (4, 1, (96, 112, 128), 14),
        (4, 2, (160, 192, 224), 14),
        (1, 1, (240, 280, 320), 7),
    ]
    clusters = tuple(
        ClusterSpec(
            block_count=n,
            stride=s,
            choices=ChoiceSets(kernels, expansions, channels),
            input_resolution=res,
        )
        for n, s, channels, res in layout
    )
    stem = (
        FixedLayer("conv2d", kernel=3, in_channels=3, out_channels=32, stride=2),
        FixedLayer("separable", kernel=3, in_channels=32, out_channels=16, stride=1),
    )
    tail = (
        FixedLayer("conv2d", kernel=1, in_channels=320, out_channels=1280, stride=1),
        FixedLayer("avgpool", kernel=7, in_channels=1280, out_channels=1280, stride=1),
        FixedLayer("conv2d", kernel=1, in_channels=1280, out_channels=n_class, stride=1),
    )
    return SearchSpaceSpec(stem=stem, clusters=clusters, tail=tail, n_class=n_class)


# ---------------------------------------------------------------------------
# Space <-> JSON (rows mirror the layout table: input / operator / k / t / c / s)


def space_to_json_dict(space: SearchSpaceSpec) -> dict:
    rows: list[dict[str, Any]] = []
    res = space.input_size
    channels: int | None = None
    for layer in space.stem:
        rows.append(
            {
                "input": [res, layer.in_channels],
                "operator": layer.operator,
                "k": layer.kernel,
                "c": layer.out_channels,
                "s": layer.stride,
            }
        )
        if layer.operator != "avgpool":
            res = conv_output_size(res, layer.kernel, layer.stride)
        channels = layer.out_channels
    for ci, cluster in enumerate(space.clusters):
        rows.append(
            {
                "input": [cluster.input_resolution, space.cluster_input_channels(ci)],
                "operator": "bottleneck",
                "blocks": cluster.block_count,
                "k": list(cluster.choices.kernel_sizes),
                "t": list(cluster.choices.expansion_ratios),
                "c": list(cluster.channel_choices),
                "s": cluster.stride,
            }
        )
        res = conv_output_size(cluster.input_resolution, 1, cluster.stride)
        channels = cluster.spring_output
    for layer in space.tail:
        rows.append(
            {
                "input": [res, layer.in_channels],
                "operator": layer.operator,
                "k": layer.kernel,
                "c": layer.out_channels,
                "s": layer.stride,
            }
        )
        if layer.operator == "avgpool":
            res = 1
    return {
        "input_size": space.input_size,
        "n_class": space.n_class,
        "rows": rows,
    }


def space_from_json_dict(data: dict) -> SearchSpaceSpec:
    try:
        input_size = int(data.get("input_size", 224))
        n_class = int(data.get("n_class", 1000))
        quantum = int(data.get("channel_quantum", DEFAULT_CHANNEL_QUANTUM))
        rows = data["rows"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad space JSON: {exc}") from exc

    def resolve_channels(value: Any) -> int:
        return n_class if value == "n_class" else int(value)

    stem: list[FixedLayer] = []
    clusters: list[ClusterSpec] = []
    tail: list[FixedLayer] = []
    res = input_size
    channels: int | None = None
    for row in rows:
        op = row.get("operator")
        if op == "bottleneck":
            if tail:
                raise ConfigError("bottleneck rows must be contiguous")
            choices = ChoiceSets(
                kernel_sizes=tuple(row["k"]),
                expansion_ratios=tuple(row["t"]),
                channel_choices=tuple(row["c"]),
                channel_quantum=quantum,
            )
            clusters.append(
                ClusterSpec(
                    block_count=int(row.get("blocks", 1)),
                    stride=int(row.get("s", 1)),
                    choices=choices,
                    input_resolution=res,
                )
            )
            res = conv_output_size(res, 1, int(row.get("s", 1)))
            channels = max(choices.channel_choices)
        elif op in ("conv2d", "separable", "avgpool"):
            out = resolve_channels(row.get("c", channels))
            if channels is None:  # first row; image channels unless stated
                channels = int(row["input"][1]) if "input" in row else 3
            layer = FixedLayer(
                operator=op,
                kernel=int(row.get("k", 1)),
                in_channels=channels,
                out_channels=out if op != "avgpool" else channels,
                stride=int(row.get("s", 1)),
            )
            if clusters:
                tail.append(layer)
            else:
                stem.append(layer)
            if op == "avgpool":
                res = 1
            else:
                res = conv_output_size(res, layer.kernel, layer.stride)
            channels = layer.out_channels
        else:
            raise ConfigError(f"unknown operator {op!r} in space row")
    return SearchSpaceSpec(
        stem=tuple(stem),
        clusters=tuple(clusters),
        tail=tuple(tail),
        input_size=input_size,
        n_class=n_class,
    )


def load_space(source: str | dict) -> SearchSpaceSpec:
    """Load a space from ``"default"``, a JSON file path, or an inline dict."""
    if isinstance(source, dict):
        return space_from_json_dict(source)
    if source == "default":
        return build_default_space()
    try:
        with open(source, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read space file {source!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"space file {source!r} is not valid JSON: {exc}") from exc
    return space_from_json_dict(data)
