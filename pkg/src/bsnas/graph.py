"""Liveness graph over per-layer (kernel, expansion, channel) operation triples.

Each searchable layer owns a set of operation triples; shrinking turns
triples off and they never come back. A channel is *feasible* for a cluster
only while every layer of that cluster still has at least one alive triple
using it - otherwise no architecture could route that width through the
cluster.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .space import SearchSpaceSpec, op_label, parse_op_label


class OperationGraph:
    """Alive masks and usage counters for every operation triple.

    ``alive`` and ``usage`` are (n_layers, max_op_count) arrays; columns
    beyond a layer's own triple count are padding and always dead.
    """

    def __init__(
        self,
        space: SearchSpaceSpec,
        alive: np.ndarray | None = None,
        usage: np.ndarray | None = None,
        step_index: int = 0,
        retention_bound: int | None = None,
    ):
        self.space = space
        shape = (space.n_layers, space.max_op_count)
        if alive is None:
            alive = np.zeros(shape, dtype=bool)
            for layer in range(space.n_layers):
                alive[layer, : space.op_count(layer)] = True
        self.alive = np.asarray(alive, dtype=bool).copy()
        if self.alive.shape != shape:
            raise ConfigError(f"alive mask shape {self.alive.shape} != {shape}")
        self.usage = (
            np.zeros(shape, dtype=np.int64)
            if usage is None
            else np.asarray(usage, dtype=np.int64).copy()
        )
        self.step_index = step_index
        if retention_bound is None:
            retention_bound = int(self.alive.sum(axis=1).max(initial=0))
        self.retention_bound = retention_bound
        self._pair_cache: dict[tuple[int, int], tuple[tuple[int, int], ...]] = {}

    # -- queries --------------------------------------------------------

    def alive_count(self, layer: int) -> int:
        return int(self.alive[layer].sum())

    def max_alive_per_layer(self) -> int:
        return int(self.alive.sum(axis=1).max())

    def alive_triples(self, layer: int) -> list[tuple[int, int, int]]:
        return [
            self.space.op_from_index(layer, int(i))
            for i in np.flatnonzero(self.alive[layer])
        ]

    def is_alive(self, layer: int, kernel: int, expansion: int, channel: int) -> bool:
        return bool(self.alive[layer, self.space.op_index(layer, kernel, expansion, channel)])

    def feasible_channels(self, cluster: int) -> tuple[int, ...]:
        """Widths with at least one alive triple in every layer of the cluster."""
        choices = self.space.clusters[cluster].channel_choices
        out = []
        for channel in choices:
            if all(
                self.alive_pairs(layer, channel)
                for layer in self.space.layers_of_cluster(cluster)
            ):
                out.append(channel)
        return tuple(out)

    def alive_pairs(self, layer: int, channel: int) -> tuple[tuple[int, int], ...]:
        """(kernel, expansion) pairs alive at ``layer`` under ``channel``."""
        key = (layer, channel)
        cached = self._pair_cache.get(key)
        if cached is not None:
            return cached
        space = self.space
        pairs = tuple(
            (k, t)
            for k, t in space.layer_choices(layer).pairs()
            if self.alive[layer, space.op_index(layer, k, t, channel)]
        )
        self._pair_cache[key] = pairs
        return pairs

    def check_invariants(self) -> list[str]:
        problems = []
        for layer in range(self.space.n_layers):
            if self.alive_count(layer) == 0:
                problems.append(f"layer {layer} has no alive operations")
        for cluster in range(self.space.n_clusters):
            if not self.feasible_channels(cluster):
                problems.append(f"cluster {cluster} has no feasible channel")
        return problems

    def cardinality(self) -> int:
        """Exact number of alive-respecting architectures."""
        total = 1
        for cluster in range(self.space.n_clusters):
            per_cluster = 0
            for channel in self.feasible_channels(cluster):
                combo = 1
                for layer in self.space.layers_of_cluster(cluster):
                    combo *= len(self.alive_pairs(layer, channel))
                per_cluster += combo
            total *= per_cluster
        return total

    # -- mutation (single-owner, sequential) ------------------------------

    def record_usage(self, op_indices: np.ndarray) -> None:
        """Add one occurrence per (row, layer) of a batch's triple indices."""
        arr = np.asarray(op_indices, dtype=np.int64)
        layers = np.broadcast_to(np.arange(self.space.n_layers), arr.shape)
        np.add.at(self.usage, (layers, arr), 1)

    def copy_with(
        self,
        alive: np.ndarray | None = None,
        step_index: int | None = None,
        retention_bound: int | None = None,
    ) -> "OperationGraph":
        return OperationGraph(
            self.space,
            alive=self.alive if alive is None else alive,
            usage=self.usage,
            step_index=self.step_index if step_index is None else step_index,
            retention_bound=(
                self.retention_bound if retention_bound is None else retention_bound
            ),
        )

    # -- serialization ----------------------------------------------------

    def to_json_dict(self) -> dict:
        layers = []
        for layer in range(self.space.n_layers):
            alive_labels = [op_label(*op) for op in self.alive_triples(layer)]
            usage = {}
            for idx in range(self.space.op_count(layer)):
                count = int(self.usage[layer, idx])
                if count:
                    usage[op_label(*self.space.op_from_index(layer, idx))] = count
            layers.append({"alive": alive_labels, "usage": usage})
        return {
            "layers": layers,
            "step_index": self.step_index,
            "retention_bound": self.retention_bound,
        }

    @classmethod
    def from_json_dict(cls, space: SearchSpaceSpec, data: dict) -> "OperationGraph":
        try:
            layers = data["layers"]
            if len(layers) != space.n_layers:
                raise ConfigError(
                    f"graph has {len(layers)} layers, space has {space.n_layers}"
                )
            alive = np.zeros((space.n_layers, space.max_op_count), dtype=bool)
            usage = np.zeros((space.n_layers, space.max_op_count), dtype=np.int64)
            for li, entry in enumerate(layers):
                for label in entry["alive"]:
                    alive[li, space.op_index(li, *parse_op_label(label))] = True
                for label, count in entry.get("usage", {}).items():
                    usage[li, space.op_index(li, *parse_op_label(label))] = int(count)
            return cls(
                space,
                alive=alive,
                usage=usage,
                step_index=int(data.get("step_index", 0)),
                retention_bound=data.get("retention_bound"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad graph JSON: {exc}") from exc


def full_graph(space: SearchSpaceSpec) -> OperationGraph:
    return OperationGraph(space)
