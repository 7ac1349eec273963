"""Architecture evaluators: the contract, a synthetic supernet surrogate, a
lookup table, and a brute-force enumeration oracle.

The surrogate stands in for a trained weight-sharing supernet. Its score for
an architecture is a squashed sum of per-operation latent qualities (weighted
by how much virtual training each operation has absorbed), per-cluster width
utilities, and adjacent-layer coupling terms, plus observation noise:

    score = squash( sum_l u[l, op_l] * g(n[l, op_l])
                    + sum_cl v[cl, c_cl]
                    + coupling * sum_l w[l, op_l, op_{l+1}] ) + eps

with g(n) = n / (n + half_life) and eps ~ Normal(0, noise_sd). The paired
"true stand-alone fitness" is the same expression with g = 1 and eps = 0.
Training exposure accrues through :meth:`notify_training`: one epoch spreads
a fixed per-layer budget across whatever operations are still alive, so
survivors of shrinking train faster - the mechanism that makes shrunk spaces
score better without hard-coding that outcome.
"""
from __future__ import annotations

import itertools
import json

import numpy as np

from . import kernels
from .errors import (
    ConfigError,
    EnumerationLimitError,
    EvaluatorError,
    MissingArchitectureError,
)
from .graph import OperationGraph
from .rng import restore_state, save_state, substream
from .space import Architecture, SearchSpaceSpec


class Evaluator:
    """Maps an architecture to an estimated top-1 score in [0, 1].

    ``concurrency_safe`` promises that concurrent ``evaluate`` calls do not
    mutate shared state; ``deterministic`` promises identical scores for
    identical (state, architecture).
    """

    concurrency_safe = False
    deterministic = False

    def evaluate(self, arch: Architecture) -> float:
        raise NotImplementedError

    def evaluate_batch(self, archs: list[Architecture]) -> list[float]:
        return [self.evaluate(a) for a in archs]

    def notify_training(self, graph: OperationGraph, epochs: float) -> None:
        """Record ``epochs`` of virtual training over the graph's alive ops."""

    def export_state(self) -> dict | None:
        """Mutable-state snapshot for checkpointing; None when stateless."""
        return None

    def import_state(self, state: dict) -> None:
        pass


def encode_architecture(
    space: SearchSpaceSpec, arch: Architecture
) -> tuple[np.ndarray, np.ndarray]:
    """(per-layer triple index, per-cluster channel index) integer vectors."""
    ch_idx = np.empty(space.n_clusters, dtype=np.int64)
    for ci, gene in enumerate(arch.cluster_genes):
        ch_idx[ci] = space.clusters[ci].channel_choices.index(gene)
    op_idx = np.empty(space.n_layers, dtype=np.int64)
    for li, (k, t) in enumerate(arch.layer_genes):
        channel = arch.cluster_genes[space.cluster_of_layer(li)]
        op_idx[li] = space.op_index(li, k, t, channel)
    return op_idx, ch_idx


def encode_batch(
    space: SearchSpaceSpec, archs: list[Architecture]
) -> tuple[np.ndarray, np.ndarray]:
    op_idx = np.empty((len(archs), space.n_layers), dtype=np.int64)
    ch_idx = np.empty((len(archs), space.n_clusters), dtype=np.int64)
    for row, arch in enumerate(archs):
        op_idx[row], ch_idx[row] = encode_architecture(space, arch)
    return op_idx, ch_idx


class SurrogateParams:
    """Latent tables of the synthetic supernet, fully determined by a seed.

    Regenerable bit-exactly from (seed, space shape); exportable to JSON so
    other implementations can reproduce identical scores.

    Width utility is concave in width: per cluster the widest choice is best,
    the runner-up trails by ``channel_minor_gap`` and every further step down
    costs ``channel_major_gap`` more, plus a small per-(cluster, width)
    jitter. The near-tied top pair is what keeps batch rankings informative
    deep into shrinking: models of the runner-up width populate the bottom
    third, so the leader's operations hold positive retention scores.

    The logistic squash maps raw scores to [0, 1]; center and scale are set
    from the space's exact raw extremes (plus a coupling-term bound) so the
    whole space lands on the quasi-linear [0.4, 0.8] segment - scores stay
    resolvable even at the searched elite end.
    """

    def __init__(
        self,
        seed: int,
        u: np.ndarray,
        v: np.ndarray,
        w: np.ndarray,
        center: float,
        scale: float,
        coupling: float = 0.2,
        half_life: float = 60.0,
        noise_sd: float = 0.01,
        channel_major_gap: float = 2.5,
        channel_minor_gap: float = 0.8,
        channel_jitter: float = 0.2,
    ):
        if half_life <= 0:
            raise ConfigError("half_life must be positive")
        if noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")
        self.seed = seed
        self.u = np.asarray(u, dtype=np.float64)
        self.v = np.asarray(v, dtype=np.float64)
        self.w = np.asarray(w, dtype=np.float64)
        self.center = float(center)
        self.scale = float(scale)
        self.coupling = float(coupling)
        self.half_life = float(half_life)
        self.noise_sd = float(noise_sd)
        self.channel_major_gap = float(channel_major_gap)
        self.channel_minor_gap = float(channel_minor_gap)
        self.channel_jitter = float(channel_jitter)

    @classmethod
    def from_seed(
        cls,
        space: SearchSpaceSpec,
        seed: int,
        coupling: float = 0.2,
        half_life: float = 60.0,
        noise_sd: float = 0.01,
        channel_major_gap: float = 2.5,
        channel_minor_gap: float = 0.8,
        channel_jitter: float = 0.2,
    ) -> "SurrogateParams":
        n_layers = space.n_layers
        n_ops = space.max_op_count
        u = substream(seed, "surrogate.u").standard_normal((n_layers, n_ops))
        v = np.zeros((space.n_clusters, space.max_channel_count))
        for ci, cluster in enumerate(space.clusters):
            n = len(cluster.channel_choices)
            for i in range(n):
                steps_below = n - 1 - i
                v[ci, i] = -(
                    channel_minor_gap * min(steps_below, 1)
                    + channel_major_gap * max(steps_below - 1, 0)
                )
        v += channel_jitter * substream(seed, "surrogate.v").standard_normal(v.shape)
        w = substream(seed, "surrogate.w").standard_normal(
            (max(n_layers - 1, 0), n_ops, n_ops)
        )
        center, scale = _calibrate_squash(space, u, v, w, coupling)
        return cls(
            seed, u, v, w, center, scale, coupling, half_life, noise_sd,
            channel_major_gap, channel_minor_gap, channel_jitter,
        )

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "coupling": self.coupling,
            "half_life": self.half_life,
            "noise_sd": self.noise_sd,
            "channel_major_gap": self.channel_major_gap,
            "channel_minor_gap": self.channel_minor_gap,
            "channel_jitter": self.channel_jitter,
            "center": self.center,
            "scale": self.scale,
            "u": self.u.tolist(),
            "v": self.v.tolist(),
            "w": self.w.tolist(),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "SurrogateParams":
        try:
            return cls(
                seed=int(data["seed"]),
                u=np.array(data["u"], dtype=np.float64),
                v=np.array(data["v"], dtype=np.float64),
                w=np.array(data["w"], dtype=np.float64),
                center=float(data["center"]),
                scale=float(data["scale"]),
                coupling=float(data["coupling"]),
                half_life=float(data["half_life"]),
                noise_sd=float(data["noise_sd"]),
                channel_major_gap=float(data.get("channel_major_gap", 2.5)),
                channel_minor_gap=float(data.get("channel_minor_gap", 0.8)),
                channel_jitter=float(data.get("channel_jitter", 0.2)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad surrogate params JSON: {exc}") from exc


def _calibrate_squash(
    space: SearchSpaceSpec,
    u: np.ndarray,
    v: np.ndarray,
    w: np.ndarray,
    coupling: float,
) -> tuple[float, float]:
    """(center, scale) placing the space's raw extremes at scores 0.4 / 0.8.

    The separable part (per-op quality at full training plus width utility)
    has exact extremes: optimize each cluster's width jointly with its
    layers' best/worst ops. The coupling part is bounded by its largest
    per-edge magnitude, so the true span sits just inside the target band.
    """
    raw_max = 0.0
    raw_min = 0.0
    for ci, cluster in enumerate(space.clusters):
        best = None
        worst = None
        for idx, channel in enumerate(cluster.channel_choices):
            hi = v[ci, idx]
            lo = v[ci, idx]
            for layer in space.layers_of_cluster(ci):
                values = [
                    u[layer, space.op_index(layer, k, t, channel)]
                    for k, t in cluster.choices.pairs()
                ]
                hi += max(values)
                lo += min(values)
            best = hi if best is None else max(best, hi)
            worst = lo if worst is None else min(worst, lo)
        raw_max += best
        raw_min += worst
    if coupling and len(w):
        bound = 0.0
        for layer in range(space.n_layers - 1):
            block = np.abs(
                w[layer, : space.op_count(layer), : space.op_count(layer + 1)]
            )
            bound += float(block.max())
        raw_max += abs(coupling) * bound
        raw_min -= abs(coupling) * bound
    span = max(raw_max - raw_min, 1e-9)
    logit_lo = np.log(0.4 / 0.6)  # logit(0.4)
    logit_hi = np.log(0.8 / 0.2)  # logit(0.8)
    scale = span / (logit_hi - logit_lo)
    center = raw_min - scale * logit_lo
    return float(center), float(scale)


def _squash(raw: np.ndarray, center: float, scale: float) -> np.ndarray:
    z = np.clip((raw - center) / scale, -60.0, 60.0)
    return 1.0 / (1.0 + np.exp(-z))


class SurrogateEvaluator(Evaluator):
    """Synthetic supernet evaluator with training-progress and coupling effects."""

    concurrency_safe = True

    def __init__(
        self,
        space: SearchSpaceSpec,
        params: SurrogateParams,
        noise_rng: np.random.Generator | None = None,
    ):
        expected = (space.n_layers, space.max_op_count)
        if params.u.shape != expected:
            raise ConfigError(
                f"surrogate params shape {params.u.shape} does not match space {expected}"
            )
        self.space = space
        self.params = params
        self.exposure = np.zeros(expected, dtype=np.float64)
        self._unit = np.ones(expected, dtype=np.float64)
        self._op_counts = np.array(
            [space.op_count(l) for l in range(space.n_layers)], dtype=np.float64
        )
        if noise_rng is None:
            noise_rng = substream(params.seed, "surrogate.noise")
        self._noise_rng = noise_rng

    @property
    def deterministic(self) -> bool:
        return self.params.noise_sd == 0.0

    # -- scoring ----------------------------------------------------------

    def _raw(self, archs: list[Architecture], trained: bool) -> np.ndarray:
        op_idx, ch_idx = encode_batch(self.space, archs)
        p = self.params
        if trained:
            return kernels.surrogate_raw(
                op_idx, ch_idx, p.u, self.exposure, p.half_life, p.v, p.w, p.coupling
            )
        return kernels.surrogate_raw(
            op_idx, ch_idx, p.u, self._unit, 0.0, p.v, p.w, p.coupling
        )

    def evaluate(self, arch: Architecture) -> float:
        return self.evaluate_batch([arch])[0]

    def evaluate_batch(self, archs: list[Architecture]) -> list[float]:
        if not archs:
            return []
        scores = _squash(self._raw(archs, trained=True), self.params.center, self.params.scale)
        if self.params.noise_sd > 0.0:
            scores = scores + self._noise_rng.normal(0.0, self.params.noise_sd, len(archs))
        return [float(s) for s in np.clip(scores, 0.0, 1.0)]

    def true_fitness(self, arch: Architecture) -> float:
        return self.true_fitness_batch([arch])[0]

    def true_fitness_batch(self, archs: list[Architecture]) -> list[float]:
        """Stand-alone fitness: fully trained (g = 1), noise-free."""
        if not archs:
            return []
        raw = self._raw(archs, trained=False)
        return [float(s) for s in _squash(raw, self.params.center, self.params.scale)]

    # -- training state -----------------------------------------------------

    def notify_training(self, graph: OperationGraph, epochs: float) -> None:
        alive = graph.alive
        counts = alive.sum(axis=1)
        if (counts == 0).any():
            raise EvaluatorError("cannot train a graph with an empty layer")
        rate = self._op_counts / counts
        self.exposure += alive * (epochs * rate)[:, None]

    def export_state(self) -> dict:
        return {
            "exposure": self.exposure.tolist(),
            "noise_rng": save_state(self._noise_rng),
        }

    def import_state(self, state: dict) -> None:
        exposure = np.asarray(state["exposure"], dtype=np.float64)
        if exposure.shape != self.exposure.shape:
            raise ConfigError("evaluator state shape mismatch")
        self.exposure = exposure
        self._noise_rng = restore_state(state["noise_rng"])


class TableEvaluator(Evaluator):
    """Exact lookup by canonical architecture string.

    Missing keys follow the configured policy: ``error`` raises, ``default``
    returns a fixed score, ``nearest`` returns the entry with minimum gene
    Hamming distance (ties broken by canonical-string order).
    """

    concurrency_safe = True
    deterministic = True

    def __init__(self, table: dict[str, float], missing: str = "error", default: float = 0.0):
        if missing not in ("error", "default", "nearest"):
            raise ConfigError(f"unknown missing-key policy {missing!r}")
        if missing == "nearest" and not table:
            raise ConfigError("nearest policy needs a non-empty table")
        self.table = dict(table)
        self.missing = missing
        self.default = float(default)
        self._genes: list[tuple[str, tuple]] | None = None

    @classmethod
    def from_jsonl(cls, path: str, **kwargs) -> "TableEvaluator":
        table = {}
        try:
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    table[record["arch"]] = float(record["top1"])
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ConfigError(f"bad score table {path!r}: {exc}") from exc
        return cls(table, **kwargs)

    @staticmethod
    def _gene_symbols(canonical: str) -> tuple:
        layers, channels = canonical.split("#")
        return tuple(layers.split("|")) + tuple(channels.split("|"))

    def evaluate(self, arch: Architecture) -> float:
        key = arch.canonical
        if key in self.table:
            return self.table[key]
        if self.missing == "error":
            raise MissingArchitectureError(f"no table entry for {key}")
        if self.missing == "default":
            return self.default
        if self._genes is None:
            self._genes = sorted(
                (k, self._gene_symbols(k)) for k in self.table
            )
        target = self._gene_symbols(key)
        best_key = None
        best_dist = None
        for k, genes in self._genes:
            if len(genes) != len(target):
                continue
            dist = sum(a != b for a, b in zip(genes, target))
            if best_dist is None or dist < best_dist:
                best_key, best_dist = k, dist
        if best_key is None:
            raise MissingArchitectureError(
                f"no table entry comparable to {key} (gene count mismatch)"
            )
        return self.table[best_key]


def enumerate_alive(space: SearchSpaceSpec, graph: OperationGraph | None = None):
    """Yield every (alive-respecting) architecture in canonical order."""
    if graph is None:
        channel_options = [c.channel_choices for c in space.clusters]
    else:
        channel_options = [
            graph.feasible_channels(ci) for ci in range(space.n_clusters)
        ]
    for channels in itertools.product(*channel_options):
        per_layer = []
        for li in range(space.n_layers):
            channel = channels[space.cluster_of_layer(li)]
            if graph is None:
                per_layer.append(space.layer_choices(li).pairs())
            else:
                per_layer.append(graph.alive_pairs(li, channel))
        for genes in itertools.product(*per_layer):
            yield Architecture(genes, channels)


def brute_force_best(
    space: SearchSpaceSpec,
    graph: OperationGraph | None,
    evaluator: Evaluator,
    limit: int = 100_000,
    chunk: int = 512,
) -> tuple[Architecture, float]:
    """Exhaustive argmax over the alive space; refuses above ``limit``.

    Ties break toward the smaller canonical string.
    """
    count = graph.cardinality() if graph is not None else _space_cardinality(space)
    if count > limit:
        raise EnumerationLimitError(count, limit)
    best_arch = None
    best_score = -np.inf
    pending: list[Architecture] = []

    def flush():
        nonlocal best_arch, best_score, pending
        if not pending:
            return
        for arch, score in zip(pending, evaluator.evaluate_batch(pending)):
            if score > best_score or (
                score == best_score
                and (best_arch is None or arch.canonical < best_arch.canonical)
            ):
                best_arch, best_score = arch, score
        pending = []

    for arch in enumerate_alive(space, graph):
        pending.append(arch)
        if len(pending) >= chunk:
            flush()
    flush()
    if best_arch is None:
        raise EnumerationLimitError(0, limit)
    return best_arch, float(best_score)


def _space_cardinality(space: SearchSpaceSpec) -> int:
    from .space import cardinality

    return cardinality(space)


def evaluate_many(
    evaluator: Evaluator, archs: list[Architecture], workers: int = 1
) -> list[float]:
    """Evaluate a slate of architectures, fanning out when it can help.

    Results are always in slot order. Evaluators with a specialized batch
    implementation are called through it; thread fan-out only applies to
    per-call evaluators that declare themselves concurrency-safe.
    """
    has_custom_batch = type(evaluator).evaluate_batch is not Evaluator.evaluate_batch
    if workers <= 1 or has_custom_batch or not evaluator.concurrency_safe:
        return evaluator.evaluate_batch(archs)
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(evaluator.evaluate, archs))
