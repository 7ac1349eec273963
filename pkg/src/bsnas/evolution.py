"""Constrained evolutionary search over the shrunk operation graph.

Each iteration regenerates the population from the current elite: a block of
crossover children, a block of mutants, and a random-sample refill, all
filtered against the MAC window and deduplicated by canonical string. The
best records ever seen live in a hall of fame, so the reported best never
regresses. Candidate scores are used exactly as the evaluator returns them;
there is no recalibration step between generation and ranking.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .cost import flops
from .errors import ConfigError, ConstraintInfeasibleError
from .evaluators import Evaluator, evaluate_many
from .graph import OperationGraph
from .shrinking import EvalRecord, NullSink, Sink
from .space import (
    Architecture,
    SearchSpaceSpec,
    random_architecture,
    release_spring_blocks,
)


@dataclass(frozen=True)
class EvolutionConfig:
    population: int = 75
    iterations: int = 20
    elite_k: int = 10
    mutation_prob: float = 0.1
    offspring_crossover: int = 25
    offspring_mutation: int = 25
    flops_max: int | None = None
    flops_min: int | None = None
    max_resample: int = 100
    hall_of_fame: int = 10

    def __post_init__(self):
        if min(self.population, self.iterations, self.elite_k, self.max_resample) < 1:
            raise ConfigError("population, iterations, elite_k, max_resample must be >= 1")
        if self.elite_k > self.population:
            raise ConfigError("elite_k cannot exceed population")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ConfigError("mutation_prob must be in [0, 1]")
        if self.offspring_crossover < 0 or self.offspring_mutation < 0:
            raise ConfigError("offspring counts must be >= 0")
        if self.offspring_crossover + self.offspring_mutation > self.population:
            raise ConfigError("offspring counts cannot exceed population")
        if self.hall_of_fame < 1:
            raise ConfigError("hall_of_fame must be >= 1")

    def to_json_dict(self) -> dict:
        return {
            "population": self.population,
            "iterations": self.iterations,
            "elite_k": self.elite_k,
            "mutation_prob": self.mutation_prob,
            "offspring_crossover": self.offspring_crossover,
            "offspring_mutation": self.offspring_mutation,
            "flops_max": self.flops_max,
            "flops_min": self.flops_min,
            "max_resample": self.max_resample,
            "hall_of_fame": self.hall_of_fame,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "EvolutionConfig":
        try:
            kwargs = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad evolution config: {exc}") from exc


@dataclass
class Population:
    """Deduplicated members of the current generation plus the best-ever list."""

    members: list[EvalRecord] = field(default_factory=list)
    hall_of_fame: list[EvalRecord] = field(default_factory=list)

    def best(self) -> EvalRecord:
        return self.hall_of_fame[0]


def _record_sort_key(record: EvalRecord):
    return (-record.score, record.arch.canonical)


def _within_window(space: SearchSpaceSpec, config: EvolutionConfig, arch: Architecture) -> tuple[bool, int]:
    """True when the released-mode MAC count sits in the configured window."""
    if config.flops_max is None and config.flops_min is None:
        return True, -1
    macs = flops(space, release_spring_blocks(space, arch)).total_macs
    if config.flops_max is not None and macs > config.flops_max:
        return False, macs
    if config.flops_min is not None and macs < config.flops_min:
        return False, macs
    return True, macs


def _constrained_sample(
    space: SearchSpaceSpec,
    graph: OperationGraph,
    config: EvolutionConfig,
    rng: np.random.Generator,
    taken: set[str],
    dedup: bool = True,
) -> Architecture:
    """Rejection-sample a window-satisfying architecture, avoiding ``taken``.

    Exhausting the resample budget on duplicates alone returns a duplicate
    (on tiny spaces distinctness can be impossible); exhausting it without a
    single window hit is a hard error reporting the closest cost found.
    """
    fallback = None
    seen_macs: list[int] = []
    for _ in range(config.max_resample):
        arch = random_architecture(space, rng, alive=graph)
        ok, macs = _within_window(space, config, arch)
        if not ok:
            seen_macs.append(macs)
            continue
        if dedup and arch.canonical in taken:
            fallback = arch
            continue
        return arch
    if fallback is not None:
        return fallback
    detail = ""
    if seen_macs:
        detail = f"; closest MACs seen: [{min(seen_macs)}, {max(seen_macs)}]"
    raise ConstraintInfeasibleError(
        f"no architecture satisfied the cost window "
        f"[{config.flops_min}, {config.flops_max}] after {config.max_resample} samples"
        + detail
    )


def crossover(
    parent_a: Architecture,
    parent_b: Architecture,
    rng: np.random.Generator,
    graph: OperationGraph | None = None,
) -> Architecture:
    """Uniform gene-wise crossover; a fair coin picks each gene's parent.

    Because alive (kernel, expansion) pairs are conditioned on the width, a
    pair inherited from one parent can be dead under the width inherited from
    the other; such genes are resampled from the alive pairs of the child's
    width.
    """
    coins_layers = rng.integers(0, 2, size=len(parent_a.layer_genes))
    coins_clusters = rng.integers(0, 2, size=len(parent_a.cluster_genes))
    genes = [
        parent_a.layer_genes[i] if coins_layers[i] == 0 else parent_b.layer_genes[i]
        for i in range(len(parent_a.layer_genes))
    ]
    channels = tuple(
        parent_a.cluster_genes[i] if coins_clusters[i] == 0 else parent_b.cluster_genes[i]
        for i in range(len(parent_a.cluster_genes))
    )
    if graph is not None:
        space = graph.space
        for li in range(len(genes)):
            channel = channels[space.cluster_of_layer(li)]
            if genes[li] not in graph.alive_pairs(li, channel):
                pairs = graph.alive_pairs(li, channel)
                genes[li] = pairs[int(rng.integers(len(pairs)))]
    return Architecture(tuple(genes), channels)


def mutate(
    arch: Architecture,
    graph: OperationGraph,
    prob: float,
    rng: np.random.Generator,
) -> Architecture:
    """Resample each gene independently with probability ``prob``.

    Layer genes draw uniformly from the alive pairs under the current width;
    width genes draw from the cluster's feasible set, and a changed width
    cascades: layer genes dead under the new width are resampled.
    """
    space = graph.space
    genes = list(arch.layer_genes)
    for li in range(space.n_layers):
        if rng.random() < prob:
            channel = arch.cluster_genes[space.cluster_of_layer(li)]
            pairs = graph.alive_pairs(li, channel)
            genes[li] = pairs[int(rng.integers(len(pairs)))]
    channels = list(arch.cluster_genes)
    for ci in range(space.n_clusters):
        if rng.random() < prob:
            options = graph.feasible_channels(ci)
            channels[ci] = options[int(rng.integers(len(options)))]
            if channels[ci] != arch.cluster_genes[ci]:
                for li in space.layers_of_cluster(ci):
                    if genes[li] not in graph.alive_pairs(li, channels[ci]):
                        pairs = graph.alive_pairs(li, channels[ci])
                        genes[li] = pairs[int(rng.integers(len(pairs)))]
    return Architecture(tuple(genes), tuple(channels))


def init_population(
    space: SearchSpaceSpec,
    graph: OperationGraph,
    config: EvolutionConfig,
    evaluator: Evaluator,
    rng: np.random.Generator,
    sink: Sink | None = None,
    workers: int = 1,
) -> Population:
    """Window-satisfying random population, distinct where the space allows."""
    sink = sink or NullSink()
    space_size = graph.cardinality()
    archs: list[Architecture] = []
    taken: set[str] = set()
    for _ in range(config.population):
        if len(taken) >= space_size:
            break  # tiny space: fewer distinct members than requested
        arch = _constrained_sample(space, graph, config, rng, taken)
        if arch.canonical in taken:
            continue
        taken.add(arch.canonical)
        archs.append(arch)
    scores = evaluate_many(evaluator, archs, workers=workers)
    for slot, (arch, score) in enumerate(zip(archs, scores)):
        sink.eval_record("evolve", 0, slot, arch, score)
    members = [EvalRecord(a, s) for a, s in zip(archs, scores)]
    hof = sorted(members, key=_record_sort_key)[: config.hall_of_fame]
    return Population(members=members, hall_of_fame=hof)


def _merge_hof(
    hof: list[EvalRecord], records: list[EvalRecord], size: int
) -> list[EvalRecord]:
    by_key: dict[str, EvalRecord] = {}
    for record in sorted(hof + records, key=_record_sort_key):
        by_key.setdefault(record.arch.canonical, record)
    return sorted(by_key.values(), key=_record_sort_key)[:size]


def evolve(
    space: SearchSpaceSpec,
    graph: OperationGraph,
    config: EvolutionConfig,
    evaluator: Evaluator,
    rng: np.random.Generator,
    sink: Sink | None = None,
    workers: int = 1,
) -> tuple[EvalRecord, list[dict]]:
    """Elitist evolutionary search; returns the best record and per-iteration stats.

    Evaluator calls are bounded by population * (iterations + 1).
    """
    sink = sink or NullSink()
    problems = graph.check_invariants()
    if problems:
        raise ConstraintInfeasibleError("graph infeasible: " + "; ".join(problems))
    space_size = graph.cardinality()
    population = init_population(space, graph, config, evaluator, rng, sink, workers)
    history: list[dict] = [_iteration_stats(0, population)]
    sink.iteration(history[-1])

    for iteration in range(1, config.iterations + 1):
        parents = sorted(population.members, key=_record_sort_key)[: config.elite_k]
        parent_archs = [p.arch for p in parents]
        new_archs: list[Architecture] = []
        taken = {r.arch.canonical for r in population.hall_of_fame}

        def admit(candidate: Architecture | None) -> bool:
            if candidate is None:
                return False
            ok, _ = _within_window(space, config, candidate)
            if not ok:
                return False
            if candidate.canonical in taken and len(taken) < space_size:
                return False
            new_archs.append(candidate)
            taken.add(candidate.canonical)
            return True

        for _ in range(config.offspring_crossover):
            child = None
            for _attempt in range(config.max_resample):
                if len(parent_archs) >= 2:
                    i, j = rng.choice(len(parent_archs), size=2, replace=False)
                    child = crossover(parent_archs[int(i)], parent_archs[int(j)], rng, graph)
                else:
                    child = mutate(parent_archs[0], graph, config.mutation_prob, rng)
                if admit(child):
                    break
            else:
                # persistent duplicates: spend the slot on the last candidate
                if child is not None and _within_window(space, config, child)[0]:
                    new_archs.append(child)
        for _ in range(config.offspring_mutation):
            child = None
            for _attempt in range(config.max_resample):
                idx = int(rng.integers(len(parent_archs)))
                child = mutate(parent_archs[idx], graph, config.mutation_prob, rng)
                if admit(child):
                    break
            else:
                if child is not None and _within_window(space, config, child)[0]:
                    new_archs.append(child)
        while len(new_archs) < config.population:
            arch = _constrained_sample(
                space, graph, config, rng, taken, dedup=len(taken) < space_size
            )
            new_archs.append(arch)
            taken.add(arch.canonical)

        scores = evaluate_many(evaluator, new_archs, workers=workers)
        for slot, (arch, score) in enumerate(zip(new_archs, scores)):
            sink.eval_record("evolve", iteration, slot, arch, score)
        records = [EvalRecord(a, s) for a, s in zip(new_archs, scores)]
        unique: dict[str, EvalRecord] = {}
        for record in records:
            unique.setdefault(record.arch.canonical, record)
        population = Population(
            members=list(unique.values()),
            hall_of_fame=_merge_hof(population.hall_of_fame, records, config.hall_of_fame),
        )
        history.append(_iteration_stats(iteration, population))
        sink.iteration(history[-1])
    return population.best(), history


def _iteration_stats(iteration: int, population: Population) -> dict:
    scores = [r.score for r in population.members]
    best = population.best()
    return {
        "iteration": iteration,
        "population": len(population.members),
        "best_score": best.score,
        "best_arch": best.arch.canonical,
        "mean_score": float(np.mean(scores)) if scores else None,
        "min_score": min(scores) if scores else None,
        "max_score": max(scores) if scores else None,
    }
