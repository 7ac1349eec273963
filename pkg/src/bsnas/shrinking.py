"""Step-shrinking of the operation graph.

The training loop is virtual: instead of SGD epochs, the driver tells the
evaluator how many epochs elapsed over which alive operations. At each
scheduled round it draws a fairness-balanced batch of architectures, scores
them, ranks every operation by how often it appears among the best versus the
worst models, and turns off the losers:

    R_i = (occurrences in top third - occurrences in bottom third)
          / occurrences in whole batch

Only operations with positive R_i are retainable (capped at the round's
retention number); a layer where nothing is positive keeps its single
top-ranked operation. A cluster-feasibility closure then removes operations
whose channel can no longer be routed through the whole cluster.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from . import kernels
from .errors import (
    BsnasError,
    ConfigError,
    ContractViolationError,
    EvaluatorError,
    InfeasibleError,
)
from .evaluators import Evaluator, encode_batch, evaluate_many
from .graph import OperationGraph, full_graph
from .rng import save_state
from .space import Architecture, SearchSpaceSpec, op_label


@dataclass(frozen=True)
class ShrinkSchedule:
    """Stage lengths, per-round retention numbers, and the test factor."""

    t_first: int = 120
    t_interval: int = 40
    retention: tuple[int, ...] = (18, 9, 5, 3)
    test_factor: int = 200

    def __post_init__(self):
        object.__setattr__(self, "retention", tuple(int(n) for n in self.retention))
        if self.t_first < 0 or self.t_interval < 0:
            raise ConfigError("stage lengths must be >= 0")
        if not self.retention:
            raise ConfigError("retention schedule must be non-empty")
        if any(n < 1 for n in self.retention):
            raise ConfigError("retention values must be positive")
        if any(b >= a for a, b in zip(self.retention, self.retention[1:])):
            raise ConfigError(f"retention must be strictly decreasing, got {self.retention}")
        if self.test_factor < 1:
            raise ConfigError("test_factor must be >= 1")

    def to_json_dict(self) -> dict:
        return {
            "t_first": self.t_first,
            "t_interval": self.t_interval,
            "retention": list(self.retention),
            "test_factor": self.test_factor,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ShrinkSchedule":
        try:
            return cls(
                t_first=int(data.get("t_first", 120)),
                t_interval=int(data.get("t_interval", 40)),
                retention=tuple(data.get("retention", (18, 9, 5, 3))),
                test_factor=int(data.get("test_factor", 200)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad schedule: {exc}") from exc


@dataclass(frozen=True)
class EvalRecord:
    """(architecture, estimated score), with rank filled in after sorting."""

    arch: Architecture
    score: float
    rank: int | None = None


class OpStats(NamedTuple):
    r_score: float
    n_top: int
    n_bottom: int
    n_total: int


@dataclass(frozen=True)
class OpOutcome:
    op: tuple[int, int, int]
    r_score: float
    n_top: int
    n_bottom: int
    n_total: int
    kept: bool


@dataclass(frozen=True)
class ShrinkReport:
    step: int
    retention: int
    batch_size: int
    layers: tuple[tuple[OpOutcome, ...], ...]
    feasible_channels: tuple[tuple[int, ...], ...]

    def kept_counts(self) -> list[int]:
        return [sum(1 for row in layer if row.kept) for layer in self.layers]


# ---------------------------------------------------------------------------
# Event sinks


class Sink:
    """Receiver for evaluation records, shrink reports, and checkpoints."""

    def eval_record(
        self, phase: str, round_idx: int, slot: int, arch: Architecture, score: float
    ) -> None:
        pass

    def shrink_report(self, report: ShrinkReport) -> None:
        pass

    def iteration(self, stats: dict) -> None:
        pass

    def checkpoint(self, payload: dict) -> None:
        pass

    def close(self) -> None:
        pass


class NullSink(Sink):
    pass


class ListSink(Sink):
    """In-memory sink for tests."""

    def __init__(self):
        self.evals: list[dict] = []
        self.reports: list[ShrinkReport] = []
        self.iterations: list[dict] = []
        self.checkpoints: list[dict] = []

    def eval_record(self, phase, round_idx, slot, arch, score):
        self.evals.append(
            {"phase": phase, "round": round_idx, "slot": slot, "arch": arch.canonical, "score": score}
        )

    def shrink_report(self, report):
        self.reports.append(report)

    def iteration(self, stats):
        self.iterations.append(stats)

    def checkpoint(self, payload):
        self.checkpoints.append(payload)


def report_lines(report: ShrinkReport) -> list[dict]:
    """One JSONL-ready dict per layer; unscored ops (zero occurrences) map to null."""
    lines = []
    for layer_idx, rows in enumerate(report.layers):
        kept = [op_label(*row.op) for row in rows if row.kept]
        ri = {
            op_label(*row.op): (None if row.n_total == 0 else row.r_score)
            for row in rows
        }
        lines.append({"step": report.step, "layer": layer_idx, "kept": kept, "ri": ri})
    return lines


class JsonlSink(Sink):
    """Writes evals.jsonl / reports.jsonl / iterations.jsonl plus checkpoints.

    With ``resume_round`` set, existing shrink-phase lines up to that round
    are kept byte-for-byte and everything later (including all evolution
    records, which are regenerated) is dropped.
    """

    def __init__(self, out_dir: str | Path, resume_round: int | None = None):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._evals_path = self.out_dir / "evals.jsonl"
        self._reports_path = self.out_dir / "reports.jsonl"
        self._iters_path = self.out_dir / "iterations.jsonl"
        if resume_round is None:
            for path in (self._evals_path, self._reports_path, self._iters_path):
                path.unlink(missing_ok=True)
        else:
            self._truncate(self._evals_path, resume_round, key="round", phase="shrink")
            self._truncate(self._reports_path, resume_round, key="step", phase=None)
            self._iters_path.unlink(missing_ok=True)
        self._evals = open(self._evals_path, "a", encoding="utf-8")
        self._reports = open(self._reports_path, "a", encoding="utf-8")
        self._iters = open(self._iters_path, "a", encoding="utf-8")

    @staticmethod
    def _truncate(path: Path, max_round: int, key: str, phase: str | None) -> None:
        if not path.exists():
            return
        kept = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                try:
                    record = json.loads(line)
                except json.JSONDecodeError:
                    continue  # partial line from an interrupted write
                if phase is not None and record.get("phase") != phase:
                    continue
                if record.get(key, max_round + 1) > max_round:
                    continue
                kept.append(line if line.endswith("\n") else line + "\n")
        with open(path, "w", encoding="utf-8") as fh:
            fh.writelines(kept)

    def eval_record(self, phase, round_idx, slot, arch, score):
        line = json.dumps(
            {"phase": phase, "round": round_idx, "slot": slot, "arch": arch.canonical, "score": score}
        )
        self._evals.write(line + "\n")

    def shrink_report(self, report):
        for line in report_lines(report):
            self._reports.write(json.dumps(line) + "\n")
        self._reports.flush()

    def iteration(self, stats):
        self._iters.write(json.dumps(stats) + "\n")

    def checkpoint(self, payload):
        self._evals.flush()
        self._reports.flush()
        path = self.out_dir / f"checkpoint_step{payload['round']}.json"
        tmp = path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
        os.replace(tmp, path)

    def close(self):
        for fh in (self._evals, self._reports, self._iters):
            fh.flush()
            fh.close()


# ---------------------------------------------------------------------------
# Fair batch construction


def _cycled_assignment(options: tuple, count: int, rng: np.random.Generator) -> list:
    """``count`` picks cycling through fresh shuffles of ``options``."""
    out: list = []
    while len(out) < count:
        for i in rng.permutation(len(options)):
            out.append(options[int(i)])
    return out[:count]


def fair_batch(
    space: SearchSpaceSpec,
    graph: OperationGraph,
    m: int,
    rng: np.random.Generator,
    retention: int | None = None,
) -> list[Architecture]:
    """Balanced evaluation batch of ``retention * m`` architectures.

    Two-stage balancing: widths cycle through each cluster's feasible set,
    then (kernel, expansion) pairs cycle within each (layer, width) slot
    group, so stage-wise usage counts never differ by more than one.
    """
    problems = graph.check_invariants()
    if problems:
        raise InfeasibleError("cannot sample batch: " + "; ".join(problems))
    if m < 1:
        raise ConfigError("test factor must be >= 1")
    n_r = graph.max_alive_per_layer() if retention is None else retention
    batch_size = n_r * m
    channels = np.empty((batch_size, space.n_clusters), dtype=np.int64)
    for ci in range(space.n_clusters):
        feasible = graph.feasible_channels(ci)
        channels[:, ci] = _cycled_assignment(feasible, batch_size, rng)
    genes: list[list[tuple[int, int] | None]] = [
        [None] * space.n_layers for _ in range(batch_size)
    ]
    for li in range(space.n_layers):
        ci = space.cluster_of_layer(li)
        for channel in graph.feasible_channels(ci):
            slots = np.flatnonzero(channels[:, ci] == channel)
            if slots.size == 0:
                continue
            pairs = graph.alive_pairs(li, int(channel))
            assignment = _cycled_assignment(pairs, len(slots), rng)
            for slot, pair in zip(slots, assignment):
                genes[int(slot)][li] = pair
    return [
        Architecture(tuple(genes[b]), tuple(int(c) for c in channels[b]))
        for b in range(batch_size)
    ]


# ---------------------------------------------------------------------------
# Operation scoring and retention


def sort_records(records: Iterable[EvalRecord]) -> list[EvalRecord]:
    """Descending by score, ties by canonical string; ranks assigned 1..n."""
    ordered = sorted(records, key=lambda r: (-r.score, r.arch.canonical))
    return [replace(r, rank=i + 1) for i, r in enumerate(ordered)]


def score_operations(
    graph: OperationGraph, batch: list[EvalRecord]
) -> list[dict[tuple[int, int, int], OpStats]]:
    """Retention score of every alive triple from a sorted batch.

    Triples that never occurred get a -inf sentinel and are never retainable.
    """
    if len(batch) < 3:
        raise ContractViolationError(f"batch of {len(batch)} is too small to score")
    scores = [r.score for r in batch]
    if any(b > a for a, b in zip(scores, scores[1:])):
        raise ContractViolationError("batch must be sorted by score descending")
    space = graph.space
    op_idx, _ = encode_batch(space, [r.arch for r in batch])
    n_third = len(batch) // 3
    top, bottom, total = kernels.third_counts(op_idx, n_third, space.max_op_count)
    out: list[dict[tuple[int, int, int], OpStats]] = []
    for layer in range(space.n_layers):
        stats: dict[tuple[int, int, int], OpStats] = {}
        for idx in np.flatnonzero(graph.alive[layer]):
            n_tot = int(total[layer, idx])
            n_top = int(top[layer, idx])
            n_bot = int(bottom[layer, idx])
            r = (n_top - n_bot) / n_tot if n_tot else float("-inf")
            stats[space.op_from_index(layer, int(idx))] = OpStats(r, n_top, n_bot, n_tot)
        out.append(stats)
    return out


def _repair_channel(
    graph: OperationGraph,
    layer_scores: list[dict[tuple[int, int, int], OpStats]],
    cluster: int,
) -> int:
    """Best width to force-feed a cluster whose retention left none feasible.

    Quality of a width is the sum over the cluster's layers of the best
    retention score among alive triples using it; ties prefer the smaller
    width.
    """
    space = graph.space
    best_channel = None
    best_quality = None
    for channel in graph.feasible_channels(cluster):
        quality = 0.0
        for layer in space.layers_of_cluster(cluster):
            quality += max(
                layer_scores[layer][(k, t, channel)].r_score
                for k, t in graph.alive_pairs(layer, channel)
            )
        if best_quality is None or quality > best_quality:
            best_channel, best_quality = channel, quality
    assert best_channel is not None  # pre-step graph is feasible
    return best_channel


def shrink_step(
    graph: OperationGraph,
    layer_scores: list[dict[tuple[int, int, int], OpStats]],
    n_r: int,
) -> tuple[OperationGraph, ShrinkReport]:
    """Keep at most ``n_r`` positive-score triples per layer, then close over
    cluster feasibility. Returns the shrunk graph and a full report."""
    space = graph.space
    if len(layer_scores) != space.n_layers:
        raise ContractViolationError("scores must cover every layer")
    kept: list[set[tuple[int, int, int]]] = []
    ranked_all: list[list[tuple[int, int, int]]] = []
    for layer in range(space.n_layers):
        stats = layer_scores[layer]
        if set(stats) != set(graph.alive_triples(layer)):
            raise ContractViolationError(
                f"scores for layer {layer} do not match its alive triples"
            )
        ranked = sorted(stats, key=lambda op: (-stats[op].r_score, op))
        ranked_all.append(ranked)
        positives = [op for op in ranked if stats[op].r_score > 0]
        kept.append(set(positives[:n_r]) if positives else {ranked[0]})

    feasible_after: list[tuple[int, ...]] = []
    for ci in range(space.n_clusters):
        layers = list(space.layers_of_cluster(ci))
        feasible = [
            c
            for c in space.clusters[ci].channel_choices
            if all(any(op[2] == c for op in kept[l]) for l in layers)
        ]
        if not feasible:
            feasible = [_repair_channel(graph, layer_scores, ci)]
        allowed = set(feasible)
        for l in layers:
            kept[l] = {op for op in kept[l] if op[2] in allowed}
            if not kept[l]:
                kept[l] = {
                    next(op for op in ranked_all[l] if op[2] in allowed)
                }
        # reinstatement may have narrowed feasibility further
        feasible_after.append(
            tuple(
                c
                for c in feasible
                if all(any(op[2] == c for op in kept[l]) for l in layers)
            )
        )

    alive = np.zeros_like(graph.alive)
    rows: list[tuple[OpOutcome, ...]] = []
    for layer in range(space.n_layers):
        stats = layer_scores[layer]
        for op in kept[layer]:
            alive[layer, space.op_index(layer, *op)] = True
        rows.append(
            tuple(
                OpOutcome(op, stats[op].r_score, stats[op].n_top, stats[op].n_bottom,
                          stats[op].n_total, op in kept[layer])
                for op in ranked_all[layer]
            )
        )
    new_graph = graph.copy_with(
        alive=alive, step_index=graph.step_index + 1, retention_bound=n_r
    )
    report = ShrinkReport(
        step=new_graph.step_index,
        retention=n_r,
        batch_size=0,  # filled by the driver
        layers=tuple(rows),
        feasible_channels=tuple(feasible_after),
    )
    return new_graph, report


# ---------------------------------------------------------------------------
# The schedule driver


def make_checkpoint(
    graph: OperationGraph,
    round_idx: int,
    total_rounds: int,
    rng: np.random.Generator,
    evaluator: Evaluator,
    schedule: ShrinkSchedule,
) -> dict:
    return {
        "kind": "bsnas-checkpoint",
        "round": round_idx,
        "total_rounds": total_rounds,
        "schedule": schedule.to_json_dict(),
        "graph": graph.to_json_dict(),
        "rng_state": save_state(rng),
        "evaluator_state": evaluator.export_state(),
    }


def run_shrinking(
    space: SearchSpaceSpec,
    schedule: ShrinkSchedule,
    evaluator: Evaluator,
    rng: np.random.Generator,
    sink: Sink | None = None,
    resume: dict | None = None,
    stop_after: int | None = None,
    workers: int = 1,
) -> tuple[OperationGraph, list[ShrinkReport]]:
    """Run the full schedule: stage-one training, then one scoring round per
    retention value, with an inter-round training interval between rounds.

    Round ``i`` samples ``retention[i] * test_factor`` architectures.
    Deterministic given (rng state, space, schedule, evaluator); emits every
    evaluation, report, and a resumable checkpoint per round to the sink.
    """
    sink = sink or NullSink()
    retention = schedule.retention
    if resume is None:
        graph = full_graph(space)
        if schedule.t_first:
            evaluator.notify_training(graph, schedule.t_first)
        start_round = 1
    else:
        try:
            graph = OperationGraph.from_json_dict(space, resume["graph"])
            rng.bit_generator.state = resume["rng_state"]
            if resume.get("evaluator_state") is not None:
                evaluator.import_state(resume["evaluator_state"])
            start_round = int(resume["round"]) + 1
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad checkpoint: {exc}") from exc

    reports: list[ShrinkReport] = []
    for round_idx in range(start_round, len(retention) + 1):
        n_r = retention[round_idx - 1]
        batch = fair_batch(space, graph, schedule.test_factor, rng, retention=n_r)
        op_idx, _ = encode_batch(space, batch)
        graph.record_usage(op_idx)
        try:
            scores = evaluate_many(evaluator, batch, workers=workers)
        except BsnasError:
            raise
        except Exception as exc:  # partial sink output is preserved
            raise EvaluatorError(f"evaluator failed at round {round_idx}: {exc}") from exc
        for slot, (arch, score) in enumerate(zip(batch, scores)):
            sink.eval_record("shrink", round_idx, slot, arch, score)
        ordered = sort_records(
            EvalRecord(arch, score) for arch, score in zip(batch, scores)
        )
        layer_scores = score_operations(graph, ordered)
        graph, report = shrink_step(graph, layer_scores, n_r)
        report = replace(report, batch_size=len(batch))
        reports.append(report)
        sink.shrink_report(report)
        if round_idx < len(retention):
            evaluator.notify_training(graph, schedule.t_interval)
        sink.checkpoint(
            make_checkpoint(graph, round_idx, len(retention), rng, evaluator, schedule)
        )
        if stop_after is not None and round_idx >= stop_after:
            break
    return graph, reports
