"""End-to-end experiment harness: config, pipeline, resume, and reports.

All outputs are plain text (JSON / JSONL / RFC-4180 CSV) so runs can be
consumed - or reproduced - by implementations in any language. Every random
draw descends from the single config seed through named sub-streams
(see :mod:`bsnas.rng`): ``shrink.sampling``, ``surrogate.noise``,
``evolution``, ``report.sampling``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats as scipy_stats

from .cost import flops
from .errors import ConfigError, InfeasibleError
from .evaluators import (
    Evaluator,
    SurrogateEvaluator,
    SurrogateParams,
    TableEvaluator,
)
from .evolution import EvolutionConfig, evolve
from .graph import OperationGraph, full_graph
from .rng import substream
from .shrinking import JsonlSink, ShrinkSchedule, make_checkpoint, run_shrinking
from .space import (
    Architecture,
    SearchSpaceSpec,
    load_space,
    random_architecture,
    release_spring_blocks,
)

OUTPUT_FILES = (
    "config.json",
    "graph.json",
    "best.json",
    "evals.jsonl",
    "reports.jsonl",
    "iterations.jsonl",
)


@dataclass
class RunConfig:
    """One experiment: space + schedule + evolution + evaluator + seed."""

    seed: int
    space_source: str | dict = "default"
    schedule: ShrinkSchedule = None  # type: ignore[assignment]
    evolution: EvolutionConfig = None  # type: ignore[assignment]
    evaluator_kind: str = "surrogate"
    evaluator_params: dict = None  # type: ignore[assignment]
    output_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.schedule is None:
            self.schedule = ShrinkSchedule()
        if self.evolution is None:
            self.evolution = EvolutionConfig()
        if self.evaluator_params is None:
            self.evaluator_params = {}
        if self.evaluator_kind not in ("surrogate", "table"):
            raise ConfigError(f"unknown evaluator backend {self.evaluator_kind!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @classmethod
    def from_json_dict(cls, data: dict, base_dir: Path | None = None) -> "RunConfig":
        if "seed" not in data:
            raise ConfigError("config must set an explicit seed (no wall-clock seeding)")
        try:
            seed = int(data["seed"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad seed: {exc}") from exc
        space_source = data.get("space", "default")
        if isinstance(space_source, str) and space_source != "default":
            space_source = _resolve_path(space_source, base_dir)
            if not Path(space_source).exists():
                raise ConfigError(f"space file {space_source!r} does not exist")
        evaluator = data.get("evaluator", {})
        kind = evaluator.get("backend", "surrogate")
        params = dict(evaluator.get("params", {}))
        for key in ("file", "params_file"):
            if key in params:
                params[key] = _resolve_path(params[key], base_dir)
                if not Path(params[key]).exists():
                    raise ConfigError(f"evaluator file {params[key]!r} does not exist")
        return cls(
            seed=seed,
            space_source=space_source,
            schedule=ShrinkSchedule.from_json_dict(data.get("schedule", {})),
            evolution=EvolutionConfig.from_json_dict(data.get("evolution", {})),
            evaluator_kind=kind,
            evaluator_params=params,
            output_dir=data.get("output_dir"),
            workers=int(data.get("workers", 1)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_json_dict(data, base_dir=path.parent)

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "space": self.space_source,
            "schedule": self.schedule.to_json_dict(),
            "evolution": self.evolution.to_json_dict(),
            "evaluator": {"backend": self.evaluator_kind, "params": self.evaluator_params},
            "output_dir": self.output_dir,
            "workers": self.workers,
        }

    # -- factories -------------------------------------------------------

    def build_space(self) -> SearchSpaceSpec:
        return load_space(self.space_source)

    def build_evaluator(self, space: SearchSpaceSpec) -> Evaluator:
        if self.evaluator_kind == "table":
            path = self.evaluator_params.get("file")
            if not path:
                raise ConfigError("table evaluator needs a 'file' param")
            return TableEvaluator.from_jsonl(
                path,
                missing=self.evaluator_params.get("missing", "error"),
                default=float(self.evaluator_params.get("default", 0.0)),
            )
        return SurrogateEvaluator(space, self.build_surrogate_params(space))

    def build_surrogate_params(self, space: SearchSpaceSpec) -> SurrogateParams:
        if self.evaluator_kind != "surrogate":
            raise ConfigError("run is not configured with the surrogate backend")
        p = self.evaluator_params
        if "params_file" in p:
            data = json.loads(Path(p["params_file"]).read_text(encoding="utf-8"))
            return SurrogateParams.from_json_dict(data)
        return SurrogateParams.from_seed(
            space,
            seed=int(p.get("seed", self.seed)),
            coupling=float(p.get("coupling", 0.2)),
            half_life=float(p.get("half_life", 60.0)),
            noise_sd=float(p.get("noise_sd", 0.01)),
            channel_major_gap=float(p.get("channel_major_gap", 2.5)),
            channel_minor_gap=float(p.get("channel_minor_gap", 0.8)),
            channel_jitter=float(p.get("channel_jitter", 0.2)),
        )


def _resolve_path(value: str, base_dir: Path | None) -> str:
    path = Path(value)
    if base_dir is not None and not path.is_absolute():
        return str(base_dir / path)
    return str(path)


# ---------------------------------------------------------------------------
# Pipeline


def find_latest_checkpoint(out_dir: Path) -> dict | None:
    candidates = sorted(
        out_dir.glob("checkpoint_step*.json"),
        key=lambda p: int(p.stem.replace("checkpoint_step", "") or 0),
        reverse=True,
    )
    for path in candidates:
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            continue
        if payload.get("kind") == "bsnas-checkpoint":
            return payload
    return None


def prepare_output_dir(out_dir: Path, overwrite: bool, resume: bool) -> None:
    if out_dir.exists():
        existing = [p for p in out_dir.iterdir() if p.name in OUTPUT_FILES or p.name.startswith("checkpoint_step")]
        if existing and not (overwrite or resume):
            raise ConfigError(
                f"output dir {out_dir} already holds run outputs; pass --overwrite or --resume"
            )
        if overwrite and not resume:
            for path in existing:
                path.unlink()
    out_dir.mkdir(parents=True, exist_ok=True)


def run_pipeline(
    config: RunConfig,
    output_dir: str | Path,
    overwrite: bool = False,
    resume: bool = False,
    stop_after: int | None = None,
    workers: int | None = None,
) -> dict:
    """Shrink, then evolve on the shrunk graph; write all run artifacts.

    Returns the ``best.json`` payload (or a partial-run marker when
    ``stop_after`` ends the run before the schedule completes).
    """
    out = Path(output_dir)
    prepare_output_dir(out, overwrite=overwrite, resume=resume)
    workers = config.workers if workers is None else workers
    space = config.build_space()
    evaluator = config.build_evaluator(space)
    shrink_rng = substream(config.seed, "shrink.sampling")

    resume_payload = find_latest_checkpoint(out) if resume else None
    resume_round = resume_payload["round"] if resume_payload else None
    sink = JsonlSink(out, resume_round=resume_round)
    try:
        config_path = out / "config.json"
        if not (resume and config_path.exists()):
            config_path.write_text(
                json.dumps(config.to_json_dict(), indent=2, sort_keys=True) + "\n",
                encoding="utf-8",
            )
        graph, _reports = run_shrinking(
            space,
            config.schedule,
            evaluator,
            shrink_rng,
            sink,
            resume=resume_payload,
            stop_after=stop_after,
            workers=workers,
        )
        total_rounds = len(config.schedule.retention)
        done_rounds = graph.step_index
        if stop_after is not None and done_rounds < total_rounds:
            return {"partial": True, "completed_rounds": done_rounds}
        final_payload = make_checkpoint(
            graph, done_rounds, total_rounds, shrink_rng, evaluator, config.schedule
        )
        (out / "graph.json").write_text(json.dumps(final_payload), encoding="utf-8")

        evo_rng = substream(config.seed, "evolution")
        best, _history = evolve(
            space, graph, config.evolution, evaluator, evo_rng, sink, workers=workers
        )
        released = release_spring_blocks(space, best.arch)
        breakdown = flops(space, released)
        payload = {
            "arch": best.arch.canonical,
            "arch_json": released.to_json_dict(),
            "score": best.score,
            "macs": breakdown.total_macs,
            "params": breakdown.total_params,
            "survivors": graph.cardinality(),
            "degenerate": graph.cardinality() == 1,
        }
        (out / "best.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        return payload
    finally:
        sink.close()


# ---------------------------------------------------------------------------
# Reports (accuracy distribution per shrink step; rank correlation)


def load_checkpoints(paths: list[str | Path]) -> list[dict]:
    payloads = []
    for path in paths:
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
        if payload.get("kind") != "bsnas-checkpoint":
            raise ConfigError(f"{path} is not a run checkpoint")
        payloads.append(payload)
    return sorted(payloads, key=lambda p: p["round"])


def distribution_report(
    space: SearchSpaceSpec,
    params: SurrogateParams,
    checkpoints: list[dict],
    n_samples: int,
    rng: np.random.Generator,
    control_epochs: float | None = None,
) -> tuple[list[dict], list[dict]]:
    """Sample and score ``n_samples`` architectures per checkpointed step.

    Returns (rows, per-step stats); rows carry (step, sample_index, arch,
    score). The optional control scores the never-shrunk graph after
    ``control_epochs`` of training - an equal-budget baseline.
    """
    if not checkpoints and control_epochs is None:
        raise ConfigError("distribution report needs at least one checkpoint")
    rows: list[dict] = []
    stats: list[dict] = []

    def sample_block(step, graph: OperationGraph, evaluator: SurrogateEvaluator):
        problems = graph.check_invariants()
        if problems:
            raise InfeasibleError(f"checkpoint step {step}: " + "; ".join(problems))
        archs = [random_architecture(space, rng, alive=graph) for _ in range(n_samples)]
        scores = evaluator.evaluate_batch(archs)
        for i, (arch, score) in enumerate(zip(archs, scores)):
            rows.append(
                {"step": step, "sample_index": i, "arch": arch.canonical, "score": score}
            )
        block = {"step": step, "n": len(scores)}
        if scores:
            block.update(
                mean=float(np.mean(scores)), min=min(scores), max=max(scores)
            )
        stats.append(block)

    for payload in checkpoints:
        graph = OperationGraph.from_json_dict(space, payload["graph"])
        evaluator = SurrogateEvaluator(space, params)
        if payload.get("evaluator_state") is not None:
            evaluator.import_state(payload["evaluator_state"])
        sample_block(payload["round"], graph, evaluator)
    if control_epochs is not None:
        evaluator = SurrogateEvaluator(space, params)
        graph = full_graph(space)
        evaluator.notify_training(graph, control_epochs)
        sample_block("control", graph, evaluator)
    return rows, stats


def write_distribution_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "sample_index", "arch", "score"])
        for row in rows:
            writer.writerow([row["step"], row["sample_index"], row["arch"], row["score"]])


def load_eval_records(path: str | Path, phase: str = "evolve") -> list[tuple[str, float]]:
    records = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                if record.get("phase") == phase:
                    records.append((record["arch"], float(record["score"])))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot read eval records from {path}: {exc}") from exc
    return records


def rank_correlation(
    records: list[tuple[str, float]],
    true_fitness,
    top_n: int = 10,
) -> dict:
    """Spearman/Kendall correlation between estimates and stand-alone fitness.

    An architecture's estimate is the mean of its records (search streams
    re-evaluate candidates, and repeated noisy measurements average out).
    Takes the ``top_n`` best architectures with pairwise-distinct estimates,
    mirroring a study that retrains the top models found by the search.
    """
    sums: dict[str, list[float]] = {}
    for arch, score in records:
        sums.setdefault(arch, []).append(score)
    distinct = [
        (arch, float(np.mean(scores))) for arch, scores in sums.items()
    ]
    distinct.sort(key=lambda item: (-item[1], item[0]))
    selected: list[tuple[str, float]] = []
    for arch, score in distinct:
        if selected and selected[-1][1] == score:
            continue
        selected.append((arch, score))
        if len(selected) == top_n:
            break
    if len(selected) < 3:
        raise InfeasibleError(
            f"need >= 3 architectures with distinct scores, found {len(selected)}"
        )
    estimates = [score for _, score in selected]
    truths = [true_fitness(arch) for arch, _ in selected]
    spearman = scipy_stats.spearmanr(estimates, truths).statistic
    kendall = scipy_stats.kendalltau(estimates, truths).statistic
    est_rank = scipy_stats.rankdata([-e for e in estimates], method="ordinal")
    true_rank = scipy_stats.rankdata([-t for t in truths], method="ordinal")
    pairs = [
        {
            "arch": arch,
            "estimate": est,
            "true_fitness": tru,
            "rank_estimate": int(re),
            "rank_true": int(rt),
        }
        for (arch, est), tru, re, rt in zip(selected, truths, est_rank, true_rank)
    ]
    return {
        "n": len(selected),
        "spearman": float(spearman),
        "kendall": float(kendall),
        "pairs": pairs,
    }


def write_rank_csv(result: dict, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arch", "estimate", "true_fitness", "rank_estimate", "rank_true"])
        for pair in result["pairs"]:
            writer.writerow(
                [
                    pair["arch"],
                    pair["estimate"],
                    pair["true_fitness"],
                    pair["rank_estimate"],
                    pair["rank_true"],
                ]
            )
