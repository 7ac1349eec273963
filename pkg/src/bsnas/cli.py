"""Command-line interface.

Subcommands: space, flops, shrink, evolve, pipeline, report-dist,
report-rank, oracle. Exit codes: 0 ok, 2 config error, 3 infeasible,
4 evaluator failure. ``BSNAS_OUTPUT_DIR`` and ``BSNAS_WORKERS`` override the
config when no flag is given.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .cost import flops as compute_flops
from .errors import BsnasError, ConfigError
from .evaluators import SurrogateEvaluator, TableEvaluator, brute_force_best
from .graph import OperationGraph, full_graph
from .pipeline import (
    RunConfig,
    distribution_report,
    find_latest_checkpoint,
    load_checkpoints,
    load_eval_records,
    prepare_output_dir,
    rank_correlation,
    run_pipeline,
    write_distribution_csv,
    write_rank_csv,
)
from .rng import substream
from .shrinking import JsonlSink, run_shrinking
from .space import (
    arch_from_string,
    cardinality,
    load_space,
    release_spring_blocks,
    space_to_json_dict,
    validate,
)


def _out_dir(args, config: RunConfig | None = None) -> Path:
    value = getattr(args, "output_dir", None) or os.environ.get("BSNAS_OUTPUT_DIR")
    if value is None and config is not None:
        value = config.output_dir
    if value is None:
        raise ConfigError("no output dir: pass --output-dir, set BSNAS_OUTPUT_DIR, or config output_dir")
    return Path(value)


def _workers(args, config: RunConfig | None = None) -> int:
    if getattr(args, "workers", None) is not None:
        return args.workers
    env = os.environ.get("BSNAS_WORKERS")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"bad BSNAS_WORKERS: {env!r}") from exc
    return config.workers if config is not None else 1


def _load_config(args) -> RunConfig:
    config = RunConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    return config


def _load_graph_checkpoint(path: str, space) -> tuple[OperationGraph, dict | None]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("kind") != "bsnas-checkpoint":
        raise ConfigError(f"{path} is not a run checkpoint")
    return OperationGraph.from_json_dict(space, payload["graph"]), payload.get("evaluator_state")


# -- subcommand handlers ----------------------------------------------------


def cmd_space(args) -> int:
    space = load_space(args.space)
    if args.action == "cardinality":
        print(cardinality(space))
    elif args.action == "show":
        print(json.dumps(space_to_json_dict(space), indent=2))
    else:  # validate
        if not args.arch:
            raise ConfigError("space validate needs --arch")
        violations = validate(space, arch_from_string(args.arch))
        if violations:
            for item in violations:
                print(item)
            return ConfigError.exit_code
        print("ok")
    return 0


def cmd_flops(args) -> int:
    space = load_space(args.space)
    arch = arch_from_string(args.arch, mode=args.mode)
    breakdown = compute_flops(space, arch)
    if args.json:
        payload = {
            "arch": arch.canonical,
            "mode": arch.mode,
            "total_macs": breakdown.total_macs,
            "total_params": breakdown.total_params,
        }
        if args.per_layer:
            payload["per_layer"] = [
                {"label": e.label, "macs": e.macs, "params": e.params}
                for e in breakdown.per_layer
            ]
        print(json.dumps(payload, indent=2))
        return 0
    if args.per_layer:
        width = max(len(e.label) for e in breakdown.per_layer)
        print(f"{'layer'.ljust(width)}  {'MACs':>14}  {'params':>12}")
        for entry in breakdown.per_layer:
            print(f"{entry.label.ljust(width)}  {entry.macs:>14,}  {entry.params:>12,}")
    print(f"total MACs   {breakdown.total_macs:,}")
    print(f"total params {breakdown.total_params:,}")
    return 0


def cmd_shrink(args) -> int:
    config = _load_config(args)
    out = _out_dir(args, config)
    prepare_output_dir(out, overwrite=args.overwrite, resume=args.resume)
    space = config.build_space()
    evaluator = config.build_evaluator(space)
    rng = substream(config.seed, "shrink.sampling")
    resume_payload = find_latest_checkpoint(out) if args.resume else None
    sink = JsonlSink(out, resume_round=resume_payload["round"] if resume_payload else None)
    try:
        graph, reports = run_shrinking(
            space,
            config.schedule,
            evaluator,
            rng,
            sink,
            resume=resume_payload,
            stop_after=args.stop_after,
            workers=_workers(args, config),
        )
    finally:
        sink.close()
    print(f"completed {graph.step_index}/{len(config.schedule.retention)} rounds")
    print(f"surviving architectures: {graph.cardinality()}")
    return 0


def cmd_evolve(args) -> int:
    from .evolution import evolve as run_evolve

    config = _load_config(args)
    if args.flops_max is not None:
        config.evolution = replace(config.evolution, flops_max=args.flops_max)
    if args.flops_min is not None:
        config.evolution = replace(config.evolution, flops_min=args.flops_min)
    out = _out_dir(args, config)
    prepare_output_dir(out, overwrite=args.overwrite, resume=False)
    space = config.build_space()
    evaluator = config.build_evaluator(space)
    if args.checkpoint:
        graph, evaluator_state = _load_graph_checkpoint(args.checkpoint, space)
        if evaluator_state is not None:
            evaluator.import_state(evaluator_state)
    else:
        graph = full_graph(space)
    rng = substream(config.seed, "evolution")
    sink = JsonlSink(out)
    try:
        best, _history = run_evolve(
            space, graph, config.evolution, evaluator, rng, sink,
            workers=_workers(args, config),
        )
    finally:
        sink.close()
    released = release_spring_blocks(space, best.arch)
    breakdown = compute_flops(space, released)
    payload = {
        "arch": best.arch.canonical,
        "arch_json": released.to_json_dict(),
        "score": best.score,
        "macs": breakdown.total_macs,
        "params": breakdown.total_params,
    }
    (out / "best.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"best {best.arch.canonical}")
    print(f"score {best.score:.6f}  MACs {breakdown.total_macs:,}  params {breakdown.total_params:,}")
    return 0


def cmd_pipeline(args) -> int:
    config = _load_config(args)
    out = _out_dir(args, config)
    payload = run_pipeline(
        config,
        out,
        overwrite=args.overwrite,
        resume=args.resume,
        stop_after=args.stop_after,
        workers=_workers(args, config),
    )
    if payload.get("partial"):
        print(f"stopped after round {payload['completed_rounds']} (partial run)")
    else:
        print(f"best {payload['arch']}")
        print(
            f"score {payload['score']:.6f}  MACs {payload['macs']:,}  "
            f"params {payload['params']:,}  survivors {payload['survivors']}"
        )
    return 0


def _checkpoint_paths(args) -> list[Path]:
    if args.checkpoints:
        return [Path(p) for p in args.checkpoints]
    if args.run_dir:
        paths = sorted(
            Path(args.run_dir).glob("checkpoint_step*.json"),
            key=lambda p: int(p.stem.replace("checkpoint_step", "") or 0),
        )
        if paths:
            return paths
    raise ConfigError("pass --checkpoints or a --run-dir containing checkpoint_step*.json")


def cmd_report_dist(args) -> int:
    config = _load_config(args)
    space = config.build_space()
    params = config.build_surrogate_params(space)
    checkpoints = load_checkpoints(_checkpoint_paths(args))
    rng = substream(args.seed if args.seed is not None else config.seed, "report.sampling")
    rows, stats = distribution_report(
        space, params, checkpoints, args.samples, rng, control_epochs=args.control_epochs
    )
    write_distribution_csv(rows, args.out)
    for block in stats:
        if block["n"]:
            print(
                f"step {block['step']}: n={block['n']} "
                f"mean={block['mean']:.6f} min={block['min']:.6f} max={block['max']:.6f}"
            )
        else:
            print(f"step {block['step']}: n=0")
    print(f"wrote {args.out}")
    return 0


def cmd_report_rank(args) -> int:
    config = _load_config(args)
    space = config.build_space()
    evals_path = args.evals or (Path(args.run_dir) / "evals.jsonl" if args.run_dir else None)
    if evals_path is None:
        raise ConfigError("pass --evals or --run-dir")
    records = load_eval_records(evals_path, phase="evolve")
    if args.truth:
        table = TableEvaluator.from_jsonl(args.truth)
        truth = lambda canonical: table.evaluate(arch_from_string(canonical))
    else:
        surrogate = SurrogateEvaluator(space, config.build_surrogate_params(space))
        truth = lambda canonical: surrogate.true_fitness(arch_from_string(canonical))
    result = rank_correlation(records, truth, top_n=args.top_n)
    if args.out_json:
        Path(args.out_json).write_text(json.dumps(result, indent=2) + "\n")
    if args.out_csv:
        write_rank_csv(result, args.out_csv)
    print(f"n={result['n']} spearman={result['spearman']:.4f} kendall={result['kendall']:.4f}")
    return 0


def cmd_oracle(args) -> int:
    config = _load_config(args)
    space = config.build_space()
    evaluator = config.build_evaluator(space)
    if args.checkpoint:
        graph, evaluator_state = _load_graph_checkpoint(args.checkpoint, space)
        if evaluator_state is not None:
            evaluator.import_state(evaluator_state)
    else:
        graph = full_graph(space)
    arch, score = brute_force_best(space, graph, evaluator, limit=args.limit)
    payload = {"arch": arch.canonical, "score": score}
    if args.output:
        Path(args.output).write_text(json.dumps(payload, indent=2) + "\n")
    print(f"optimum {arch.canonical}")
    print(f"score {score:.6f}")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bsnas",
        description="Supernet search-space modeling, step-shrinking, and evolutionary search",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("space", help="inspect or validate a search space")
    p.add_argument("action", choices=["cardinality", "show", "validate"])
    p.add_argument("--space", default="default", help="space JSON file or 'default'")
    p.add_argument("--arch", help="architecture string (for validate)")
    p.set_defaults(func=cmd_space)

    p = sub.add_parser("flops", help="MAC/parameter count of one architecture")
    p.add_argument("arch", help="canonical architecture string")
    p.add_argument("--space", default="default")
    p.add_argument("--mode", choices=["released", "supernet"], default="released")
    p.add_argument("--per-layer", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("shrink", help="run the step-shrinking schedule")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--overwrite", action="store_true")
    p.add_argument("--stop-after", type=int, help="stop after this round (for resume tests)")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_shrink)

    p = sub.add_parser("evolve", help="evolutionary search on a (shrunk) graph")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", help="graph.json or checkpoint_step*.json")
    p.add_argument("--output-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--flops-max", type=int)
    p.add_argument("--flops-min", type=int)
    p.add_argument("--overwrite", action="store_true")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("pipeline", help="shrink then evolve; full run artifacts")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--overwrite", action="store_true")
    p.add_argument("--stop-after", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("report-dist", help="accuracy distribution per shrink step (CSV)")
    p.add_argument("--config", required=True)
    p.add_argument("--run-dir")
    p.add_argument("--checkpoints", nargs="+")
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--control-epochs", type=float, help="add an unshrunk equal-budget control")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_report_dist)

    p = sub.add_parser("report-rank", help="estimate vs stand-alone rank correlation")
    p.add_argument("--config", required=True)
    p.add_argument("--run-dir")
    p.add_argument("--evals", help="evals.jsonl path (overrides --run-dir)")
    p.add_argument("--truth", help="JSONL score table used as ground truth")
    p.add_argument("--top-n", type=int, default=10)
    p.add_argument("--out-json")
    p.add_argument("--out-csv")
    p.set_defaults(func=cmd_report_rank)

    p = sub.add_parser("oracle", help="brute-force optimum over a small alive space")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--limit", type=int, default=100_000)
    p.add_argument("--output")
    p.set_defaults(func=cmd_oracle)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BsnasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
