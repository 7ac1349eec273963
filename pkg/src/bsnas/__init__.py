"""Search orchestration over channel-searchable supernets: space modeling,
step-shrinking of candidate operations, and constrained evolutionary search,
driven by pluggable architecture evaluators."""

__version__ = "0.1.0"

from .cost import CostBreakdown, flops, flops_bounds, params
from .errors import (
    BsnasError,
    ConfigError,
    ConstraintInfeasibleError,
    ContractViolationError,
    EnumerationLimitError,
    EvaluatorError,
    InfeasibleError,
    MissingArchitectureError,
    ValidationError,
)
from .evaluators import (
    Evaluator,
    SurrogateEvaluator,
    SurrogateParams,
    TableEvaluator,
    brute_force_best,
    enumerate_alive,
)
from .evolution import EvolutionConfig, Population, crossover, evolve, init_population, mutate
from .graph import OperationGraph, full_graph
from .pipeline import RunConfig, distribution_report, rank_correlation, run_pipeline
from .rng import substream
from .shrinking import (
    EvalRecord,
    JsonlSink,
    ListSink,
    NullSink,
    ShrinkReport,
    ShrinkSchedule,
    Sink,
    fair_batch,
    run_shrinking,
    score_operations,
    shrink_step,
)
from .space import (
    Architecture,
    ChoiceSets,
    ClusterSpec,
    FixedLayer,
    SearchSpaceSpec,
    arch_from_string,
    build_default_space,
    cardinality,
    load_space,
    random_architecture,
    release_spring_blocks,
    validate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
