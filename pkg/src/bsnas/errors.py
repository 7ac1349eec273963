"""Exception hierarchy shared by all subsystems.

Each error class carries the process exit code the CLI maps it to.
"""
from __future__ import annotations


class BsnasError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(BsnasError):
    """Bad user input: malformed config, missing file, invalid architecture string."""

    exit_code = 2


class ValidationError(ConfigError):
    """An architecture failed validation where a valid one was required."""

    def __init__(self, violations: list[str]):
        super().__init__("invalid architecture: " + "; ".join(violations))
        self.violations = violations


class InfeasibleError(BsnasError):
    """The search space, liveness graph, or constraint window admits no solution."""

    exit_code = 3


class ConstraintInfeasibleError(InfeasibleError):
    """Rejection sampling exhausted without satisfying the cost window."""


class EnumerationLimitError(InfeasibleError):
    """Exhaustive enumeration refused: the space is larger than the stated limit."""

    def __init__(self, count: int, limit: int):
        super().__init__(
            f"refusing to enumerate {count} architectures (limit {limit})"
        )
        self.count = count
        self.limit = limit


class EvaluatorError(BsnasError):
    """An evaluator backend failed or was asked for an unknown architecture."""

    exit_code = 4


class MissingArchitectureError(EvaluatorError):
    """Lookup-table evaluator has no entry for the requested architecture."""


class ContractViolationError(BsnasError):
    """A caller broke an API precondition (e.g. passed an unsorted batch)."""
