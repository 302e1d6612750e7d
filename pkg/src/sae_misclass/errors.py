"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SAEError(Exception):
    """Base class for all package errors."""


class ParameterDomainError(SAEError, ValueError):
    """A distribution or model parameter lies outside its domain."""


class NumericalDomainError(SAEError, ArithmeticError):
    """A numerical kernel failed, e.g. a precision block is not SPD."""

    def __init__(self, message: str, block: str | None = None):
        super().__init__(message)
        self.block = block


class DegenerateWeightsError(SAEError, ValueError):
    """Categorical weights are all zero or non-finite."""


class CategoryDomainError(SAEError, ValueError):
    """A category code lies outside 0..K-1."""


class ShapeError(SAEError, ValueError):
    """Array dimensions are inconsistent."""


class DatasetValidationError(SAEError, ValueError):
    """Raw input failed validation; ``violations`` lists every problem found."""

    def __init__(self, violations: list):
        self.violations = list(violations)
        messages = [v[-1] if isinstance(v, tuple) else str(v) for v in self.violations]
        head = "; ".join(messages[:10])
        more = f" (+{len(self.violations) - 10} more)" if len(self.violations) > 10 else ""
        super().__init__(f"{len(self.violations)} dataset violation(s): {head}{more}")


class ConfigError(SAEError, ValueError):
    """Invalid run, chain or scenario configuration."""


class EmptyChainError(SAEError, ValueError):
    """A summary was requested from an empty set of draws."""


class UndefinedMetricError(SAEError, ValueError):
    """A relative metric was requested against a zero truth."""


class ChainError(SAEError, RuntimeError):
    """An update failed inside the sampler; records where it happened."""

    def __init__(self, iteration: int, block: str, cause: Exception):
        super().__init__(f"iteration {iteration}, update {block}: {cause}")
        self.iteration = iteration
        self.block = block
        self.cause = cause


class ScenarioAbortedError(SAEError, RuntimeError):
    """Too many replicate fits failed for the scenario tables to be trusted."""

    def __init__(self, message: str, failures: list):
        super().__init__(message)
        self.failures = failures
