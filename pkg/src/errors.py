"""Exception hierarchy for PMC-variance.

Validation errors (bad input, violated preconditions) derive from ValueError;
computation errors (a request the numerics cannot honour) derive from
RuntimeError. The CLI maps the first family to exit code 3 and the second to 1.
"""

from typing import Optional


class PMCError(Exception):
    """Base class for all PMC-variance errors."""


class ValidationError(PMCError, ValueError):
    """Input or precondition rejected."""


class ComputationError(PMCError, RuntimeError):
    """Numerical procedure could not produce a result."""


class ConstraintViolation(ValidationError):
    """A model parameter lies outside its admissible interval."""

    def __init__(self, parameter: str, value: float, low: float, high: float):
        self.parameter = parameter
        self.value = value
        self.low = low
        self.high = high
        super().__init__(
            f"Parameter {parameter}={value:g} outside admissible interval [{low:g}, {high:g}]"
        )


class DomainError(ValidationError):
    """Argument outside the domain of a formula."""


class Unsupported(ValidationError):
    """Parameter regime for which no construction is defined."""


class NotIrreducible(ValidationError):
    """Transition matrix is not irreducible."""


class NotPrimitive(ValidationError):
    """No power of the transition matrix up to the cap is strictly positive."""


class LengthMismatch(ValidationError):
    """Sequences that must have equal length do not."""


class IndexOutOfRange(ValidationError):
    """Position outside the sequence."""


class PatternInfeasible(ValidationError):
    """Triplet pattern has zero probability under the model."""


class PreconditionViolated(ValidationError):
    """Side condition of an inequality does not hold."""


class NoEligibleTriplet(ValidationError):
    """No matched triplet without the target middle letter."""


class Infeasible(ComputationError):
    """Mixing weights solved outside [0, 1]."""

    def __init__(self, message: str, weights: Optional[dict] = None):
        self.weights = weights
        super().__init__(message)


class CapExceeded(ValidationError):
    """Exhaustive enumeration would exceed the configured cap."""


class EmptyCondition(ValidationError):
    """Conditioning event has probability zero."""


class UnequalQ(ValidationError):
    """Combined patterns have different conditional probabilities q."""


class InsufficientData(ValidationError):
    """Not enough records to form an estimate."""


class ConfigError(ValidationError):
    """Malformed configuration file or flag value."""
