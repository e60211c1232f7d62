"""Utility functions for logging, error suggestions, parsing and random streams."""

import logging
import math
import sys
from typing import Optional

import numpy as np

from src.errors import (
    CapExceeded,
    ConfigError,
    ConstraintViolation,
    Infeasible,
    LengthMismatch,
    NoEligibleTriplet,
    NotIrreducible,
    NotPrimitive,
    PatternInfeasible,
    PreconditionViolated,
    UnequalQ,
)

LOGGER_NAME = "PMC-variance"


def setup_logging(log_file: Optional[str] = None, verbose: bool = False) -> logging.Logger:
    """
    Set up logging configuration.

    Args:
        log_file: Optional file receiving DEBUG and above
        verbose: Show DEBUG messages on stderr as well

    Returns:
        The package logger
    """
    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(logging.DEBUG)

    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    # Console handler; stdout is reserved for results
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(logging.DEBUG if verbose else logging.INFO)
    console_format = logging.Formatter('%(asctime)s - %(levelname)s - %(message)s')
    console_handler.setFormatter(console_format)
    logger.addHandler(console_handler)

    # File handler if specified
    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(logging.DEBUG)
        file_format = logging.Formatter('%(asctime)s - %(levelname)s - %(name)s - %(message)s')
        file_handler.setFormatter(file_format)
        logger.addHandler(file_handler)

    return logger


def get_error_suggestion(error: Exception) -> str:
    """Get a helpful suggestion based on the error type."""
    if isinstance(error, ConstraintViolation):
        return f"Choose {error.parameter} inside [{error.low:g}, {error.high:g}]."
    if isinstance(error, NotIrreducible):
        return "Use eps > 0 so that every pair state communicates with every other."
    if isinstance(error, NotPrimitive):
        return "The chain is periodic; add a small self-transition probability."
    if isinstance(error, PatternInfeasible):
        return "Pick A, B, D with P(Z1=A, Z2=D, Z3=B) > 0 under this model."
    if isinstance(error, UnequalQ):
        return "Combined runs need q1 = q2; check the matrix symmetries or use single patterns."
    if isinstance(error, CapExceeded):
        return "Lower n or raise --cap; exhaustive enumeration grows as (k^2)^n."
    if isinstance(error, LengthMismatch):
        return "Both sequences must have the same length."
    if isinstance(error, NoEligibleTriplet):
        return "Every matched triplet already has the target middle letter."
    if isinstance(error, PreconditionViolated):
        return "Increase n or the deviation so the inequality's side condition holds."
    if isinstance(error, Infeasible):
        return "No mixing weights in [0, 1] exist for these q values; use equal q."
    if isinstance(error, ConfigError):
        return "Check the config file against the documented JSON schema."

    error_str = str(error).lower()
    if "memory" in error_str:
        return "Reduce the problem size or the number of workers."
    return "Check the logs for more details and try again."


def format_duration(seconds: float) -> str:
    """Format a duration in seconds to a human-readable string."""
    if seconds < 60:
        return f"{seconds:.1f} seconds"
    elif seconds < 3600:
        minutes = int(seconds // 60)
        secs = int(seconds % 60)
        return f"{minutes}m {secs}s"
    else:
        hours = int(seconds // 3600)
        minutes = int((seconds % 3600) // 60)
        return f"{hours}h {minutes}m"


def validate_probability(value: float, open_interval: bool = False) -> bool:
    """Check that a value is a probability, optionally strictly inside (0, 1)."""
    if not isinstance(value, (int, float)) or math.isnan(value):
        return False
    if open_interval:
        return 0.0 < value < 1.0
    return 0.0 <= value <= 1.0


def parse_sequence(text: str) -> list[int]:
    """
    Parse a letter sequence.

    Accepts comma-separated indices ("1,0,2") or one symbol per character
    ("1021"). Non-digit characters are mapped to indices in order of first
    appearance, so "abca" becomes [0, 1, 2, 0].
    """
    text = text.strip()
    if not text:
        return []
    if ',' in text:
        try:
            return [int(part) for part in text.split(',')]
        except ValueError:
            raise ConfigError(f"Invalid comma-separated sequence: {text!r}")
    if text.isdigit():
        return [int(c) for c in text]
    symbols: dict[str, int] = {}
    return [symbols.setdefault(c, len(symbols)) for c in text]


def parse_pair(text: str) -> tuple[int, int]:
    """Parse a pair state written as "x,y" (or "xy" for single-digit letters)."""
    text = text.strip().strip('()')
    parts = text.split(',') if ',' in text else list(text)
    if len(parts) != 2:
        raise ConfigError(f"Invalid pair state {text!r}; expected 'x,y'")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise ConfigError(f"Invalid pair state {text!r}; letters must be integers")


def parse_pattern(text: str) -> tuple[tuple[int, int], tuple[int, int], tuple[int, int]]:
    """
    Parse a triplet pattern.

    "1,1" means A=B=D=(1,1); "1,1;0,0;1,0" gives A, B and D explicitly.

    Raises:
        ConfigError: if the text has neither one nor three pairs
    """
    parts = [p for p in text.split(';') if p.strip()]
    if len(parts) == 1:
        pair = parse_pair(parts[0])
        return pair, pair, pair
    if len(parts) == 3:
        a, b, d = (parse_pair(p) for p in parts)
        return a, b, d
    raise ConfigError(f"Invalid pattern {text!r}; expected 'x,y' or 'x,y;x,y;x,y'")


def parse_int_list(text: str) -> list[int]:
    """Parse "300,600,1200" into integers."""
    try:
        return [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise ConfigError(f"Invalid integer list: {text!r}")


def derive_seed(master_seed: int, task: int) -> int:
    """64-bit seed of the stream for (master_seed, task)."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(task,))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int, task: Optional[int] = None) -> np.random.Generator:
    """
    Build a counter-based generator.

    With ``task`` given the stream is derived from (seed, task); otherwise
    ``seed`` is used directly, which is how a recorded ChainSample seed is
    replayed.
    """
    if task is not None:
        seed = derive_seed(seed, task)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
