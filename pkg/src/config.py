"""Run configuration: dataclasses, config-file loading and flag precedence."""

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Union

from src.alignment import ScoringScheme
from src.counters import DEFAULT_B_O, TripletPattern
from src.errors import ConfigError, DomainError
from src.markov_model import (
    MarginalParams,
    TransitionMatrix,
    build_general,
    build_ind,
    build_max,
    build_min,
)
from src.oracle import DEFAULT_CAP

logger = logging.getLogger("PMC-variance")

MODEL_KINDS = ("ind", "max", "min", "general", "file")

# Grid used by the full-scale reproduction
FULL_SCALE_M_STOP = 7500


@dataclass
class ModelSpec:
    """How to build the transition matrix."""
    kind: str = "max"
    p: float = 0.9
    q: float = 0.7
    eps: float = 0.05
    p_prime: Optional[float] = None
    q_prime: Optional[float] = None
    lambda1: Optional[float] = None
    lambda2: Optional[float] = None
    mu1: Optional[float] = None
    mu2: Optional[float] = None
    path: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict) -> 'ModelSpec':
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown model keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    def build(self) -> TransitionMatrix:
        if self.kind == "ind":
            return build_ind(self.p, self.q)
        if self.kind == "max":
            return build_max(self.p, self.q, self.eps)
        if self.kind == "min":
            return build_min(self.p, self.q, self.eps)
        if self.kind == "general":
            missing = [name for name in ("lambda1", "lambda2", "mu1", "mu2") if getattr(self, name) is None]
            if missing:
                raise ConfigError(f"General model needs {', '.join(missing)}")
            params = MarginalParams(
                self.p, self.q,
                self.p if self.p_prime is None else self.p_prime,
                self.q if self.q_prime is None else self.q_prime,
                self.lambda1, self.lambda2, self.mu1, self.mu2,
            )
            return build_general(params)
        if self.kind == "file":
            if not self.path:
                raise ConfigError("Model kind 'file' needs a path")
            return TransitionMatrix.from_json(self.path)
        raise ConfigError(f"Unknown model kind {self.kind!r}; expected one of {', '.join(MODEL_KINDS)}")


def _scheme_from(data: Optional[dict], k: int) -> ScoringScheme:
    return ScoringScheme.lcs(k) if not data else ScoringScheme.from_json(data)


@dataclass
class EmConfig:
    """E(m) experiment over n_chains chains of length 3 * m_stop."""
    model: ModelSpec = field(default_factory=ModelSpec)
    patterns: list[str] = field(default_factory=lambda: ["1,1"])
    m_start: int = 100
    m_stop: int = 3000
    m_step: int = 100
    n_chains: int = 3
    seed: int = 42
    scheme: Optional[dict] = None
    reflect: bool = False

    def validate(self) -> None:
        if self.m_step < 1 or self.m_start < 1 or self.m_stop < self.m_start:
            raise ConfigError(f"Invalid m grid ({self.m_start}, {self.m_stop}, {self.m_step})")
        if self.n_chains < 1:
            raise ConfigError(f"n_chains must be positive, got {self.n_chains}")
        if not 1 <= len(self.patterns) <= 2:
            raise ConfigError("Give one pattern, or two for the combined experiment")

    def m_grid(self) -> list[int]:
        grid = list(range(self.m_start, self.m_stop + 1, self.m_step))
        if grid[-1] != self.m_stop:
            grid.append(self.m_stop)
        return grid

    @property
    def chain_length(self) -> int:
        return 3 * self.m_stop

    def triplet_patterns(self) -> list[TripletPattern]:
        return [TripletPattern.parse(p) for p in self.patterns]

    def scoring(self, k: int) -> ScoringScheme:
        return _scheme_from(self.scheme, k)


@dataclass
class VarianceConfig:
    """Variance scan with the sandwich constants."""
    model: ModelSpec = field(default_factory=ModelSpec)
    n_grid: list[int] = field(default_factory=lambda: [300, 600, 1200, 2400])
    replicates: int = 200
    seed: int = 42
    scheme: Optional[dict] = None
    pattern: str = "1,1"
    eps_o: Optional[float] = None
    em_csv: Optional[str] = None

    def validate(self) -> None:
        if self.replicates < 2:
            raise ConfigError(f"Need at least 2 replicates, got {self.replicates}")
        if not self.n_grid or min(self.n_grid) < 3:
            raise ConfigError("n grid must be nonempty with every n >= 3")

    def scoring(self, k: int) -> ScoringScheme:
        return _scheme_from(self.scheme, k)


@dataclass
class TailConfig:
    """Concentration checks for V and for the score."""
    model: ModelSpec = field(default_factory=ModelSpec)
    pattern: str = "1,1"
    n: int = 900
    trials: int = 10 ** 4
    K: Optional[float] = None
    b_o: float = 0.9
    seed: int = 42
    scheme: Optional[dict] = None

    def validate(self) -> None:
        if self.n < 3 or self.trials < 1:
            raise ConfigError(f"Need n >= 3 and trials >= 1, got n={self.n}, trials={self.trials}")
        if not 0.0 < self.b_o <= 1.0:
            raise DomainError(f"b_o must lie in (0, 1], got {self.b_o:g}")

    def scoring(self, k: int) -> ScoringScheme:
        return _scheme_from(self.scheme, k)


@dataclass
class AlignConfig:
    """Two sequences to score, with an optional substitution 'INDEX:x,y'."""
    x: Optional[str] = None
    y: Optional[str] = None
    scheme: Optional[dict] = None
    substitute: Optional[str] = None

    def validate(self) -> None:
        if self.x is None or self.y is None:
            raise ConfigError("align needs both sequences, as arguments or in the config file")
        if self.substitute is not None and ":" not in self.substitute:
            raise ConfigError(f"Substitution must read INDEX:x,y, got {self.substitute!r}")


@dataclass
class BoundsConfig:
    """Lower and upper moment bounds; ``pattern2`` switches to the combined lower bound."""
    model: ModelSpec = field(default_factory=ModelSpec)
    pattern: str = "1,1"
    pattern2: Optional[str] = None
    eps_o: float = 0.4
    r: float = 2.0
    n: int = 1200
    b_o: float = DEFAULT_B_O
    scheme: Optional[dict] = None

    def validate(self) -> None:
        if self.n < 3:
            raise DomainError(f"n must be at least 3, got {self.n}")
        if self.r < 1:
            raise DomainError(f"Moment order r must be at least 1, got {self.r:g}")
        if not 0.0 < self.b_o <= 1.0:
            raise DomainError(f"b_o must lie in (0, 1], got {self.b_o:g}")

    def scoring(self, k: int) -> ScoringScheme:
        return _scheme_from(self.scheme, k)


# Checks run when none are named; the local CLT sweep has to be asked for
ENUMERATION_CHECKS = ("a3", "uv", "combined", "propositions")
VERIFY_CHECKS = ENUMERATION_CHECKS + ("clt",)


@dataclass
class VerifyConfig:
    """Exhaustive checks to run and their enumeration sizes."""
    checks: list[str] = field(default_factory=lambda: list(ENUMERATION_CHECKS))
    ns: list[int] = field(default_factory=lambda: [6, 9])
    cap: int = DEFAULT_CAP
    clt_max: int = 10 ** 4

    def validate(self) -> None:
        unknown = set(self.checks) - set(VERIFY_CHECKS)
        if unknown or not self.checks:
            raise ConfigError(f"Checks must be a nonempty subset of {', '.join(VERIFY_CHECKS)}")
        if not self.ns or min(self.ns) < 3:
            raise ConfigError(f"Enumeration lengths must all be at least 3, got {self.ns}")
        if self.cap < 1 or self.clt_max < 1:
            raise ConfigError(f"cap and clt_max must be positive, got {self.cap}, {self.clt_max}")


ConfigType = Union[EmConfig, VarianceConfig, TailConfig, AlignConfig, BoundsConfig, VerifyConfig]


def load_config(path: Union[str, Path]) -> dict:
    """
    Read a JSON config file; a run manifest is accepted too (its ``config`` key).

    Raises:
        ConfigError: if the file is missing or not a JSON object
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    if "config" in data and "subcommand" in data:
        logger.debug(f"Using config from manifest {path}")
        return data["config"]
    return data


def resolve(cls: type, file_values: Optional[dict] = None, flag_values: Optional[dict] = None) -> Any:
    """
    Build ``cls`` with precedence flags > config file > defaults.

    Flags whose value is None are treated as not given. The ``model`` entry is
    merged key by key.

    Args:
        cls: One of the config dataclasses
        file_values: Values from load_config
        flag_values: Values from the command line

    Returns:
        A validated instance of ``cls``

    Raises:
        ConfigError: if a key is unknown to ``cls`` or a value is rejected
    """
    known = {f.name for f in fields(cls)}
    merged: dict = {}
    model: dict = {}
    for layer in (file_values or {}, flag_values or {}):
        for key, value in layer.items():
            if value is None:
                continue
            if key == "model":
                model.update({k: v for k, v in value.items() if v is not None})
            elif key in known:
                merged[key] = value
            else:
                raise ConfigError(f"Unknown config key {key!r} for {cls.__name__}")
    if "model" in known:
        merged["model"] = ModelSpec.from_dict(model)
    config = cls(**merged)
    config.validate()
    return config


def to_dict(config: ConfigType) -> dict:
    return asdict(config)


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Everything needed to reproduce a run; timestamps are not part of the outputs."""
    subcommand: str
    config: dict
    seed: Optional[int]
    version: str
    started: str
    finished: Optional[str] = None
    outputs: list[str] = field(default_factory=list)

    def write(self, directory: Union[str, Path]) -> Path:
        """Write ``<subcommand>.manifest.json`` into ``directory``; returns its path."""
        path = Path(directory) / f"{self.subcommand}.manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path: Union[str, Path]) -> 'RunManifest':
        data = json.loads(Path(path).read_text())
        return cls(**data)
