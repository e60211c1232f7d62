"""Pairwise Markov chain models: construction, validation, stationarity and sampling."""

import bisect
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from src.errors import (
    ConstraintViolation,
    DomainError,
    NotIrreducible,
    NotPrimitive,
    Unsupported,
    ValidationError,
)
from src.utils import make_rng, validate_probability

logger = logging.getLogger("PMC-variance")

ROW_TOLERANCE = 1e-12
STATIONARY_TOLERANCE = 1e-10

# Default eps for the nearly maximal / minimal dependence matrices
DEFAULT_EPS = 0.05


@dataclass(frozen=True)
class Alphabet:
    """Letters 0..size-1."""
    size: int

    def __post_init__(self):
        if self.size < 2:
            raise DomainError(f"Alphabet size must be at least 2, got {self.size}")

    @property
    def pair_count(self) -> int:
        return self.size * self.size


@dataclass(frozen=True)
class PairState:
    """A pair (x, y) of letters; flat index is x*k + y."""
    x: int
    y: int

    def flat(self, k: int) -> int:
        if not (0 <= self.x < k and 0 <= self.y < k):
            raise DomainError(f"Pair state ({self.x},{self.y}) outside alphabet of size {k}")
        return self.x * k + self.y

    @classmethod
    def from_flat(cls, index: int, k: int) -> 'PairState':
        return cls(int(index) // k, int(index) % k)

    def __str__(self) -> str:
        return f"({self.x},{self.y})"


def display_order(k: int) -> list[int]:
    """
    Flat indices in display order.

    For k=2 this is (1,1),(1,0),(0,1),(0,0), the order used for all matrices
    printed or written as CSV.
    """
    return list(range(k * k - 1, -1, -1))


@dataclass(eq=False)
class TransitionMatrix:
    """Row-stochastic matrix over the pair alphabet, indexed by flat pair state."""
    entries: np.ndarray
    k: int
    label: str = "custom"

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        dim = Alphabet(self.k).pair_count
        if self.entries.shape != (dim, dim):
            raise DomainError(
                f"Matrix for k={self.k} must be {dim}x{dim}, got {self.entries.shape}"
            )
        if (self.entries < 0).any():
            i, j = np.argwhere(self.entries < 0)[0]
            raise DomainError(f"Negative transition probability at ({i},{j}): {self.entries[i, j]:g}")
        row_sums = self.entries.sum(axis=1)
        bad = np.abs(row_sums - 1.0) > ROW_TOLERANCE
        if bad.any():
            row = int(np.argmax(bad))
            raise DomainError(f"Row {row} sums to {row_sums[row]:.15g}, expected 1")

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet(self.k)

    @property
    def dim(self) -> int:
        return self.alphabet.pair_count

    @classmethod
    def from_display(cls, rows: Sequence[Sequence[float]], k: int = 2, label: str = "custom") -> 'TransitionMatrix':
        """Build from a matrix written in display order."""
        order = display_order(k)
        display = np.asarray(rows, dtype=float)
        entries = np.empty_like(display)
        entries[np.ix_(order, order)] = display
        return cls(entries, k, label)

    def display(self) -> np.ndarray:
        """The matrix with rows and columns in display order."""
        order = display_order(self.k)
        return self.entries[np.ix_(order, order)]

    def p(self, a: PairState, b: PairState) -> float:
        return float(self.entries[a.flat(self.k), b.flat(self.k)])

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "k": self.k,
            "entries": [float(x) for x in self.entries.ravel()],
        }

    @classmethod
    def from_json(cls, data: Union[dict, str, Path]) -> 'TransitionMatrix':
        """Load from a dict or a JSON file {label, k, entries}."""
        if not isinstance(data, dict):
            data = json.loads(Path(data).read_text())
        k = int(data["k"])
        entries = np.asarray(data["entries"], dtype=float)
        if entries.size != k ** 4:
            raise DomainError(f"Expected {k ** 4} entries for k={k}, got {entries.size}")
        return cls(entries.reshape(k * k, k * k), k, data.get("label", "custom"))


@dataclass(eq=False)
class StationaryDist:
    """Stationary distribution pi with pi P = pi."""
    probs: np.ndarray
    k: int
    residual: float = 0.0

    def __getitem__(self, state: PairState) -> float:
        return float(self.probs[state.flat(self.k)])


@dataclass(eq=False)
class ChainSample:
    """A realization Z_1..Z_n as flat pair-state indices, with its seed."""
    states: np.ndarray
    seed: int
    label: str
    k: int = 2

    def __len__(self) -> int:
        return len(self.states)

    @property
    def xs(self) -> np.ndarray:
        return self.states // self.k

    @property
    def ys(self) -> np.ndarray:
        return self.states % self.k

    def with_state(self, index: int, state: int) -> 'ChainSample':
        """Copy with position ``index`` (0-based) replaced by flat state ``state``."""
        states = self.states.copy()
        states[index] = state
        return ChainSample(states, self.seed, self.label, self.k)

    def prefix(self, length: int) -> 'ChainSample':
        return ChainSample(self.states[:length].copy(), self.seed, self.label, self.k)


@dataclass(frozen=True)
class MarginalParams:
    """The four-parameter family with marginals (p,1-p;q,1-q) and (p',1-p';q',1-q')."""
    p: float
    q: float
    p_prime: float
    q_prime: float
    lambda1: float
    lambda2: float
    mu1: float
    mu2: float

    @classmethod
    def symmetric(cls, p: float, q: float, lambda1: float, lambda2: float,
                  mu1: float, mu2: float) -> 'MarginalParams':
        """Same marginal distribution for X and Y (p'=p, q'=q)."""
        return cls(p, q, p, q, lambda1, lambda2, mu1, mu2)

    @classmethod
    def independent(cls, p: float, q: float) -> 'MarginalParams':
        return cls.symmetric(p, q, p, q, p, q)

    def intervals(self) -> dict[str, tuple[float, float]]:
        """Admissible interval of each dependence parameter."""
        p, q, pp, qp = self.p, self.q, self.p_prime, self.q_prime
        return {
            "lambda1": (max((pp + p - 1) / p, 0.0), min(pp / p, 1.0)),
            "lambda2": (max((qp + p - 1) / p, 0.0), min(qp / p, 1.0)),
            "mu1": (max((pp + q - 1) / q, 0.0), min(pp / q, 1.0)),
            "mu2": (max((qp + q - 1) / q, 0.0), min(qp / q, 1.0)),
        }

    def validate(self) -> None:
        for name in ("p", "q"):
            value = getattr(self, name)
            if not (validate_probability(value) and value > 0.0):
                raise ConstraintViolation(name, value, 0.0, 1.0)
        for name in ("p_prime", "q_prime"):
            value = getattr(self, name)
            if not validate_probability(value):
                raise ConstraintViolation(name, value, 0.0, 1.0)
        for name, (low, high) in self.intervals().items():
            value = getattr(self, name)
            if value < low - ROW_TOLERANCE or value > high + ROW_TOLERANCE:
                raise ConstraintViolation(name, value, low, high)


def _clean(rows: np.ndarray) -> np.ndarray:
    """Snap roundoff-level negatives produced by the closed forms to zero."""
    rows = np.asarray(rows, dtype=float)
    rows[np.abs(rows) < 1e-15] = 0.0
    return rows


def build_general(params: MarginalParams, label: Optional[str] = None) -> TransitionMatrix:
    """
    Most general joint matrix on {(1,1),(1,0),(0,1),(0,0)} with Markov marginals.

    Raises:
        ConstraintViolation: naming the first parameter outside its interval
    """
    params.validate()
    p, q, pp, qp = params.p, params.q, params.p_prime, params.q_prime
    l1, l2, m1, m2 = params.lambda1, params.lambda2, params.mu1, params.mu2
    rows = _clean(np.array([
        [p * l1, p * (1 - l1), pp - p * l1, 1 + p * l1 - pp - p],
        [p * l2, p * (1 - l2), qp - p * l2, 1 + p * l2 - qp - p],
        [q * m1, q * (1 - m1), pp - q * m1, 1 + q * m1 - pp - q],
        [q * m2, q * (1 - m2), qp - q * m2, 1 + q * m2 - qp - q],
    ]))
    if label is None:
        label = (f"general(p={p:g},q={q:g},p'={pp:g},q'={qp:g},"
                 f"l1={l1:g},l2={l2:g},m1={m1:g},m2={m2:g})")
    return TransitionMatrix.from_display(rows, 2, label)


def build_ind(p: float, q: float) -> TransitionMatrix:
    """Joint matrix of two independent chains, each with rows (p,1-p),(q,1-q)."""
    for name, value in (("p", p), ("q", q)):
        if not validate_probability(value, open_interval=True):
            raise DomainError(f"{name}={value:g} must lie in (0, 1)")
    return build_general(MarginalParams.independent(p, q), label=f"ind(p={p:g},q={q:g})")


def build_max(p: float, q: float, eps: float = DEFAULT_EPS) -> TransitionMatrix:
    """Nearly maximal dependence matrix; favours the pairs (1,1) and (0,0)."""
    if p < q:
        raise DomainError(f"Maximal dependence matrix needs p >= q, got p={p:g}, q={q:g}")
    rows = _clean(np.array([
        [p - eps, eps, eps, 1 - p - eps],
        [q, p - q, 0.0, 1 - p],
        [q, 0.0, p - q, 1 - p],
        [q - eps, eps, eps, 1 - q - eps],
    ]))
    _check_unit_interval(rows, "max", p, q, eps)
    return TransitionMatrix.from_display(rows, 2, f"max(p={p:g},q={q:g},eps={eps:g})")


def build_min(p: float, q: float, eps: float = DEFAULT_EPS) -> TransitionMatrix:
    """
    Minimal dependence matrix; favours the dissimilar pairs (1,0) and (0,1).

    Raises:
        Unsupported: if p + q <= 1, where no matrix of this family is defined
    """
    if p + q <= 1:
        raise Unsupported(f"Minimal dependence matrix is defined only for p+q > 1 (p={p:g}, q={q:g})")
    last = ([2 * q - 1 + eps, 1 - q - eps, 1 - q - eps, eps] if q >= 0.5
            else [eps, q - eps, q - eps, 1 - 2 * q + eps])
    rows = _clean(np.array([
        [2 * p - 1 + eps, 1 - p - eps, 1 - p - eps, eps],
        [p + q - 1, 1 - q, 1 - p, 0.0],
        [p + q - 1, 1 - p, 1 - q, 0.0],
        last,
    ]))
    _check_unit_interval(rows, "min", p, q, eps)
    return TransitionMatrix.from_display(rows, 2, f"min(p={p:g},q={q:g},eps={eps:g})")


def _check_unit_interval(rows: np.ndarray, kind: str, p: float, q: float, eps: float) -> None:
    bad = (rows < 0) | (rows > 1)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise DomainError(
            f"{kind} matrix entry ({i + 1},{j + 1})={rows[i, j]:g} leaves [0,1] "
            f"for p={p:g}, q={q:g}, eps={eps:g}"
        )


def shipped_models() -> dict[str, TransitionMatrix]:
    """The three models used throughout the simulations and checks."""
    return {
        "ind": build_ind(0.7, 0.7),
        "max": build_max(0.9, 0.7, DEFAULT_EPS),
        "min": build_min(0.7, 0.7, DEFAULT_EPS),
    }


@dataclass
class LumpabilityResult:
    """Outcome of the lumpability check; ``matrix`` is set iff ``lumpable``."""
    lumpable: bool
    matrix: Optional[np.ndarray] = None
    violation: Optional[tuple[int, int]] = None
    detail: str = ""


def coordinate_partition(k: int, axis: int) -> list[list[int]]:
    """
    Partition of the pair states by the X (axis=0) or Y (axis=1) letter.

    Blocks are ordered by descending letter, so for k=2 the lumped matrix reads
    (p,1-p;q,1-q) with letter 1 first.
    """
    if axis not in (0, 1):
        raise DomainError(f"axis must be 0 or 1, got {axis}")
    blocks = []
    for letter in range(k - 1, -1, -1):
        if axis == 0:
            blocks.append([letter * k + y for y in range(k)])
        else:
            blocks.append([x * k + letter for x in range(k)])
    return blocks


def check_lumpable(P: TransitionMatrix, partition: Sequence[Sequence[int]]) -> LumpabilityResult:
    """Check the constant row-sum condition and return the lumped matrix."""
    flat = sorted(s for block in partition for s in block)
    if flat != list(range(P.dim)):
        raise DomainError("Partition must cover every pair state exactly once")

    blocks = [list(block) for block in partition]
    lumped = np.zeros((len(blocks), len(blocks)))
    for i, block in enumerate(blocks):
        sums = np.array([[P.entries[x, target].sum() for target in blocks] for x in block])
        lumped[i] = sums[0]
        diff = np.abs(sums - sums[0]) > ROW_TOLERANCE
        if diff.any():
            row, j = np.argwhere(diff)[0]
            x = block[row]
            return LumpabilityResult(
                False,
                violation=(x, j),
                detail=(f"state {PairState.from_flat(x, P.k)} sends {sums[row, j]:.12g} "
                        f"into block {j}, expected {sums[0, j]:.12g}"),
            )
    return LumpabilityResult(True, matrix=lumped)


def is_irreducible(P: TransitionMatrix) -> bool:
    n_components, _ = connected_components(
        csr_matrix(P.entries > 0), directed=True, connection="strong"
    )
    return n_components == 1


def stationary(P: TransitionMatrix) -> StationaryDist:
    """
    Solve pi P = pi with the normalization replacing one balance equation.

    Returns:
        StationaryDist with the largest balance residual |pi P - pi|

    Raises:
        NotIrreducible: if some state cannot reach every other
    """
    if not is_irreducible(P):
        raise NotIrreducible(f"Matrix {P.label} is not irreducible")
    dim = P.dim
    a = P.entries.T - np.eye(dim)
    a[-1, :] = 1.0
    b = np.zeros(dim)
    b[-1] = 1.0
    pi = np.linalg.solve(a, b)
    pi[np.abs(pi) < 1e-17] = 0.0
    residual = float(np.max(np.abs(pi @ P.entries - pi)))
    if residual > STATIONARY_TOLERANCE:
        logger.warning(f"Stationary residual {residual:.3g} for {P.label} exceeds tolerance")
    return StationaryDist(pi, P.k, residual)


def _cumulative(rows: np.ndarray) -> list[list[float]]:
    """Row-wise CDFs whose tail after the last positive entry is exactly 1."""
    cums = np.cumsum(rows, axis=-1)
    cums = np.atleast_2d(cums)
    positive = np.atleast_2d(rows) > 0
    for i in range(cums.shape[0]):
        last = int(np.nonzero(positive[i])[0][-1])
        cums[i, last:] = 1.0
    return cums.tolist()


def sample_chain(P: TransitionMatrix, pi: StationaryDist, n: int, seed: int) -> ChainSample:
    """
    Draw Z_1 ~ pi and Z_{t+1} | Z_t from the rows of P.

    Args:
        P: Transition matrix
        pi: Law of the first state, normally stationary(P)
        n: Chain length
        seed: Stream seed; the sample is a deterministic function of (P, pi, n, seed)

    Returns:
        ChainSample of flat pair-state indices

    Raises:
        DomainError: if n < 1
    """
    if n < 1:
        raise DomainError(f"Chain length must be at least 1, got {n}")
    rng = make_rng(seed)
    uniforms = rng.random(n).tolist()
    rows = _cumulative(P.entries)
    start = _cumulative(pi.probs)[0]

    states = np.empty(n, dtype=np.int64)
    state = bisect.bisect_right(start, uniforms[0])
    states[0] = state
    for t in range(1, n):
        state = bisect.bisect_right(rows[state], uniforms[t])
        states[t] = state
    return ChainSample(states, seed, P.label, P.k)


def primitivity_index(P: TransitionMatrix, cap: Optional[int] = None) -> tuple[int, float]:
    """
    Smallest m with every entry of P^m positive, and p_o = min entry of P^m.

    Args:
        P: Joint transition matrix
        cap: Largest power tried

    Returns:
        tuple: (m, p_o)

    Raises:
        NotPrimitive: if no such m <= cap (default k^4)
    """
    if cap is None:
        cap = P.dim * P.dim
    pattern = P.entries > 0
    support = pattern.copy()
    power = P.entries.copy()
    for m in range(1, cap + 1):
        if support.all():
            return m, float(power.min())
        support = (support.astype(np.int64) @ pattern.astype(np.int64)) > 0
        power = power @ P.entries
    raise NotPrimitive(f"No power of {P.label} up to {cap} is strictly positive")


@dataclass
class MixingBound:
    """Geometric-ergodicity bound on t(eps) derived from (m, p_o)."""
    t_eps: float
    t_mix: float
    eps: float
    m: int
    p_o: float
    rho: float
    C: float
    clamped: bool = False
    exact_mixing: bool = False
    notes: list[str] = field(default_factory=list)


def _t_of(eps: float, C: float, rho: float) -> float:
    return (math.log(eps) - math.log(C)) / math.log(rho)


def mixing_time_bound(P: TransitionMatrix, eps: float = 0.25) -> MixingBound:
    """
    Bound t(eps) <= (ln eps - ln C) / ln rho with rho = (1 - k^2 p_o)^(1/m).

    C is 1 when the primitivity lag m is 1 and (1 - k^2 p_o)^-1 otherwise.
    Bounds at or below zero are clamped to 1.

    Raises:
        DomainError: if 1 - k^2 p_o <= 0 (P^m has identical rows: exact mixing)
    """
    if not 0.0 < eps <= 1.0:
        raise DomainError(f"eps={eps:g} must lie in (0, 1]")
    m, p_o = primitivity_index(P)
    base = 1.0 - P.dim * p_o
    if base <= 1e-15:
        raise DomainError(
            f"1 - |A|^2 p_o = {base:.3g}: {P.label} mixes exactly after {m} step(s), bound degenerate"
        )
    rho = base ** (1.0 / m)
    C = 1.0 if m == 1 else 1.0 / base
    bound = MixingBound(_t_of(eps, C, rho), _t_of(0.25, C, rho), eps, m, p_o, rho, C)
    if bound.t_eps <= 0:
        logger.warning(f"Mixing bound t({eps:g}) = {bound.t_eps:.3g} <= 0; clamped to 1")
        bound.t_eps = 1.0
        bound.clamped = True
        bound.notes.append("t_eps clamped to 1")
    if bound.t_mix <= 0:
        bound.t_mix = 1.0
        bound.clamped = True
        bound.notes.append("t_mix clamped to 1")
    return bound


def equal_q_conditions(P: TransitionMatrix, atol: float = 1e-12) -> bool:
    """
    Sufficient matrix symmetries for q1 = q2 with patterns (1,0) and (0,1).

    Indices are 1-based in display order: P22=P33, P23=P32, P21=P31,
    P12=P13, P24=P34, P42=P43.
    """
    if P.k != 2:
        raise ValidationError("Symmetry conditions are stated for k=2 only")
    d = P.display()
    pairs = [((1, 1), (2, 2)), ((1, 2), (2, 1)), ((1, 0), (2, 0)),
             ((0, 1), (0, 2)), ((1, 3), (2, 3)), ((3, 1), (3, 2))]
    return all(abs(d[a] - d[b]) <= atol for a, b in pairs)
