"""Global alignment scores: general scoring schemes, LCS, and the bit-parallel kernel."""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from src.errors import DomainError, IndexOutOfRange, LengthMismatch
from src.markov_model import ChainSample, PairState

logger = logging.getLogger("PMC-variance")


@dataclass(eq=False)
class ScoringScheme:
    """Pairwise score table S (k x k, nonnegative) and gap price delta."""
    table: np.ndarray
    delta: float = 0.0
    name: str = "table"

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=float)
        if self.table.ndim != 2 or self.table.shape[0] != self.table.shape[1]:
            raise DomainError(f"Score table must be square, got shape {self.table.shape}")
        if (self.table < 0).any():
            raise DomainError("Score table entries must be nonnegative")

    @classmethod
    def lcs(cls, k: int = 2) -> 'ScoringScheme':
        """0/1 matching table with delta = 0."""
        return cls(np.eye(k), 0.0, "lcs")

    @classmethod
    def from_json(cls, data: Union[dict, str, Path]) -> 'ScoringScheme':
        if not isinstance(data, dict):
            data = json.loads(Path(data).read_text())
        return cls(np.asarray(data["table"], dtype=float), float(data.get("delta", 0.0)),
                   data.get("name", "table"))

    @property
    def k(self) -> int:
        return self.table.shape[0]

    @property
    def is_lcs(self) -> bool:
        return self.delta == 0.0 and np.array_equal(self.table, np.eye(self.k))


def _as_letters(seq: Iterable[int]) -> np.ndarray:
    return np.asarray(list(seq) if not isinstance(seq, np.ndarray) else seq, dtype=np.int64)


def _check_lengths(x: np.ndarray, y: np.ndarray) -> None:
    if len(x) != len(y):
        raise LengthMismatch(f"Sequences have lengths {len(x)} and {len(y)}")


def score(x: Sequence[int], y: Sequence[int], scheme: ScoringScheme) -> float:
    """
    Optimal global alignment score.

    Every unaligned letter costs delta/2, so an alignment of k pairs between
    two length-n sequences scores sum S + delta*(n-k). Two rolling rows; the
    horizontal dependency is a running maximum.

    Args:
        x: First sequence of letter indices
        y: Second sequence, same length as x
        scheme: Score table and gap price

    Returns:
        The optimal score; 0.0 for empty sequences

    Raises:
        LengthMismatch: if the sequences differ in length
        DomainError: if a letter lies outside the score table
    """
    x, y = _as_letters(x), _as_letters(y)
    _check_lengths(x, y)
    n = len(x)
    if n == 0:
        return 0.0
    if max(x.max(), y.max()) >= scheme.k:
        raise DomainError(f"Letters exceed the score table size {scheme.k}")
    gap = scheme.delta / 2.0
    steps = np.arange(n + 1) * gap
    prev = steps.copy()
    for i in range(1, n + 1):
        candidate = np.empty(n + 1)
        candidate[0] = i * gap
        candidate[1:] = np.maximum(prev[:-1] + scheme.table[x[i - 1], y], prev[1:] + gap)
        prev = np.maximum.accumulate(candidate - steps) + steps
    return float(prev[-1])


def score_table(x: Sequence[int], y: Sequence[int], scheme: ScoringScheme) -> np.ndarray:
    """Full (n+1) x (n+1) prefix table; oracle for small inputs."""
    x, y = list(x), list(y)
    _check_lengths(np.asarray(x), np.asarray(y))
    gap = scheme.delta / 2.0
    n = len(x)
    table = np.zeros((n + 1, n + 1))
    for i in range(n + 1):
        for j in range(n + 1):
            if i == 0 or j == 0:
                table[i, j] = (i + j) * gap
                continue
            table[i, j] = max(
                table[i - 1, j - 1] + scheme.table[x[i - 1], y[j - 1]],
                table[i - 1, j] + gap,
                table[i, j - 1] + gap,
            )
    return table


def lcs(x: Sequence[int], y: Sequence[int]) -> int:
    """Length of the longest common subsequence by row-wise dynamic programming."""
    x, y = _as_letters(x), _as_letters(y)
    _check_lengths(x, y)
    n = len(x)
    prev = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        candidate = np.zeros(n + 1, dtype=np.int64)
        candidate[1:] = np.maximum(prev[:-1] + (y == x[i]), prev[1:])
        prev = np.maximum.accumulate(candidate)
    return int(prev[-1])


def _letter_masks(seq: Sequence[int]) -> dict[int, int]:
    masks: dict[int, int] = {}
    for j, letter in enumerate(seq):
        masks[letter] = masks.get(letter, 0) | (1 << j)
    return masks


def lcs_fast(x: Sequence[int], y: Sequence[int]) -> int:
    """
    Bit-parallel LCS length (one arbitrary-precision word per row).

    Letters may be any hashable values; there is no alphabet bound because
    match masks are kept per letter that actually occurs.

    Args:
        x: First sequence
        y: Second sequence of the same length

    Returns:
        int: Length of a longest common subsequence

    Raises:
        LengthMismatch: if the lengths differ
    """
    x, y = list(x), list(y)
    if len(x) != len(y):
        raise LengthMismatch(f"Sequences have lengths {len(x)} and {len(y)}")
    n = len(y)
    if n == 0:
        return 0
    full = (1 << n) - 1
    masks = _letter_masks(y)
    v = full
    for letter in x:
        u = v & masks.get(letter, 0)
        v = ((v + u) | (v - u)) & full
    return n - bin(v).count("1")


@dataclass
class _Frontier:
    """Square-frontier state after processing the s x s prefix pair."""
    size: int
    row: int
    col: int
    value: int
    masks_x: dict[int, int]
    masks_y: dict[int, int]

    def copy(self) -> '_Frontier':
        return _Frontier(self.size, self.row, self.col, self.value,
                         dict(self.masks_x), dict(self.masks_y))


def _advance(state: _Frontier, a: int, b: int) -> None:
    """Grow the square by one: row s+1, column s+1 and the corner cell."""
    s = state.size
    full = (1 << s) - 1

    row = state.row
    u = row & state.masks_y.get(a, 0)
    row = ((row + u) | (row - u)) & full
    left = s - bin(row).count("1")

    col = state.col
    u = col & state.masks_x.get(b, 0)
    col = ((col + u) | (col - u)) & full
    above = s - bin(col).count("1")

    corner = max(left, above, state.value + (a == b))
    if corner == left:
        row |= 1 << s
    if corner == above:
        col |= 1 << s

    state.row = row
    state.col = col
    state.value = corner
    state.masks_x[a] = state.masks_x.get(a, 0) | (1 << s)
    state.masks_y[b] = state.masks_y.get(b, 0) | (1 << s)
    state.size = s + 1


@dataclass
class LcsCheckpoints:
    """
    LCS of every prefix pair (x[:s], y[:s]) with periodic resumable states.

    After a single-position substitution at index t, ``resume`` recomputes
    from the last checkpoint at or before t, which costs O((n - t) n / w)
    word operations.
    """
    x: list[int]
    y: list[int]
    every: int
    checkpoints: list[_Frontier]
    prefix_values: dict[int, int] = field(default_factory=dict)

    @classmethod
    def build(cls, x: Sequence[int], y: Sequence[int], every: Optional[int] = None,
              record: Iterable[int] = ()) -> 'LcsCheckpoints':
        x, y = [int(c) for c in x], [int(c) for c in y]
        if len(x) != len(y):
            raise LengthMismatch(f"Sequences have lengths {len(x)} and {len(y)}")
        n = len(x)
        if every is None:
            every = max(1, math.isqrt(max(n - 1, 0)) + 1)
        record = set(record)
        state = _Frontier(0, 0, 0, 0, {}, {})
        checkpoints = [state.copy()]
        values = {0: 0} if 0 in record else {}
        for s in range(n):
            _advance(state, x[s], y[s])
            if state.size in record:
                values[state.size] = state.value
            if state.size % every == 0 and state.size < n:
                checkpoints.append(state.copy())
        values[n] = state.value
        return cls(x, y, every, checkpoints, values)

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def value(self) -> int:
        return self.prefix_values[self.n]

    def resume(self, index: int, new_x: int, new_y: int, stop: Optional[int] = None,
               record: Iterable[int] = ()) -> dict[int, int]:
        """
        Prefix LCS values after replacing (x[index], y[index]).

        Returns a mapping from each recorded prefix length (plus ``stop``)
        to the LCS of the substituted prefix pair.
        """
        n = self.n
        if not 0 <= index < n:
            raise IndexOutOfRange(f"Index {index} outside sequence of length {n}")
        stop = n if stop is None else stop
        if not index < stop <= n:
            raise IndexOutOfRange(f"Stop {stop} must lie in ({index}, {n}]")
        state = self.checkpoints[min(index // self.every, len(self.checkpoints) - 1)].copy()
        record = {r for r in record if index < r <= stop}
        values: dict[int, int] = {}
        x, y = self.x, self.y
        for s in range(state.size, stop):
            if s == index:
                _advance(state, new_x, new_y)
            else:
                _advance(state, x[s], y[s])
            if state.size in record:
                values[state.size] = state.value
        values[stop] = state.value
        return values


def delta_max(scheme: ScoringScheme) -> float:
    """
    Largest change of S from changing one letter of either sequence.

    Returns:
        max(max |S(u,v) - S(u,w)|, max |S(v,u) - S(w,u)|): the row spread
        covers an X letter, the column spread a Y letter
    """
    table = scheme.table
    rows = (table.max(axis=1) - table.min(axis=1)).max()
    cols = (table.max(axis=0) - table.min(axis=0)).max()
    return float(max(rows, cols))


def score_of_sample(z: ChainSample, scheme: ScoringScheme) -> float:
    """Score of the sample's two coordinate sequences."""
    if scheme.is_lcs:
        return float(lcs_fast(z.xs.tolist(), z.ys.tolist()))
    return score(z.xs, z.ys, scheme)


def score_with_substitution(z: ChainSample, index: int, new_pair: PairState,
                            scheme: ScoringScheme) -> float:
    """
    Score after replacing Z at 0-based ``index`` by ``new_pair``.

    Both coordinates change, so the result differs from the original by at
    most 2 * delta_max(scheme).
    """
    if not 0 <= index < len(z):
        raise IndexOutOfRange(f"Index {index} outside sample of length {len(z)}")
    return score_of_sample(z.with_state(index, new_pair.flat(z.k)), scheme)


def lcs_checkpointed(x: Sequence[int], y: Sequence[int], every: Optional[int] = None,
                     record: Iterable[int] = ()) -> LcsCheckpoints:
    """One forward pass recording prefix LCS values at ``record`` and resumable states."""
    return LcsCheckpoints.build(x, y, every=every, record=record)
