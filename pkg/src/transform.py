"""The random transformation on triplets and its two-pattern combination."""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special, stats

from src.alignment import ScoringScheme, lcs_checkpointed, score_of_sample
from src.counters import TripletPattern, summarize
from src.errors import DomainError, IndexOutOfRange, Infeasible, NoEligibleTriplet
from src.markov_model import ChainSample, PairState

logger = logging.getLogger("PMC-variance")

WEIGHT_TOLERANCE = 1e-12


@dataclass(eq=False)
class TransformOutcome:
    """Result of one application; ``changed_index`` is the 0-based middle position 3i+1."""
    modified: ChainSample
    changed_index: int
    old_pair: PairState
    triplet: int
    side: Optional[int] = None


@dataclass(frozen=True)
class CombinedWeights:
    """Probabilities of acting on pattern 1 or pattern 2."""
    r1: float
    r2: float

    def __post_init__(self):
        for name, value in (("r1", self.r1), ("r2", self.r2)):
            if not -WEIGHT_TOLERANCE <= value <= 1.0 + WEIGHT_TOLERANCE:
                raise Infeasible(f"Weight {name}={value:.6g} outside [0, 1]",
                                 weights={"r1": self.r1, "r2": self.r2})
        if abs(self.r1 + self.r2 - 1.0) > 1e-9:
            raise DomainError(f"Weights must sum to 1, got {self.r1 + self.r2:.12g}")


def eligible_positions(z: ChainSample, pattern: TripletPattern) -> np.ndarray:
    """0-based indices of triplets with ends (A, B) and a middle other than D."""
    return summarize(z, pattern).eligible


def _substitute(z: ChainSample, triplet: int, pattern: TripletPattern, side: Optional[int]) -> TransformOutcome:
    position = 3 * triplet + 1
    old = PairState.from_flat(int(z.states[position]), z.k)
    modified = z.with_state(position, pattern.D.flat(z.k))
    return TransformOutcome(modified, position, old, triplet, side)


def apply_single(z: ChainSample, pattern: TripletPattern, rng: np.random.Generator,
                 side: Optional[int] = None) -> TransformOutcome:
    """
    Pick an eligible triplet uniformly and set its middle to D.

    Raises:
        NoEligibleTriplet: if every matched triplet already has D in the middle
    """
    eligible = eligible_positions(z, pattern)
    if len(eligible) == 0:
        raise NoEligibleTriplet(f"No eligible triplet for pattern {pattern}")
    triplet = int(eligible[rng.integers(len(eligible))])
    return _substitute(z, triplet, pattern, side)


def _gains_by_substitution(z: ChainSample, triplets: Sequence[int], pattern: TripletPattern,
                           scheme: ScoringScheme) -> np.ndarray:
    if scheme.is_lcs:
        xs, ys = z.xs.tolist(), z.ys.tolist()
        checkpoints = lcs_checkpointed(xs, ys)
        base = checkpoints.value
        d = pattern.D
        return np.array([checkpoints.resume(3 * t + 1, d.x, d.y)[len(z)] - base
                         for t in sorted(triplets)], dtype=float)
    base = score_of_sample(z, scheme)
    return np.array([score_of_sample(_substitute(z, t, pattern, None).modified, scheme) - base
                     for t in triplets], dtype=float)


def expected_gain(z: ChainSample, pattern: TripletPattern, scheme: ScoringScheme,
                  subsample: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> float:
    """
    E[L(R(z)) - L(z) | z]: the mean score change over every eligible triplet.

    With ``subsample`` set, the mean runs over that many eligible triplets drawn
    without replacement from ``rng``.

    Args:
        z: Chain sample to transform
        pattern: Triplet pattern selecting eligible triplets
        scheme: Scoring scheme for L
        subsample: Optional number of eligible triplets to average over
        rng: Generator for the subsample

    Returns:
        float: Mean score change

    Raises:
        NoEligibleTriplet: if the eligible set is empty
    """
    eligible = eligible_positions(z, pattern)
    if len(eligible) == 0:
        raise NoEligibleTriplet(f"No eligible triplet for pattern {pattern}")
    if subsample is not None and subsample < len(eligible):
        if rng is None:
            raise DomainError("Subsampling needs an rng")
        eligible = np.sort(rng.choice(eligible, size=subsample, replace=False))
    return float(_gains_by_substitution(z, eligible.tolist(), pattern, scheme).mean())


@dataclass(eq=False)
class GainProfile:
    """Per grid point m: the baseline score of the 3m-prefix and every r(m, j)."""
    m_grid: list[int]
    baseline: dict[int, float]
    gains: dict[int, list[float]] = field(default_factory=dict)

    def j_count(self, m: int) -> int:
        return len(self.gains.get(m, []))

    def e_m(self, m: int) -> Optional[float]:
        values = self.gains.get(m, [])
        return math.fsum(values) / len(values) if values else None


def gain_profile(z: ChainSample, patterns: Sequence[TripletPattern], m_grid: Sequence[int],
                 scheme: ScoringScheme, reflect: bool = False) -> GainProfile:
    """
    r(m, j) = l_j(3m) - l(3m) for every grid m and every eligible triplet j < m.

    Eligible triplets of all patterns are pooled. For the LCS kernel a single
    checkpointed pass gives l(3m) for the whole grid, and each substitution
    is resumed once from its checkpoint, recording every later grid point.

    Args:
        z: Sample of length at least 3 * max(m_grid)
        patterns: One pattern, or two for the combined transformation
        m_grid: Prefix sizes in triplets
        scheme: Scoring scheme
        reflect: Score with L' = 3m - L instead, for patterns that lower the LCS

    Returns:
        GainProfile with the baseline score and the gains at every grid point

    Raises:
        DomainError: if the grid is empty or ``reflect`` is asked with a non-LCS scheme
        IndexOutOfRange: if the sample is shorter than the grid needs
    """
    grid = sorted(set(int(m) for m in m_grid))
    if not grid or grid[0] < 1:
        raise DomainError(f"m grid must contain positive integers, got {list(m_grid)}")
    if reflect and not scheme.is_lcs:
        raise DomainError("Score reversal is defined for the LCS scheme only")
    profile = _raw_gain_profile(z, patterns, grid, scheme)
    if reflect:
        for m in grid:
            base = profile.baseline[m]
            flipped = score_reversal(base, 3 * m)
            profile.gains[m] = [score_reversal(base + g, 3 * m) - flipped for g in profile.gains[m]]
            profile.baseline[m] = flipped
    return profile


def _raw_gain_profile(z: ChainSample, patterns: Sequence[TripletPattern], grid: list[int],
                      scheme: ScoringScheme) -> GainProfile:
    length = 3 * grid[-1]
    if length > len(z):
        raise IndexOutOfRange(f"Grid needs {length} states, sample has {len(z)}")

    candidates = sorted(
        ((int(t), pattern)
         for pattern in patterns
         for t in eligible_positions(z.prefix(length), pattern)),
        key=lambda c: c[0],
    )
    profile = GainProfile(grid, {}, {m: [] for m in grid})

    if scheme.is_lcs:
        xs, ys = z.xs[:length].tolist(), z.ys[:length].tolist()
        checkpoints = lcs_checkpointed(xs, ys, record=[3 * m for m in grid])
        profile.baseline = {m: float(checkpoints.prefix_values[3 * m]) for m in grid}
        for t, pattern in candidates:
            later = [m for m in grid if m > t]
            if not later:
                continue
            values = checkpoints.resume(3 * t + 1, pattern.D.x, pattern.D.y,
                                        stop=3 * later[-1], record=[3 * m for m in later])
            for m in later:
                profile.gains[m].append(values[3 * m] - profile.baseline[m])
        return profile

    for m in grid:
        prefix = z.prefix(3 * m)
        base = score_of_sample(prefix, scheme)
        profile.baseline[m] = base
        for t, pattern in candidates:
            if t < m:
                changed = _substitute(prefix, t, pattern, None).modified
                profile.gains[m].append(score_of_sample(changed, scheme) - base)
    return profile


def score_reversal(value: float, n: int) -> float:
    """L' = n - l; reverses the sign of every score change."""
    return n - value


def equal_q_weights(u1: int, u2: int, v1: int, v2: int) -> CombinedWeights:
    """
    r_i = (v_i - u_i) / ((v1 - u1) + (v2 - u2)), valid when q1 = q2.

    Raises:
        DomainError: if u_i > v_i or neither side has an eligible triplet
    """
    if u1 > v1 or u2 > v2 or min(u1, u2) < 0:
        raise DomainError(f"Need 0 <= u_i <= v_i, got u=({u1},{u2}), v=({v1},{v2})")
    deficit = (v1 - u1) + (v2 - u2)
    if deficit == 0:
        raise DomainError("No eligible triplet on either side")
    return CombinedWeights((v1 - u1) / deficit, (v2 - u2) / deficit)


def conditional_split(u: int, v1: int, v2: int, q1: float, q2: float) -> dict[int, float]:
    """P(U1 = l | U1 + U2 = u) for independent U_i ~ B(v_i, q_i)."""
    lo, hi = max(0, u - v2), min(v1, u)
    if lo > hi:
        raise DomainError(f"u={u} not attainable with v=({v1},{v2})")
    ls = np.arange(lo, hi + 1)
    with np.errstate(divide='ignore'):
        logs = stats.binom.logpmf(ls, v1, q1) + stats.binom.logpmf(u - ls, v2, q2)
    if np.isneginf(logs).all():
        return {int(l): 0.0 for l in ls}
    probs = np.exp(logs - special.logsumexp(logs))
    return {int(l): float(p) for l, p in zip(ls, probs)}


@dataclass(eq=False)
class WeightTable:
    """Mixing weights r_i(l) at total u, indexed by l = u1; ``residual`` is the top-boundary mismatch."""
    u: int
    v1: int
    v2: int
    weights: dict[int, CombinedWeights]
    residual: float = 0.0

    def at(self, l: int) -> CombinedWeights:
        return self.weights[l]


def _default_weights(l: int, u: int, v1: int, v2: int) -> CombinedWeights:
    return equal_q_weights(l, u - l, v1, v2)


def general_q_weights(u: int, v1: int, v2: int, q1: float, q2: float) -> WeightTable:
    """
    Weights that carry P(U1 = . | U = u) to P(U1 = . | U = u + 1).

    The lowest state pins the first unknown (r2 from the transport equation when
    side 2 is not full there, otherwise r1 = 1); the remaining states follow
    r2(l) = (p(l | u+1) - r1(l-1) p(l-1 | u)) / p(l | u).

    Args:
        u: Combined count U = U1 + U2
        v1: V count of the first pattern
        v2: V count of the second pattern
        q1: Success probability of the first pattern
        q2: Success probability of the second pattern

    Returns:
        WeightTable: r1 and r2 indexed by the value of U1

    Raises:
        Infeasible: if a solved weight leaves [0, 1] or the top boundary fails
    """
    if u >= v1 + v2:
        raise DomainError(f"Need u < v1 + v2, got u={u}, v=({v1},{v2})")
    before = conditional_split(u, v1, v2, q1, q2)
    after = conditional_split(u + 1, v1, v2, q1, q2)
    states = sorted(before)
    solved: dict[int, tuple[float, float]] = {}

    def fail(message: str):
        raise Infeasible(message, weights={l: {"r1": r[0], "r2": r[1]} for l, r in solved.items()})

    previous_r1 = 0.0
    for l in states:
        side2_full = (u - l) == v2
        side1_full = l == v1
        mass = before[l]
        if mass == 0.0:
            w = _default_weights(l, u, v1, v2)
            r1, r2 = w.r1, w.r2
        elif side2_full:
            r1, r2 = 1.0, 0.0
        else:
            inflow = previous_r1 * before.get(l - 1, 0.0)
            r2 = (after.get(l, 0.0) - inflow) / mass
            r1 = 1.0 - r2
            if side1_full:
                r1, r2 = 0.0, 1.0
        if not (-WEIGHT_TOLERANCE <= r1 <= 1 + WEIGHT_TOLERANCE and -WEIGHT_TOLERANCE <= r2 <= 1 + WEIGHT_TOLERANCE):
            solved[l] = (r1, r2)
            fail(f"Weights at l={l} solved to r1={r1:.6g}, r2={r2:.6g}")
        solved[l] = (min(max(r1, 0.0), 1.0), min(max(r2, 0.0), 1.0))
        previous_r1 = solved[l][0]

    # every equation of the transport must hold, including the one pinned by a boundary
    residual = 0.0
    for l, target in after.items():
        produced = solved.get(l - 1, (0.0, 0.0))[0] * before.get(l - 1, 0.0)
        produced += solved.get(l, (0.0, 0.0))[1] * before.get(l, 0.0)
        residual = max(residual, abs(produced - target))
    if residual > 1e-9:
        fail(f"Transport residual {residual:.3g} at u={u}, v=({v1},{v2}), q=({q1:g},{q2:g})")

    table = {l: CombinedWeights(r1, 1.0 - r1) for l, (r1, _) in solved.items()}
    return WeightTable(u, v1, v2, table, residual)


class GeneralQWeights:
    """Weight rule for unequal q, usable wherever ``equal_q_weights`` is."""

    def __init__(self, q1: float, q2: float):
        self.q1 = q1
        self.q2 = q2
        self._cache: dict[tuple[int, int, int], WeightTable] = {}

    def __call__(self, u1: int, u2: int, v1: int, v2: int) -> CombinedWeights:
        key = (u1 + u2, v1, v2)
        if key not in self._cache:
            self._cache[key] = general_q_weights(u1 + u2, v1, v2, self.q1, self.q2)
        return self._cache[key].at(u1)


WeightRule = Callable[[int, int, int, int], CombinedWeights]


def check_disjoint(pattern1: TripletPattern, pattern2: TripletPattern) -> None:
    if (pattern1.A, pattern1.B) == (pattern2.A, pattern2.B):
        raise DomainError(f"Combined patterns need different (A, B): {pattern1} vs {pattern2}")


def apply_combined(z: ChainSample, pattern1: TripletPattern, pattern2: TripletPattern,
                   rng: np.random.Generator, weights: WeightRule = equal_q_weights) -> TransformOutcome:
    """
    Choose side i with probability r_i(u1, u2, v1, v2), then apply the single transformation there.

    Args:
        z: Sample to transform
        pattern1: First pattern
        pattern2: Second pattern, with ends different from the first
        rng: Generator for the side and the triplet
        weights: Rule giving (r1, r2); equal_q_weights or a GeneralQWeights

    Returns:
        TransformOutcome with ``side`` set to 1 or 2

    Raises:
        DomainError: if the patterns share their ends
        Infeasible: if the weight rule has no valid solution
        NoEligibleTriplet: if neither side has an eligible triplet
    """
    check_disjoint(pattern1, pattern2)
    s1, s2 = summarize(z, pattern1), summarize(z, pattern2)
    if s1.u == s1.v and s2.u == s2.v:
        raise NoEligibleTriplet(f"No eligible triplet for {pattern1} or {pattern2}")
    w = weights(s1.u, s2.u, s1.v, s2.v)
    if s2.u == s2.v:
        side = 1
    elif s1.u == s1.v:
        side = 2
    else:
        side = 1 if rng.random() < w.r1 else 2
    return apply_single(z, pattern1 if side == 1 else pattern2, rng, side=side)
