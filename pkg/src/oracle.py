"""
Exhaustive enumeration checks for small n.

Every sequence of (k^2)^n pair states is enumerated in lexicographic flat-index
order (first position most significant). Conditional laws, transformation
kernels and identities are compared with compensated summation, or with exact
rationals for k = 2, n <= 6.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from math import comb
from typing import Callable, Optional, Sequence

import numpy as np

from src.alignment import ScoringScheme, score_of_sample
from src.counters import (
    TripletPattern,
    b_of_q,
    clt_threshold,
    q_of,
)
from src.errors import CapExceeded, DomainError, EmptyCondition, Infeasible, PatternInfeasible
from src.markov_model import ChainSample, StationaryDist, TransitionMatrix, shipped_models, stationary
from src.transform import (
    GeneralQWeights,
    WeightRule,
    check_disjoint,
    equal_q_weights,
    expected_gain,
)

logger = logging.getLogger("PMC-variance")

# 4^9 sequences: n <= 9 for k = 2
DEFAULT_CAP = 4 ** 9

TV_TOLERANCE = 1e-10
IDENTITY_TOLERANCE = 1e-12

CounterHook = Callable[[np.ndarray, TripletPattern, int], tuple[np.ndarray, np.ndarray]]
KernelHook = Callable[['SequenceSpace', np.ndarray, TripletPattern], np.ndarray]


@dataclass(eq=False)
class SequenceSpace:
    """All sequences of length n over the pair alphabet, with their probabilities."""
    seqs: np.ndarray
    probs: np.ndarray
    k: int
    n: int

    @property
    def size(self) -> int:
        return len(self.probs)

    @property
    def states(self) -> int:
        return self.k * self.k

    def place(self, pos: int) -> int:
        """Weight of position ``pos`` in the lexicographic index."""
        return self.states ** (self.n - 1 - pos)


def _enumerate_block(entries: np.ndarray, start: np.ndarray, n: int,
                     lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
    """Sequences with lexicographic index in [lo, hi) and their probabilities."""
    dim = len(start)
    index = np.arange(lo, hi, dtype=np.int64)
    seqs = np.empty((hi - lo, n), dtype=np.int64)
    for pos in range(n):
        seqs[:, pos] = (index // dim ** (n - 1 - pos)) % dim
    probs = start[seqs[:, 0]].copy()
    for t in range(n - 1):
        probs *= entries[seqs[:, t], seqs[:, t + 1]]
    return seqs, probs


def prefix_blocks(dim: int, n: int, partitions: int) -> list[tuple[int, int]]:
    """
    Split [0, dim^n) into contiguous index ranges, each a union of whole prefix classes.

    The prefix depth is the smallest one with at least ``partitions`` prefixes,
    so every block holds the sequences starting with a run of consecutive prefixes.
    """
    depth = 1
    while dim ** depth < partitions and depth < n:
        depth += 1
    group = dim ** (n - depth)
    bounds = np.array_split(np.arange(dim ** depth), min(partitions, dim ** depth))
    return [(int(b[0]) * group, (int(b[-1]) + 1) * group) for b in bounds if len(b)]


def build_space(P: TransitionMatrix, pi: StationaryDist, n: int, cap: int = DEFAULT_CAP,
                workers: int = 1, partitions: Optional[int] = None) -> SequenceSpace:
    """
    Enumerate (k^2)^n sequences with P(Z = z) = pi(z_1) prod p(z_t, z_t+1).

    Args:
        P: Transition matrix
        pi: Its stationary distribution, the law of Z_1
        n: Sequence length
        cap: Largest space allowed
        workers: Processes enumerating prefix blocks in parallel
        partitions: Number of prefix blocks (default: one per worker)

    Returns:
        SequenceSpace in lexicographic order; identical for every choice of
        ``workers`` and ``partitions``

    Raises:
        CapExceeded: if (k^2)^n exceeds ``cap``
    """
    if n < 3:
        raise DomainError(f"Need n >= 3 for at least one triplet, got {n}")
    total = P.dim ** n
    if total > cap:
        raise CapExceeded(f"Enumerating {P.dim}^{n} = {total} sequences exceeds cap {cap}")
    workers = max(1, workers)
    blocks = prefix_blocks(P.dim, n, partitions or workers)
    args = (P.entries, pi.probs, n)
    if workers == 1 or len(blocks) == 1:
        parts = [_enumerate_block(*args, lo, hi) for lo, hi in blocks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(_enumerate_block, *args, lo, hi) for lo, hi in blocks]
            parts = [future.result() for future in futures]
    logger.debug(f"Enumerated {total} sequences of length {n} in {len(blocks)} block(s)")
    seqs = np.concatenate([s for s, _ in parts])
    probs = np.concatenate([p for _, p in parts])
    return SequenceSpace(seqs, probs, P.k, n)


def count_uv(seqs: np.ndarray, pattern: TripletPattern, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised (u, v) for every row of ``seqs``."""
    u, v, _ = _matches(seqs, pattern, k)
    return u, v


def _matches(seqs: np.ndarray, pattern: TripletPattern, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a, b, d = pattern.flat(k)
    m = seqs.shape[1] // 3
    triplets = seqs[:, :3 * m].reshape(len(seqs), m, 3)
    matched = (triplets[:, :, 0] == a) & (triplets[:, :, 2] == b)
    hit = matched & (triplets[:, :, 1] == d)
    return hit.sum(axis=1), matched.sum(axis=1), matched


def _eligible(seqs: np.ndarray, pattern: TripletPattern, k: int) -> np.ndarray:
    _, _, matched = _matches(seqs, pattern, k)
    m = matched.shape[1]
    middles = seqs[:, 1:3 * m:3]
    return matched & (middles != pattern.D.flat(k))


class _CompensatedSum:
    """Elementwise Kahan summation of equally sized arrays."""

    def __init__(self, size: int):
        self.total = np.zeros(size)
        self._carry = np.zeros(size)

    def add(self, values: np.ndarray) -> None:
        y = values - self._carry
        t = self.total + y
        self._carry = (t - self.total) - y
        self.total = t


def uniform_kernel(space: SequenceSpace, weights: np.ndarray, pattern: TripletPattern,
                   scale: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Push ``weights`` through R: mass spread evenly over eligible triplets, middle set to D.

    For a fixed triplet and old middle value the map to targets is one to one,
    so each such slice is scattered without collisions and the slices are
    added with compensated summation.
    """
    d = pattern.D.flat(space.k)
    eligible = _eligible(space.seqs, pattern, space.k)
    counts = eligible.sum(axis=1)
    share = np.divide(weights, counts, out=np.zeros_like(weights), where=counts > 0)
    if scale is not None:
        share = share * scale
    index = np.arange(space.size, dtype=np.int64)
    pushed = _CompensatedSum(space.size)
    for t in range(eligible.shape[1]):
        pos = 3 * t + 1
        active = eligible[:, t] & (share != 0)
        for old in np.unique(space.seqs[active, pos]).tolist():
            rows = active & (space.seqs[:, pos] == old)
            scattered = np.zeros(space.size)
            scattered[index[rows] + (d - old) * space.place(pos)] = share[rows]
            pushed.add(scattered)
    return pushed.total


def total_variation(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * math.fsum(np.abs(a - b).tolist())


@dataclass(eq=False)
class ExactLaw:
    """Conditional law of Z given (U, V) = (u, v) on its support."""
    support: np.ndarray
    probs: np.ndarray
    normalization: float
    n: int
    k: int

    def dense(self, size: int) -> np.ndarray:
        out = np.zeros(size)
        out[self.support] = self.probs
        return out

    def sequences(self) -> list[tuple[ChainSample, float]]:
        states = self.k * self.k
        pairs = []
        for index, prob in zip(self.support.tolist(), self.probs.tolist()):
            digits = [(index // states ** (self.n - 1 - pos)) % states for pos in range(self.n)]
            pairs.append((ChainSample(np.asarray(digits, dtype=np.int64), 0, "enumerated", self.k), prob))
        return pairs


def _law(space: SequenceSpace, mask: np.ndarray) -> Optional[ExactLaw]:
    support = np.nonzero(mask & (space.probs > 0))[0]
    mass = math.fsum(space.probs[support].tolist())
    if mass <= 0:
        return None
    return ExactLaw(support, space.probs[support] / mass, mass, space.n, space.k)


def enumerate_conditional(P: TransitionMatrix, pi: StationaryDist, pattern: TripletPattern,
                          n: int, u: int, v: int, cap: int = DEFAULT_CAP,
                          workers: int = 1) -> ExactLaw:
    """
    Exact law of Z given U = u and V = v.

    Args:
        P: Joint transition matrix
        pi: Stationary distribution of P
        pattern: Triplet pattern defining U and V
        n: Sequence length
        u: Conditioning value of U
        v: Conditioning value of V
        cap: Largest sequence space allowed
        workers: Processes enumerating the space

    Returns:
        ExactLaw: Probabilities over the sequences with U = u and V = v

    Raises:
        CapExceeded: if the sequence space is too large
        EmptyCondition: if P(U = u, V = v) = 0
    """
    space = build_space(P, pi, n, cap, workers=workers)
    us, vs = count_uv(space.seqs, pattern, space.k)
    law = _law(space, (us == u) & (vs == v))
    if law is None:
        raise EmptyCondition(f"P(U={u}, V={v}) = 0 for pattern {pattern}, n={n}")
    return law


@dataclass
class VerifyReport:
    """Outcome of one exhaustive check."""
    name: str
    passed: bool
    max_residual: float
    tolerance: float
    checked: int
    details: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _a3_exact(P: TransitionMatrix, pi: StationaryDist, pattern: TripletPattern, n: int,
              space: SequenceSpace, us: np.ndarray, vs: np.ndarray) -> VerifyReport:
    """The same transport check in rational arithmetic."""
    pe = [[Fraction(float(x)) for x in row] for row in P.entries]
    start = [Fraction(float(x)) for x in pi.probs]
    probs = []
    for seq in space.seqs.tolist():
        prob = start[seq[0]]
        for t in range(n - 1):
            prob *= pe[seq[t]][seq[t + 1]]
        probs.append(prob)
    eligible = _eligible(space.seqs, pattern, space.k)
    d = pattern.D.flat(space.k)

    report = VerifyReport(f"A3 exact {P.label} {pattern} n={n}", True, 0.0, 0.0, 0)
    for u, v in sorted(set(zip(us.tolist(), vs.tolist()))):
        if u >= v:
            continue
        src = [i for i in np.nonzero((us == u) & (vs == v))[0].tolist() if probs[i] > 0]
        dst = [i for i in np.nonzero((us == u + 1) & (vs == v))[0].tolist() if probs[i] > 0]
        src_mass = sum((probs[i] for i in src), Fraction(0))
        if src_mass == 0:
            continue
        dst_mass = sum((probs[i] for i in dst), Fraction(0))
        pushed: dict[int, Fraction] = {}
        for i in src:
            slots = np.nonzero(eligible[i])[0].tolist()
            share = probs[i] / src_mass / len(slots)
            for t in slots:
                pos = 3 * t + 1
                target = i + (d - int(space.seqs[i, pos])) * space.place(pos)
                pushed[target] = pushed.get(target, Fraction(0)) + share
        target = {i: probs[i] / dst_mass for i in dst} if dst_mass else {}
        keys = set(pushed) | set(target)
        tv = sum((abs(pushed.get(i, Fraction(0)) - target.get(i, Fraction(0))) for i in keys),
                 Fraction(0)) / 2
        report.checked += 1
        report.details.append({"u": u, "v": v, "tv": float(tv)})
        report.max_residual = max(report.max_residual, float(tv))
    report.passed = report.max_residual <= IDENTITY_TOLERANCE
    return report


def verify_A3(P: TransitionMatrix, pi: StationaryDist, pattern: TripletPattern, n: int,
              cap: int = DEFAULT_CAP, kernel: Optional[KernelHook] = None,
              counter: Optional[CounterHook] = None, exact: bool = False,
              tolerance: float = TV_TOLERANCE, workers: int = 1) -> VerifyReport:
    """
    Check that R carries the law given (u, v) to the law given (u + 1, v) for every feasible u < v.

    Args:
        P: Transition matrix
        pi: Law of Z_1
        pattern: Pattern the transformation acts on
        n: Sequence length
        cap: Largest space enumerated
        kernel: Replacement for the transformation kernel
        counter: Replacement for the (u, v) counters
        exact: Compare in rational arithmetic (k = 2, n <= 6)
        tolerance: Largest total variation accepted
        workers: Processes enumerating the space

    Returns:
        VerifyReport with the total variation of every (u, v) class

    Raises:
        CapExceeded: if the space is larger than ``cap``
        DomainError: if exact mode is asked outside its limits
    """
    space = build_space(P, pi, n, cap, workers=workers)
    us, vs = (counter or count_uv)(space.seqs, pattern, space.k)
    if exact:
        if space.k != 2 or n > 6:
            raise DomainError("Exact rational mode supports k=2 and n <= 6")
        return _a3_exact(P, pi, pattern, n, space, us, vs)

    push = kernel or uniform_kernel
    report = VerifyReport(f"A3 {P.label} {pattern} n={n}", True, 0.0, tolerance, 0)
    for u, v in sorted(set(zip(us.tolist(), vs.tolist()))):
        if u >= v:
            continue
        source = _law(space, (us == u) & (vs == v))
        if source is None:
            continue
        target = _law(space, (us == u + 1) & (vs == v))
        pushed = push(space, source.dense(space.size), pattern)
        expected = target.dense(space.size) if target is not None else np.zeros(space.size)
        tv = total_variation(pushed, expected)
        report.checked += 1
        report.details.append({"u": u, "v": v, "tv": tv})
        report.max_residual = max(report.max_residual, tv)
    if report.checked == 0:
        report.notes.append("no feasible (u, v) with u < v; vacuous")
    report.passed = report.max_residual <= tolerance
    logger.debug(f"{report.name}: max TV {report.max_residual:.3g} over {report.checked} classes")
    return report


def verify_uv_conditional_independence(P: TransitionMatrix, pi: StationaryDist, pattern: TripletPattern,
                                       n: int, cap: int = DEFAULT_CAP, counter: Optional[CounterHook] = None,
                                       tolerance: float = IDENTITY_TOLERANCE,
                                       workers: int = 1) -> VerifyReport:
    """Check P(eta = a | V = v, U = u) = P(eta = a | V = v) for every feasible (a, u, v)."""
    space = build_space(P, pi, n, cap, workers=workers)
    _, _, matched = _matches(space.seqs, pattern, space.k)
    us, vs = (counter or count_uv)(space.seqs, pattern, space.k)
    codes = matched.astype(np.int64) @ (1 << np.arange(matched.shape[1], dtype=np.int64))
    report = VerifyReport(f"U/V independence {P.label} {pattern} n={n}", True, 0.0, tolerance, 0)
    for v in sorted(set(vs.tolist())):
        in_v = (vs == v) & (space.probs > 0)
        mass_v = math.fsum(space.probs[in_v].tolist())
        if mass_v <= 0:
            continue
        by_code = _mass_by(codes[in_v], space.probs[in_v])
        for u in sorted(set(us[in_v].tolist())):
            in_uv = in_v & (us == u)
            mass_uv = math.fsum(space.probs[in_uv].tolist())
            joint = _mass_by(codes[in_uv], space.probs[in_uv])
            for code in set(by_code) | set(joint):
                residual = abs(joint.get(code, 0.0) / mass_uv - by_code.get(code, 0.0) / mass_v)
                report.max_residual = max(report.max_residual, residual)
            report.checked += 1
    if report.checked == 0:
        report.notes.append("vacuous")
    report.passed = report.max_residual <= tolerance
    return report


def _mass_by(codes: np.ndarray, probs: np.ndarray) -> dict[int, float]:
    out: dict[int, list[float]] = {}
    for code, prob in zip(codes.tolist(), probs.tolist()):
        out.setdefault(code, []).append(prob)
    return {code: math.fsum(values) for code, values in out.items()}


def verify_bernoulli_proposition(m: int, p: float, tolerance: float = 1e-14) -> VerifyReport:
    """
    Flipping a uniformly chosen zero of W ~ Bernoulli(p)^m given u ones yields the law given u + 1.

    Also checks that each conditional law is uniform on the words with u ones.
    """
    if not 1 <= m <= 16:
        raise DomainError(f"m must lie in [1, 16], got {m}")
    words = np.arange(2 ** m, dtype=np.int64)
    bits = (words[:, None] >> np.arange(m)) & 1
    ones = bits.sum(axis=1)
    probs = p ** ones * (1.0 - p) ** (m - ones)
    report = VerifyReport(f"Bernoulli flip m={m} p={p:g}", True, 0.0, tolerance, 0)

    def law(u: int) -> np.ndarray:
        dense = np.where(ones == u, probs, 0.0)
        return dense / math.fsum(dense.tolist())

    for u in range(m + 1):
        conditional = law(u)
        uniform = np.where(ones == u, 1.0 / comb(m, u), 0.0)
        report.max_residual = max(report.max_residual, float(np.abs(conditional - uniform).max()))
        if u == m:
            continue
        zeros = m - ones
        pushed = _CompensatedSum(len(words))
        for bit in range(m):
            rows = (bits[:, bit] == 0) & (conditional > 0)
            scattered = np.zeros(len(words))
            scattered[words[rows] | (1 << bit)] = conditional[rows] / zeros[rows]
            pushed.add(scattered)
        tv = total_variation(pushed.total, law(u + 1))
        report.details.append({"u": u, "tv": tv})
        report.max_residual = max(report.max_residual, tv)
        report.checked += 1
    report.passed = report.max_residual <= tolerance
    return report


def verify_binomial_identity(v1: int, v2: int, q) -> VerifyReport:
    """
    Exact check that the equal-q weights transport U1 | U = u to U1 | U = u + 1.

    U_i ~ B(v_i, q) independent. Interior states satisfy
    p(l | u+1) = r1(l-1) p(l-1 | u) + r2(l) p(l | u); when u < v2 the lowest
    state satisfies p(0 | u+1) = r2(0) p(0 | u).
    """
    if v1 + v2 > 40:
        raise DomainError(f"v1 + v2 must be at most 40, got {v1 + v2}")
    q = Fraction(q) if not isinstance(q, float) else Fraction(q).limit_denominator(10 ** 12)
    report = VerifyReport(f"binomial identity v=({v1},{v2}) q={float(q):g}", True, 0.0, 0.0, 0)

    def joint(l: int, u: int) -> Fraction:
        if not (0 <= l <= v1 and 0 <= u - l <= v2):
            return Fraction(0)
        return (comb(v1, l) * q ** l * (1 - q) ** (v1 - l)
                * comb(v2, u - l) * q ** (u - l) * (1 - q) ** (v2 - u + l))

    boundary_max = interior_max = Fraction(0)
    for u in range(v1 + v2):
        mass_u = sum((joint(l, u) for l in range(u + 1)), Fraction(0))
        mass_next = sum((joint(l, u + 1) for l in range(u + 2)), Fraction(0))
        if mass_u == 0 or mass_next == 0:
            continue
        deficit = v1 + v2 - u
        for l in range(max(0, u + 1 - v2), min(v1, u + 1) + 1):
            lhs = joint(l, u + 1) / mass_next
            r1_prev = Fraction(v1 - (l - 1), deficit)
            r2_here = Fraction(v2 - (u - l), deficit)
            rhs = r1_prev * joint(l - 1, u) / mass_u + r2_here * joint(l, u) / mass_u
            residual = abs(lhs - rhs)
            if l == 0 and u < v2:
                boundary_max = max(boundary_max, residual)
            else:
                interior_max = max(interior_max, residual)
            report.checked += 1
    report.max_residual = float(max(boundary_max, interior_max))
    report.details.append({"interior": float(interior_max), "boundary": float(boundary_max)})
    if report.checked == 0:
        report.notes.append("degenerate q: identity vacuous")
    report.passed = report.max_residual == 0.0
    return report


def combined_weight_rule(P: TransitionMatrix, pattern1: TripletPattern, pattern2: TripletPattern,
                         atol: float = 1e-12) -> tuple[WeightRule, bool]:
    """Equal-q weights when q1 = q2, otherwise the general solver; returns (rule, equal)."""
    q1, q2 = q_of(P, pattern1), q_of(P, pattern2)
    if abs(q1 - q2) <= atol:
        return equal_q_weights, True
    return GeneralQWeights(q1, q2), False


def verify_combined_A3(P: TransitionMatrix, pi: StationaryDist, pattern1: TripletPattern,
                       pattern2: TripletPattern, n: int, cap: int = DEFAULT_CAP,
                       weights: Optional[WeightRule] = None,
                       tolerance: float = TV_TOLERANCE, workers: int = 1) -> VerifyReport:
    """
    Transport check for the combined kernel across every feasible (u, v1, v2) with u < v1 + v2.

    With unequal q the general weight solver is used; infeasible weights fail the check.
    """
    check_disjoint(pattern1, pattern2)
    space = build_space(P, pi, n, cap, workers=workers)
    report = VerifyReport(f"combined A3 {P.label} {pattern1} + {pattern2} n={n}", True, 0.0, tolerance, 0)
    if weights is None:
        weights, equal = combined_weight_rule(P, pattern1, pattern2)
        if not equal:
            report.notes.append("unequal q: general weights used")

    u1, v1 = count_uv(space.seqs, pattern1, space.k)
    u2, v2 = count_uv(space.seqs, pattern2, space.k)
    total = u1 + u2
    classes = sorted(set(zip(total.tolist(), v1.tolist(), v2.tolist())))
    for u, a, b in classes:
        if u >= a + b:
            continue
        source = _law(space, (total == u) & (v1 == a) & (v2 == b))
        if source is None:
            continue
        target = _law(space, (total == u + 1) & (v1 == a) & (v2 == b))
        dense = source.dense(space.size)
        r1 = np.zeros(space.size)
        r2 = np.zeros(space.size)
        try:
            for i in source.support.tolist():
                w = weights(int(u1[i]), int(u2[i]), a, b)
                r1[i], r2[i] = w.r1, w.r2
        except Infeasible as e:
            report.passed = False
            report.notes.append(f"infeasible weights at u={u}, v=({a},{b}): {e}")
            return report
        pushed = uniform_kernel(space, dense, pattern1, scale=r1) + uniform_kernel(space, dense, pattern2, scale=r2)
        expected = target.dense(space.size) if target is not None else np.zeros(space.size)
        tv = total_variation(pushed, expected)
        report.checked += 1
        report.details.append({"u": u, "v1": a, "v2": b, "tv": tv})
        report.max_residual = max(report.max_residual, tv)
    report.passed = report.max_residual <= tolerance
    return report


def verify_expected_gain(P: TransitionMatrix, pi: StationaryDist, pattern: TripletPattern, n: int,
                         scheme: ScoringScheme, cap: int = DEFAULT_CAP,
                         workers: int = 1) -> VerifyReport:
    """Compare expected_gain with the average over R's choices for every positive-probability z."""
    space = build_space(P, pi, n, cap, workers=workers)
    eligible = _eligible(space.seqs, pattern, space.k)
    d = pattern.D.flat(space.k)
    report = VerifyReport(f"expected gain {P.label} {pattern} n={n}", True, 0.0, IDENTITY_TOLERANCE, 0)
    for i in np.nonzero(eligible.any(axis=1) & (space.probs > 0))[0].tolist():
        z = ChainSample(space.seqs[i].copy(), 0, "enumerated", space.k)
        base = score_of_sample(z, scheme)
        changes = [score_of_sample(z.with_state(3 * t + 1, d), scheme) - base
                   for t in np.nonzero(eligible[i])[0].tolist()]
        enumerated = math.fsum(changes) / len(changes)
        report.max_residual = max(report.max_residual, abs(enumerated - expected_gain(z, pattern, scheme)))
        report.checked += 1
    report.passed = report.max_residual <= report.tolerance
    return report


def clt_sweep(qs: Sequence[float] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
              m_max: int = 10 ** 4, beta: float = 1.0, slack: float = 1e-9,
              threshold: int = 100) -> VerifyReport:
    """Empirical local-CLT threshold m_o for each q with b = b(q)(1 + slack)."""
    report = VerifyReport(f"local CLT m_max={m_max}", True, 0.0, float(threshold), 0)
    for q in qs:
        m_o = clt_threshold(q, beta, b_of_q(q, beta) * (1.0 + slack), m_max=m_max)
        report.details.append({"q": q, "m_o": m_o})
        report.max_residual = max(report.max_residual, float(m_o))
        report.checked += 1
    report.passed = report.max_residual <= threshold
    return report


class VerificationSuite:
    """Runs the exhaustive checks on the shipped models."""

    def __init__(self, ns: Sequence[int] = (6, 9), cap: int = DEFAULT_CAP,
                 models: Optional[dict[str, TransitionMatrix]] = None,
                 progress_callback: Optional[Callable[[str], None]] = None, workers: int = 1):
        self.ns = list(ns)
        self.cap = cap
        self.workers = max(1, workers)
        self.models = models or shipped_models()
        self.progress_callback = progress_callback
        self.reports: list[VerifyReport] = []

    def _update_progress(self, message: str):
        logger.info(message)
        if self.progress_callback:
            self.progress_callback(message)

    def _record(self, report: VerifyReport):
        self.reports.append(report)
        status = "PASS" if report.passed else "FAIL"
        self._update_progress(f"{status} {report.name} (max residual {report.max_residual:.3g})")

    def run_a3(self, pattern: TripletPattern = TripletPattern.uniform(1, 1)):
        for name, P in self.models.items():
            pi = stationary(P)
            for n in self.ns:
                try:
                    self._record(verify_A3(P, pi, pattern, n, self.cap, workers=self.workers))
                except PatternInfeasible as e:
                    self._update_progress(f"Skipping {name}: {e}")

    def run_uv(self, pattern: TripletPattern = TripletPattern.uniform(1, 1)):
        for P in self.models.values():
            self._record(verify_uv_conditional_independence(P, stationary(P), pattern, min(self.ns), self.cap,
                                                            workers=self.workers))

    def run_combined(self, pattern1: TripletPattern = TripletPattern.uniform(1, 0),
                     pattern2: TripletPattern = TripletPattern.uniform(0, 1), equal_only: bool = True):
        """With ``equal_only`` models whose two q values differ are skipped."""
        for name, P in self.models.items():
            if equal_only and not combined_weight_rule(P, pattern1, pattern2)[1]:
                self._update_progress(f"Skipping {name}: q differs between {pattern1} and {pattern2}")
                continue
            self._record(verify_combined_A3(P, stationary(P), pattern1, pattern2, max(self.ns), self.cap,
                                            workers=self.workers))

    def run_propositions(self, ps: Sequence[float] = (0.3, 0.5, 0.7), qs: Sequence[float] = (0.2, 0.5, 0.8),
                         m_max: int = 8, v_total: int = 12):
        for p in ps:
            for m in range(1, m_max + 1):
                self._record(verify_bernoulli_proposition(m, p))
        for q in qs:
            for v1 in range(v_total + 1):
                for v2 in range(v_total + 1 - v1):
                    self._record(verify_binomial_identity(v1, v2, q))

    def run_clt(self, m_max: int = 10 ** 4):
        self._record(clt_sweep(m_max=m_max))

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def summary(self) -> dict:
        return {
            "passed": self.passed,
            "checks": len(self.reports),
            "failed": [r.name for r in self.reports if not r.passed],
            "max_residual": max((r.max_residual for r in self.reports if r.tolerance < 1), default=0.0),
            "reports": [r.to_dict() for r in self.reports],
        }
