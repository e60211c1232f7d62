"""Triplet counters V and U, their constants, and the moment bound formulas."""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, special, stats

from src.alignment import ScoringScheme, delta_max
from src.errors import DomainError, NotPrimitive, PatternInfeasible, PreconditionViolated
from src.markov_model import (
    ChainSample,
    PairState,
    StationaryDist,
    TransitionMatrix,
    mixing_time_bound,
    primitivity_index,
    stationary,
)
from src.utils import parse_pattern

logger = logging.getLogger("PMC-variance")

# Default probability mass required for V to fall in its window
DEFAULT_B_O = 0.9

# Fraction of the admissible supremum used for c_o
DEFAULT_C_O_FRACTION = 0.99


@dataclass(frozen=True)
class TripletPattern:
    """Letters (A, B, D): a triplet matches when its ends are (A, B); D is the target middle."""
    A: PairState
    B: PairState
    D: PairState

    @classmethod
    def parse(cls, text: str) -> 'TripletPattern':
        a, b, d = parse_pattern(text)
        return cls(PairState(*a), PairState(*b), PairState(*d))

    @classmethod
    def uniform(cls, x: int, y: int) -> 'TripletPattern':
        """A = B = D = (x, y)."""
        state = PairState(x, y)
        return cls(state, state, state)

    def flat(self, k: int) -> tuple[int, int, int]:
        return self.A.flat(k), self.B.flat(k), self.D.flat(k)

    def __str__(self) -> str:
        return f"{self.A};{self.B};{self.D}"


@dataclass(eq=False)
class CounterSummary:
    """The vectors n(z), b(z) and the counts v, u; positions are 0-based triplet indices."""
    n_vec: np.ndarray
    v: int
    b_vec: np.ndarray
    u: int
    positions: np.ndarray

    @property
    def eligible(self) -> np.ndarray:
        """Triplet indices that match but do not have D in the middle."""
        return self.positions[self.b_vec == 0]


def triplet_view(states: np.ndarray) -> np.ndarray:
    """The first 3*floor(n/3) states reshaped to (floor(n/3), 3)."""
    m = len(states) // 3
    return np.asarray(states[:3 * m]).reshape(m, 3)


def summarize(z: ChainSample, pattern: TripletPattern) -> CounterSummary:
    """
    Compute n(z), v(z), b(z), u(z) for one sample.

    Returns:
        CounterSummary; states past the last full triplet are ignored

    Raises:
        DomainError: if the sample is shorter than one triplet
    """
    if len(z) < 3:
        raise DomainError(f"Need at least 3 states to form a triplet, got {len(z)}")
    a, b, d = pattern.flat(z.k)
    triplets = triplet_view(z.states)
    n_vec = ((triplets[:, 0] == a) & (triplets[:, 2] == b)).astype(np.int8)
    positions = np.nonzero(n_vec)[0]
    b_vec = (triplets[positions, 1] == d).astype(np.int8)
    return CounterSummary(n_vec, int(n_vec.sum()), b_vec, int(b_vec.sum()), positions)


def q_of(P: TransitionMatrix, pattern: TripletPattern) -> float:
    """
    P(Z_2 = D | Z_1 = A, Z_3 = B) = p_AD p_DB / sum_D' p_AD' p_D'B.

    Raises:
        PatternInfeasible: if the two-step probability from A to B is zero
    """
    a, b, d = pattern.flat(P.k)
    denominator = float(P.entries[a, :] @ P.entries[:, b])
    if denominator <= 0:
        raise PatternInfeasible(f"No two-step path from {pattern.A} to {pattern.B} under {P.label}")
    return float(P.entries[a, d] * P.entries[d, b]) / denominator


def alpha_of(P: TransitionMatrix, pi: StationaryDist, pattern: TripletPattern,
             n: int) -> tuple[float, float]:
    """
    alpha = P(Z_1=A, Z_3=B) / 3 and alpha_n = EV / n with EV = floor(n/3) * 3 * alpha.

    Raises:
        PatternInfeasible: if P(Z_1=A, Z_3=B) = 0
    """
    a, b, _ = pattern.flat(P.k)
    joint = float(pi.probs[a] * (P.entries[a, :] @ P.entries[:, b]))
    if joint <= 0:
        raise PatternInfeasible(f"P(Z1={pattern.A}, Z3={pattern.B}) = 0 under {P.label}")
    alpha = joint / 3.0
    alpha_n = (n // 3) * 3 * alpha / n
    return alpha, alpha_n


def b_of_q(q: float, beta: float = 1.0) -> float:
    """b(beta, q) = sqrt(2 pi q(1-q)) exp(beta^2 / (2 q(1-q)))."""
    if not 0.0 < q < 1.0:
        raise DomainError(f"b(q) needs q in (0, 1), got {q:g}")
    variance = q * (1.0 - q)
    exponent = beta * beta / (2.0 * variance)
    try:
        return math.sqrt(2.0 * math.pi * variance) * math.exp(exponent)
    except OverflowError:
        logger.warning(f"b(q) overflows for q={q:g}; returning inf")
        return math.inf


def local_clt_check(m: int, p: float, beta: float, b: float) -> tuple[bool, Optional[int]]:
    """
    Check P(X = i) >= 1 / (b sqrt(m)) for X ~ B(m, p) on the window mp +- beta sqrt(m).

    Returns (holds, worst_i); worst_i is None when the window has no integer.
    """
    if m < 1 or not 0.0 < p < 1.0:
        raise DomainError(f"Need m >= 1 and p in (0,1), got m={m}, p={p:g}")
    window = u_window(m, p, beta)
    if len(window) == 0:
        return True, None
    log_pmf = stats.binom.logpmf(window, m, p)
    worst = int(np.argmin(log_pmf))
    threshold = -math.log(b) - 0.5 * math.log(m)
    return bool(log_pmf[worst] >= threshold), int(window[worst])


def clt_threshold(p: float, beta: float, b: float, m_max: int = 10 ** 4) -> int:
    """
    Smallest m_o such that the local CLT bound holds for every m in [m_o, m_max].

    Returns m_max + 1 when it fails at m_max itself.
    """
    m_o = m_max + 1
    for m in range(m_max, 0, -1):
        holds, _ = local_clt_check(m, p, beta, b)
        if not holds:
            break
        m_o = m
    return m_o


@dataclass(eq=False)
class XiChain:
    """The chain of consecutive non-overlapping triplets on its reachable states."""
    states: list[tuple[int, int, int]]
    matrix: np.ndarray
    probs: np.ndarray


def xi_chain(P: TransitionMatrix, pi: StationaryDist) -> XiChain:
    """Triplets (a, b, c) with pi(a) p_ab p_bc > 0 and their transition matrix."""
    e = P.entries
    states, probs = [], []
    for a in range(P.dim):
        for b in range(P.dim):
            for c in range(P.dim):
                prob = pi.probs[a] * e[a, b] * e[b, c]
                if prob > 0:
                    states.append((a, b, c))
                    probs.append(prob)
    size = len(states)
    matrix = np.zeros((size, size))
    for i, (_, _, c) in enumerate(states):
        for j, (d, f, g) in enumerate(states):
            matrix[i, j] = e[c, d] * e[d, f] * e[f, g]
    return XiChain(states, matrix, np.asarray(probs))


def doeblin_constants(P: TransitionMatrix, pi: StationaryDist,
                      cap: Optional[int] = None) -> tuple[int, float, int, bool]:
    """
    Minorization constants of the triplet chain with Q uniform on the reachable set.

    Returns (r, lambda, |X|, valid) where lambda = min_{x,y} P(xi_{1+r}=y | xi_1=x) * |X|
    and valid is False if lambda > 1.

    Raises:
        NotPrimitive: if no power up to the cap is strictly positive
    """
    chain = xi_chain(P, pi)
    size = len(chain.states)
    cap = size * size if cap is None else cap
    power = chain.matrix.copy()
    for r in range(1, cap + 1):
        if (power > 0).all():
            lam = float(power.min()) * size
            valid = lam <= 1.0 + 1e-12
            if not valid:
                logger.warning(f"Doeblin lambda={lam:.4g} exceeds 1 for {P.label}")
            return r, lam, size, valid
        power = power @ chain.matrix
    raise NotPrimitive(f"Triplet chain of {P.label} is not primitive within {cap} steps")


def hoeffding_mc_bound(m: int, eps: float, lam: float, r: int, fnorm: float = 1.0) -> float:
    """
    Markov-chain Hoeffding bound on P(S_m - ES_m > m eps).

    Args:
        m: Number of steps of the triplet chain
        eps: Deviation per step
        lam: Doeblin constant lambda of the chain
        r: Doeblin lag
        fnorm: Sup norm of the counted function

    Returns:
        float: Tail probability bound, at most 1

    Raises:
        PreconditionViolated: if eps or lambda is not positive, or m < 2 r ||f|| / (lambda eps)
    """
    if eps <= 0 or lam <= 0:
        raise PreconditionViolated(f"Need eps > 0 and lambda > 0, got eps={eps:g}, lambda={lam:g}")
    boundary = 2.0 * r * fnorm / (lam * eps)
    if m < boundary * (1.0 - 1e-12):
        raise PreconditionViolated(f"m={m} must exceed 2r||f||/(lambda eps) = {boundary:.6g}")
    excess = max(m * eps - 2.0 * r * fnorm / lam, 0.0)
    return math.exp(-lam * lam * excess * excess / (2.0 * m * fnorm * fnorm * r * r))


def choose_K(lam: float, r: int, b_o: float) -> float:
    """Smallest K with exp(-(3/8)(lambda/r)^2 K^2) < (1 - b_o)/2, plus a 1e-9 margin."""
    if not 0.0 < b_o <= 1.0:
        raise DomainError(f"b_o must lie in (0, 1), got {b_o:g}")
    if b_o == 1.0:
        return math.inf
    target = (1.0 - b_o) / 2.0
    return math.sqrt(-math.log(target) * 8.0 / 3.0) * r / lam + 1e-9


def u_window(v: int, q: float, beta: float = 1.0) -> np.ndarray:
    """The integers of [vq - beta sqrt(v), vq + beta sqrt(v)] inside {0, ..., v}."""
    half = beta * math.sqrt(v)
    lo = max(0, math.ceil(v * q - half))
    hi = min(v, math.floor(v * q + half))
    return np.arange(lo, hi + 1)


def v_window(n: int, alpha_n: float, K: float) -> tuple[float, float]:
    """Endpoints of [alpha_n n - K sqrt(n), alpha_n n + K sqrt(n)]."""
    centre = alpha_n * n
    half = K * math.sqrt(n)
    return centre - half, centre + half


def combined_phi_bound(q1: float, q2: float, n: int) -> float:
    """Lower bound 1/(2 b(q1) b(q2) sqrt(n)) on P(U=u | V=v) for two combined patterns."""
    return 1.0 / (2.0 * b_of_q(q1) * b_of_q(q2) * math.sqrt(n))


def mcdiarmid_bound(s: float, n: int, F: float) -> float:
    """2 exp(-s^2 / (n F)), the bounded-difference tail for the score."""
    if F <= 0:
        return 0.0 if s > 0 else 2.0
    return 2.0 * math.exp(-s * s / (n * F))


@dataclass
class BoundReport:
    """Constants and moment bounds for a model, pattern and scheme at given (n, r)."""
    n: int
    r: float
    model: str
    pattern: Optional[str] = None
    q: Optional[float] = None
    q2: Optional[float] = None
    alpha: Optional[float] = None
    alpha_n: Optional[float] = None
    b_q: Optional[float] = None
    K: Optional[float] = None
    b_o: Optional[float] = None
    phi_n: Optional[float] = None
    c: Optional[float] = None
    c_o: Optional[float] = None
    m: Optional[int] = None
    lambda_: Optional[float] = None
    r_doeblin: Optional[int] = None
    xi_states: Optional[int] = None
    eps_o: Optional[float] = None
    a_o: Optional[float] = None
    moment_lower: Optional[float] = None
    delta: Optional[float] = None
    t_mix: Optional[float] = None
    F: Optional[float] = None
    C_r: Optional[float] = None
    D_r: Optional[float] = None
    moment_upper: Optional[float] = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["lambda"] = data.pop("lambda_")
        return data


def _fill_moment_constants(report: BoundReport, alpha: float, b: float, phi_n: float,
                           c_o_fraction: float) -> None:
    c = math.sqrt(2.0 * alpha) / b
    c_o = c_o_fraction * c / 8.0
    eps = abs(report.eps_o)
    r_moment, n = report.r, report.n
    report.b_q = b
    report.c = c
    report.c_o = c_o
    report.phi_n = phi_n
    report.a_o = 2.0 * c_o * alpha * eps * eps / 256.0
    report.moment_lower = c_o * (eps * math.sqrt(2.0 * alpha) / 16.0) ** r_moment * n ** (r_moment / 2.0)


def _fill_doeblin(report: BoundReport, P: TransitionMatrix, pi: StationaryDist, b_o: float) -> None:
    try:
        report.m, _ = primitivity_index(P)
        r_doeblin, lam, size, valid = doeblin_constants(P, pi)
        report.r_doeblin = r_doeblin
        report.lambda_ = lam
        report.xi_states = size
        report.K = choose_K(lam, r_doeblin, b_o)
        if not valid:
            report.flags.append("lambda > 1")
    except NotPrimitive as e:
        report.flags.append(str(e))


def _vacuous(report: BoundReport, message: str) -> BoundReport:
    # U = V almost surely; the local CLT window is degenerate
    report.flags.append(message)
    report.a_o = 0.0
    report.moment_lower = 0.0
    return report


def _positive_q(P: TransitionMatrix, pattern: TripletPattern) -> float:
    q = q_of(P, pattern)
    if q <= 0.0:
        raise PatternInfeasible(f"q = 0 for pattern {pattern} under {P.label}")
    return q


def lower_bound_report(P: TransitionMatrix, pattern: TripletPattern, eps_o: float,
                       r_moment: float, n: int, b_o: float = DEFAULT_B_O,
                       c_o_fraction: float = DEFAULT_C_O_FRACTION) -> BoundReport:
    """
    Lower bound E|L - EL|^r >= c_o (eps_o sqrt(2 alpha) / 16)^r n^(r/2).

    c_o is ``c_o_fraction`` of its supremum sqrt(2 alpha) / (8 b(q)); a_o is the
    r = 2 constant 2 c_o alpha eps_o^2 / 16^2.

    Args:
        P: Transition matrix of the pair chain
        pattern: Letters (A, B, D) of the transformation
        eps_o: Assumed lower bound on the expected score change
        r_moment: Moment order r
        n: Sequence length
        b_o: Probability V must have of falling in its window; sets K
        c_o_fraction: Fraction of the admissible supremum used for c_o

    Returns:
        BoundReport with the counter constants, phi_n, a_o and the Doeblin constants

    Raises:
        PatternInfeasible: if the pattern has zero probability or q = 0
    """
    if n < 3:
        raise DomainError(f"n must be at least 3, got {n}")
    pi = stationary(P)
    q = _positive_q(P, pattern)
    alpha, alpha_n = alpha_of(P, pi, pattern, n)
    report = BoundReport(n=n, r=r_moment, model=P.label, pattern=str(pattern),
                         q=q, alpha=alpha, alpha_n=alpha_n, b_o=b_o, eps_o=eps_o)
    if q >= 1.0:
        return _vacuous(report, "q = 1: b(q) undefined, lower bound vacuous")

    b_q = b_of_q(q)
    _fill_moment_constants(report, alpha, b_q, 1.0 / (b_q * math.sqrt(n)), c_o_fraction)
    _fill_doeblin(report, P, pi, b_o)
    return report


def combined_lower_bound_report(P: TransitionMatrix, pattern1: TripletPattern, pattern2: TripletPattern,
                                eps_o: float, r_moment: float, n: int, b_o: float = DEFAULT_B_O,
                                c_o_fraction: float = DEFAULT_C_O_FRACTION) -> BoundReport:
    """
    Lower bound for the combined transformation on two patterns.

    V and U count both patterns, so alpha = alpha1 + alpha2. The local CLT
    constant b(q) becomes 2 b(q1) b(q2), which makes phi_n the combined bound
    1/(2 b(q1) b(q2) sqrt(n)). V falls in its window with probability at
    least 1 - 2(1 - b_o), which is what ``b_o`` records.

    Raises:
        DomainError: if the patterns share the ends (A, B)
        PatternInfeasible: if either pattern has zero probability or q = 0
    """
    if n < 3:
        raise DomainError(f"n must be at least 3, got {n}")
    if (pattern1.A, pattern1.B) == (pattern2.A, pattern2.B):
        raise DomainError(f"Combined patterns need different (A, B): {pattern1} vs {pattern2}")
    pi = stationary(P)
    q1, q2 = _positive_q(P, pattern1), _positive_q(P, pattern2)
    alpha1, alpha_n1 = alpha_of(P, pi, pattern1, n)
    alpha2, alpha_n2 = alpha_of(P, pi, pattern2, n)
    report = BoundReport(n=n, r=r_moment, model=P.label, pattern=f"{pattern1} + {pattern2}",
                         q=q1, q2=q2, alpha=alpha1 + alpha2, alpha_n=alpha_n1 + alpha_n2,
                         b_o=max(0.0, 1.0 - 2.0 * (1.0 - b_o)), eps_o=eps_o)
    if max(q1, q2) >= 1.0:
        return _vacuous(report, "q = 1 for one pattern: b(q) undefined, lower bound vacuous")

    b = 2.0 * b_of_q(q1) * b_of_q(q2)
    _fill_moment_constants(report, alpha1 + alpha2, b, combined_phi_bound(q1, q2, n), c_o_fraction)
    _fill_doeblin(report, P, pi, b_o)
    return report


def _tail_integral(r_moment: float) -> float:
    """Integral of exp(-u) u^(r/2 - 1) over [ln 2, inf), with an incomplete-gamma cross-check."""
    shape = r_moment / 2.0
    value, _ = integrate.quad(lambda u: math.exp(-u) * u ** (shape - 1.0), math.log(2.0), math.inf,
                              epsabs=1e-12, epsrel=1e-10)
    closed = float(special.gammaincc(shape, math.log(2.0)) * special.gamma(shape))
    if abs(value - closed) > 1e-8 * max(1.0, abs(closed)):
        logger.warning(f"Quadrature {value:.12g} and incomplete gamma {closed:.12g} disagree")
    return value


def upper_bound_report(P: TransitionMatrix, scheme: ScoringScheme, r_moment: float,
                       n: int) -> BoundReport:
    """
    Upper bound E|L - EL|^r <= C(r) n^(r/2) from the bounded-difference inequality.

    F = 32 Delta^2 t_mix, C(r) = F^(r/2) [(ln 2)^(r/2) + r int_{ln 2}^inf e^-u u^(r/2-1) du]
    and D(r) = r F^(r/2) Gamma(r/2) >= C(r).

    Args:
        P: Joint transition matrix
        scheme: Scoring scheme supplying Delta
        r_moment: Moment order, at least 1
        n: Sequence length

    Returns:
        BoundReport: With t_mix, F, C(r), D(r) and the moment upper bound

    Raises:
        DomainError: if r_moment < 1
        NotPrimitive: if no power of P is strictly positive
    """
    if r_moment < 1:
        raise DomainError(f"Moment order r must be at least 1, got {r_moment:g}")
    report = BoundReport(n=n, r=r_moment, model=P.label)
    m, _ = primitivity_index(P)
    report.m = m
    try:
        report.t_mix = mixing_time_bound(P, 0.25).t_mix
    except DomainError:
        report.t_mix = float(m)
        report.flags.append(f"exact mixing after {m} step(s)")

    delta = delta_max(scheme)
    report.delta = delta
    report.F = 32.0 * delta * delta * report.t_mix
    scale = report.F ** (r_moment / 2.0)
    report.C_r = scale * (math.log(2.0) ** (r_moment / 2.0) + r_moment * _tail_integral(r_moment))
    report.D_r = r_moment * scale * math.gamma(r_moment / 2.0)
    report.moment_upper = report.C_r * n ** (r_moment / 2.0)
    return report
