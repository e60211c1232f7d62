"""Simulation experiments: E(m) curves, variance scans and concentration checks."""

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from scipy import stats

from src.alignment import ScoringScheme, score_of_sample
from src.config import EmConfig
from src.counters import (
    TripletPattern,
    alpha_of,
    choose_K,
    doeblin_constants,
    hoeffding_mc_bound,
    mcdiarmid_bound,
    q_of,
    summarize,
    upper_bound_report,
    v_window,
)
from src.errors import ConfigError, InsufficientData, PreconditionViolated, UnequalQ
from src.markov_model import (
    StationaryDist,
    TransitionMatrix,
    equal_q_conditions,
    sample_chain,
    stationary,
)
from src.transform import check_disjoint, gain_profile
from src.utils import derive_seed

logger = logging.getLogger("PMC-variance")

EM_COLUMNS = ["chain_id", "m", "j_count", "e_m", "seed"]
VARIANCE_COLUMNS = ["n", "replicates", "mean", "var", "ci_lo", "ci_hi", "a_o_n", "c2_n"]

# Replicates below this give unreliable jackknife intervals
MIN_CI_REPLICATES = 100


@dataclass(frozen=True)
class EmRecord:
    chain_id: int
    m: int
    j_count: int
    e_m: float
    seed: int


@dataclass(frozen=True)
class VarianceRecord:
    n: int
    replicates: int
    mean: float
    var: float
    ci_lo: float
    ci_hi: float
    a_o_n: Optional[float] = None
    c2_n: Optional[float] = None


def _em_chain(P: TransitionMatrix, pi: StationaryDist, patterns: list[TripletPattern],
              grid: list[int], scheme: ScoringScheme, master_seed: int, chain_id: int,
              reflect: bool = False) -> list[EmRecord]:
    """E(m) for one chain; module level so worker processes can run it."""
    seed = derive_seed(master_seed, chain_id)
    z = sample_chain(P, pi, 3 * grid[-1], seed)
    profile = gain_profile(z, patterns, grid, scheme, reflect=reflect)
    records = []
    for m in grid:
        count = profile.j_count(m)
        if count == 0:
            continue
        records.append(EmRecord(chain_id, m, count, profile.e_m(m), seed))
    return records


class EmRunner:
    """Runs the E(m) procedure over independent chains."""

    def __init__(self, config: EmConfig, workers: int = 1,
                 progress_callback: Optional[Callable[[str], None]] = None):
        config.validate()
        self.config = config
        self.workers = max(1, workers)
        self.progress_callback = progress_callback
        self.P = config.model.build()
        self.pi = stationary(self.P)
        self.patterns = config.triplet_patterns()
        self.scheme = config.scoring(self.P.k)

    def _update_progress(self, message: str):
        logger.info(message)
        if self.progress_callback:
            self.progress_callback(message)

    def run(self) -> list[EmRecord]:
        grid = self.config.m_grid()
        chain_ids = list(range(self.config.n_chains))
        self._update_progress(
            f"E(m) on {self.P.label}: {len(chain_ids)} chain(s), m = {grid[0]}..{grid[-1]}, "
            f"patterns {', '.join(str(p) for p in self.patterns)}"
        )
        args = (self.P, self.pi, self.patterns, grid, self.scheme, self.config.seed)
        records: list[EmRecord] = []
        if self.workers == 1 or len(chain_ids) == 1:
            for chain_id in chain_ids:
                records.extend(_em_chain(*args, chain_id, self.config.reflect))
                self._update_progress(f"Chain {chain_id + 1}/{len(chain_ids)} done")
        else:
            with ProcessPoolExecutor(max_workers=self.workers) as executor:
                futures = [executor.submit(_em_chain, *args, chain_id, self.config.reflect)
                           for chain_id in chain_ids]
                for chain_id, future in zip(chain_ids, futures):
                    records.extend(future.result())
                    self._update_progress(f"Chain {chain_id + 1}/{len(chain_ids)} done")
        return sorted(records, key=lambda r: (r.chain_id, r.m))


def run_em(config: EmConfig, workers: int = 1,
           progress_callback: Optional[Callable[[str], None]] = None) -> list[EmRecord]:
    """
    E(m) = mean of r(m, j) over J_m for every chain and grid point.

    Grid points with J_m empty are skipped. Records are sorted by (chain_id, m)
    and do not depend on the worker count.

    Args:
        config: Model, pattern, m grid, chain count and seed
        workers: Processes; chains are distributed over them
        progress_callback: Called with a message after each chain

    Returns:
        One EmRecord per chain and grid point with J_m nonempty

    Raises:
        ConfigError: if the config holds more than one pattern
    """
    if len(config.patterns) != 1:
        raise ConfigError("run_em takes a single pattern; use run_em_combined for two")
    return EmRunner(config, workers, progress_callback).run()


def check_equal_q(P: TransitionMatrix, pattern1: TripletPattern, pattern2: TripletPattern,
                  atol: float = 1e-12) -> tuple[float, float]:
    """
    Raises:
        UnequalQ: if q1 != q2
    """
    q1, q2 = q_of(P, pattern1), q_of(P, pattern2)
    if P.k == 2 and not equal_q_conditions(P):
        logger.debug(f"{P.label} fails the sufficient symmetries; comparing q directly")
    if abs(q1 - q2) > atol:
        raise UnequalQ(f"q1={q1:.12g} and q2={q2:.12g} differ for {P.label}")
    return q1, q2


def run_em_combined(config: EmConfig, workers: int = 1,
                    progress_callback: Optional[Callable[[str], None]] = None) -> list[EmRecord]:
    """Pooled E(m) = (sum r1 + sum r2) / (|J1_m| + |J2_m|) for two patterns with equal q."""
    if len(config.patterns) != 2:
        raise ConfigError("run_em_combined needs exactly two patterns")
    runner = EmRunner(config, workers, progress_callback)
    pattern1, pattern2 = runner.patterns
    check_disjoint(pattern1, pattern2)
    check_equal_q(runner.P, pattern1, pattern2)
    return runner.run()


@dataclass
class EpsEstimate:
    """Plateau level of |E(m)| over the end of the grid."""
    eps_o: float
    sign: int
    inconclusive: bool
    m_from: int
    count: int
    quantile: float
    convention: str = "lower quantile of |E(m)| over the tail of the m-grid"


def estimate_eps_o(records: Sequence[EmRecord], tail_fraction: float = 0.25,
                   quantile: float = 5.0) -> EpsEstimate:
    """
    eps_o as the ``quantile``-th percentile of |E(m)| over the last ``tail_fraction`` of the grid.

    The sign of the median is kept separately; a tail with both signs is flagged inconclusive.

    Args:
        records: E(m) records of one or more chains
        tail_fraction: Share of the m-grid counted as the tail
        quantile: Percentile of |E(m)| taken as eps_o

    Returns:
        EpsEstimate: eps_o, the sign of the median and the convention used

    Raises:
        InsufficientData: if there are no records
    """
    if not records:
        raise InsufficientData("No E(m) records to estimate eps_o from")
    ms = sorted({r.m for r in records})
    start = min(len(ms) - 1, int(math.floor(len(ms) * (1.0 - tail_fraction))))
    m_from = ms[start]
    tail = np.array([r.e_m for r in records if r.m >= m_from])
    eps_o = float(np.percentile(np.abs(tail), quantile))
    median = float(np.median(tail))
    sign = int(np.sign(median))
    inconclusive = bool(tail.min() < 0 < tail.max())
    if inconclusive:
        logger.warning(f"E(m) changes sign for m >= {m_from}; eps_o={eps_o:.4g} is inconclusive")
    return EpsEstimate(eps_o, sign, inconclusive, m_from, len(tail), quantile)


def _replicate_scores(P: TransitionMatrix, pi: StationaryDist, scheme: ScoringScheme, n: int,
                      seeds: Sequence[int]) -> list[float]:
    return [score_of_sample(sample_chain(P, pi, n, seed), scheme) for seed in seeds]


def _chunks(items: list, size: int) -> list[list]:
    return [items[i:i + size] for i in range(0, len(items), size)]


def jackknife_variance_ci(values: np.ndarray, level: float = 0.95) -> tuple[float, float, float]:
    """Sample variance with a jackknife normal-approximation interval, clipped at 0."""
    R = len(values)
    var = float(np.var(values, ddof=1))
    if R < 3:
        return var, var, var
    s1, s2 = values.sum(), (values * values).sum()
    loo = (s2 - values ** 2 - (s1 - values) ** 2 / (R - 1)) / (R - 2)
    pseudo = R * var - (R - 1) * loo
    half = float(stats.norm.ppf(0.5 + level / 2.0)) * float(np.std(pseudo, ddof=1)) / math.sqrt(R)
    return var, max(0.0, var - half), var + half


def variance_scan(P: TransitionMatrix, scheme: ScoringScheme, n_grid: Iterable[int], R: int, seed: int,
                  a_o: Optional[float] = None, c2: Optional[float] = None, workers: int = 1,
                  progress_callback: Optional[Callable[[str], None]] = None) -> list[VarianceRecord]:
    """
    Sample variance of L_n over R independent chains for each n.

    Replicate r at length n uses the stream derived from (seed, n) and then r.

    Args:
        P: Transition matrix
        scheme: Scoring scheme
        n_grid: Sequence lengths
        R: Replicates per length
        seed: Master seed
        a_o: Lower constant; records carry a_o * n when given
        c2: Upper constant; records carry c2 * n when given
        workers: Processes sharing the replicates of each n
        progress_callback: Called with a message after each n

    Returns:
        One VarianceRecord per n, with a jackknife 95% interval

    Raises:
        InsufficientData: if R < 2
    """
    if R < 2:
        raise InsufficientData(f"Need at least 2 replicates, got {R}")
    if R < MIN_CI_REPLICATES:
        logger.warning(f"R={R} replicates: jackknife interval is unreliable below {MIN_CI_REPLICATES}")
    pi = stationary(P)
    records = []
    for n in n_grid:
        base = derive_seed(seed, n)
        seeds = [derive_seed(base, r) for r in range(R)]
        if workers > 1:
            chunks = _chunks(seeds, max(1, math.ceil(R / workers)))
            with ProcessPoolExecutor(max_workers=workers) as executor:
                parts = executor.map(_replicate_scores, *zip(*[(P, pi, scheme, n, c) for c in chunks]))
                scores = [s for part in parts for s in part]
        else:
            scores = _replicate_scores(P, pi, scheme, n, seeds)
        values = np.asarray(scores)
        var, lo, hi = jackknife_variance_ci(values)
        records.append(VarianceRecord(
            n, R, float(values.mean()), var, lo, hi,
            None if a_o is None else a_o * n,
            None if c2 is None else c2 * n,
        ))
        message = f"n={n}: mean={values.mean():.4f}, var={var:.4f}"
        logger.info(message)
        if progress_callback:
            progress_callback(message)
    return records


@dataclass
class GrowthFit:
    """Least-squares fit var ~ slope * n through the origin."""
    slope: float
    r_squared: float
    points: int


def variance_growth_fit(records: Sequence[VarianceRecord]) -> GrowthFit:
    """
    Raises:
        InsufficientData: if fewer than two records are given
    """
    if len(records) < 2:
        raise InsufficientData("Need at least two variance records for a fit")
    n = np.array([r.n for r in records], dtype=float)
    v = np.array([r.var for r in records], dtype=float)
    slope = float(n @ v / (n @ n))
    total = float(v @ v)
    residual = float(((v - slope * n) ** 2).sum())
    r_squared = 1.0 - residual / total if total > 0 else 0.0
    return GrowthFit(slope, r_squared, len(records))


@dataclass
class TailReport:
    """Empirical deviation of V against the Markov-chain Hoeffding bound."""
    n: int
    K: float
    trials: int
    expected_v: float
    empirical_tail: float
    coverage: float
    bound: float
    dominated: bool
    r_doeblin: int
    lambda_: float
    side_condition: bool
    side_condition_n: bool
    n1_condition: bool
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["lambda"] = data.pop("lambda_")
        return data


def _sample_v(P: TransitionMatrix, pi: StationaryDist, pattern: TripletPattern, n: int,
              seeds: Sequence[int]) -> list[int]:
    return [summarize(sample_chain(P, pi, n, s), pattern).v for s in seeds]


def tail_check_V(P: TransitionMatrix, pattern: TripletPattern, n: int, K: Optional[float], trials: int,
                 seed: int, b_o: float = 0.9, strict: bool = True) -> TailReport:
    """
    Compare P(|V - EV| > K sqrt(n)) with twice the one-sided Hoeffding bound.

    K defaults to choose_K(lambda, r, b_o). With ``strict`` a failing side
    condition raises; otherwise the bound is reported as 1 and flagged.

    Raises:
        PreconditionViolated: if the side condition fails and ``strict`` is set
    """
    pi = stationary(P)
    _, alpha_n = alpha_of(P, pi, pattern, n)
    r, lam, _, valid = doeblin_constants(P, pi)
    if K is None:
        K = choose_K(lam, r, b_o)
    m = n // 3
    expected_v = alpha_n * n
    lo, hi = v_window(n, alpha_n, K)
    half = K * math.sqrt(n)

    vs = np.asarray(_sample_v(P, pi, pattern, n, [derive_seed(seed, t) for t in range(trials)]), dtype=float)
    outside = (vs < lo) | (vs > hi)
    report = TailReport(
        n=n, K=K, trials=trials, expected_v=expected_v,
        empirical_tail=float(outside.mean()),
        coverage=float(1.0 - outside.mean()),
        bound=1.0, dominated=True, r_doeblin=r, lambda_=lam,
        side_condition=False, side_condition_n=False,
        n1_condition=K * math.sqrt(n) / 2.0 > 3.0 * K / math.sqrt(n) + 2.0 * r / lam,
    )
    if not valid:
        report.flags.append("lambda > 1")

    eps = half / m if m else 0.0
    if eps > 0:
        report.side_condition = m >= 2.0 * r / (lam * eps)
        report.side_condition_n = n > 6.0 * r / (lam * eps) + 3.0
    try:
        report.bound = min(1.0, 2.0 * hoeffding_mc_bound(m, eps, lam, r))
    except PreconditionViolated as e:
        if strict:
            raise
        report.flags.append(f"side condition fails, bound reported as 1: {e}")
    report.dominated = report.bound >= report.empirical_tail
    logger.info(f"V tail at n={n}, K={K:.4g}: empirical {report.empirical_tail:.4g}, "
                f"bound {report.bound:.4g}, coverage {report.coverage:.4g}")
    return report


@dataclass
class McDiarmidReport:
    """Empirical tail of |L - mean L| against 2 exp(-s^2 / (n F))."""
    n: int
    trials: int
    F: float
    mean: float
    s_grid: list[float]
    empirical: list[float]
    bound: list[float]
    dominated: bool


def mcdiarmid_tail_check(P: TransitionMatrix, scheme: ScoringScheme, n: int, trials: int, seed: int,
                         s_grid: Optional[Sequence[float]] = None) -> McDiarmidReport:
    """
    Empirical P(|L - mean L| >= s) over ``trials`` chains against 2 exp(-s^2 / (n F)).

    The default grid is s = c sqrt(n) for c = 0..10 plus one point past the
    largest possible score, where the empirical tail is 0.

    Raises:
        NotPrimitive: if no power of P is strictly positive
    """
    F = upper_bound_report(P, scheme, 2.0, n).F
    pi = stationary(P)
    scores = np.asarray(_replicate_scores(P, pi, scheme, n, [derive_seed(seed, t) for t in range(trials)]))
    mean = float(scores.mean())
    if s_grid is None:
        root = math.sqrt(n)
        s_grid = [c * root for c in range(0, 11)] + [n * max(scheme.table.max(), scheme.delta) + 1.0]
    deviation = np.abs(scores - mean)
    empirical = [float((deviation >= s).mean()) for s in s_grid]
    bound = [min(2.0, mcdiarmid_bound(s, n, F)) if s > 0 else 2.0 for s in s_grid]
    dominated = all(b >= e for b, e in zip(bound, empirical))
    return McDiarmidReport(n, trials, F, mean, [float(s) for s in s_grid], empirical, bound, dominated)


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def write_csv(rows: Iterable, columns: list[str], path: Union[str, Path]) -> Path:
    """Write dataclass rows with fixed columns and round-trip float formatting."""
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            data = asdict(row)
            writer.writerow([_format(data[c]) for c in columns])
    return path


def write_json(data, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def read_em_csv(path: Union[str, Path]) -> list[EmRecord]:
    with Path(path).open(newline="") as handle:
        return [
            EmRecord(int(row["chain_id"]), int(row["m"]), int(row["j_count"]), float(row["e_m"]), int(row["seed"]))
            for row in csv.DictReader(handle)
        ]
