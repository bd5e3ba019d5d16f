"""
Simulator - Monte Carlo and exact randomization distributions over a science table.

Every draw of every population has its own counter-based substream, so
results are bit-identical for any number of worker threads.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .design import FactorialDesign, build_contrast_matrix, describe_treatment
from .errors import InfeasibleError, InputError
from .estimation import Alternative, ObservedDataset, check_alpha, upper_point
from .population import (
    PotentialOutcomesTable,
    construct_population,
    permute_population,
)
from .power import AllocationPlan, AllocationRule, VarianceGuess, allocate_optimal
from .rng import ASSIGN_STREAM, make_generator

logger = logging.getLogger(__name__)

DEFAULT_ENUMERATION_CAP = 1_000_000
DEFAULT_POPULATIONS = 10
DEFAULT_DRAWS = 1000
CHUNK_SIZE = 250

Matrix = Tuple[Tuple[Fraction, ...], ...]


def _plan_counts(table: PotentialOutcomesTable, plan: Union[AllocationPlan, Sequence[int]]) -> Tuple[int, ...]:
    counts = plan.counts if isinstance(plan, AllocationPlan) else tuple(int(c) for c in plan)
    if len(counts) != table.J:
        raise InputError(f"Plan has {len(counts)} arms but the table has {table.J} treatments")
    if sum(counts) != table.N:
        raise InputError(f"Plan allocates {sum(counts)} units but the table has N = {table.N}")
    if min(counts) < 1:
        raise InputError("Every arm of the plan needs at least one unit")
    return counts


def _arm_labels(counts: Sequence[int]) -> np.ndarray:
    return np.repeat(np.arange(len(counts)), counts)


def draw_assignment(
    table: PotentialOutcomesTable,
    plan: Union[AllocationPlan, Sequence[int]],
    rng_seed: int,
    *stream: int,
) -> ObservedDataset:
    """
    Draw one complete randomization with exactly N_j units in arm j.

    Returns the observed dataset it induces; ``dataset.treatments`` is the
    1-based assignment vector.
    """
    counts = _plan_counts(table, plan)
    rng = make_generator(rng_seed, ASSIGN_STREAM, *stream)
    arms = rng.permutation(_arm_labels(counts))
    outcomes = table.Y[np.arange(table.N), arms]
    return ObservedDataset(table.design, arms + 1, outcomes)


# ==================== Monte Carlo ====================

@dataclass(frozen=True)
class SimulationReport:
    """Empirical behaviour of the Neymanian procedure over repeated assignments."""

    draws: int
    seed: int
    population: int
    alpha: float
    alternative: Alternative
    family_size: int
    effect_labels: Tuple[str, ...]
    joint_effects: Tuple[str, ...]
    degenerate: int
    rejection_ier: Tuple[float, ...]
    rejection_eer: Tuple[float, ...]
    familywise_ier: float
    familywise_eer: float
    joint_ier: float
    joint_eer: float
    joint_product_ier: float
    joint_product_eer: float
    bias: Tuple[float, ...]
    empirical_variance: Tuple[float, ...]
    true_variance: Tuple[float, ...]
    coverage: Tuple[float, ...]

    def joint(self, correction: str) -> float:
        return self.joint_eer if correction in ("bonferroni", "eer") else self.joint_ier

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "effect": self.effect_labels,
                "rejection_ier": self.rejection_ier,
                "rejection_eer": self.rejection_eer,
                "bias": self.bias,
                "empirical_variance": self.empirical_variance,
                "true_variance": self.true_variance,
                "coverage": self.coverage,
            }
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "draws": self.draws,
            "seed": self.seed,
            "population": self.population,
            "alpha": self.alpha,
            "alternative": self.alternative.value,
            "family_size": self.family_size,
            "degenerate": self.degenerate,
            "familywise_ier": self.familywise_ier,
            "familywise_eer": self.familywise_eer,
            "joint_effects": list(self.joint_effects),
            "joint_ier": self.joint_ier,
            "joint_eer": self.joint_eer,
            "joint_product_ier": self.joint_product_ier,
            "joint_product_eer": self.joint_product_eer,
            "effects": self.to_frame().to_dict(orient="records"),
        }


def _draw_chunk(
    table: PotentialOutcomesTable,
    counts: Tuple[int, ...],
    seed: int,
    population: int,
    draws: Sequence[int],
) -> np.ndarray:
    """Success counts n_{j1} for each draw in ``draws``."""
    labels = _arm_labels(counts)
    rows = np.arange(table.N)
    successes = np.empty((len(draws), table.J), dtype=np.int64)
    for k, draw in enumerate(draws):
        rng = make_generator(seed, ASSIGN_STREAM, population, draw)
        arms = rng.permutation(labels)
        successes[k] = np.bincount(arms, weights=table.Y[rows, arms], minlength=table.J)
    return successes


def _rejections(statistics: np.ndarray, critical: float, alternative: Alternative) -> np.ndarray:
    if alternative is Alternative.TWO_SIDED:
        return np.abs(statistics) >= critical
    if alternative is Alternative.GREATER:
        return statistics >= critical
    return statistics <= -critical


def simulate(
    table: PotentialOutcomesTable,
    plan: Union[AllocationPlan, Sequence[int]],
    draws: int = DEFAULT_DRAWS,
    alpha: float = 0.05,
    alternative: Union[str, Alternative] = Alternative.TWO_SIDED,
    rng_seed: int = 0,
    population: int = 0,
    effects: Optional[Sequence[str]] = None,
    groups: Optional[int] = None,
    max_workers: int = 1,
) -> SimulationReport:
    """
    Repeat complete randomization ``draws`` times and test every effect.

    Draws whose standard error is 0 are tallied as degenerate and count as
    non-rejections.

    Args:
        table: Science table
        plan: Arm sizes summing to the table's N
        draws: Number of assignments
        alpha: Test level
        alternative: Direction of the tests
        rng_seed: Seed; draw d of population p uses substream (p, d)
        population: Index of this population within a protocol
        effects: Effects whose joint rejection is tracked (all by default)
        groups: Bonferroni family size (J-1 by default)
        max_workers: Threads used to generate draws
    """
    if draws < 1:
        raise InputError(f"draws must be >= 1, got {draws}")
    alpha = check_alpha(alpha)
    alternative = Alternative.parse(alternative)
    counts = _plan_counts(table, plan)
    design = table.design
    J, K = design.J, design.K
    family_size = groups if groups is not None else J - 1
    joint_labels = tuple(effects) if effects else design.effect_labels
    joint_index = [design.effect_index(label) - 1 for label in joint_labels]

    chunks = [range(start, min(start + CHUNK_SIZE, draws)) for start in range(0, draws, CHUNK_SIZE)]

    def run(chunk: range) -> np.ndarray:
        return _draw_chunk(table, counts, rng_seed, population, chunk)

    if max_workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            successes = np.vstack(list(pool.map(run, chunks)))
    else:
        successes = np.vstack([run(chunk) for chunk in chunks])

    n = np.asarray(counts, dtype=float)
    p = successes / n
    with np.errstate(divide="ignore", invalid="ignore"):
        s2 = np.where(n > 1, successes * (n - successes) / (n * (n - 1)), np.nan)
    lam = build_contrast_matrix(design).effects.astype(float)
    scale = 2 ** (K - 1)
    estimates = p @ lam / scale
    se = np.sqrt(np.sum(s2 / n, axis=1)) / scale
    valid = np.isfinite(se) & (se > 0)
    degenerate = int(draws - valid.sum())

    statistics = np.zeros_like(estimates)
    statistics[valid] = estimates[valid] / se[valid, None]
    one_sided = alternative is not Alternative.TWO_SIDED
    z_ier = upper_point(alpha if one_sided else alpha / 2)
    z_eer = upper_point(alpha / family_size if one_sided else alpha / (2 * family_size))
    reject_ier = _rejections(statistics, z_ier, alternative) & valid[:, None]
    reject_eer = _rejections(statistics, z_eer, alternative) & valid[:, None]

    truth = table.tau_fp
    half = z_ier * se[:, None]
    if alternative is Alternative.TWO_SIDED:
        covered = (estimates - half <= truth) & (truth <= estimates + half)
    elif alternative is Alternative.GREATER:
        covered = estimates - half <= truth
    else:
        covered = truth <= estimates + half
    n_valid = int(valid.sum())
    coverage = covered[valid].mean(axis=0) if n_valid else np.full(J - 1, np.nan)

    rate_ier = reject_ier.mean(axis=0)
    rate_eer = reject_eer.mean(axis=0)
    empirical_variance = estimates.var(axis=0, ddof=1) if draws > 1 else np.zeros(J - 1)

    logger.debug(
        "Population %d: %d draws, %d degenerate, N=%d", population, draws, degenerate, table.N
    )
    return SimulationReport(
        draws=draws,
        seed=rng_seed,
        population=population,
        alpha=alpha,
        alternative=alternative,
        family_size=family_size,
        effect_labels=design.effect_labels,
        joint_effects=joint_labels,
        degenerate=degenerate,
        rejection_ier=tuple(rate_ier.tolist()),
        rejection_eer=tuple(rate_eer.tolist()),
        familywise_ier=float(reject_ier.any(axis=1).mean()),
        familywise_eer=float(reject_eer.any(axis=1).mean()),
        joint_ier=float(reject_ier[:, joint_index].all(axis=1).mean()),
        joint_eer=float(reject_eer[:, joint_index].all(axis=1).mean()),
        joint_product_ier=float(np.prod(rate_ier[joint_index])),
        joint_product_eer=float(np.prod(rate_eer[joint_index])),
        bias=tuple((estimates.mean(axis=0) - truth).tolist()),
        empirical_variance=tuple(empirical_variance.tolist()),
        true_variance=tuple(table.true_variance(counts).tolist()),
        coverage=tuple(np.asarray(coverage, dtype=float).tolist()),
    )


# ==================== Exact enumeration ====================

@dataclass(frozen=True)
class EnumerationResult:
    """
    Exact randomization distribution of the group success counts.

    ``distribution`` maps each attainable (n_{11}, ..., n_{J1}) to the number
    of assignments producing it; every moment below is an exact rational.
    """

    design: FactorialDesign
    counts: Tuple[int, ...]
    assignments: int
    distribution: Dict[Tuple[int, ...], int]
    mean_p: Tuple[Fraction, ...]
    cov_p: Matrix
    mean_tau: Tuple[Fraction, ...]
    cov_tau: Matrix
    mean_s2: Tuple[Fraction, ...]
    mean_se2: Fraction

    def _tau(self, successes: Tuple[int, ...]) -> Tuple[Fraction, ...]:
        return _tau_hat(self.design, self.counts, successes)

    def effect_distribution(self, effect: Union[int, str]) -> Dict[Fraction, Fraction]:
        """Exact probability of every value τ̂_ℓ can take."""
        index = effect if isinstance(effect, int) else self.design.effect_index(effect)
        if not 1 <= index < self.design.J:
            raise InputError(f"Effect index must be in 1..{self.design.J - 1}, got {index}")
        mass: Dict[Fraction, int] = {}
        for successes, weight in self.distribution.items():
            value = self._tau(successes)[index - 1]
            mass[value] = mass.get(value, 0) + weight
        return {value: Fraction(weight, self.assignments) for value, weight in sorted(mass.items())}

    def to_dict(self) -> Dict[str, Any]:
        labels = self.design.effect_labels
        return {
            "counts": list(self.counts),
            "assignments": self.assignments,
            "mean_p": [str(v) for v in self.mean_p],
            "mean_tau": {label: str(v) for label, v in zip(labels, self.mean_tau)},
            "var_tau": {label: str(self.cov_tau[i][i]) for i, label in enumerate(labels)},
            "mean_s2": [str(v) for v in self.mean_s2],
            "mean_se2": str(self.mean_se2),
            "effects": {
                label: [
                    {"value": str(value), "probability": str(prob)}
                    for value, prob in self.effect_distribution(i + 1).items()
                ]
                for i, label in enumerate(labels)
            },
        }


def _tau_hat(
    design: FactorialDesign, counts: Sequence[int], successes: Sequence[int]
) -> Tuple[Fraction, ...]:
    lam = build_contrast_matrix(design).effects
    p = [Fraction(s, n) for s, n in zip(successes, counts)]
    scale = 2 ** (design.K - 1)
    return tuple(
        sum(int(lam[j, l]) * p[j] for j in range(design.J)) / scale for l in range(design.J - 1)
    )


def multinomial_count(counts: Sequence[int]) -> int:
    """N! / (N_1! ... N_J!)."""
    total = math.factorial(sum(counts))
    for count in counts:
        total //= math.factorial(count)
    return total


def _success_tallies(Y: np.ndarray, counts: Sequence[int]) -> Counter:
    """Count, over every assignment, how often each success vector occurs."""
    tallies: Counter = Counter()
    J = len(counts)

    def visit(arm: int, remaining: Tuple[int, ...], prefix: Tuple[int, ...]) -> None:
        if arm == J - 1:
            tallies[prefix + (int(Y[list(remaining), arm].sum()),)] += 1
            return
        for chosen in itertools.combinations(remaining, counts[arm]):
            rest = tuple(unit for unit in remaining if unit not in chosen)
            visit(arm + 1, rest, prefix + (int(Y[list(chosen), arm].sum()),))

    visit(0, tuple(range(Y.shape[0])), ())
    return tallies


def enumerate_randomizations(
    table: PotentialOutcomesTable,
    plan: Union[AllocationPlan, Sequence[int]],
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> EnumerationResult:
    """
    Visit every complete randomization once and return exact moments.

    Raises:
        InfeasibleError: if the number of assignments exceeds ``cap``
    """
    counts = _plan_counts(table, plan)
    total = multinomial_count(counts)
    if total > cap:
        raise InfeasibleError(
            f"{total} assignments exceed the enumeration cap of {cap}; "
            "use the simulate command instead or raise the cap"
        )
    logger.debug("Enumerating %d assignments of N=%d units", total, table.N)
    design = table.design
    J, K = design.J, design.K

    tallies = _success_tallies(table.Y, counts)
    first = [Fraction(0)] * J
    second = [[Fraction(0)] * J for _ in range(J)]
    for successes, weight in tallies.items():
        for j in range(J):
            first[j] += weight * successes[j]
            for k in range(J):
                second[j][k] += weight * successes[j] * successes[k]
    mean_n = [value / total for value in first]
    mean_nn = [[value / total for value in row] for row in second]

    mean_p = tuple(mean_n[j] / counts[j] for j in range(J))
    cov_p = tuple(
        tuple((mean_nn[j][k] - mean_n[j] * mean_n[k]) / (counts[j] * counts[k]) for k in range(J))
        for j in range(J)
    )

    lam = build_contrast_matrix(design).effects
    scale = 4 ** (K - 1)
    mean_tau = tuple(
        sum(int(lam[j, l]) * mean_p[j] for j in range(J)) / 2 ** (K - 1) for l in range(J - 1)
    )
    cov_tau = tuple(
        tuple(
            sum(
                int(lam[j, a]) * int(lam[k, b]) * cov_p[j][k] for j in range(J) for k in range(J)
            )
            / scale
            for b in range(J - 1)
        )
        for a in range(J - 1)
    )

    # s_j² = n (N_j - n) / (N_j (N_j - 1)) is linear in the first two moments of n.
    mean_s2 = tuple(
        (counts[j] * mean_n[j] - mean_nn[j][j]) / (counts[j] * (counts[j] - 1))
        if counts[j] > 1
        else Fraction(0)
        for j in range(J)
    )
    mean_se2 = sum(mean_s2[j] / counts[j] for j in range(J)) / scale

    return EnumerationResult(
        design=design,
        counts=counts,
        assignments=total,
        distribution=dict(tallies),
        mean_p=mean_p,
        cov_p=cov_p,
        mean_tau=mean_tau,
        cov_tau=cov_tau,
        mean_s2=mean_s2,
        mean_se2=Fraction(mean_se2),
    )


# ==================== Diagnostics ====================

@dataclass(frozen=True)
class CltConditionReport:
    proportions: Tuple[float, ...]
    P: Tuple[float, ...]
    S2: Tuple[float, ...]
    covariance: Tuple[Tuple[float, ...], ...]
    max_deviation: float
    flags: Tuple[str, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "proportions": list(self.proportions),
            "P": list(self.P),
            "S2": list(self.S2),
            "covariance": [list(row) for row in self.covariance],
            "max_deviation": self.max_deviation,
            "flags": list(self.flags),
        }


def clt_condition_report(
    table: PotentialOutcomesTable, plan: Union[AllocationPlan, Sequence[int]]
) -> CltConditionReport:
    """Quantities behind the finite-population CLT conditions, with zero-variance arms flagged."""
    counts = _plan_counts(table, plan)
    P = table.P
    deviation = float(((table.Y - P) ** 2).max() / table.N)
    flags = tuple(
        f"Treatment {describe_treatment(table.design, j)} has S_j^2 = 0 (constant potential outcomes)"
        for j, s2 in enumerate(table.S2_exact, start=1)
        if s2 == 0
    )
    return CltConditionReport(
        proportions=tuple(c / table.N for c in counts),
        P=tuple(P.tolist()),
        S2=tuple(table.S2.tolist()),
        covariance=tuple(tuple(row) for row in table.covariance_matrix.tolist()),
        max_deviation=deviation,
        flags=flags,
    )


# ==================== Power protocol ====================

@dataclass(frozen=True)
class ProtocolResult:
    """Joint power over permuted copies of one population at a fixed N."""

    N: int
    counts: Tuple[int, ...]
    effects: Tuple[str, ...]
    joint_ier: Tuple[float, ...]
    joint_eer: Tuple[float, ...]

    @property
    def mean_joint_ier(self) -> float:
        return float(np.mean(self.joint_ier))

    @property
    def mean_joint_eer(self) -> float:
        return float(np.mean(self.joint_eer))

    def mean_joint(self, correction: str) -> float:
        return self.mean_joint_eer if correction in ("bonferroni", "eer") else self.mean_joint_ier

    def to_dict(self) -> Dict[str, Any]:
        return {
            "N": self.N,
            "counts": list(self.counts),
            "effects": list(self.effects),
            "joint_ier": list(self.joint_ier),
            "joint_eer": list(self.joint_eer),
            "mean_joint_ier": self.mean_joint_ier,
            "mean_joint_eer": self.mean_joint_eer,
        }


def run_power_protocol(
    target_P: Sequence[float],
    design: FactorialDesign,
    N: int,
    effects: Sequence[str],
    rule: Union[str, AllocationRule] = AllocationRule.D,
    populations: int = DEFAULT_POPULATIONS,
    draws: int = DEFAULT_DRAWS,
    alpha: float = 0.05,
    rng_seed: int = 0,
    guess: Optional[VarianceGuess] = None,
    max_workers: int = 1,
) -> ProtocolResult:
    """
    Build a population matching ``target_P`` exactly, permute it ``populations``
    times and simulate ``draws`` assignments on each copy.

    The allocation rule uses ``guess`` (the target proportions by default).
    """
    if populations < 1:
        raise InputError(f"populations must be >= 1, got {populations}")
    base = construct_population(N, target_P, design)
    guess = guess or VarianceGuess.from_proportions(design, target_P, N)
    plan = allocate_optimal(rule, guess, N)

    joint_ier: List[float] = []
    joint_eer: List[float] = []
    for population in range(populations):
        table = permute_population(base, rng_seed, population)
        report = simulate(
            table,
            plan,
            draws=draws,
            alpha=alpha,
            rng_seed=rng_seed,
            population=population,
            effects=effects,
            max_workers=max_workers,
        )
        joint_ier.append(report.joint_ier)
        joint_eer.append(report.joint_eer)
        logger.info(
            "N=%d population %d: joint power IER %.3f, EER %.3f",
            N, population, report.joint_ier, report.joint_eer,
        )
    return ProtocolResult(N, plan.counts, tuple(effects), tuple(joint_ier), tuple(joint_eer))


@dataclass(frozen=True)
class SimulatedCurveRow:
    N: int
    feasible: bool
    result: Optional[ProtocolResult] = None
    reason: str = ""


@dataclass(frozen=True)
class SimulatedPowerCurve:
    rows: Tuple[SimulatedCurveRow, ...]
    correction: str
    target: float

    @property
    def smallest_n(self) -> Optional[int]:
        for row in self.rows:
            if row.feasible and row.result.mean_joint(self.correction) >= self.target:
                return row.N
        return None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "N": row.N,
                    "feasible": row.feasible,
                    "mean_joint_ier": row.result.mean_joint_ier if row.result else None,
                    "mean_joint_eer": row.result.mean_joint_eer if row.result else None,
                    "reason": row.reason,
                }
                for row in self.rows
            ]
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "correction": self.correction,
            "target": self.target,
            "smallest_n": self.smallest_n,
            "grid": [row.N for row in self.rows],
            "rows": [
                {
                    "N": row.N,
                    "feasible": row.feasible,
                    "reason": row.reason,
                    **(row.result.to_dict() if row.result else {}),
                }
                for row in self.rows
            ],
        }


def simulated_power_curve(
    target_P: Sequence[float],
    design: FactorialDesign,
    effects: Sequence[str],
    n_grid: Sequence[int],
    rule: Union[str, AllocationRule] = AllocationRule.D,
    correction: str = "ier",
    populations: int = DEFAULT_POPULATIONS,
    draws: int = DEFAULT_DRAWS,
    alpha: float = 0.05,
    rng_seed: int = 0,
    target: float = 0.8,
    guess: Optional[VarianceGuess] = None,
    max_workers: int = 1,
) -> SimulatedPowerCurve:
    """Run :func:`run_power_protocol` over a grid; infeasible N are flagged, not skipped."""
    rows: List[SimulatedCurveRow] = []
    for N in n_grid:
        try:
            result = run_power_protocol(
                target_P, design, int(N), effects, rule, populations, draws, alpha,
                rng_seed, guess, max_workers,
            )
        except InfeasibleError as exc:
            logger.warning("Simulated power curve point N=%d is infeasible: %s", N, exc)
            rows.append(SimulatedCurveRow(int(N), False, None, str(exc)))
            continue
        rows.append(SimulatedCurveRow(int(N), True, result))
    return SimulatedPowerCurve(tuple(rows), correction, target)
